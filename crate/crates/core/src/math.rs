//! Special functions and the model's arrival-mass quantities.
//!
//! Everything here is evaluated in log space where it matters. The two
//! quantities specific to the model are
//!
//! * `psi`: the expected number of *new* users (per unit of the largest-jump
//!   variable) appearing between day `x` and day `x + y`,
//!   `σ ∫₀¹ [1 − (1−s)^{ry}] (1−s)^{rx} s^{−1−σ} ds`;
//! * `rho`: the same mass restricted to users whose total count over the `y`
//!   follow-up days is exactly `j`.
//!
//! `psi` is never formed from beta functions with a negative argument. Using
//! `Γ(−σ) = −Γ(1−σ)/σ` it becomes a difference of gamma ratios
//! `Γ(1−σ) [Γ(a₂)/Γ(a₂−σ) − Γ(a₁)/Γ(a₁−σ)]`, which we evaluate through
//! a cancellation-free log gamma ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unchecked `ln Γ(z)` for `z > 0`.
#[inline]
pub(crate) fn lgamma(z: f64) -> f64 {
    libm::lgamma(z)
}

/// Unchecked `ln B(a, b)`.
#[inline]
pub(crate) fn lbeta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// Natural log of the gamma function.
pub fn log_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain("log_gamma", format!("z = {z} must be positive and finite")));
    }
    Ok(lgamma(z))
}

/// Natural log of the beta function `B(a, b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain("log_beta", format!("arguments ({a}, {b}) must be positive")));
    }
    Ok(lbeta(a, b))
}

/// Log of the generalized binomial coefficient `Γ(top+1) / (Γ(k+1) Γ(top−k+1))`.
pub fn log_binom_real(top: f64, k: u64) -> Result<f64> {
    let kf = k as f64;
    if !(top - kf + 1.0 > 0.0) || !top.is_finite() {
        return Err(Error::domain(
            "log_binom_real",
            format!("top − k + 1 must be positive (top = {top}, k = {k})"),
        ));
    }
    Ok(lgamma(top + 1.0) - lgamma(kf + 1.0) - lgamma(top - kf + 1.0))
}

// Stirling series coefficients B_{2k} / (2k (2k−1)).
const STIRLING: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

fn stirling_tail(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut acc = 0.0;
    for c in STIRLING.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc * inv
}

/// `ln Γ(u) − ln Γ(u − s)` for `u − s > 0`.
///
/// For large arguments the two log-gammas are huge and nearly equal; the
/// difference is then taken term by term in the Stirling expansion so the
/// absolute error stays near machine epsilon.
pub fn ln_gamma_ratio(u: f64, s: f64) -> f64 {
    let v = u - s;
    debug_assert!(v > 0.0);
    if v < 12.0 {
        return lgamma(u) - lgamma(v);
    }
    -(u - 0.5) * (-s / u).ln_1p() + s * v.ln() - s + (stirling_tail(u) - stirling_tail(v))
}

/// Arguments of `psi`: stable index, NegBin failure parameter, days already
/// observed and horizon length. Days are real so that the function can be
/// probed continuously.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiArgs {
    pub sigma: f64,
    pub r: f64,
    pub x: f64,
    pub y: f64,
}

impl PsiArgs {
    pub fn new(sigma: f64, r: f64, x: f64, y: f64) -> Result<Self> {
        let args = PsiArgs { sigma, r, x, y };
        args.validate()?;
        Ok(args)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::domain("psi", format!("sigma = {} not in (0, 1)", self.sigma)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::domain("psi", format!("r = {} must be positive", self.r)));
        }
        if !(self.x >= 0.0 && self.y >= 0.0) || !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::domain(
                "psi",
                format!("x = {}, y = {} must be nonnegative", self.x, self.y),
            ));
        }
        Ok(())
    }
}

/// New-user arrival mass between day `x` and day `x + y`. Zero exactly when `y = 0`.
pub fn psi(args: PsiArgs) -> Result<f64> {
    args.validate()?;
    Ok(psi_unchecked(args.sigma, args.r, args.x, args.y))
}

pub(crate) fn psi_unchecked(sigma: f64, r: f64, x: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let lo = ln_gamma_ratio(r * x + 1.0, sigma);
    let hi = ln_gamma_ratio(r * (x + y) + 1.0, sigma);
    (lgamma(1.0 - sigma) + lo).exp() * (hi - lo).exp_m1()
}

/// Which binomial coefficient multiplies the beta integral in `rho`.
///
/// `NegBinPmf` uses `C(j + r·D1 − 1, j)`, the coefficient of the
/// `NegBin(r·D1, θ)` mass at `j`. `AsWritten` uses `C(j + r·D1 + 1, j)`.
/// Only the former sums (over `j`) to `psi`, and only the former matches
/// forward simulation of the model; the latter is kept for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoConvention {
    #[default]
    NegBinPmf,
    AsWritten,
}

impl std::str::FromStr for RhoConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negbin-pmf" => Ok(RhoConvention::NegBinPmf),
            "as-written" => Ok(RhoConvention::AsWritten),
            other => Err(Error::Config(format!("unknown rho convention `{other}`"))),
        }
    }
}

/// Arrival mass of new users with total follow-up count exactly `j`:
/// `C(·, j) σ B(r(D0+D1)+1, j−σ)`.
pub fn rho(j: u64, sigma: f64, r: f64, d0: u32, d1: u32, conv: RhoConvention) -> Result<f64> {
    if j == 0 {
        return Err(Error::domain("rho", "j must be at least 1"));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::domain("rho", format!("sigma = {sigma} not in (0, 1)")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("rho", format!("r = {r} must be positive")));
    }
    if d1 == 0 {
        return Err(Error::domain("rho", "horizon D1 must be positive"));
    }
    Ok(log_rho_unchecked(j, sigma, r, d0, d1, conv).exp())
}

pub(crate) fn log_rho_unchecked(
    j: u64,
    sigma: f64,
    r: f64,
    d0: u32,
    d1: u32,
    conv: RhoConvention,
) -> f64 {
    let jf = j as f64;
    let k = r * f64::from(d1);
    let top = match conv {
        RhoConvention::NegBinPmf => jf + k - 1.0,
        RhoConvention::AsWritten => jf + k + 1.0,
    };
    let log_coef = lgamma(top + 1.0) - lgamma(jf + 1.0) - lgamma(top - jf + 1.0);
    let total = r * f64::from(d0 + d1) + 1.0;
    log_coef + sigma.ln() + lbeta(total, jf - sigma)
}

/// `Σ_{j≥1} j ρ_j` under [`RhoConvention::NegBinPmf`], in closed form:
/// `σ r D1 B(1−σ, r D0)`. Infinite when `D0 = 0`.
pub(crate) fn rho_first_moment(sigma: f64, r: f64, d0: u32, d1: u32) -> f64 {
    if d1 == 0 {
        return 0.0;
    }
    if d0 == 0 {
        return f64::INFINITY;
    }
    let rd0 = r * f64::from(d0);
    sigma * r * f64::from(d1) * lbeta(1.0 - sigma, rd0).exp()
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - lbeta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let ln_front = a * x.ln() - x - lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..100_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum * ln_front.exp()).clamp(0.0, 1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..100_000 {
            let an = -f64::from(i) * (f64::from(i) - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - ln_front.exp() * h).clamp(0.0, 1.0)
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q·(n−1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}
