//! Classical predictors of the number of new users, for comparison.
//!
//! They all see the pilot only through presence: the frequency spectrum
//! `φ_k` (users present on exactly `k` of the `D0` pilot days) or the daily
//! count of first triggers. Formulas:
//!
//! * **Jackknife of order k.** Drop `i` of the `n = D0` days at random; a user
//!   present on `j` days is then missed with probability
//!   `C(n−j, n−i) / C(n, n−i)`, giving expected richness `S(n−i)`. The points
//!   `(1/(n−i), S(n−i))`, `i = 0..=k`, are interpolated by a degree-`k`
//!   polynomial in `1/m`, evaluated at `1/(n+D1)`. Order 1 reduces to
//!   `φ₁ (n−1) D1 / (n (n+D1))`.
//! * **Good–Toulmin.** `−Σ_k (−t)^k φ_k` with `t = D1/D0`; for `t > 1` the
//!   terms are damped by `P(L ≥ k)`, `L ~ Bin(K, 2/(t+2))`,
//!   `K = ⌈½ log₂(n t² / (t−1))⌉`.
//! * **Beta-binomial.** Daily presence is Bernoulli(θ) with
//!   `θ ~ Beta(a, b)`. `(a, b)` maximize the zero-truncated beta-binomial
//!   likelihood of the spectrum; the population is
//!   `min(N / (1 − P₀), N_∞)` and each unseen user appears within `D1` more
//!   days with probability `1 − B(a, b+n+D1) / B(a, b+n)`.
//! * **Beta-geometric.** First-trigger days are Geometric(θ) with
//!   `θ ~ Beta(α, β)`, fitted by the truncated likelihood of the arrival
//!   counts; unseen users (Horvitz–Thompson) appear within `D1` days with
//!   probability `E[1 − (1−θ)^{D1}]`, `θ ~ Beta(α, β + D0)`, estimated by
//!   Monte Carlo.
//!
//! Every predictor returns a finite value ≥ 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FreqSpectrum;
use crate::error::{Error, Result};
use crate::fit::{differential_evolution, DeOptions};
use crate::math::{lbeta, lgamma};
use crate::simulate::{beta_unchecked, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineId {
    Jk1,
    Jk2,
    Jk3,
    Jk4,
    Gt,
    Bb,
    Bg,
}

impl BaselineId {
    pub const ALL: [BaselineId; 7] = [
        BaselineId::Jk1,
        BaselineId::Jk2,
        BaselineId::Jk3,
        BaselineId::Jk4,
        BaselineId::Gt,
        BaselineId::Bb,
        BaselineId::Bg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineId::Jk1 => "jk1",
            BaselineId::Jk2 => "jk2",
            BaselineId::Jk3 => "jk3",
            BaselineId::Jk4 => "jk4",
            BaselineId::Gt => "gt",
            BaselineId::Bb => "bb",
            BaselineId::Bg => "bg",
        }
    }
}

impl fmt::Display for BaselineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// `ln C(n, k)` for integers.
fn ln_choose(n: u64, k: u64) -> f64 {
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
}

/// Jackknife extrapolation of order `order` (1 to 4).
pub fn jackknife_predict(spectrum: &FreqSpectrum, d1: u32, order: u32) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::Config(format!("jackknife order {order} not in 1..=4")));
    }
    let n = spectrum.pilot_days();
    if n <= order {
        return Err(Error::Config(format!(
            "jackknife of order {order} needs more than {order} pilot days, got {n}"
        )));
    }
    if spectrum.is_empty() || d1 == 0 {
        return Ok(0.0);
    }
    let n64 = u64::from(n);
    // points (1/m, S(m) − S(n)) for m = n, n−1, …, n−order
    let points: Vec<(f64, f64)> = (0..=u64::from(order))
        .map(|i| {
            let m = n64 - i;
            let lost: f64 = spectrum
                .iter()
                .filter(|&(j, _)| n64 - u64::from(j) >= m)
                .map(|(j, phi)| phi as f64 * (ln_choose(n64 - u64::from(j), m) - ln_choose(n64, m)).exp())
                .sum();
            (1.0 / m as f64, -lost)
        })
        .collect();
    let x = 1.0 / f64::from(n + d1);
    // Lagrange interpolation
    let value: f64 = points
        .iter()
        .enumerate()
        .map(|(i, &(xi, yi))| {
            let w: f64 = points
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, &(xk, _))| (x - xk) / (xi - xk))
                .product();
            yi * w
        })
        .sum();
    Ok(finite_nonneg(value))
}

fn finite_nonneg(v: f64) -> f64 {
    if v.is_finite() {
        v.max(0.0)
    } else {
        0.0
    }
}

/// Good–Toulmin estimate, smoothed when the horizon exceeds the pilot.
pub fn good_toulmin_predict(spectrum: &FreqSpectrum, d1: u32, smoothing: bool) -> Result<f64> {
    let n = spectrum.pilot_days();
    if n == 0 {
        return Err(Error::Config("Good–Toulmin needs at least one pilot day".into()));
    }
    if spectrum.is_empty() || d1 == 0 {
        return Ok(0.0);
    }
    let t = f64::from(d1) / f64::from(n);
    let damping: Box<dyn Fn(u32) -> f64> = if smoothing && t > 1.0 {
        let k = (0.5 * (f64::from(n) * t * t / (t - 1.0)).log2()).ceil().max(1.0) as u32;
        let q = 2.0 / (t + 2.0);
        // survival P(L ≥ j) for L ~ Bin(k, q)
        let pmf: Vec<f64> = (0..=k)
            .map(|i| {
                (ln_choose(u64::from(k), u64::from(i)) + f64::from(i) * q.ln() + f64::from(k - i) * (1.0 - q).ln())
                    .exp()
            })
            .collect();
        let mut surv = vec![0.0; k as usize + 2];
        for i in (0..=k as usize).rev() {
            surv[i] = surv[i + 1] + pmf[i];
        }
        Box::new(move |j| surv.get(j as usize).copied().unwrap_or(0.0))
    } else {
        Box::new(|_| 1.0)
    };
    let value: f64 = spectrum
        .iter()
        .map(|(k, phi)| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * t.powi(k as i32) * damping(k) * phi as f64
        })
        .sum();
    Ok(finite_nonneg(value))
}

/// Search box for the log-parameters of the beta mixing laws.
const LOG_BOX: [(f64, f64); 2] = [(-6.0, 10.0), (-6.0, 10.0)];

fn fit_log_pair(objective: impl Fn(f64, f64) -> f64 + Sync) -> Result<(f64, f64)> {
    let opts = DeOptions {
        tol: 1e-10,
        max_iters: 600,
        seed: 0x6261_7365,
        ..DeOptions::default()
    };
    let res = differential_evolution(|x| -objective(x[0].exp(), x[1].exp()), &LOG_BOX, &opts)?;
    Ok((res.x[0].exp(), res.x[1].exp()))
}

/// Beta-binomial prediction with population cap `cap` (`None` → ten times the
/// observed count).
pub fn beta_binomial_predict(spectrum: &FreqSpectrum, d1: u32, cap: Option<f64>) -> Result<f64> {
    let n = spectrum.pilot_days();
    if n == 0 {
        return Err(Error::Config("beta-binomial needs at least one pilot day".into()));
    }
    if spectrum.is_empty() || d1 == 0 {
        return Ok(0.0);
    }
    let nf = f64::from(n);
    let observed = spectrum.n_users() as f64;
    let ll = |a: f64, b: f64| {
        let lb = lbeta(a, b);
        let p0 = (lbeta(a, nf + b) - lb).exp();
        let ln_seen = (-p0).ln_1p();
        spectrum
            .iter()
            .map(|(k, phi)| {
                let kf = f64::from(k);
                phi as f64 * (ln_choose(u64::from(n), u64::from(k)) + lbeta(kf + a, nf - kf + b) - lb - ln_seen)
            })
            .sum::<f64>()
    };
    let (a, b) = fit_log_pair(ll)?;
    if spectrum.iter().all(|(k, _)| k == n) {
        log::warn!("beta-binomial: every user was present on every pilot day; the fit is flat");
    }
    let p0 = (lbeta(a, nf + b) - lbeta(a, b)).exp();
    let cap = cap.unwrap_or(10.0 * observed).max(observed);
    let population = if p0 < 1.0 { (observed / (1.0 - p0)).min(cap) } else { cap };
    let appear = -(lbeta(a, b + nf + f64::from(d1)) - lbeta(a, b + nf)).exp_m1();
    Ok(finite_nonneg((population - observed) * appear))
}

/// Options of the beta-geometric predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaGeometricOptions {
    pub n_mc: usize,
    pub seed: u64,
    /// Optional cap on the estimated population.
    pub cap: Option<f64>,
}

impl Default for BetaGeometricOptions {
    fn default() -> Self {
        BetaGeometricOptions {
            n_mc: 10_000,
            seed: 0,
            cap: None,
        }
    }
}

/// Fitted `(α, β)` of the beta-geometric first-trigger law.
pub fn beta_geometric_fit(daily_new: &[u64]) -> Result<(f64, f64)> {
    let d0 = daily_new.len();
    if d0 < 2 {
        return Err(Error::Config("beta-geometric needs at least two pilot days".into()));
    }
    let d0f = d0 as f64;
    let ll = |a: f64, b: f64| {
        let lb = lbeta(a, b);
        let ln_seen = (-(lbeta(a, b + d0f) - lb).exp()).ln_1p();
        daily_new
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(i, &k)| k as f64 * (lbeta(a + 1.0, b + i as f64) - lb - ln_seen))
            .sum::<f64>()
    };
    fit_log_pair(ll)
}

/// Beta-geometric prediction from daily first-trigger counts.
pub fn beta_geometric_predict(daily_new: &[u64], d1: u32, opts: &BetaGeometricOptions) -> Result<f64> {
    let d0 = daily_new.len();
    if d0 < 2 {
        return Err(Error::Config("beta-geometric needs at least two pilot days".into()));
    }
    if opts.n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let observed: u64 = daily_new.iter().sum();
    if observed == 0 || d1 == 0 {
        return Ok(0.0);
    }
    if daily_new[1..].iter().all(|&k| k == 0) {
        log::warn!("beta-geometric: all arrivals on day 1; prediction is near zero");
    }
    let (a, b) = beta_geometric_fit(daily_new)?;
    let d0f = d0 as f64;
    let seen = -(lbeta(a, b + d0f) - lbeta(a, b)).exp_m1();
    let observed = observed as f64;
    let mut population = if seen > 0.0 { observed / seen } else { f64::INFINITY };
    if let Some(cap) = opts.cap {
        population = population.min(cap.max(observed));
    }
    let mut rng = stream(opts.seed, &[0x6267]);
    let d1f = f64::from(d1);
    let appear = (0..opts.n_mc)
        .map(|_| {
            let theta = beta_unchecked(&mut rng, a, b + d0f);
            -libm::expm1(d1f * libm::log1p(-theta))
        })
        .sum::<f64>()
        / opts.n_mc as f64;
    Ok(finite_nonneg((population - observed) * appear))
}

/// Settings shared by all baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub gt_smoothing: bool,
    pub bb_cap: Option<f64>,
    pub bg: BetaGeometricOptions,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            gt_smoothing: true,
            bb_cap: None,
            bg: BetaGeometricOptions::default(),
        }
    }
}

/// Predicted new users over `d1` days for any baseline.
pub fn predict_baseline(
    id: BaselineId,
    spectrum: &FreqSpectrum,
    daily_new: &[u64],
    d1: u32,
    opts: &BaselineOptions,
) -> Result<f64> {
    match id {
        BaselineId::Jk1 => jackknife_predict(spectrum, d1, 1),
        BaselineId::Jk2 => jackknife_predict(spectrum, d1, 2),
        BaselineId::Jk3 => jackknife_predict(spectrum, d1, 3),
        BaselineId::Jk4 => jackknife_predict(spectrum, d1, 4),
        BaselineId::Gt => good_toulmin_predict(spectrum, d1, opts.gt_smoothing),
        BaselineId::Bb => beta_binomial_predict(spectrum, d1, opts.bb_cap),
        BaselineId::Bg => beta_geometric_predict(daily_new, d1, &opts.bg),
    }
}
