//! Independent numerical oracles shared by the integration tests.
//!
//! Everything here integrates the defining integrals directly instead of
//! going through the closed forms the crate uses.

#![allow(dead_code)]

use ab_horizon::data::{SuffStats, TriggerData};
use ab_horizon::math::log_gamma;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let (f1, f2) = (f(c - h * XGK[i]), f(c + h * XGK[i]));
        k += WGK[i] * (f1 + f2);
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive quadrature over the pieces `[pts[i], pts[i+1]]`: the
/// piece with the largest error estimate is bisected until the total error
/// falls below `rel_tol` of the total, or the budget runs out.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, pts: &[f64], rel_tol: f64) -> f64 {
    let mut parts: Vec<(f64, f64, f64, f64)> = pts
        .windows(2)
        .map(|w| {
            let (k, e) = gk15(&f, w[0], w[1]);
            (w[0], w[1], k, e)
        })
        .collect();
    for _ in 0..20_000 {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            break;
        }
        let worst = (0..parts.len()).max_by(|&i, &j| parts[i].3.total_cmp(&parts[j].3)).unwrap();
        let (a, b, _, _) = parts[worst];
        let m = 0.5 * (a + b);
        let (k1, e1) = gk15(&f, a, m);
        let (k2, e2) = gk15(&f, m, b);
        parts[worst] = (a, m, k1, e1);
        parts.push((m, b, k2, e2));
    }
    parts.iter().map(|p| p.2).sum()
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    integrate_pieces(f, &[a, b], rel_tol)
}

/// `∫₀¹ w(s) σ s^{−1−σ} ds` for `w(s) = O(s)` near zero. The substitution
/// `s = t^{1/(1−σ)}` turns the Lévy weight into the bounded factor
/// `σ/(1−σ) · w(s)/s`.
///
/// The unit interval is pre-split at `s = 2^{−k}` so that mass
/// concentrated near zero is not missed.
pub fn levy_integral(sigma: f64, w_over_s: impl Fn(f64) -> f64, rel_tol: f64) -> f64 {
    let k = sigma / (1.0 - sigma);
    let mut pts: Vec<f64> = (0..=60).rev().map(|i| 0.5f64.powi(i).powf(1.0 - sigma)).collect();
    pts[0] = 0.0;
    integrate_pieces(
        |t| {
            let s = t.powf(1.0 / (1.0 - sigma));
            k * w_over_s(s)
        },
        &pts,
        rel_tol,
    )
}

/// `ψ_x^{(y)} = ∫₀¹ [(1−s)^{rx} − (1−s)^{r(x+y)}] σ s^{−1−σ} ds`.
pub fn psi_quad(sigma: f64, r: f64, x: f64, y: f64) -> f64 {
    let scale = r * y;
    levy_integral(
        sigma,
        |s| {
            if s == 0.0 {
                return scale;
            }
            let l = (-s).ln_1p();
            -(r * x * l).exp() * (r * y * l).exp_m1() / s
        },
        1e-12,
    )
}

/// Negative-binomial mass with `failures` and success probability `s`.
pub fn negbin_pmf(k: u64, failures: f64, s: f64) -> f64 {
    let kf = k as f64;
    let lc = log_gamma(kf + failures).unwrap() - log_gamma(kf + 1.0).unwrap() - log_gamma(failures).unwrap();
    (lc + kf * s.ln() + failures * (-s).ln_1p()).exp()
}

/// Mass of users unseen for `d0` days whose follow-up total over `d1` days is `j ≥ 1`:
/// `∫ (1−s)^{r d0} NB(j; r d1, s) σ s^{−1−σ} ds`.
pub fn rho_quad(j: u64, sigma: f64, r: f64, d0: u32, d1: u32) -> f64 {
    let f0 = r * f64::from(d0);
    let f1 = r * f64::from(d1);
    levy_integral(
        sigma,
        |s| {
            if s == 0.0 {
                return if j == 1 { f1 } else { 0.0 };
            }
            (f0 * (-s).ln_1p()).exp() * negbin_pmf(j, f1, s) / s
        },
        1e-13,
    )
}

/// Per-user factor of the likelihood: probability of the user's exact daily
/// pattern (absent before `first_day`, the given counts from then on through
/// day `d0`) integrated against the Lévy density.
pub fn xi_quad(sigma: f64, r: f64, first_day: u32, counts: &[u64], d0: u32) -> f64 {
    assert_eq!(counts.len() as u32, d0 - first_day + 1);
    assert!(counts[0] > 0);
    let before = r * f64::from(first_day - 1);
    levy_integral(
        sigma,
        |s| {
            if s == 0.0 {
                // only a single count of one survives the limit
                let m: u64 = counts.iter().sum();
                return if m == 1 { r } else { 0.0 };
            }
            let mut p = (before * (-s).ln_1p()).exp();
            for &a in counts {
                p *= negbin_pmf(a, r, s);
            }
            p / s
        },
        1e-13,
    )
}

/// Log marginal likelihood assembled from quadrature: the largest-jump
/// Gamma mixture of the Poisson-process density of the observed users.
pub fn lml_quad(beta: f64, sigma: f64, c: f64, r: f64, data: &TriggerData, d0: u32) -> f64 {
    let n = data.n_users() as f64;
    let psi0 = psi_quad(sigma, r, 0.0, f64::from(d0));
    let mut ll = (c + 1.0) * beta.ln() - (n + c + 1.0) * (beta + psi0).ln() + log_gamma(n + c + 1.0).unwrap()
        - log_gamma(c + 1.0).unwrap();
    for u in data.users() {
        let f = u.first_day();
        let counts: Vec<u64> = (f..=d0).map(|d| data.count(d, u.id())).collect();
        ll += xi_quad(sigma, r, f, &counts, d0).ln();
    }
    ll
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn stats_of(data: &TriggerData, d0: u32) -> SuffStats {
    ab_horizon::compute_suffstats(&data.restrict(d0).unwrap(), d0).unwrap()
}
