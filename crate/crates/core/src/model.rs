//! Closed-form posteriors, predictive laws and the marginal likelihood.
//!
//! Conditioning on the (tilted) largest jump makes every predictive law a
//! negative binomial or a beta–negative-binomial compound. Point predictions
//! are always closed-form; only intervals of compound laws use Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PilotSummary, SuffStats};
use crate::error::{Error, Result};
use crate::math::{
    lbeta, lgamma, log_rho_unchecked, psi_unchecked, quantile_sorted, reg_inc_beta,
    reg_lower_gamma, rho_first_moment, RhoConvention,
};
use crate::simulate::{gamma_unit, ln_gamma_draw, poisson_unchecked, stream, uniform};

/// Hyperparameters `(β, σ, c, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Tilting mass.
    pub beta: f64,
    /// Stable index.
    pub sigma: f64,
    /// Tilting shape; zero is admitted (the untilted-shape boundary).
    pub c: f64,
    /// Negative binomial failure parameter of the daily counts.
    pub r: f64,
}

impl HyperParams {
    pub fn new(beta: f64, sigma: f64, c: f64, r: f64) -> Result<Self> {
        let p = HyperParams { beta, sigma, c, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::domain("HyperParams", format!("{what} = {v} is out of range")))
        };
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta", self.beta);
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma", self.sigma);
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return bad("c", self.c);
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return bad("r", self.r);
        }
        Ok(())
    }

    fn psi(&self, x: u32, y: u32) -> f64 {
        psi_unchecked(self.sigma, self.r, f64::from(x), f64::from(y))
    }
}

/// `NegBin(failures, p)`: `P(k) = C(k+failures−1, k) p^k (1−p)^failures`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinDist {
    pub failures: f64,
    pub success_prob: f64,
}

impl NegBinDist {
    pub fn new(failures: f64, success_prob: f64) -> Result<Self> {
        if !(failures > 0.0) || !failures.is_finite() {
            return Err(Error::domain("NegBinDist", format!("failures = {failures} must be positive")));
        }
        if !(0.0..1.0).contains(&success_prob) {
            return Err(Error::domain("NegBinDist", format!("p = {success_prob} not in [0, 1)")));
        }
        Ok(NegBinDist {
            failures,
            success_prob,
        })
    }

    pub fn mean(&self) -> f64 {
        self.failures * self.success_prob / (1.0 - self.success_prob)
    }

    pub fn variance(&self) -> f64 {
        let q = 1.0 - self.success_prob;
        self.failures * self.success_prob / (q * q)
    }

    pub fn ln_pmf(&self, k: u64) -> f64 {
        let (r, p) = (self.failures, self.success_prob);
        if p == 0.0 {
            return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let kf = k as f64;
        lgamma(kf + r) - lgamma(kf + 1.0) - lgamma(r) + kf * p.ln() + r * (-p).ln_1p()
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.ln_pmf(k).exp()
    }

    pub fn cdf(&self, k: u64) -> f64 {
        if self.success_prob == 0.0 {
            return 1.0;
        }
        reg_inc_beta(self.failures, k as f64 + 1.0, 1.0 - self.success_prob)
    }

    /// Smallest `k` with `P(K ≤ k) ≥ q`.
    pub fn quantile(&self, q: f64) -> u64 {
        if self.success_prob == 0.0 || q <= 0.0 {
            return 0;
        }
        let sd = self.variance().sqrt();
        let reach = self.mean() + 40.0 * sd + 50.0;
        if reach < 2e6 {
            self.quantile_by_accumulation(q)
        } else {
            self.quantile_by_bisection(q)
        }
    }

    fn quantile_by_accumulation(&self, q: f64) -> u64 {
        let (r, p) = (self.failures, self.success_prob);
        let ln_q = q.ln();
        let ln_p = p.ln();
        let mut ln_pmf = r * (-p).ln_1p();
        let mut ln_cdf = ln_pmf;
        let mut k = 0u64;
        while ln_cdf < ln_q {
            ln_pmf += ((k as f64 + r) / (k as f64 + 1.0)).ln() + ln_p;
            k += 1;
            // log-sum-exp of (ln_cdf, ln_pmf)
            let (hi, lo) = if ln_cdf > ln_pmf { (ln_cdf, ln_pmf) } else { (ln_pmf, ln_cdf) };
            ln_cdf = hi + (lo - hi).exp().ln_1p();
            if ln_pmf < ln_cdf - 60.0 && k as f64 > self.mean() {
                // the remaining mass is negligible; rounding keeps ln_cdf just below ln_q
                break;
            }
        }
        k
    }

    fn quantile_by_bisection(&self, q: f64) -> u64 {
        let mut lo = 0u64;
        let mut hi = (self.mean() + 10.0 * self.variance().sqrt()).ceil() as u64 + 1;
        while self.cdf(hi) < q {
            hi = hi.saturating_mul(2);
        }
        if self.cdf(0) >= q {
            return 0;
        }
        // invariant: cdf(lo) < q ≤ cdf(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(mid) >= q {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// Continuous quantile by bisection on a monotone CDF over `[lo, hi]`.
fn bisect_quantile(cdf: impl Fn(f64) -> f64, q: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDist {
    pub a: f64,
    pub b: f64,
}

impl BetaDist {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::domain("BetaDist", format!("({a}, {b}) must be positive")));
        }
        Ok(BetaDist { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        reg_inc_beta(self.a, self.b, x.clamp(0.0, 1.0))
    }

    pub fn quantile(&self, q: f64) -> f64 {
        bisect_quantile(|x| self.cdf(x), q, 0.0, 1.0)
    }
}

/// `Gamma(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaDist {
    pub shape: f64,
    pub rate: f64,
}

impl GammaDist {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(Error::domain("GammaDist", format!("({shape}, {rate}) must be positive")));
        }
        Ok(GammaDist { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        reg_lower_gamma(self.shape, self.rate * x.max(0.0))
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut hi = self.mean() + 10.0 * self.variance().sqrt() + 1.0;
        while self.cdf(hi) < q {
            hi *= 2.0;
        }
        bisect_quantile(|x| self.cdf(x), q, 0.0, hi)
    }
}

/// Posterior law of `Δ^{−σ}` (Δ the tilted largest jump) given the pilot:
/// `Gamma(N + c + 1, β + ψ_0^{(D0)})`.
pub fn largest_jump_posterior(params: &HyperParams, pilot: &impl PilotSummary) -> Result<GammaDist> {
    params.validate()?;
    let n = pilot.n_users() as f64;
    GammaDist::new(n + params.c + 1.0, params.beta + params.psi(0, pilot.pilot_days()))
}

/// Which beta factor enters the per-user term of the marginal likelihood.
///
/// `Integrated` is `B(m − σ, rD0 + 1)`, what integrating a user's jump
/// against its Lévy density actually yields. `AsPrinted` is
/// `B(rD0 + 1, m − σ + 1)`, a variant that does not normalize; it is kept
/// only for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiForm {
    #[default]
    Integrated,
    AsPrinted,
}

/// Log marginal likelihood of the pilot data.
pub fn log_marginal_likelihood(params: &HyperParams, stats: &SuffStats) -> Result<f64> {
    log_marginal_likelihood_with(params, stats, XiForm::Integrated)
}

pub fn log_marginal_likelihood_with(params: &HyperParams, stats: &SuffStats, xi: XiForm) -> Result<f64> {
    params.validate()?;
    Ok(lml_unchecked(params, stats, xi))
}

pub(crate) fn lml_unchecked(params: &HyperParams, stats: &SuffStats, xi: XiForm) -> f64 {
    let HyperParams { beta, sigma, c, r } = *params;
    let d0 = stats.pilot_days();
    let n = stats.n_users() as f64;
    let psi0 = params.psi(0, d0);
    let mut ll = (c + 1.0) * beta.ln() - (n + c + 1.0) * (beta + psi0).ln() + lgamma(n + c + 1.0)
        - lgamma(c + 1.0);
    if n == 0.0 {
        return ll;
    }
    ll += n * sigma.ln();
    for &(a, mult) in stats.count_histogram() {
        let af = a as f64;
        // ln C(a + r − 1, a)
        ll += mult as f64 * (lgamma(af + r) - lgamma(af + 1.0) - lgamma(r));
    }
    let rd = r * f64::from(d0);
    for &(m, mult) in stats.total_histogram() {
        let mf = m as f64;
        let lb = match xi {
            XiForm::Integrated => lbeta(mf - sigma, rd + 1.0),
            XiForm::AsPrinted => lbeta(rd + 1.0, mf - sigma + 1.0),
        };
        ll += mult as f64 * lb;
    }
    ll
}

/// Number of new users over the next `d1` days:
/// `NegBin(N + c + 1, ψ_{D0}^{(D1)} / (β + ψ_0^{(D0+D1)}))`.
pub fn predict_new_users(params: &HyperParams, pilot: &impl PilotSummary, d1: u32) -> Result<NegBinDist> {
    params.validate()?;
    let d0 = pilot.pilot_days();
    let p = params.psi(d0, d1) / (params.beta + params.psi(0, d0 + d1));
    NegBinDist::new(pilot.n_users() as f64 + params.c + 1.0, p)
}

/// Number of new users whose follow-up total is exactly `j`.
pub fn predict_new_users_freq(
    params: &HyperParams,
    pilot: &impl PilotSummary,
    d1: u32,
    j: u64,
    conv: RhoConvention,
) -> Result<NegBinDist> {
    params.validate()?;
    if j == 0 {
        return Err(Error::domain("predict_new_users_freq", "j must be at least 1"));
    }
    let failures = pilot.n_users() as f64 + params.c + 1.0;
    if d1 == 0 {
        return NegBinDist::new(failures, 0.0);
    }
    let d0 = pilot.pilot_days();
    let rho = log_rho_unchecked(j, params.sigma, params.r, d0, d1, conv).exp();
    let p = rho / (params.beta + params.psi(0, d0) + rho);
    NegBinDist::new(failures, p)
}

/// Posterior of the rate of a user with pilot total `m` after `d0` days:
/// `Beta(m − σ, r·d0 + 1)`.
pub fn posterior_jump(params: &HyperParams, m: u64, d0: u32) -> Result<BetaDist> {
    params.validate()?;
    if m == 0 || d0 == 0 {
        return Err(Error::domain("posterior_jump", "need m ≥ 1 and D0 ≥ 1"));
    }
    BetaDist::new(m as f64 - params.sigma, params.r * f64::from(d0) + 1.0)
}

/// Point prediction with a credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval {
        mean: 0.0,
        lo: 0.0,
        hi: 0.0,
    };

    /// Widened if necessary so that `lo ≤ mean ≤ hi`.
    pub fn enclosing(mean: f64, lo: f64, hi: f64) -> Self {
        Interval {
            mean,
            lo: lo.min(mean),
            hi: hi.max(mean),
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::domain("credible level", format!("{level} not in (0, 1)")))
    }
}

/// Central credible interval: the `(1−level)/2` and `(1+level)/2` quantiles.
pub fn negbin_interval(dist: &NegBinDist, level: f64) -> Result<(u64, u64)> {
    check_level(level)?;
    let tail = 0.5 * (1.0 - level);
    Ok((dist.quantile(tail), dist.quantile(1.0 - tail)))
}

fn mc_interval(mut draws: Vec<f64>, mean: f64, level: f64) -> Interval {
    draws.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let lo = quantile_sorted(&draws, tail).unwrap_or(mean);
    let hi = quantile_sorted(&draws, 1.0 - tail).unwrap_or(mean);
    Interval::enclosing(mean, lo, hi)
}

fn check_n_mc(n_mc: usize) -> Result<()> {
    if n_mc == 0 {
        return Err(Error::domain("Monte Carlo", "n_mc must be at least 1"));
    }
    Ok(())
}

/// One draw of the follow-up total of pilot users. Given the jumps the
/// per-user counts are Poisson mixtures, so the sum is a single Poisson
/// over the summed rates `G_n·J_n/(1−J_n)` with `G_n ~ Gamma(r·D1)`.
fn draw_old_sum<R: rand::RngCore>(rng: &mut R, params: &HyperParams, stats: &SuffStats, d1: u32) -> f64 {
    let b = params.r * f64::from(stats.pilot_days()) + 1.0;
    let fail = params.r * f64::from(d1);
    let mut rate = 0.0;
    for &(m, mult) in stats.total_histogram() {
        let a = m as f64 - params.sigma;
        for _ in 0..mult {
            // J/(1−J) is a ratio of independent gammas
            rate += gamma_unit(rng, fail) * gamma_unit(rng, a) / gamma_unit(rng, b);
        }
    }
    poisson_unchecked(rng, rate.min(1e18)) as f64
}

fn old_sum_draws(params: &HyperParams, stats: &SuffStats, d1: u32, n_mc: usize, seed: u64) -> Vec<f64> {
    if d1 == 0 || stats.n_users() == 0 {
        return vec![0.0; n_mc];
    }
    (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[STREAM_OLD, i as u64]);
            draw_old_sum(&mut rng, params, stats, d1)
        })
        .collect()
}

fn old_sum_mean(params: &HyperParams, stats: &SuffStats, d1: u32) -> f64 {
    if d1 == 0 || stats.n_users() == 0 {
        return 0.0;
    }
    let excess: f64 = stats
        .total_histogram()
        .iter()
        .map(|&(m, mult)| mult as f64 * (m as f64 - params.sigma))
        .sum();
    f64::from(d1) / f64::from(stats.pilot_days()) * excess
}

const STREAM_OLD: u64 = 0x6f6c64;
const STREAM_TOTAL: u64 = 0x746f74;

/// Follow-up total of users seen in the pilot: each contributes
/// `NegBin(r·D1, J_n)` with `J_n ~ Beta(m_n − σ, r·D0 + 1)`. The mean is
/// `(D1/D0) Σ (m_n − σ)`; the interval is Monte Carlo.
pub fn predict_old_users_sum(
    params: &HyperParams,
    stats: &SuffStats,
    d1: u32,
    n_mc: usize,
    seed: u64,
    level: f64,
) -> Result<Interval> {
    params.validate()?;
    check_level(level)?;
    check_n_mc(n_mc)?;
    if d1 == 0 || stats.n_users() == 0 {
        return Ok(Interval::ZERO);
    }
    let mean = old_sum_mean(params, stats, d1);
    Ok(mc_interval(old_sum_draws(params, stats, d1, n_mc, seed), mean, level))
}

/// Options of the total-activity predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalOptions {
    /// Initial frequency truncation, doubled until the neglected tail is
    /// below `1e-6` of the mean.
    pub j_max: u64,
    pub n_mc: usize,
    pub seed: u64,
    pub level: f64,
    pub convention: RhoConvention,
}

impl Default for TotalOptions {
    fn default() -> Self {
        TotalOptions {
            j_max: 50,
            n_mc: 10_000,
            seed: 0,
            level: 0.95,
            convention: RhoConvention::NegBinPmf,
        }
    }
}

/// Total follow-up activity with its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalPrediction {
    pub total: Interval,
    /// `Σ_{j ≤ j_max} j E[U_j]`.
    pub new_mean: f64,
    /// `E[S]`, the old-user part.
    pub old_mean: f64,
    /// Truncation actually used.
    pub j_max: u64,
    /// Estimated mass beyond `j_max`, relative to the mean.
    pub relative_tail: f64,
}

const J_MAX_CAP: u64 = 1 << 20;
const TAIL_TOL: f64 = 1e-6;
/// Frequencies at or below this get one Poisson draw each per replicate;
/// the remainder is drawn as a compound Poisson.
const DIRECT_J: usize = 256;

struct TotalSeries {
    rhos: Vec<f64>,
    shape: f64,
    rate: f64,
    new_mean: f64,
    old_mean: f64,
    j_max: u64,
    relative_tail: f64,
}

/// Frequency masses `ρ_1..ρ_{j_max}` with `j_max` doubled until the
/// neglected tail is small, and the resulting means.
fn total_series(
    params: &HyperParams,
    stats: &SuffStats,
    d1: u32,
    j_max: u64,
    convention: RhoConvention,
) -> Result<TotalSeries> {
    params.validate()?;
    if j_max == 0 {
        return Err(Error::domain("predict_total", "j_max must be at least 1"));
    }
    let HyperParams { beta, sigma, c, r } = *params;
    let d0 = stats.pilot_days();
    let shape = stats.n_users() as f64 + c + 1.0;
    let rate = beta + params.psi(0, d0);
    if d1 == 0 {
        return Ok(TotalSeries {
            rhos: Vec::new(),
            shape,
            rate,
            new_mean: 0.0,
            old_mean: 0.0,
            j_max,
            relative_tail: 0.0,
        });
    }
    if d0 == 0 && convention == RhoConvention::NegBinPmf {
        return Err(Error::domain(
            "predict_total",
            "expected follow-up activity of new users is infinite without pilot days",
        ));
    }
    let scale = shape / rate;
    let old_mean = old_sum_mean(params, stats, d1);

    let mut rhos: Vec<f64> = Vec::new();
    let mut weighted = 0.0; // Σ j ρ_j
    let mut j_max = j_max;
    let exact = (convention == RhoConvention::NegBinPmf).then(|| rho_first_moment(sigma, r, d0, d1));
    let relative_tail = loop {
        for j in rhos.len() as u64 + 1..=j_max {
            let rho = log_rho_unchecked(j, sigma, r, d0, d1, convention).exp();
            weighted += j as f64 * rho;
            rhos.push(rho);
        }
        let mean = scale * weighted + old_mean;
        let tail = match exact {
            Some(full) => scale * (full - weighted).max(0.0),
            // without a closed form, the last half of the range stands in for the rest
            None => {
                let half = (j_max / 2) as usize;
                scale * rhos[half..].iter().enumerate().map(|(i, x)| (half + i + 1) as f64 * x).sum::<f64>()
            }
        };
        let rel = if mean > 0.0 { tail / mean } else { 0.0 };
        if rel < TAIL_TOL || j_max >= J_MAX_CAP {
            if rel >= TAIL_TOL {
                log::warn!(
                    "frequency truncation capped at {j_max}; neglected tail is {rel:.3e} of the mean"
                );
            }
            break rel;
        }
        j_max = (j_max * 2).min(J_MAX_CAP);
    };
    Ok(TotalSeries {
        rhos,
        shape,
        rate,
        new_mean: scale * weighted,
        old_mean,
        j_max,
        relative_tail,
    })
}

/// Closed-form mean of the total follow-up activity, without intervals.
pub fn expected_total(
    params: &HyperParams,
    stats: &SuffStats,
    d1: u32,
    j_max: u64,
    convention: RhoConvention,
) -> Result<f64> {
    let s = total_series(params, stats, d1, j_max, convention)?;
    Ok(s.new_mean + s.old_mean)
}

/// Total follow-up activity `T = Σ_j j U_j + S`.
pub fn predict_total(
    params: &HyperParams,
    stats: &SuffStats,
    d1: u32,
    opts: &TotalOptions,
) -> Result<TotalPrediction> {
    total_with(params, stats, d1, opts, None)
}

/// `old` are precomputed old-user draws from the same streams, if any.
fn total_with(
    params: &HyperParams,
    stats: &SuffStats,
    d1: u32,
    opts: &TotalOptions,
    old: Option<Vec<f64>>,
) -> Result<TotalPrediction> {
    check_level(opts.level)?;
    check_n_mc(opts.n_mc)?;
    let series = total_series(params, stats, d1, opts.j_max, opts.convention)?;
    if d1 == 0 {
        return Ok(TotalPrediction {
            total: Interval::ZERO,
            new_mean: 0.0,
            old_mean: 0.0,
            j_max: series.j_max,
            relative_tail: 0.0,
        });
    }
    let TotalSeries {
        rhos,
        shape,
        rate,
        new_mean,
        old_mean,
        j_max,
        relative_tail,
    } = series;

    let direct = rhos.len().min(DIRECT_J);
    let far_mass: f64 = rhos[direct..].iter().sum();
    let mut far_cdf = Vec::with_capacity(rhos.len() - direct);
    let mut acc = 0.0;
    for &x in &rhos[direct..] {
        acc += x;
        far_cdf.push(acc);
    }

    let old = old.unwrap_or_else(|| old_sum_draws(params, stats, d1, opts.n_mc, opts.seed));
    let draws: Vec<f64> = (0..opts.n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(opts.seed, &[STREAM_TOTAL, i as u64]);
            let x = libm::exp(ln_gamma_draw(&mut rng, shape)) / rate;
            let mut t = 0u64;
            for (k, &rho) in rhos[..direct].iter().enumerate() {
                t += (k as u64 + 1) * poisson_unchecked(&mut rng, x * rho);
            }
            if far_mass > 0.0 {
                let count = poisson_unchecked(&mut rng, x * far_mass);
                for _ in 0..count {
                    let target = uniform(&mut rng) * far_mass;
                    let idx = far_cdf.partition_point(|&v| v < target).min(far_cdf.len() - 1);
                    t += (direct + idx + 1) as u64;
                }
            }
            t as f64 + old[i]
        })
        .collect();

    Ok(TotalPrediction {
        total: mc_interval(draws, new_mean + old_mean, opts.level),
        new_mean,
        old_mean,
        j_max,
        relative_tail,
    })
}

/// A frequency-resolved new-user prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqInterval {
    pub j: u64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Everything predicted for one follow-up window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub pilot_days: u32,
    pub horizon: u32,
    pub level: f64,
    pub new_users: Interval,
    pub new_by_freq: Vec<FreqInterval>,
    /// Absent when only arrival counts were available.
    pub old_sum: Option<Interval>,
    pub total: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub freq_max: u64,
    pub level: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub j_max: u64,
    pub convention: RhoConvention,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            freq_max: 10,
            level: 0.95,
            n_mc: 10_000,
            seed: 0,
            j_max: 50,
            convention: RhoConvention::NegBinPmf,
        }
    }
}

fn negbin_summary(dist: &NegBinDist, level: f64) -> Result<Interval> {
    let (lo, hi) = negbin_interval(dist, level)?;
    Ok(Interval::enclosing(dist.mean(), lo as f64, hi as f64))
}

/// New-user part of a forecast; needs only the pilot length and user count.
pub fn forecast_new_users(
    params: &HyperParams,
    pilot: &impl PilotSummary,
    d1: u32,
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    check_level(opts.level)?;
    let new_users = negbin_summary(&predict_new_users(params, pilot, d1)?, opts.level)?;
    let new_by_freq = (1..=opts.freq_max)
        .map(|j| {
            let s = negbin_summary(&predict_new_users_freq(params, pilot, d1, j, opts.convention)?, opts.level)?;
            Ok(FreqInterval {
                j,
                mean: s.mean,
                lo: s.lo,
                hi: s.hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastReport {
        pilot_days: pilot.pilot_days(),
        horizon: d1,
        level: opts.level,
        new_users,
        new_by_freq,
        old_sum: None,
        total: None,
    })
}

/// Full forecast from per-user pilot statistics.
pub fn forecast(params: &HyperParams, stats: &SuffStats, d1: u32, opts: &ForecastOptions) -> Result<ForecastReport> {
    let mut report = forecast_new_users(params, stats, d1, opts)?;
    check_n_mc(opts.n_mc)?;
    let old = old_sum_draws(params, stats, d1, opts.n_mc, opts.seed);
    report.old_sum = Some(mc_interval(old.clone(), old_sum_mean(params, stats, d1), opts.level));
    let total = total_with(
        params,
        stats,
        d1,
        &TotalOptions {
            j_max: opts.j_max,
            n_mc: opts.n_mc,
            seed: opts.seed,
            level: opts.level,
            convention: opts.convention,
        },
        Some(old),
    )?;
    report.total = Some(total.total);
    Ok(report)
}
