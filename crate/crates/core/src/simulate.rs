//! Exact generative samplers: the sequential urn scheme for the model, the
//! Zipf–Poisson benchmark generator, and the primitive draws they rely on.
//!
//! All sampling goes through a ChaCha8 stream and `libm`, so a seed yields
//! the same data on every platform. Independent streams are derived from
//! `(seed, ids…)` by SplitMix64 mixing.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SuffStats, TriggerData};
use crate::error::{Error, Result};
use crate::math::psi_unchecked;
use crate::model::HyperParams;

pub type SimRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the sub-stream `ids` of `seed`.
pub fn stream(seed: u64, ids: &[u64]) -> SimRng {
    let mut h = splitmix(seed);
    for &id in ids {
        h = splitmix(h ^ splitmix(id.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        h = splitmix(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn std_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    // Marsaglia polar method
    loop {
        let u = 2.0 * uniform(rng) - 1.0;
        let v = 2.0 * uniform(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * libm::sqrt(-2.0 * libm::log(s) / s);
        }
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`; stays finite for tiny shapes where `G`
/// itself underflows.
pub(crate) fn ln_gamma_draw<R: RngCore + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        // G(a) = G(a+1) U^{1/a}
        let g = ln_gamma_draw(rng, shape + 1.0);
        return g + libm::log(uniform(rng)) / shape;
    }
    // Marsaglia–Tsang
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = std_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return libm::log(d * v);
        }
    }
}

/// `Gamma(shape, 1)` in linear space; cheaper than [`ln_gamma_draw`] when
/// underflow is not a concern.
pub(crate) fn gamma_unit<R: RngCore + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = gamma_unit(rng, shape + 1.0);
        return g * libm::pow(uniform(rng), 1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = std_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v)) {
            return d * v;
        }
    }
}

fn check_pos(func: &'static str, name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(func, format!("{name} = {x} must be positive and finite")))
    }
}

fn check_prob(func: &'static str, p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(func, format!("p = {p} not in [0, 1)")))
    }
}

/// `Gamma(shape, rate)`.
pub fn gamma_draw<R: RngCore + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    check_pos("gamma_draw", "shape", shape)?;
    check_pos("gamma_draw", "rate", rate)?;
    Ok(libm::exp(ln_gamma_draw(rng, shape)) / rate)
}

pub(crate) fn beta_unchecked<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let x = ln_gamma_draw(rng, a);
    let y = ln_gamma_draw(rng, b);
    // X / (X + Y) computed from logs
    let t = 1.0 / (1.0 + libm::exp(y - x));
    t.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `Beta(a, b)`, always strictly inside (0, 1).
pub fn beta_draw<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    check_pos("beta_draw", "a", a)?;
    check_pos("beta_draw", "b", b)?;
    Ok(beta_unchecked(rng, a, b))
}

pub(crate) fn poisson_unchecked<R: RngCore + ?Sized>(rng: &mut R, lam: f64) -> u64 {
    if lam <= 0.0 {
        return 0;
    }
    if lam < 10.0 {
        // inversion
        let mut p = libm::exp(-lam);
        let mut cdf = p;
        let u = uniform(rng);
        let mut k = 0u64;
        while u > cdf && k < 1000 {
            k += 1;
            p *= lam / k as f64;
            cdf += p;
        }
        return k;
    }
    // Hörmann's PTRS
    let slam = libm::sqrt(lam);
    let loglam = libm::log(lam);
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = uniform(rng) - 0.5;
        let v = uniform(rng);
        let us = 0.5 - u.abs();
        let k = libm::floor((2.0 * a / us + b) * u + lam + 0.43);
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if libm::log(v) + libm::log(invalpha) - libm::log(a / (us * us) + b)
            <= -lam + k * loglam - libm::lgamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

pub fn poisson_draw<R: RngCore + ?Sized>(rng: &mut R, lam: f64) -> Result<u64> {
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(Error::domain("poisson_draw", format!("lambda = {lam} must be finite and ≥ 0")));
    }
    Ok(poisson_unchecked(rng, lam))
}

/// `NegBin(r, p)` with `P(k) = C(k+r−1, k) p^k (1−p)^r`, as a Poisson–Gamma mixture.
pub(crate) fn negbin_unchecked<R: RngCore + ?Sized>(rng: &mut R, r: f64, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    let ln_lam = ln_gamma_draw(rng, r) + libm::log(p) - libm::log1p(-p);
    poisson_unchecked(rng, libm::exp(ln_lam).min(1e18))
}

pub fn negbin_draw<R: RngCore + ?Sized>(rng: &mut R, r: f64, p: f64) -> Result<u64> {
    check_pos("negbin_draw", "r", r)?;
    check_prob("negbin_draw", p)?;
    Ok(negbin_unchecked(rng, r, p))
}

/// Inverse-CDF draw over `k ≥ 1` from weights `w_1 = 1`, `w_{k+1} = w_k·ratio(k)`
/// with known total mass.
fn tail_inversion<R: RngCore + ?Sized>(rng: &mut R, total: f64, ratio: impl Fn(f64) -> f64) -> u64 {
    let target = uniform(rng) * total;
    let mut w = 1.0;
    let mut acc = 1.0;
    let mut k = 1u64;
    while acc < target && w > 0.0 {
        w *= ratio(k as f64);
        acc += w;
        k += 1;
    }
    k
}

pub(crate) fn truncated_negbin_unchecked<R: RngCore + ?Sized>(rng: &mut R, r: f64, p: f64) -> u64 {
    // P(K ≥ 1) = 1 − (1−p)^r
    let accept = -libm::expm1(r * libm::log1p(-p));
    if accept >= 0.1 {
        loop {
            let k = negbin_unchecked(rng, r, p);
            if k >= 1 {
                return k;
            }
        }
    }
    // relative to the k = 1 mass r p (1−p)^r
    let total = accept / (r * p * libm::exp(r * libm::log1p(-p)));
    tail_inversion(rng, total, |k| (k + r) / (k + 1.0) * p)
}

/// `NegBin(r, p)` conditioned on being at least 1.
pub fn truncated_negbin_draw<R: RngCore + ?Sized>(rng: &mut R, r: f64, p: f64) -> Result<u64> {
    check_pos("truncated_negbin_draw", "r", r)?;
    check_prob("truncated_negbin_draw", p)?;
    if p == 0.0 {
        return Err(Error::domain("truncated_negbin_draw", "p = 0 puts no mass on k ≥ 1"));
    }
    Ok(truncated_negbin_unchecked(rng, r, p))
}

pub(crate) fn truncated_poisson_unchecked<R: RngCore + ?Sized>(rng: &mut R, lam: f64) -> u64 {
    if lam <= 0.0 {
        return 1;
    }
    let accept = -libm::expm1(-lam);
    if accept >= 0.1 {
        loop {
            let k = poisson_unchecked(rng, lam);
            if k >= 1 {
                return k;
            }
        }
    }
    let total = libm::expm1(lam) / lam;
    tail_inversion(rng, total, |k| lam / (k + 1.0))
}

/// `Poisson(λ)` conditioned on being at least 1; `λ = 0` is the limiting point mass at 1.
pub fn truncated_poisson_draw<R: RngCore + ?Sized>(rng: &mut R, lam: f64) -> Result<u64> {
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(Error::domain(
            "truncated_poisson_draw",
            format!("lambda = {lam} must be finite and ≥ 0"),
        ));
    }
    Ok(truncated_poisson_unchecked(rng, lam))
}

/// Index drawn proportionally to nonnegative `weights`.
pub fn discrete_pmf_draw<R: RngCore + ?Sized>(rng: &mut R, weights: &[f64]) -> Result<usize> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("discrete_pmf_draw", "weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("discrete_pmf_draw", "weights sum to zero"));
    }
    let target = uniform(rng) * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return Ok(i);
        }
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap_or(0))
}

pub(crate) fn new_user_jump_unchecked<R: RngCore + ?Sized>(rng: &mut R, sigma: f64, r: f64, d: f64) -> f64 {
    // Beta(1−σ, rd+1) proposal carries s^{−σ}(1−s)^{rd}; accept with the
    // remaining factor (1 − (1−s)^r)/s, bounded by max(r, 1).
    let bound = r.max(1.0);
    loop {
        let s = beta_unchecked(rng, 1.0 - sigma, r * d + 1.0);
        if s <= 0.0 || s >= 1.0 {
            continue;
        }
        let g = -libm::expm1(r * libm::log1p(-s)) / s;
        if uniform(rng) * bound < g {
            return s;
        }
    }
}

/// A jump for a user first seen on day `d + 1`: density on (0, 1)
/// proportional to `(1−s)^{rd} (1 − (1−s)^r) s^{−1−σ}`.
pub fn sample_new_user_jump(sigma: f64, r: f64, d: u32, seed: u64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::domain("sample_new_user_jump", format!("sigma = {sigma} not in (0, 1)")));
    }
    check_pos("sample_new_user_jump", "r", r)?;
    let mut rng = stream(seed, &[0x6a75_6d70]);
    Ok(new_user_jump_unchecked(&mut rng, sigma, r, f64::from(d)))
}

/// Sequential state of the urn scheme: the current day and each user's running total.
#[derive(Debug, Clone)]
pub struct Urn {
    params: HyperParams,
    day: u32,
    totals: Vec<u64>,
    track_from: usize,
}

impl Urn {
    /// The empty urn at day 0.
    pub fn new(params: HyperParams) -> Self {
        Urn {
            params,
            day: 0,
            totals: Vec::new(),
            track_from: 0,
        }
    }

    /// Resume after `pilot_days` observed days with the given per-user totals.
    pub fn resume(params: HyperParams, pilot_days: u32, totals: Vec<u64>) -> Result<Self> {
        if totals.contains(&0) {
            return Err(Error::Config("every observed user needs a positive total".into()));
        }
        if pilot_days == 0 && !totals.is_empty() {
            return Err(Error::Config("users observed over zero days".into()));
        }
        Ok(Urn {
            params,
            day: pilot_days,
            totals,
            track_from: 0,
        })
    }

    /// Stop simulating users already present. Their future activity does not
    /// influence new arrivals, so this is exact for new-user quantities.
    pub fn freeze_existing(&mut self) {
        self.track_from = self.totals.len();
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    /// Simulate the next day. Appends `(user index, count)` for every active
    /// user to `out`; new users get the next free indices.
    pub fn step<R: RngCore + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<(usize, u64)>) {
        let HyperParams { beta, sigma, c, r } = self.params;
        let d = f64::from(self.day);
        let n = self.totals.len();

        let p_new = psi_unchecked(sigma, r, d, 1.0) / (beta + psi_unchecked(sigma, r, 0.0, d + 1.0));
        let n_new = negbin_unchecked(rng, n as f64 + c + 1.0, p_new);

        let b = r * d + 1.0;
        for idx in self.track_from..n {
            let m = self.totals[idx] as f64;
            let jump = beta_unchecked(rng, m - sigma, b);
            let a = negbin_unchecked(rng, r, jump);
            if a > 0 {
                self.totals[idx] += a;
                out.push((idx, a));
            }
        }

        for i in 0..n_new as usize {
            let jump = new_user_jump_unchecked(rng, sigma, r, d);
            let a = truncated_negbin_unchecked(rng, r, jump);
            self.totals.push(a);
            out.push((n + i, a));
        }
        self.day += 1;
    }
}

/// What to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimSource {
    Model(HyperParams),
    Zipf { tau: f64, n_users: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub source: SimSource,
    pub days: u32,
    pub seed: u64,
}

impl SimConfig {
    pub fn model(params: HyperParams, days: u32, seed: u64) -> Self {
        SimConfig {
            source: SimSource::Model(params),
            days,
            seed,
        }
    }

    pub fn zipf(tau: f64, n_users: u64, days: u32, seed: u64) -> Self {
        SimConfig {
            source: SimSource::Zipf { tau, n_users },
            days,
            seed,
        }
    }
}

/// Dispatch on the configured source.
pub fn sample(config: &SimConfig) -> Result<TriggerData> {
    match config.source {
        SimSource::Model(_) => sample_model(config),
        SimSource::Zipf { .. } => sample_zipf(config),
    }
}

fn collect(days: u32, width: usize, prefix: char, series: Vec<Vec<(u32, u64)>>) -> Result<TriggerData> {
    let named = series
        .into_iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| (format!("{prefix}{:0width$}", i + 1), s))
        .collect();
    TriggerData::from_series(days, named)
}

/// Draw `days` days from the model with the urn scheme.
pub fn sample_model(config: &SimConfig) -> Result<TriggerData> {
    let SimSource::Model(params) = config.source else {
        return Err(Error::Config("sample_model needs model parameters".into()));
    };
    params.validate()?;
    let mut urn = Urn::new(params);
    let mut series: Vec<Vec<(u32, u64)>> = Vec::new();
    let mut today = Vec::new();
    for day in 1..=config.days {
        let mut rng = stream(config.seed, &[u64::from(day)]);
        today.clear();
        urn.step(&mut rng, &mut today);
        for &(idx, a) in &today {
            if idx == series.len() {
                series.push(Vec::new());
            }
            series[idx].push((day, a));
        }
    }
    collect(config.days, 7, 'u', series)
}

fn validate_zipf(tau: f64, n_users: u64) -> Result<()> {
    check_pos("sample_zipf", "tau", tau)?;
    if n_users == 0 {
        return Err(Error::domain("sample_zipf", "n_users must be at least 1"));
    }
    if n_users > u64::from(u32::MAX) {
        return Err(Error::domain("sample_zipf", "n_users too large"));
    }
    Ok(())
}

/// Zipf–Poisson generator: user `n` is present on a day with probability
/// `n^{−τ}` and then triggers `Poisson(1 + m/d)` times conditioned on at
/// least one, where `m` is its total before day `d`.
pub fn sample_zipf(config: &SimConfig) -> Result<TriggerData> {
    let SimSource::Zipf { tau, n_users } = config.source else {
        return Err(Error::Config("sample_zipf needs Zipf parameters".into()));
    };
    validate_zipf(tau, n_users)?;
    let n = n_users as usize;
    let theta: Vec<f64> = (1..=n).map(|i| libm::pow(i as f64, -tau)).collect();
    let mut totals = vec![0u64; n];
    let mut series: Vec<Vec<(u32, u64)>> = vec![Vec::new(); n];
    for day in 1..=config.days {
        let mut rng = stream(config.seed, &[u64::from(day)]);
        let prev = f64::from(day - 1).max(1.0);
        for i in 0..n {
            if uniform(&mut rng) < theta[i] {
                let lam = 1.0 + totals[i] as f64 / prev;
                let a = truncated_poisson_unchecked(&mut rng, lam);
                totals[i] += a;
                series[i].push((day, a));
            }
        }
    }
    let width = n.to_string().len();
    collect(config.days, width, 'z', series)
}

/// Follow-up activity simulated from a pilot by continuing the urn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuation {
    pub new_users: u64,
    /// New users keyed by their total count over the follow-up.
    pub new_by_freq: BTreeMap<u64, u64>,
    /// Follow-up total of pilot users; `None` when they were not simulated.
    pub old_sum: Option<u64>,
}

/// Continue the urn for `d1` days past the pilot summarized by `stats`.
/// With `include_old = false` pilot users are frozen, which is exact and much
/// cheaper when only new users matter.
pub fn continue_model(
    params: HyperParams,
    stats: &SuffStats,
    d1: u32,
    seed: u64,
    include_old: bool,
) -> Result<Continuation> {
    use crate::data::PilotSummary;
    params.validate()?;
    let mut urn = Urn::resume(params, stats.pilot_days(), stats.totals().to_vec())?;
    let n0 = stats.totals().len();
    if !include_old {
        urn.freeze_existing();
    }
    let mut old_sum = 0u64;
    let mut buf = Vec::new();
    for day in 1..=d1 {
        let mut rng = stream(seed, &[u64::from(day)]);
        buf.clear();
        urn.step(&mut rng, &mut buf);
        old_sum += buf.iter().filter(|(i, _)| *i < n0).map(|(_, a)| a).sum::<u64>();
    }
    let mut new_by_freq = BTreeMap::new();
    for &m in &urn.totals()[n0..] {
        *new_by_freq.entry(m).or_insert(0) += 1;
    }
    Ok(Continuation {
        new_users: (urn.totals().len() - n0) as u64,
        new_by_freq,
        old_sum: include_old.then_some(old_sum),
    })
}
