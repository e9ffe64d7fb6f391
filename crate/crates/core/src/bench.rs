//! Accuracy metrics and the benchmark harness.
//!
//! Each dataset is split into a pilot (days `1..=D0`) and a follow-up window
//! (`D0+1..=D0+D1`). Methods only ever see the pilot copy; the follow-up is
//! read once, to compute the truth.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{predict_baseline, BaselineId, BaselineOptions};
use crate::data::{compute_spectrum, compute_suffstats, holdout_truth, SuffStats, TriggerData};
use crate::error::{Error, Result};
use crate::fit::{fit_mle, fit_regression, FitConfig};
use crate::math::{quantile_sorted, RhoConvention};
use crate::model::{expected_total, log_marginal_likelihood, predict_new_users, HyperParams};

/// `1 − min(|o − p| / o, 1)`; `None` when nothing was observed.
pub fn accuracy_v(observed: f64, predicted: f64) -> Option<f64> {
    if !(observed > 0.0) || !predicted.is_finite() {
        return None;
    }
    Some(1.0 - ((observed - predicted).abs() / observed).min(1.0))
}

/// A forecasting method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodId {
    NbpMle,
    NbpRegression,
    Baseline(BaselineId),
}

impl MethodId {
    pub fn is_nbp(&self) -> bool {
        matches!(self, MethodId::NbpMle | MethodId::NbpRegression)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::NbpMle => f.write_str("nbp-mle"),
            MethodId::NbpRegression => f.write_str("nbp-regression"),
            MethodId::Baseline(b) => b.fmt(f),
        }
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nbp-mle" => Ok(MethodId::NbpMle),
            "nbp-regression" => Ok(MethodId::NbpRegression),
            other => other
                .parse::<BaselineId>()
                .map(MethodId::Baseline)
                .map_err(|_| Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: usize,
    pub method: MethodId,
    pub d0: u32,
    pub d1: u32,
    /// Realized new users in the follow-up.
    pub observed: Option<f64>,
    pub predicted: Option<f64>,
    pub v: Option<f64>,
    /// Realized and predicted total follow-up activity (model methods only).
    pub observed_total: Option<f64>,
    pub predicted_total: Option<f64>,
    pub v_tilde: Option<f64>,
    /// Wall time; only recorded when timings are requested so that reports
    /// stay reproducible.
    pub runtime_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub d0: u32,
    pub d1: u32,
    pub methods: Vec<MethodId>,
    pub seed: u64,
    pub fit: FitConfig,
    pub baselines: BaselineOptions,
    pub convention: RhoConvention,
    pub timings: bool,
}

impl BenchConfig {
    pub fn new(d0: u32, d1: u32, methods: Vec<MethodId>, seed: u64) -> Self {
        BenchConfig {
            d0,
            d1,
            methods,
            seed,
            fit: FitConfig::default(),
            baselines: BaselineOptions::default(),
            convention: RhoConvention::NegBinPmf,
            timings: false,
        }
    }
}

/// Per-cell seed, independent of evaluation order.
fn cell_seed(seed: u64, dataset: usize, method: MethodId) -> u64 {
    let tag = method
        .to_string()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    let mut z = seed ^ (dataset as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pilot-only views of a dataset, built without touching follow-up days.
struct Pilot {
    stats: SuffStats,
    spectrum: crate::data::FreqSpectrum,
    daily_new: Vec<u64>,
}

fn prepare(data: &TriggerData, d0: u32) -> Result<Pilot> {
    let pilot = data.restrict(d0)?;
    let stats = compute_suffstats(&pilot, d0)?;
    let spectrum = compute_spectrum(&pilot, d0)?;
    let daily_new = stats.arrivals().daily();
    Ok(Pilot {
        stats,
        spectrum,
        daily_new,
    })
}

struct Predicted {
    new_users: f64,
    total: Option<f64>,
}

fn fit_nbp(method: MethodId, pilot: &Pilot, config: &BenchConfig, seed: u64) -> Result<HyperParams> {
    let fit_cfg = FitConfig { seed, ..config.fit };
    let out = match method {
        MethodId::NbpMle => fit_mle(&pilot.stats, &fit_cfg)?,
        _ => fit_regression(pilot.stats.arrivals(), &fit_cfg)?,
    };
    for w in &out.warnings {
        log::warn!("{method}: {w}");
    }
    Ok(out.params)
}

fn predict(method: MethodId, pilot: &Pilot, config: &BenchConfig, seed: u64) -> Result<Predicted> {
    match method {
        MethodId::Baseline(id) => {
            let mut opts = config.baselines;
            opts.bg.seed = seed;
            let v = predict_baseline(id, &pilot.spectrum, &pilot.daily_new, config.d1, &opts)?;
            Ok(Predicted {
                new_users: v,
                total: None,
            })
        }
        _ => {
            let params = fit_nbp(method, pilot, config, seed)?;
            let new_users = predict_new_users(&params, &pilot.stats, config.d1)?.mean();
            let total = expected_total(&params, &pilot.stats, config.d1, 50, config.convention)?;
            Ok(Predicted {
                new_users,
                total: Some(total),
            })
        }
    }
}

/// Score every method on every dataset. Failures are recorded in the
/// report's `error` field and never stop the sweep. Reports are ordered by
/// dataset, then by the order of `config.methods`.
pub fn run_benchmark(datasets: &[TriggerData], config: &BenchConfig) -> Vec<AccuracyReport> {
    let cells: Vec<(usize, MethodId)> = (0..datasets.len())
        .flat_map(|i| config.methods.iter().map(move |&m| (i, m)))
        .collect();
    let pilots: Vec<Result<Pilot>> = datasets.par_iter().map(|d| prepare(d, config.d0)).collect();
    let truths: Vec<_> = datasets
        .par_iter()
        .map(|d| holdout_truth(d, config.d0, config.d1))
        .collect();

    cells
        .par_iter()
        .map(|&(i, method)| {
            let mut report = AccuracyReport {
                dataset: i,
                method,
                d0: config.d0,
                d1: config.d1,
                observed: None,
                predicted: None,
                v: None,
                observed_total: None,
                predicted_total: None,
                v_tilde: None,
                runtime_ms: None,
                error: None,
            };
            let (pilot, truth) = match (&pilots[i], &truths[i]) {
                (Ok(p), Ok(t)) => (p, t),
                (Err(e), _) | (_, Err(e)) => {
                    report.error = Some(e.to_string());
                    return report;
                }
            };
            report.observed = Some(truth.new_users as f64);
            if method.is_nbp() {
                report.observed_total = Some(truth.total as f64);
            }
            let start = Instant::now();
            let outcome = predict(method, pilot, config, cell_seed(config.seed, i, method));
            if config.timings {
                report.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            match outcome {
                Ok(p) => {
                    report.predicted = Some(p.new_users);
                    report.v = accuracy_v(truth.new_users as f64, p.new_users);
                    report.predicted_total = p.total;
                    report.v_tilde = p.total.and_then(|t| accuracy_v(truth.total as f64, t));
                }
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect()
}

/// Which accuracy to summarize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    V,
    VTilde,
}

impl Metric {
    fn pick(&self, r: &AccuracyReport) -> Option<f64> {
        match self {
            Metric::V => r.v,
            Metric::VTilde => r.v_tilde,
        }
    }
}

/// Fraction of values at or above each level.
pub fn survival_from_values(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Config("survival curve of an empty set".into()));
    }
    let n = values.len() as f64;
    let mut levels = grid.to_vec();
    levels.sort_by(f64::total_cmp);
    Ok(levels
        .into_iter()
        .map(|l| (l, values.iter().filter(|&&v| v >= l).count() as f64 / n))
        .collect())
}

/// Survival curve of the chosen accuracy over reports that have it.
pub fn survival_curve(reports: &[AccuracyReport], grid: &[f64], metric: Metric) -> Result<Vec<(f64, f64)>> {
    let values: Vec<f64> = reports.iter().filter_map(|r| metric.pick(r)).collect();
    survival_from_values(&values, grid)
}

/// `n + 1` evenly spaced levels on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Boxplot-style summary of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodId,
    pub n_scored: usize,
    pub n_missing: usize,
    pub n_failed: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

/// Median and quartiles (linear interpolation) per method, in first-seen order.
pub fn summarize(reports: &[AccuracyReport], metric: Metric) -> Vec<MethodSummary> {
    let mut methods: Vec<MethodId> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&AccuracyReport> = reports.iter().filter(|r| r.method == m).collect();
            let mut vals: Vec<f64> = mine.iter().filter_map(|r| metric.pick(r)).collect();
            vals.sort_by(f64::total_cmp);
            let failed = mine.iter().filter(|r| r.error.is_some()).count();
            MethodSummary {
                method: m,
                n_scored: vals.len(),
                n_missing: mine.len() - vals.len() - failed,
                n_failed: failed,
                median: quantile_sorted(&vals, 0.5),
                q1: quantile_sorted(&vals, 0.25),
                q3: quantile_sorted(&vals, 0.75),
            }
        })
        .collect()
}

/// Which hyperparameter a likelihood profile varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Beta,
    Sigma,
    C,
    R,
}

/// Log marginal likelihood along one coordinate, the others held at `base`.
/// Grid points outside the parameter domain yield `None`.
pub fn likelihood_profile(stats: &SuffStats, base: &HyperParams, which: Param, grid: &[f64]) -> Vec<(f64, Option<f64>)> {
    grid.iter()
        .map(|&x| {
            let mut p = *base;
            match which {
                Param::Beta => p.beta = x,
                Param::Sigma => p.sigma = x,
                Param::C => p.c = x,
                Param::R => p.r = x,
            }
            (x, log_marginal_likelihood(&p, stats).ok())
        })
        .collect()
}
