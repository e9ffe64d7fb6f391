//! Bayesian nonparametric forecasting of user arrivals and activity in
//! online experiments.
//!
//! Given the first `D0` days of an experiment arm (who triggered, how often),
//! the crate predicts how many *new* users will appear over the next `D1`
//! days, how often they will trigger, and how much activity already-seen
//! users will add. Hyperparameters are fitted by empirical Bayes.
//!
//! * [`data`]: trigger data, sufficient statistics, follow-up truth
//! * [`math`]: special functions and arrival masses
//! * [`model`]: posteriors, predictive laws, marginal likelihood
//! * [`simulate`]: urn-scheme and Zipf samplers
//! * [`fit`]: differential evolution, maximum likelihood, regression
//! * [`baselines`]: jackknife, Good–Toulmin, beta-binomial, beta-geometric
//! * [`bench`]: accuracy metric and benchmark harness
//! * [`io`]: CSV and JSON formats

pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod fit;
pub mod io;
pub mod math;
pub mod model;
pub mod simulate;

pub use data::{
    compute_spectrum, compute_suffstats, holdout_truth, ArrivalCurve, FreqSpectrum, HoldoutTruth,
    PilotSummary, SuffStats, TriggerData,
};
pub use error::{Error, Result};
pub use fit::{fit_mle, fit_regression, FitConfig, FitMethod, FitOutcome};
pub use math::RhoConvention;
pub use model::{
    forecast, log_marginal_likelihood, predict_new_users, ForecastOptions, ForecastReport,
    HyperParams,
};
