//! Trigger data and the statistics derived from it.
//!
//! A [`TriggerData`] is a sparse day × user matrix of positive counts. Users
//! are opaque string ids; the roster is ordered by first trigger day (ties by
//! id) so every derived statistic is independent of the order in which
//! entries were inserted.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activity of one user: strictly increasing days paired with counts ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSeries {
    id: String,
    activity: Vec<(u32, u64)>,
}

impl UserSeries {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn activity(&self) -> &[(u32, u64)] {
        &self.activity
    }

    pub fn first_day(&self) -> u32 {
        self.activity[0].0
    }

    /// Activity restricted to days `lo..=hi`.
    pub fn window(&self, lo: u32, hi: u32) -> &[(u32, u64)] {
        let start = self.activity.partition_point(|&(d, _)| d < lo);
        let end = self.activity.partition_point(|&(d, _)| d <= hi);
        &self.activity[start..end.max(start)]
    }
}

/// Daily trigger counts for a single experiment arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerData {
    days: u32,
    users: Vec<UserSeries>,
}

impl TriggerData {
    pub fn empty(days: u32) -> Self {
        TriggerData { days, users: Vec::new() }
    }

    pub fn builder() -> TriggerDataBuilder {
        TriggerDataBuilder::default()
    }

    /// Assemble from per-user series. Each series must have strictly
    /// increasing days in `1..=days` and positive counts; ids must be unique
    /// and every series nonempty.
    pub fn from_series(days: u32, series: Vec<(String, Vec<(u32, u64)>)>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(series.len());
        let mut users = Vec::with_capacity(series.len());
        for (id, activity) in series {
            if activity.is_empty() {
                return Err(Error::Config(format!("user `{id}` has no activity")));
            }
            for w in activity.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Config(format!("user `{id}`: days not strictly increasing")));
                }
            }
            for &(d, a) in &activity {
                if d == 0 || d > days {
                    return Err(Error::range("day", format!("user `{id}`: day {d} not in 1..={days}")));
                }
                if a == 0 {
                    return Err(Error::Config(format!("user `{id}`: zero count on day {d}")));
                }
            }
            if seen.insert(id.clone(), ()).is_some() {
                return Err(Error::Config(format!("duplicate user id `{id}`")));
            }
            users.push(UserSeries { id, activity });
        }
        users.sort_by(|a, b| a.first_day().cmp(&b.first_day()).then_with(|| a.id.cmp(&b.id)));
        Ok(TriggerData { days, users })
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[UserSeries] {
        &self.users
    }

    pub fn roster(&self) -> impl Iterator<Item = &str> {
        self.users.iter().map(|u| u.id.as_str())
    }

    pub fn n_entries(&self) -> usize {
        self.users.iter().map(|u| u.activity.len()).sum()
    }

    /// All stored entries as `(day, user, count)`, sorted by day then user id.
    pub fn entries(&self) -> Vec<(u32, &str, u64)> {
        let mut out: Vec<_> = self
            .users
            .iter()
            .flat_map(|u| u.activity.iter().map(move |&(d, a)| (d, u.id.as_str(), a)))
            .collect();
        out.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        out
    }

    pub fn count(&self, day: u32, user: &str) -> u64 {
        self.users
            .iter()
            .find(|u| u.id == user)
            .and_then(|u| {
                u.activity
                    .binary_search_by_key(&day, |&(d, _)| d)
                    .ok()
                    .map(|i| u.activity[i].1)
            })
            .unwrap_or(0)
    }

    /// A copy holding only days `1..=days`.
    pub fn restrict(&self, days: u32) -> Result<TriggerData> {
        if days > self.days {
            return Err(Error::range(
                "days",
                format!("cannot restrict {} days of data to {days}", self.days),
            ));
        }
        let users = self
            .users
            .iter()
            .filter_map(|u| {
                let kept = u.window(1, days);
                (!kept.is_empty()).then(|| UserSeries {
                    id: u.id.clone(),
                    activity: kept.to_vec(),
                })
            })
            .collect();
        // first-appearance order is preserved by truncation
        Ok(TriggerData { days, users })
    }
}

/// Accumulates `(day, user, count)` triples; duplicates are summed and zero
/// counts are dropped.
#[derive(Debug, Default)]
pub struct TriggerDataBuilder {
    cells: HashMap<String, BTreeMap<u32, u64>>,
    dropped_zeros: usize,
}

impl TriggerDataBuilder {
    pub fn add(&mut self, day: u32, user: &str, count: u64) -> Result<()> {
        if day == 0 {
            return Err(Error::range("day", "days are 1-indexed"));
        }
        if count == 0 {
            self.dropped_zeros += 1;
            return Ok(());
        }
        let cell = self
            .cells
            .entry(user.to_owned())
            .or_default()
            .entry(day)
            .or_insert(0);
        *cell = cell
            .checked_add(count)
            .ok_or_else(|| Error::domain("TriggerDataBuilder::add", "count overflow"))?;
        Ok(())
    }

    /// Number of zero-count entries discarded so far.
    pub fn dropped_zeros(&self) -> usize {
        self.dropped_zeros
    }

    pub fn max_day(&self) -> u32 {
        self.cells
            .values()
            .filter_map(|m| m.keys().next_back().copied())
            .max()
            .unwrap_or(0)
    }

    /// Finish; `days` defaults to the last day carrying an entry.
    pub fn build(self, days: Option<u32>) -> Result<TriggerData> {
        let max_day = self.max_day();
        let days = days.unwrap_or(max_day);
        if max_day > days {
            return Err(Error::range(
                "days",
                format!("entry on day {max_day} exceeds declared length {days}"),
            ));
        }
        let series = self
            .cells
            .into_iter()
            .map(|(id, m)| (id, m.into_iter().collect()))
            .collect();
        TriggerData::from_series(days, series)
    }
}

/// Common view of pilot data needed by the new-user predictors: the pilot
/// length `D0` and the distinct-user count `N_{D0}`.
pub trait PilotSummary {
    fn pilot_days(&self) -> u32;
    fn n_users(&self) -> u64;
}

/// Cumulative count of distinct users `N_1, …, N_{D0}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalCurve {
    cumulative: Vec<u64>,
}

impl ArrivalCurve {
    pub fn from_cumulative(cumulative: Vec<u64>) -> Result<Self> {
        if cumulative.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("arrival curve must be nondecreasing".into()));
        }
        Ok(ArrivalCurve { cumulative })
    }

    /// From first-trigger counts per day.
    pub fn from_daily(daily_new: &[u64]) -> Self {
        let cumulative = daily_new
            .iter()
            .scan(0u64, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect();
        ArrivalCurve { cumulative }
    }

    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    /// `N_d`, with `N_0 = 0`.
    pub fn at(&self, day: u32) -> u64 {
        if day == 0 {
            0
        } else {
            self.cumulative[day as usize - 1]
        }
    }

    pub fn daily(&self) -> Vec<u64> {
        let mut prev = 0;
        self.cumulative
            .iter()
            .map(|&c| {
                let n = c - prev;
                prev = c;
                n
            })
            .collect()
    }

    /// The first `days` days of the curve.
    pub fn truncate(&self, days: u32) -> Result<ArrivalCurve> {
        if days as usize > self.cumulative.len() {
            return Err(Error::range(
                "pilot_days",
                format!("{days} exceeds the {} days available", self.cumulative.len()),
            ));
        }
        Ok(ArrivalCurve {
            cumulative: self.cumulative[..days as usize].to_vec(),
        })
    }
}

impl PilotSummary for ArrivalCurve {
    fn pilot_days(&self) -> u32 {
        self.cumulative.len() as u32
    }

    fn n_users(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }
}

/// Pilot-window sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pilot_days: u32,
    totals: Vec<u64>,
    positive_counts: Vec<Vec<u64>>,
    arrivals: ArrivalCurve,
    // (value, multiplicity) pairs sorted by value
    count_hist: Vec<(u64, u64)>,
    total_hist: Vec<(u64, u64)>,
}

impl SuffStats {
    /// Statistics of a sample with no users observed over `pilot_days` days
    /// (`pilot_days = 0` is the prior).
    pub fn empty(pilot_days: u32) -> Self {
        SuffStats {
            pilot_days,
            totals: Vec::new(),
            positive_counts: Vec::new(),
            arrivals: ArrivalCurve {
                cumulative: vec![0; pilot_days as usize],
            },
            count_hist: Vec::new(),
            total_hist: Vec::new(),
        }
    }

    /// Build directly from per-user positive daily counts (in roster order)
    /// and the arrival curve.
    pub fn from_parts(
        pilot_days: u32,
        positive_counts: Vec<Vec<u64>>,
        arrivals: ArrivalCurve,
    ) -> Result<Self> {
        if arrivals.pilot_days() != pilot_days {
            return Err(Error::Config(format!(
                "arrival curve covers {} days, expected {pilot_days}",
                arrivals.pilot_days()
            )));
        }
        if arrivals.n_users() != positive_counts.len() as u64 {
            return Err(Error::Config(format!(
                "arrival curve ends at {} users but {} users supplied",
                arrivals.n_users(),
                positive_counts.len()
            )));
        }
        let mut count_hist = BTreeMap::new();
        let mut total_hist = BTreeMap::new();
        let mut totals = Vec::with_capacity(positive_counts.len());
        for counts in &positive_counts {
            if counts.is_empty() || counts.len() > pilot_days as usize || counts.contains(&0) {
                return Err(Error::Config(
                    "each user needs between 1 and D0 positive daily counts".into(),
                ));
            }
            for &a in counts {
                *count_hist.entry(a).or_insert(0u64) += 1;
            }
            let m: u64 = counts.iter().sum();
            *total_hist.entry(m).or_insert(0u64) += 1;
            totals.push(m);
        }
        Ok(SuffStats {
            pilot_days,
            totals,
            positive_counts,
            arrivals,
            count_hist: count_hist.into_iter().collect(),
            total_hist: total_hist.into_iter().collect(),
        })
    }

    /// Per-user pilot totals `m_{D0,n}` in roster order.
    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn positive_counts(&self) -> &[Vec<u64>] {
        &self.positive_counts
    }

    pub fn arrivals(&self) -> &ArrivalCurve {
        &self.arrivals
    }

    /// Multiplicity of each positive daily count value across all users and days.
    pub fn count_histogram(&self) -> &[(u64, u64)] {
        &self.count_hist
    }

    /// Multiplicity of each per-user total.
    pub fn total_histogram(&self) -> &[(u64, u64)] {
        &self.total_hist
    }
}

impl PilotSummary for SuffStats {
    fn pilot_days(&self) -> u32 {
        self.pilot_days
    }

    fn n_users(&self) -> u64 {
        self.totals.len() as u64
    }
}

fn check_pilot(data: &TriggerData, pilot_days: u32) -> Result<()> {
    if pilot_days == 0 || pilot_days > data.days() {
        return Err(Error::range(
            "pilot_days",
            format!("{pilot_days} not in 1..={}", data.days()),
        ));
    }
    Ok(())
}

/// Sufficient statistics of days `1..=pilot_days`. Users without pilot
/// activity are excluded.
pub fn compute_suffstats(data: &TriggerData, pilot_days: u32) -> Result<SuffStats> {
    check_pilot(data, pilot_days)?;
    let mut daily_new = vec![0u64; pilot_days as usize];
    let mut positive_counts = Vec::new();
    for user in data.users() {
        let window = user.window(1, pilot_days);
        if window.is_empty() {
            continue;
        }
        daily_new[window[0].0 as usize - 1] += 1;
        positive_counts.push(window.iter().map(|&(_, a)| a).collect());
    }
    SuffStats::from_parts(pilot_days, positive_counts, ArrivalCurve::from_daily(&daily_new))
}

/// Number of users present on exactly `k` distinct pilot days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqSpectrum {
    pilot_days: u32,
    phi: BTreeMap<u32, u64>,
}

impl FreqSpectrum {
    pub fn new(pilot_days: u32, phi: BTreeMap<u32, u64>) -> Result<Self> {
        if let Some((&k, _)) = phi.iter().find(|(&k, _)| k == 0 || k > pilot_days) {
            return Err(Error::range("spectrum", format!("k = {k} not in 1..={pilot_days}")));
        }
        let phi = phi.into_iter().filter(|&(_, v)| v > 0).collect();
        Ok(FreqSpectrum { pilot_days, phi })
    }

    pub fn pilot_days(&self) -> u32 {
        self.pilot_days
    }

    /// `φ_k`, zero when absent.
    pub fn get(&self, k: u32) -> u64 {
        self.phi.get(&k).copied().unwrap_or(0)
    }

    pub fn n_users(&self) -> u64 {
        self.phi.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.phi.iter().map(|(&k, &v)| (k, v))
    }
}

pub fn compute_spectrum(data: &TriggerData, pilot_days: u32) -> Result<FreqSpectrum> {
    check_pilot(data, pilot_days)?;
    let mut phi = BTreeMap::new();
    for user in data.users() {
        let k = user.window(1, pilot_days).len() as u32;
        if k > 0 {
            *phi.entry(k).or_insert(0u64) += 1;
        }
    }
    Ok(FreqSpectrum { pilot_days, phi })
}

/// Realized follow-up statistics over days `D0+1..=D0+D1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutTruth {
    /// Users first triggering in the window.
    pub new_users: u64,
    /// New users keyed by their total count over the window.
    pub new_by_freq: BTreeMap<u64, u64>,
    /// Total count of users already seen in the pilot.
    pub old_sum: u64,
    /// Total count of all users.
    pub total: u64,
}

pub fn holdout_truth(data: &TriggerData, d0: u32, d1: u32) -> Result<HoldoutTruth> {
    if u64::from(d0) + u64::from(d1) > u64::from(data.days()) {
        return Err(Error::range(
            "holdout window",
            format!("D0 + D1 = {} exceeds {} days", u64::from(d0) + u64::from(d1), data.days()),
        ));
    }
    let mut truth = HoldoutTruth {
        new_users: 0,
        new_by_freq: BTreeMap::new(),
        old_sum: 0,
        total: 0,
    };
    if d1 == 0 {
        return Ok(truth);
    }
    for user in data.users() {
        let seen = user.first_day() <= d0;
        let ahead: u64 = user.window(d0 + 1, d0 + d1).iter().map(|&(_, a)| a).sum();
        if ahead == 0 {
            continue;
        }
        truth.total += ahead;
        if seen {
            truth.old_sum += ahead;
        } else {
            truth.new_users += 1;
            *truth.new_by_freq.entry(ahead).or_insert(0) += 1;
        }
    }
    Ok(truth)
}
