//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Criteria are independent; each runs under its own time budget and a
//! panic inside one is reported as a failure of that criterion only.

#[path = "../common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use ab_horizon::baselines::BaselineId;
use ab_horizon::bench::{run_benchmark, summarize, survival_curve, unit_grid, BenchConfig, Metric, MethodId};
use ab_horizon::data::{holdout_truth, SuffStats};
use ab_horizon::fit::{fit_mle, FitConfig};
use ab_horizon::io::write_aggregate_csv;
use ab_horizon::math::{psi, PsiArgs};
use ab_horizon::model::{
    log_marginal_likelihood, negbin_interval, predict_new_users, predict_new_users_freq, predict_old_users_sum,
    NegBinDist,
};
use ab_horizon::simulate::{
    beta_draw, continue_model, negbin_draw, sample_model, sample_zipf, stream, uniform, SimConfig, Urn,
};
use ab_horizon::{HyperParams, PilotSummary, RhoConvention};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn hp(beta: f64, sigma: f64, c: f64, r: f64) -> HyperParams {
    HyperParams::new(beta, sigma, c, r).unwrap()
}

fn pilot(params: HyperParams, days: u32, seed: u64) -> SuffStats {
    let data = sample_model(&SimConfig::model(params, days, seed)).unwrap();
    common::stats_of(&data, days)
}

fn psi_vs_quadrature() -> Verdict {
    let mut rng = stream(2024, &[1]);
    let mut worst_rel = 0.0f64;
    let mut worst_add = 0.0f64;
    for _ in 0..50 {
        let sigma = 0.05 + 0.9 * uniform(&mut rng);
        let r = (uniform(&mut rng) * 6.0 - 2.0).exp();
        let x = (uniform(&mut rng) * 60.0).floor();
        let y = 1.0 + (uniform(&mut rng) * 60.0).floor();
        let z = 1.0 + (uniform(&mut rng) * 60.0).floor();
        let closed = psi(PsiArgs::new(sigma, r, x, y).unwrap()).unwrap();
        worst_rel = worst_rel.max(common::rel(closed, common::psi_quad(sigma, r, x, y)));
        let tail = psi(PsiArgs::new(sigma, r, x + y, z).unwrap()).unwrap();
        let whole = psi(PsiArgs::new(sigma, r, x, y + z).unwrap()).unwrap();
        worst_add = worst_add.max(((closed + tail) - whole).abs() / whole);
    }
    verdict(
        worst_rel <= 1e-6 && worst_add <= 1e-10,
        format!("max rel err vs quadrature {worst_rel:.2e}, max additivity err {worst_add:.2e}"),
    )
}

fn likelihood_pinpoint() -> Verdict {
    let stats = SuffStats::from_parts(1, vec![vec![1]], ab_horizon::ArrivalCurve::from_daily(&[1])).unwrap();
    let ll = log_marginal_likelihood(&hp(1.0, 0.5, 1.0, 1.0), &stats).unwrap();
    let target = (1.0f64 / 30.0).ln();
    let data = ab_horizon::TriggerData::from_series(1, vec![("u".into(), vec![(1, 1)])]).unwrap();
    let quad = common::lml_quad(1.0, 0.5, 1.0, 1.0, &data, 1);
    verdict(
        (ll - target).abs() <= 1e-9,
        format!("ln L = {ll:.10} (quadrature of the defining integral: {quad:.10}); expected {target:.10}"),
    )
}

fn prior_predictive() -> Verdict {
    let p = hp(1.0, 0.5, 0.0, 1.0);
    let n = 10_000u64;
    let counts: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|seed| {
            let mut urn = Urn::new(p);
            let mut buf = Vec::new();
            urn.step(&mut stream(seed, &[3]), &mut buf);
            buf.len()
        })
        .collect();
    let zero = counts.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
    let max = *counts.iter().max().unwrap();
    let nb = NegBinDist::new(1.0, 0.5).unwrap();
    let mut tv = 0.0;
    for k in 0..=max {
        let emp = counts.iter().filter(|&&c| c == k).count() as f64 / n as f64;
        tv += (emp - nb.pmf(k as u64)).abs();
    }
    tv += 1.0 - nb.cdf(max as u64);
    tv *= 0.5;
    verdict(
        (zero - 0.5).abs() <= 0.015 && tv < 0.02,
        format!("P(no users on day 1) = {zero:.4}, TV to NegBin(1, 0.5) = {tv:.4}"),
    )
}

fn predictive_consistency() -> Verdict {
    let p = hp(0.1, 0.5, 50.0, 5.0);
    let stats = pilot(p, 20, 41);
    let closed = predict_new_users(&p, &stats, 10).unwrap().mean();
    let draws: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|seed| continue_model(p, &stats, 10, 1000 + seed, false).unwrap().new_users as f64)
        .collect();
    let (m, se) = mean_se(&draws);
    verdict(
        (m - closed).abs() <= 3.0 * se,
        format!("N = {}, urn mean {m:.2} ± {se:.2}, closed form {closed:.2}", stats.n_users()),
    )
}

fn old_user_mean_identity() -> Verdict {
    let mut rng = stream(5, &[]);
    let mut worst = 0.0f64;
    let mut ok = true;
    for case in 0..10u64 {
        let sigma = 0.1 + 0.8 * uniform(&mut rng);
        let r = 1.5 + 1.5 * uniform(&mut rng);
        let d0 = 3 + (uniform(&mut rng) * 4.0) as u32;
        let d1 = 1 + (uniform(&mut rng) * 10.0) as u32;
        let n = 1 + (uniform(&mut rng) * 5.0) as usize;
        let totals: Vec<u64> = (0..n).map(|_| 1 + (uniform(&mut rng) * 8.0) as u64).collect();
        let stats = SuffStats::from_parts(
            d0,
            totals.iter().map(|&m| vec![m]).collect(),
            ab_horizon::ArrivalCurve::from_daily(&{
                let mut v = vec![0; d0 as usize];
                v[0] = n as u64;
                v
            }),
        )
        .unwrap();
        let p = hp(1.0, sigma, 1.0, r);
        let closed = predict_old_users_sum(&p, &stats, d1, 1, 0, 0.5).unwrap().mean;
        let draws: Vec<f64> = (0..100_000u64)
            .into_par_iter()
            .map(|i| {
                let mut g = stream(case, &[i]);
                totals
                    .iter()
                    .map(|&m| {
                        let j = beta_draw(&mut g, m as f64 - sigma, r * f64::from(d0) + 1.0).unwrap();
                        negbin_draw(&mut g, r * f64::from(d1), j).unwrap() as f64
                    })
                    .sum()
            })
            .collect();
        let (m, se) = mean_se(&draws);
        let z = (m - closed).abs() / se;
        worst = worst.max(z);
        ok &= z <= 3.0;
    }
    verdict(ok, format!("max |MC − closed| / s.e. over 10 instances = {worst:.2}"))
}

fn tv_normalized(emp: &[f64], model: &[f64]) -> f64 {
    let se: f64 = emp.iter().sum();
    let sm: f64 = model.iter().sum();
    0.5 * emp.iter().zip(model).map(|(e, m)| (e / se - m / sm).abs()).sum::<f64>()
}

fn convention_resolution() -> Verdict {
    let p = hp(1.0, 0.5, 2.0, 1.0);
    let stats = pilot(p, 3, 17);
    let d1 = 2;
    let runs: Vec<[f64; 5]> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let c = continue_model(p, &stats, d1, 50_000 + seed, false).unwrap();
            let mut row = [0.0; 5];
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = *c.new_by_freq.get(&(j as u64 + 1)).unwrap_or(&0) as f64;
            }
            row
        })
        .collect();
    let mut emp = [0.0; 5];
    for row in &runs {
        for j in 0..5 {
            emp[j] += row[j];
        }
    }
    let expect = |conv| -> Vec<f64> {
        (1..=5).map(|j| predict_new_users_freq(&p, &stats, d1, j, conv).unwrap().mean()).collect()
    };
    let tv_nb = tv_normalized(&emp, &expect(RhoConvention::NegBinPmf));
    let tv_aw = tv_normalized(&emp, &expect(RhoConvention::AsWritten));
    let matches = [tv_nb < 0.02, tv_aw < 0.02];
    let default_pinned = RhoConvention::default() == RhoConvention::NegBinPmf;
    verdict(
        matches == [true, false] && default_pinned,
        format!(
            "TV negbin-pmf = {tv_nb:.4}, TV as-written = {tv_aw:.4}; shipped default {:?}",
            RhoConvention::default()
        ),
    )
}

fn coverage() -> Verdict {
    let p = hp(0.1, 0.5, 50.0, 5.0);
    // (fitted interval covers, lo, truth, hi, true-parameter interval covers)
    let hits: Vec<(bool, u64, u64, u64, bool)> = (0..20u64)
        .map(|rep| {
            let data = sample_model(&SimConfig::model(p, 200, 700 + rep)).unwrap();
            let stats = common::stats_of(&data, 20);
            let fitted = fit_mle(&stats, &FitConfig { seed: rep, ..FitConfig::default() }).unwrap();
            let (lo, hi) = negbin_interval(&predict_new_users(&fitted.params, &stats, 180).unwrap(), 0.95).unwrap();
            let truth = holdout_truth(&data, 20, 180).unwrap().new_users;
            let (tlo, thi) = negbin_interval(&predict_new_users(&p, &stats, 180).unwrap(), 0.95).unwrap();
            (lo <= truth && truth <= hi, lo, truth, hi, tlo <= truth && truth <= thi)
        })
        .collect();
    let covered = hits.iter().filter(|h| h.0).count();
    let misses: Vec<String> = hits
        .iter()
        .filter(|h| !h.0)
        .map(|&(_, lo, t, hi, _)| format!("{t}∉[{lo},{hi}]"))
        .collect();
    let oracle = hits.iter().filter(|h| h.4).count();
    verdict(
        covered >= 16,
        format!(
            "{covered}/20 fitted-parameter intervals cover (true-parameter intervals: {oracle}/20); misses: {}",
            misses.join(" ")
        ),
    )
}

fn zipf_competitiveness() -> Verdict {
    let datasets: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|rep| sample_zipf(&SimConfig::zipf(0.7, 100_000, 60, 900 + rep)).unwrap())
        .collect();
    let config = BenchConfig::new(10, 50, vec![MethodId::NbpMle, MethodId::Baseline(BaselineId::Jk4)], 8);
    let reports = run_benchmark(&datasets, &config);
    let finite = reports
        .iter()
        .filter(|r| r.method == MethodId::NbpMle)
        .all(|r| r.predicted.is_some_and(|p| p.is_finite() && p >= 0.0));
    let s = summarize(&reports, Metric::V);
    let med = |m: MethodId| s.iter().find(|x| x.method == m).and_then(|x| x.median);
    let (nbp, jk4) = (med(MethodId::NbpMle), med(MethodId::Baseline(BaselineId::Jk4)));
    let pass = finite && matches!((nbp, jk4), (Some(a), Some(b)) if a >= b - 0.1);
    verdict(
        pass,
        format!("median v: nbp-mle {nbp:.3?}, jk4 {jk4:.3?}; all nbp predictions finite and ≥ 0: {finite}"),
    )
}

fn total_activity_curves() -> Verdict {
    let p = hp(0.1, 0.5, 50.0, 5.0);
    let datasets: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|rep| sample_model(&SimConfig::model(p, 42, 300 + rep)).unwrap())
        .collect();
    let grid = unit_grid(20);
    let mut ok = true;
    let mut lines = Vec::new();
    for d1 in [14, 21, 28, 35] {
        let reports = run_benchmark(&datasets, &BenchConfig::new(7, d1, vec![MethodId::NbpMle], 3));
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.v_tilde).collect();
        let curve = survival_curve(&reports, &grid, Metric::VTilde).unwrap();
        ok &= vals.len() == 20 && vals.iter().all(|v| (0.0..=1.0).contains(v));
        ok &= curve.windows(2).all(|w| w[1].1 <= w[0].1);
        let at = |x: f64| curve.iter().find(|c| (c.0 - x).abs() < 1e-12).map(|c| c.1).unwrap_or(f64::NAN);
        lines.push(format!("D1={d1}: S(0.8)={:.2} S(0.9)={:.2} S(0.95)={:.2}", at(0.8), at(0.9), at(0.95)));
    }
    verdict(ok, lines.join("; "))
}

fn cli(dir: &Path, args: &[&str]) -> std::io::Result<bool> {
    let out = Command::new(env!("CARGO_BIN_EXE_ab-horizon")).current_dir(dir).args(args).output()?;
    Ok(out.status.success())
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: Vec<(Vec<&str>, &str)> = vec![
        (
            vec!["simulate", "model", "--beta", "0.5", "--sigma", "0.5", "--c", "20", "--r", "2", "--days", "14", "--seed", "6", "--out"],
            "model.csv",
        ),
        (vec!["simulate", "zipf", "--tau", "0.7", "--n-users", "5000", "--days", "14", "--seed", "6", "--out"], "zipf.csv"),
        (vec!["fit", "--input", "model.csv", "--pilot-days", "7", "--out"], "mle.json"),
        (vec!["fit", "--input", "model.csv", "--method", "regression", "--pilot-days", "7", "--out"], "reg.json"),
        (
            vec!["predict", "--input", "model.csv", "--params", "mle.json", "--pilot-days", "7", "--horizon", "7", "--seed", "2", "--n-mc", "2000", "--out"],
            "forecast.json",
        ),
        (
            vec!["predict", "--input", "model.csv", "--params", "mle.json", "--pilot-days", "7", "--horizon", "7", "--seed", "2", "--n-mc", "2000", "--report", "text", "--out"],
            "forecast.txt",
        ),
        (vec!["spectrum", "--input", "zipf.csv", "--pilot-days", "7", "--out"], "spectrum.csv"),
        (vec!["evaluate", "--inputs", "*model.csv", "--pilot-days", "7", "--horizon", "7", "--seed", "1", "--out"], "results.out"),
    ];
    let mut identical = 0;
    let mut failed = Vec::new();
    for (args, out) in &steps {
        let mut bytes = Vec::new();
        for run in ["a", "b"] {
            let name = format!("{run}.{out}");
            let mut full = args.clone();
            full.push(&name);
            if !cli(d, &full).unwrap_or(false) {
                failed.push(format!("{} exited nonzero", args[0]));
            }
            bytes.push(std::fs::read(d.join(&name)).unwrap_or_default());
        }
        // later steps read the first copy under the plain name
        std::fs::write(d.join(out), &bytes[0]).unwrap();
        if bytes[0] == bytes[1] && !bytes[0].is_empty() {
            identical += 1;
        } else {
            failed.push(format!("{out} differs"));
        }
    }
    verdict(
        failed.is_empty(),
        format!("{identical}/{} outputs byte-identical {}", steps.len(), failed.join(", ")),
    )
}

fn aggregate_only() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stats = pilot(hp(0.1, 0.5, 50.0, 5.0), 14, 77);
    let mut buf = Vec::new();
    write_aggregate_csv(stats.arrivals(), &mut buf).unwrap();
    std::fs::write(d.join("agg.csv"), &buf).unwrap();
    let fit_ok = cli(
        d,
        &["fit", "--input", "agg.csv", "--format", "aggregate", "--method", "regression", "--pilot-days", "14", "--out", "p.json"],
    )
    .unwrap_or(false);
    let pred_ok = cli(
        d,
        &["predict", "--input", "agg.csv", "--format", "aggregate", "--params", "p.json", "--pilot-days", "14", "--horizon", "14", "--out", "f.json"],
    )
    .unwrap_or(false);
    let f: serde_json::Value = std::fs::read_to_string(d.join("f.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();
    let mean = f["new_users"]["mean"].as_f64();
    let freq_finite = f["new_by_freq"]
        .as_array()
        .is_some_and(|a| !a.is_empty() && a.iter().all(|e| e["mean"].as_f64().is_some_and(f64::is_finite)));
    let finite = mean.is_some_and(|m| m.is_finite() && m >= 0.0) && freq_finite;
    verdict(
        fit_ok && pred_ok && finite,
        format!(
            "{} pilot users from daily arrivals only; new users over 14 days: {mean:.1?}",
            stats.arrivals().n_users()
        ),
    )
}

fn main() {
    let criteria: Vec<(u32, &str, u64, fn() -> Verdict)> = vec![
        (1, "arrival-mass closed form vs quadrature", 10, psi_vs_quadrature),
        (2, "marginal likelihood pinpoint", 1, likelihood_pinpoint),
        (3, "prior predictive vs urn", 30, prior_predictive),
        (4, "new-user predictive vs urn continuations", 120, predictive_consistency),
        (5, "old-user mean identity", 60, old_user_mean_identity),
        (6, "frequency convention resolution", 120, convention_resolution),
        (7, "parameter-recovery coverage", 300, coverage),
        (8, "Zipf competitiveness", 300, zipf_competitiveness),
        (9, "total-activity survival curves", 300, total_activity_curves),
        (10, "CLI determinism", 60, cli_determinism),
        (11, "aggregate-only pipeline", 30, aggregate_only),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, budget, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let pass = v.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "{} {id:>2} {name}: {} [{:.1}s / {budget}s{}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
