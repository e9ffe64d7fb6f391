use std::collections::BTreeMap;

use ab_horizon::bench::{accuracy_v, survival_from_values, unit_grid};
use ab_horizon::data::{compute_spectrum, compute_suffstats, ArrivalCurve, FreqSpectrum, TriggerData};
use ab_horizon::io::{read_long_csv, write_long_csv};
use ab_horizon::math::{psi, rho, PsiArgs};
use ab_horizon::model::{negbin_interval, predict_new_users, NegBinDist};
use ab_horizon::{baselines, HyperParams, PilotSummary, RhoConvention};
use proptest::prelude::*;

fn trigger_data() -> impl Strategy<Value = TriggerData> {
    (1u32..8, prop::collection::vec((1u32..8, 0usize..12, 1u64..20), 0..60)).prop_map(|(days, rows)| {
        let mut b = TriggerData::builder();
        for (d, u, c) in rows {
            b.add(d.min(days), &format!("user{u}"), c).unwrap();
        }
        b.build(Some(days)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psi_is_additive_and_positive(sigma in 0.01f64..0.99, r in 0.01f64..50.0, x in 0.0f64..100.0, y in 0.1f64..100.0, z in 0.1f64..100.0) {
        let a = psi(PsiArgs::new(sigma, r, x, y).unwrap()).unwrap();
        let b = psi(PsiArgs::new(sigma, r, x + y, z).unwrap()).unwrap();
        let ab = psi(PsiArgs::new(sigma, r, x, y + z).unwrap()).unwrap();
        prop_assert!(a > 0.0 && b > 0.0);
        prop_assert!(((a + b) - ab).abs() <= 1e-10 * ab);
    }

    #[test]
    fn rho_is_positive_and_decays_in_j(sigma in 0.01f64..0.99, r in 0.05f64..20.0, d0 in 0u32..50, d1 in 1u32..50) {
        let mut last = f64::INFINITY;
        for j in 1..30 {
            let v = rho(j, sigma, r, d0, d1, RhoConvention::NegBinPmf).unwrap();
            prop_assert!(v > 0.0 && v.is_finite());
            if f64::from(d1) * r <= 1.0 {
                prop_assert!(v <= last * (1.0 + 1e-12));
            }
            last = v;
        }
    }

    #[test]
    fn negbin_interval_contains_the_bulk(f in 0.1f64..500.0, p in 0.0f64..0.95, level in 0.5f64..0.99) {
        let nb = NegBinDist::new(f, p).unwrap();
        let (lo, hi) = negbin_interval(&nb, level).unwrap();
        prop_assert!(lo <= hi);
        let inside = nb.cdf(hi) - if lo == 0 { 0.0 } else { nb.cdf(lo - 1) };
        prop_assert!(inside >= level - 1e-9, "{inside} < {level}");
        let (lo2, hi2) = negbin_interval(&nb, (level + 1.0) / 2.0).unwrap();
        prop_assert!(lo2 <= lo && hi2 >= hi);
    }

    #[test]
    fn long_csv_round_trips(data in trigger_data()) {
        let mut buf = Vec::new();
        write_long_csv(&data, &mut buf).unwrap();
        let back = read_long_csv(buf.as_slice(), Some(data.days())).unwrap();
        prop_assert_eq!(back.entries(), data.entries());
    }

    #[test]
    fn suffstats_are_consistent(data in trigger_data()) {
        let d0 = data.days();
        let stats = compute_suffstats(&data, d0).unwrap();
        let spectrum = compute_spectrum(&data, d0).unwrap();
        prop_assert_eq!(stats.n_users(), data.n_users() as u64);
        prop_assert_eq!(spectrum.n_users(), stats.n_users());
        prop_assert_eq!(stats.arrivals().at(d0), stats.n_users());
        let total: u64 = data.entries().iter().map(|e| e.2).sum();
        prop_assert_eq!(stats.totals().iter().sum::<u64>(), total);
        let present: u64 = spectrum.iter().map(|(k, phi)| u64::from(k) * phi).sum();
        prop_assert_eq!(present as usize, data.n_entries());
    }

    #[test]
    fn accuracy_lies_in_unit_interval(o in 1.0f64..1e6, p in 0.0f64..1e7) {
        let v = accuracy_v(o, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn survival_is_monotone(values in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let curve = survival_from_values(&values, &unit_grid(21)).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
        prop_assert!(curve.iter().all(|&(_, f)| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn baselines_are_finite_and_nonnegative(phi in prop::collection::btree_map(1u32..10, 0u64..200, 0..9), d1 in 0u32..60) {
        let phi: BTreeMap<u32, u64> = phi.into_iter().filter(|&(_, v)| v > 0).collect();
        let spec = FreqSpectrum::new(9, phi).unwrap();
        for order in 1..=4 {
            let v = baselines::jackknife_predict(&spec, d1, order).unwrap();
            prop_assert!(v.is_finite() && v >= 0.0);
        }
        for smooth in [false, true] {
            let v = baselines::good_toulmin_predict(&spec, d1, smooth).unwrap();
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn new_user_mean_is_monotone_in_horizon(beta in 0.01f64..100.0, sigma in 0.01f64..0.99, c in 0.0f64..100.0, r in 0.05f64..20.0, n in 0u64..500, d0 in 1u32..30) {
        let p = HyperParams::new(beta, sigma, c, r).unwrap();
        let mut daily = vec![0; d0 as usize];
        daily[0] = n;
        let curve = ArrivalCurve::from_daily(&daily);
        prop_assert_eq!(curve.n_users(), n);
        let mut last = 0.0;
        for d1 in [0, 1, 2, 5, 10, 50, 200] {
            let m = predict_new_users(&p, &curve, d1).unwrap().mean();
            prop_assert!(m.is_finite() && m >= last);
            last = m;
        }
    }
}
