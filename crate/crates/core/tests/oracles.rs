//! Closed forms against quadrature of their defining integrals.

mod common;

use ab_horizon::data::TriggerData;
use ab_horizon::math::{psi, rho, PsiArgs};
use ab_horizon::model::{log_marginal_likelihood, log_marginal_likelihood_with, XiForm};
use ab_horizon::simulate::{sample_model, stream, uniform, SimConfig};
use ab_horizon::{HyperParams, RhoConvention};
use common::{lml_quad, psi_quad, rel, rho_quad, xi_quad};

#[test]
fn psi_anchor_values() {
    assert!(rel(psi_quad(0.5, 1.0, 0.0, 1.0), 1.0) < 1e-10);
    assert!(rel(psi_quad(0.5, 1.0, 0.0, 2.0), 5.0 / 3.0) < 1e-10);
    assert!(rel(psi_quad(0.5, 1.0, 1.0, 1.0), 2.0 / 3.0) < 1e-10);
    assert!(rel(psi(PsiArgs::new(0.5, 1.0, 1.0, 1.0).unwrap()).unwrap(), 2.0 / 3.0) < 1e-12);
}

#[test]
fn psi_matches_quadrature_over_wide_range() {
    let mut rng = stream(11, &[]);
    for _ in 0..200 {
        let sigma = 0.02 + 0.96 * uniform(&mut rng);
        let r = (uniform(&mut rng) * 9.0 - 4.0).exp();
        let x = (uniform(&mut rng) * 200.0).floor();
        let y = 1.0 + (uniform(&mut rng) * 200.0).floor();
        let closed = psi(PsiArgs::new(sigma, r, x, y).unwrap()).unwrap();
        let oracle = psi_quad(sigma, r, x, y);
        assert!(
            rel(closed, oracle) < 1e-7,
            "σ={sigma} r={r} x={x} y={y}: {closed} vs {oracle}"
        );
    }
}

#[test]
fn rho_matches_quadrature_under_negbin_convention() {
    for &(sigma, r, d0, d1) in &[(0.5, 1.0, 1u32, 1u32), (0.3, 5.0, 20, 10), (0.8, 0.4, 3, 30), (0.1, 2.0, 0, 7)] {
        for j in 1..=8 {
            let closed = rho(j, sigma, r, d0, d1, RhoConvention::NegBinPmf).unwrap();
            let oracle = rho_quad(j, sigma, r, d0, d1);
            assert!(rel(closed, oracle) < 1e-8, "j={j} σ={sigma} r={r}: {closed} vs {oracle}");
        }
    }
}

#[test]
fn rho_as_written_differs_from_the_integral() {
    let closed = rho(1, 0.5, 1.0, 1, 1, RhoConvention::AsWritten).unwrap();
    assert!(rel(closed, 1.6) < 1e-12);
    assert!(rel(rho_quad(1, 0.5, 1.0, 1, 1), 1.6) > 0.5);
}

#[test]
fn single_user_likelihood_is_one_sixth() {
    let data = TriggerData::from_series(1, vec![("a".into(), vec![(1, 1)])]).unwrap();
    let stats = common::stats_of(&data, 1);
    let p = HyperParams::new(1.0, 0.5, 1.0, 1.0).unwrap();
    let oracle = lml_quad(1.0, 0.5, 1.0, 1.0, &data, 1);
    assert!((oracle - (1.0f64 / 6.0).ln()).abs() < 1e-10);
    let closed = log_marginal_likelihood(&p, &stats).unwrap();
    assert!((closed - oracle).abs() < 1e-10, "{closed} vs {oracle}");
    let printed = log_marginal_likelihood_with(&p, &stats, XiForm::AsPrinted).unwrap();
    assert!((printed - (1.0f64 / 30.0).ln()).abs() < 1e-10);
}

#[test]
fn xi_factor_is_a_beta_function() {
    // counts (0 before), 2, 0, 3 with r = 1.7, σ = 0.35, first seen on day 2
    let (sigma, r) = (0.35, 1.7);
    let q = xi_quad(sigma, r, 2, &[2, 0, 3], 4);
    let lc = |a: f64| {
        ab_horizon::math::log_gamma(a + r).unwrap()
            - ab_horizon::math::log_gamma(a + 1.0).unwrap()
            - ab_horizon::math::log_gamma(r).unwrap()
    };
    let closed =
        (sigma.ln() + lc(2.0) + lc(3.0) + ab_horizon::math::log_beta(5.0 - sigma, 4.0 * r + 1.0).unwrap()).exp();
    assert!(rel(q, closed) < 1e-9, "{q} vs {closed}");
}

#[test]
fn marginal_likelihood_matches_quadrature_on_simulated_pilots() {
    for (i, &(beta, sigma, c, r)) in [(1.0, 0.5, 2.0, 1.0), (0.4, 0.2, 5.0, 3.0), (2.0, 0.7, 0.5, 0.6)]
        .iter()
        .enumerate()
    {
        let p = HyperParams::new(beta, sigma, c, r).unwrap();
        let data = sample_model(&SimConfig::model(p, 4, 100 + i as u64)).unwrap();
        assert_eq!(data.days(), 4);
        let stats = common::stats_of(&data, 4);
        let closed = log_marginal_likelihood(&p, &stats).unwrap();
        let oracle = lml_quad(beta, sigma, c, r, &data, 4);
        assert!(
            (closed - oracle).abs() < 1e-7 * oracle.abs().max(1.0),
            "case {i}: {closed} vs {oracle}"
        );
    }
}
