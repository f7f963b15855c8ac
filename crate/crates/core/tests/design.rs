use proptest::prelude::*;
use quantgf::design::{self, DesignConstraints};
use quantgf::filters::{self, FirCoefficients};
use quantgf::graphs::{self, ResModel, ShiftKind};
use quantgf::linalg;
use quantgf::quantization::StepsizeSchedule;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A degree-`k` polynomial target is recovered exactly by an order-`k` fit.
    #[test]
    fn ls_recovers_polynomials(phi in prop::collection::vec(-2.0f64..2.0, 1..6)) {
        let c = FirCoefficients::new(phi.clone()).unwrap();
        let target = |l: f64| filters::fir_freq_response(&c, &[l])[0];
        let grid = design::uniform_grid(0.0, 2.0, 60);
        let fit = design::fir_ls_design(&target, phi.len() - 1, &grid).unwrap();
        for (a, b) in fit.phi().iter().zip(&phi) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_cap_is_satisfied(gamma in -0.5f64..0.3, k in 2usize..7) {
        let grid = design::uniform_grid(0.0, 1.5, 120);
        let sched = StepsizeSchedule::geometric(0.1, 1.0 / 1.5).unwrap();
        let mut dc = DesignConstraints::new(grid.clone(), sched, 1.5);
        dc.gamma = gamma.max(0.0);
        let h = |l: f64| (0.3 * l).exp();
        let r = design::fir_quantization_aware_design(&h, k, &dc).unwrap();
        let phi = r.fir().unwrap().phi();
        prop_assert!(phi[1..].iter().sum::<f64>() <= dc.gamma + design::CONSTRAINT_TOL);
        let ls = design::fir_ls_design(&h, k, &grid).unwrap();
        prop_assert!(design::response_error(r.fir().unwrap(), &h, &grid)
            >= design::response_error(&ls, &h, &grid) - 1e-9);
    }
}

#[test]
fn mse_constraint_row_matches_definition() {
    let grid = design::uniform_grid(0.0, 2.0, 50);
    let dc = DesignConstraints::new(grid, StepsizeSchedule::fixed(0.3).unwrap(), 2.0);
    let row = design::mse_constraint_row(&dc, 3);
    let s2 = 0.09;
    assert_eq!(row[0], 0.0);
    assert!((row[1] - s2 * 4.0 / 12.0).abs() < 1e-15);
    assert!((row[3] - s2 * (64.0 + 16.0 + 4.0) / 12.0).abs() < 1e-13);
}

#[test]
fn schedule_above_the_stepsize_cap_is_rejected() {
    let grid = design::uniform_grid(0.0, 2.0, 50);
    let mut dc = DesignConstraints::new(grid, StepsizeSchedule::fixed(0.3).unwrap(), 2.0);
    dc.delta = 0.1;
    assert!(design::fir_quantization_aware_design(&|l| l, 3, &dc).is_err());
}

#[test]
fn robust_design_with_reliable_links_keeps_the_reference() {
    let g = graphs::random_geometric(12, 1.0, 0.6, 2).unwrap();
    let s = graphs::build_shift(&g, ShiftKind::ScaledLaplacian, None).unwrap();
    let m = ResModel::uniform(g, s.clone(), 1.0).unwrap();
    let grid = design::uniform_grid(0.0, 1.0, 100);
    let phi_ref = design::fir_ls_design(&|l| 1.0 / (1.0 + 0.5 * l), 4, &grid).unwrap();
    let mut dc = DesignConstraints::new(grid, StepsizeSchedule::fixed(0.1).unwrap(), 1.0);
    dc.gamma = 0.0;
    let r = design::fir_robust_res_design(&phi_ref, &s, &m, &dc).unwrap();
    let phi = r.fir().unwrap().phi();
    assert!(
        linalg::norm_inf(&linalg::sub(phi, phi_ref.phi())) < 1e-5,
        "{phi:?} vs {:?}",
        phi_ref.phi()
    );
}

#[test]
fn robust_penalty_shrinks_coefficients() {
    let g = graphs::random_geometric(12, 1.0, 0.6, 2).unwrap();
    let s = graphs::build_shift(&g, ShiftKind::ScaledLaplacian, None).unwrap();
    let m = ResModel::uniform(g, s.clone(), 0.8).unwrap();
    let grid = design::uniform_grid(0.0, 1.0, 100);
    let phi_ref = design::fir_ls_design(&|l| 1.0 / (1.0 + 0.5 * l), 4, &grid).unwrap();
    let abs_sum = |gamma: f64| {
        let mut dc =
            DesignConstraints::new(grid.clone(), StepsizeSchedule::fixed(0.1).unwrap(), 1.0);
        dc.gamma = gamma;
        let r = design::fir_robust_res_design(&phi_ref, &s, &m, &dc).unwrap();
        r.fir().unwrap().phi()[1..]
            .iter()
            .map(|v| v.abs())
            .sum::<f64>()
    };
    assert!(abs_sum(10.0) <= abs_sum(0.0) + 1e-9);
}

#[test]
fn interpolation_filter_is_stable_and_exact() {
    let g = graphs::random_geometric(15, 1.0, 0.5, 5).unwrap();
    let s = graphs::build_shift(&g, ShiftKind::NormalizedLaplacian, None).unwrap();
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 0).collect();
    let (shift, c) = design::interpolation_arma1(&mask, 0.3, &s).unwrap();
    assert!(c.is_stable(shift.rho()));
    let x: Vec<f64> = (0..15)
        .map(|i| if mask[i] { (i as f64).sin() } else { 0.0 })
        .collect();
    let y = filters::arma_steady_state(&shift, &c, &x).unwrap();
    let t = linalg::Matrix::from_diag(
        &mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect::<Vec<_>>(),
    );
    let lhs = t.add_scaled(s.matrix(), 0.3).matvec(&y);
    assert!(linalg::norm_inf(&linalg::sub(&lhs, &x)) < 1e-10);
}

#[test]
fn design_result_serializes() {
    let grid = design::uniform_grid(0.0, 2.0, 40);
    let dc = DesignConstraints::new(grid, StepsizeSchedule::fixed(0.1).unwrap(), 2.0);
    let r = design::fir_quantization_aware_design(&design::ideal_lowpass(1.0), 3, &dc).unwrap();
    let mut buf = Vec::new();
    r.write_json(&mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v["coefficients"]["type"], "fir");
}
