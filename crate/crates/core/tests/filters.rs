use proptest::prelude::*;
use quantgf::design;
use quantgf::filters::{self, ArmaCoefficients, FirCoefficients, ShiftSource};
use quantgf::graphs::{self, ResModel, ShiftKind, ShiftOperator};
use quantgf::linalg::{self, Matrix};
use quantgf::quantization::{DitheredQuantizer, RangePolicy, StepsizeSchedule};
use quantgf::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shift(n: usize, seed: u64, kind: ShiftKind) -> ShiftOperator {
    let g = graphs::random_geometric(n, 1.0, 0.6, seed).unwrap();
    graphs::build_shift(&g, kind, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Spectral oracle: `Σ φₖ Sᵏ x = U h(Λ) Uᵀ x`.
    #[test]
    fn fir_matches_spectral_response(
        n in 3usize..12,
        seed in 0u64..300,
        phi in prop::collection::vec(-2.0f64..2.0, 1..6),
        x in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let s = shift(n, seed, ShiftKind::NormalizedLaplacian);
        let c = FirCoefficients::new(phi).unwrap();
        let x = &x[..n];
        let d = graphs::eigendecompose(&s).unwrap();
        let h = filters::fir_freq_response(&c, &d.eigvals);
        let xhat = d.gft(x).unwrap();
        let spectral = d.igft(&xhat.iter().zip(&h).map(|(a, b)| a * b).collect::<Vec<_>>()).unwrap();
        let direct = filters::fir_apply(&s, &c, x).unwrap();
        prop_assert!(linalg::norm_inf(&linalg::sub(&direct, &spectral)) < 1e-9);
    }

    /// The error trajectory equals the noise propagated through the filter.
    #[test]
    fn fir_error_is_propagated_noise(
        n in 3usize..10,
        seed in 0u64..300,
        qseed in any::<u64>(),
        phi in prop::collection::vec(-1.0f64..1.0, 2..6),
    ) {
        let s = shift(n, seed, ShiftKind::NormalizedLaplacian);
        let c = FirCoefficients::new(phi).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let q = DitheredQuantizer::new(StepsizeSchedule::fixed(0.05).unwrap(), qseed)
            .with_range(RangePolicy::InputNorm { factor: 4.0, growth: s.rho() });
        let run = filters::fir_apply_quantized(&s, &c, &x, &q).unwrap();
        let shifts = vec![&s; c.order()];
        let eps = filters::fir_error_from_noises(&shifts, &c, &run.noises).unwrap();
        let last = run.final_error().unwrap();
        prop_assert!(linalg::norm_inf(&linalg::sub(&eps, last)) < 1e-10);
    }

    /// ARMA₁ Tikhonov steady state against a dense solve of `(I + wS) y = x`.
    #[test]
    fn tikhonov_steady_state(n in 3usize..12, seed in 0u64..300, w in 0.0f64..0.45) {
        let s = shift(n, seed, ShiftKind::NormalizedLaplacian);
        let c = design::tikhonov_arma1(w, &s).unwrap();
        let x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sin()).collect();
        let dense = linalg::solve(&Matrix::identity(n).add_scaled(s.matrix(), w), &x).unwrap();
        let steady = filters::arma_steady_state(&s, &c, &x).unwrap();
        prop_assert!(linalg::norm_inf(&linalg::sub(&steady, &dense)) < 1e-10);
        let run = filters::arma_run(ShiftSource::Static(&s), &c, &x, 400, None, None).unwrap();
        prop_assert!(linalg::norm_inf(&linalg::sub(run.final_output(), &dense)) < 1e-9);
    }
}

#[test]
fn unstable_arma_is_rejected() {
    let s = shift(8, 1, ShiftKind::NormalizedLaplacian);
    let c = ArmaCoefficients::new(vec![-0.6], vec![1.0]).unwrap();
    let err =
        filters::arma_run(ShiftSource::Static(&s), &c, &[1.0; 8], 10, None, None).unwrap_err();
    assert!(matches!(err, Error::Unstable { .. }));
}

#[test]
fn arma_with_multiple_branches_sums_rational_response() {
    let s = shift(10, 2, ShiftKind::ScaledLaplacian);
    let c = ArmaCoefficients::new(vec![-0.3, 0.4], vec![1.0, -0.5]).unwrap();
    let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let d = graphs::eigendecompose(&s).unwrap();
    let h = c.freq_response(&d.eigvals);
    let xhat = d.gft(&x).unwrap();
    let spectral = d
        .igft(&xhat.iter().zip(&h).map(|(a, b)| a * b).collect::<Vec<_>>())
        .unwrap();
    let steady = filters::arma_steady_state(&s, &c, &x).unwrap();
    assert!(linalg::norm_inf(&linalg::sub(&steady, &spectral)) < 1e-10);
}

#[test]
fn fine_quantization_approaches_the_exact_filter() {
    let s = shift(12, 3, ShiftKind::NormalizedLaplacian);
    let c = design::tikhonov_arma1(0.3, &s).unwrap();
    let x = vec![1.0; 12];
    let q = DitheredQuantizer::new(StepsizeSchedule::fixed(1e-9).unwrap(), 5).with_range(
        RangePolicy::InputNorm {
            factor: 10.0,
            growth: 1.0,
        },
    );
    let run = filters::arma_run(ShiftSource::Static(&s), &c, &x, 200, Some(&q), None).unwrap();
    let steady = filters::arma_steady_state(&s, &c, &x).unwrap();
    assert!(linalg::norm_inf(&linalg::sub(run.final_output(), &steady)) < 1e-8);
    assert_eq!(run.ledger.saturation_events, 0);
}

#[test]
fn res_runs_are_reproducible_from_the_seed() {
    let g = graphs::random_geometric(10, 1.0, 0.6, 4).unwrap();
    let s = graphs::build_shift(&g, ShiftKind::ScaledLaplacian, None).unwrap();
    let m = ResModel::uniform(g, s.clone(), 0.7).unwrap();
    let c = design::tikhonov_arma1(0.4, &s).unwrap();
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
    let run = |seed| {
        filters::arma_run(ShiftSource::Res { model: &m, seed }, &c, &x, 30, None, None)
            .unwrap()
            .outputs
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shifts = filters::draw_shifts(&m, 3, &mut rng);
    let fir = FirCoefficients::new(vec![1.0, 0.5, 0.25, 0.125]).unwrap();
    let y = filters::fir_apply_tv(&shifts, &fir, &x).unwrap();
    let mut manual = linalg::scaled(1.0, &x);
    let mut v = x.clone();
    for (k, sh) in shifts.iter().enumerate() {
        v = sh.apply(&v);
        linalg::axpy(fir.phi()[k + 1], &v, &mut manual);
    }
    assert!(linalg::norm_inf(&linalg::sub(&y, &manual)) < 1e-14);
}

#[test]
fn length_mismatch_is_an_error() {
    let s = shift(5, 1, ShiftKind::Laplacian);
    let c = FirCoefficients::new(vec![1.0, 1.0]).unwrap();
    assert!(matches!(
        filters::fir_apply(&s, &c, &[1.0; 4]),
        Err(Error::DimensionMismatch { .. })
    ));
}
