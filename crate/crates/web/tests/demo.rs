use quantgf_web::demo;

#[test]
fn dither_error_is_uniform_on_the_unit_cell() {
    let h = demo::dither_histogram(0.37, 0.1, 200_000, 10, 3).unwrap();
    assert_eq!(h.edges.len(), 11);
    assert!(h.mean.abs() < 0.005, "{}", h.mean);
    assert!((h.variance - 1.0 / 12.0).abs() < 0.002, "{}", h.variance);
    for d in &h.density {
        assert!((d - 1.0).abs() < 0.05, "{:?}", h.density);
    }
    let area: f64 = h.density.iter().map(|d| d * 0.1).sum();
    assert!((area - 1.0).abs() < 1e-12);
}

#[test]
fn decreasing_stepsize_drives_the_error_to_zero() {
    let c = demo::arma_nse_curves(40, 0.3, 0.1, 120, 5).unwrap();
    assert_eq!(c.fixed.len(), 120);
    assert!(c.rate > 0.0 && c.rate < 1.0);
    let tail = |v: &[f64]| v[100..].iter().sum::<f64>() / 20.0;
    assert!(tail(&c.dynamic) < 1e-12, "{}", tail(&c.dynamic));
    assert!(tail(&c.fixed) > 1e3 * tail(&c.dynamic));
    assert!(c.dynamic_bits > c.fixed_bits);
}

#[test]
fn lowpass_fit_tracks_the_target() {
    let r = demo::lowpass_response(30, 12, 1.0, 2).unwrap();
    assert_eq!(r.phi.len(), 13);
    assert_eq!(r.eigvals.len(), 30);
    assert_eq!(r.grid.len(), r.fit.len());
    let err: f64 = r
        .fit
        .iter()
        .zip(&r.target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / r.grid.len() as f64;
    assert!(err < 0.05, "{err}");
    let low = demo::lowpass_response(30, 2, 1.0, 2).unwrap();
    let low_err: f64 = low
        .fit
        .iter()
        .zip(&low.target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / low.grid.len() as f64;
    assert!(err < low_err);
}

#[test]
fn bad_arguments_are_errors() {
    assert!(demo::dither_histogram(0.0, -1.0, 10, 4, 0).is_err());
    assert!(demo::arma_nse_curves(1, 0.3, 0.1, 10, 0).is_err());
    assert!(demo::arma_nse_curves(10, 0.3, 0.1, 0, 0).is_err());
    assert!(demo::lowpass_response(10_000, 4, 1.0, 0).is_err());
}

#[test]
fn exports_return_json_on_success() {
    let s = quantgf_web::lowpass_response(12, 4, 1.0, 1).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert_eq!(v["phi"].as_array().unwrap().len(), 5);
}
