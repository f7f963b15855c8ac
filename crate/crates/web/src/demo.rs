//! Demo computations behind the wasm exports.

use quantgf::design;
use quantgf::filters::{self, ShiftSource};
use quantgf::graphs::{self, ShiftKind, ShiftOperator};
use quantgf::quantization::{self, DitheredQuantizer, RangePolicy, StepsizeSchedule};
use quantgf::{analysis, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

pub const MAX_NODES: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// Bin edges over `[-1/2, 1/2]`, one more than `density`.
    pub edges: Vec<f64>,
    /// Normalized so the bars integrate to one.
    pub density: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NseCurves {
    /// NSE after iterations `1..=T`.
    pub fixed: Vec<f64>,
    pub dynamic: Vec<f64>,
    /// Bits sent over all links and iterations.
    pub fixed_bits: u64,
    pub dynamic_bits: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Response {
    pub grid: Vec<f64>,
    pub target: Vec<f64>,
    pub fit: Vec<f64>,
    pub eigvals: Vec<f64>,
    pub phi: Vec<f64>,
}

fn demo_shift(nodes: usize, seed: u64) -> Result<ShiftOperator> {
    if !(2..=MAX_NODES).contains(&nodes) {
        return Err(Error::InvalidArgument(format!(
            "node count must be in 2..={MAX_NODES}, got {nodes}"
        )));
    }
    let n = nodes as f64;
    let radius = (2.0 * n.ln() / n).sqrt().max(0.3);
    let g = graphs::random_geometric(nodes, 1.0, radius, seed)?;
    graphs::build_shift(&g, ShiftKind::NormalizedLaplacian, None)
}

/// Quantizes `samples` copies of `value` with independent dither and bins the
/// normalized error.
pub fn dither_histogram(
    value: f64,
    delta: f64,
    samples: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    if samples == 0 || bins == 0 {
        return Err(Error::InvalidArgument(
            "samples and bins must be positive".into(),
        ));
    }
    let range = 4.0 * (value.abs() + delta);
    let q = DitheredQuantizer::new(StepsizeSchedule::fixed(delta)?, seed)
        .with_range(RangePolicy::Fixed { range });
    let out = quantization::quantize(&vec![value; samples], 0, &q, 0)?;
    let e: Vec<f64> = out.noise.iter().map(|v| v / out.delta).collect();
    let mut counts = vec![0usize; bins];
    for v in &e {
        let b = ((v + 0.5) * bins as f64)
            .floor()
            .clamp(0.0, (bins - 1) as f64);
        counts[b as usize] += 1;
    }
    let width = 1.0 / bins as f64;
    let m = e.iter().sum::<f64>() / samples as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 * width - 0.5).collect(),
        density: counts
            .iter()
            .map(|&c| c as f64 / (samples as f64 * width))
            .collect(),
        mean: m,
        variance: e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / samples as f64,
    })
}

/// Tikhonov denoising by ARMA₁ on a random geometric graph, comparing a fixed
/// stepsize with one that decays at the filter's contraction rate. The
/// reference is the exact steady state for the same noisy input.
pub fn arma_nse_curves(
    nodes: usize,
    weight: f64,
    delta0: f64,
    iterations: usize,
    seed: u64,
) -> Result<NseCurves> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be positive".into()));
    }
    let s = demo_shift(nodes, seed)?;
    let c = design::tikhonov_arma1(weight, &s)?;
    let mut rng = analysis::substream(seed, 1);
    let noise = Normal::new(0.0, 0.2).expect("positive deviation");
    let x: Vec<f64> = (0..nodes)
        .map(|i| (0.3 * i as f64).sin() + noise.sample(&mut rng))
        .collect();
    let y_ref = filters::arma_steady_state(&s, &c, &x)?;
    let rate = c.contraction(s.rho());
    let gain = c.varphi().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / (1.0 - rate);
    let range = RangePolicy::InputNorm {
        factor: 2.0 * gain,
        growth: 1.0,
    };
    let qseed: u64 = rng.random();
    let curve = |sched: StepsizeSchedule| -> Result<(Vec<f64>, u64)> {
        let q = DitheredQuantizer::new(sched, qseed).with_range(range.clone());
        let run = filters::arma_run(ShiftSource::Static(&s), &c, &x, iterations, Some(&q), None)?;
        let nse = run
            .outputs
            .iter()
            .map(|y| analysis::nse(y, &y_ref))
            .collect::<Result<Vec<_>>>()?;
        Ok((nse, run.ledger.total_bits))
    };
    let (fixed, fixed_bits) = curve(StepsizeSchedule::fixed(delta0)?)?;
    let (dynamic, dynamic_bits) = curve(StepsizeSchedule::geometric(delta0, rate)?)?;
    Ok(NseCurves {
        fixed,
        dynamic,
        fixed_bits,
        dynamic_bits,
        rate,
    })
}

/// Fits an order-`order` FIR to an ideal low-pass response over `[0, 2]`.
pub fn lowpass_response(nodes: usize, order: usize, cutoff: f64, seed: u64) -> Result<Response> {
    let s = demo_shift(nodes, seed)?;
    let eigvals = graphs::eigendecompose(&s)?.eigvals;
    let h = design::ideal_lowpass(cutoff);
    let design_grid = design::uniform_grid(0.0, s.rho(), 400);
    let fir = design::fir_ls_design(&h, order, &design_grid)?;
    let grid = design::uniform_grid(0.0, s.rho(), 200);
    Ok(Response {
        target: grid.iter().map(|&l| h(l)).collect(),
        fit: filters::fir_freq_response(&fir, &grid),
        grid,
        eigvals,
        phi: fir.phi().to_vec(),
    })
}
