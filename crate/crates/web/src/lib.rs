//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain numbers and returns a JSON string, so
//! the page needs no bundler. The computations live in [`demo`] and are
//! usable (and tested) natively.

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_json<T: serde::Serialize>(r: quantgf::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Histogram of the normalized quantization error `(Q(x) - x) / Δ`.
#[wasm_bindgen]
pub fn dither_histogram(
    value: f64,
    delta: f64,
    samples: usize,
    bins: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_json(demo::dither_histogram(value, delta, samples, bins, seed))
}

/// NSE per iteration of a quantized ARMA₁ denoiser, fixed vs decreasing stepsizes.
#[wasm_bindgen]
pub fn arma_nse_curves(
    nodes: usize,
    weight: f64,
    delta0: f64,
    iterations: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_json(demo::arma_nse_curves(
        nodes, weight, delta0, iterations, seed,
    ))
}

/// Least-squares FIR fit of an ideal low-pass response on a random graph.
#[wasm_bindgen]
pub fn lowpass_response(
    nodes: usize,
    order: usize,
    cutoff: f64,
    seed: u64,
) -> Result<String, JsError> {
    to_json(demo::lowpass_response(nodes, order, cutoff, seed))
}
