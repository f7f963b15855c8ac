//! Quantization MSE formulas and bounds, the NSE metric and Monte Carlo estimation.
//!
//! All MSE values are per node: `E‖ε‖² / N`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::filters::FirCoefficients;
use crate::graphs::{fmt_f64, ShiftOperator, SpectralDecomposition};
use crate::linalg::{self, Matrix};
use crate::quantization::{noise_variance, StepsizeSchedule};

/// Perturbation applied when a formula would divide by `1 − λ²` at `λ = ±1`.
pub const UNIT_PERTURBATION: f64 = 1e-6;
/// Normal quantile of the two-sided 95% interval.
pub const Z95: f64 = 1.96;

/// Single-sum MSE expression for a fixed-stepsize quantized FIR filter, evaluated as written:
/// `(σ²/N) Σₖ φₖ Σ_{κ<k} ‖Λ^{k−κ}‖_F²`.
pub fn fir_mse_printed(dec: &SpectralDecomposition, c: &FirCoefficients, sigma_q2: f64) -> f64 {
    let n = dec.size() as f64;
    let total: f64 = (1..=c.order())
        .map(|k| {
            let inner: f64 = (0..k)
                .map(|kappa| {
                    let p = 2 * (k - kappa) as i32;
                    dec.eigvals.iter().map(|l| l.powi(p)).sum::<f64>()
                })
                .sum();
            c.phi()[k] * inner
        })
        .sum();
    sigma_q2 / n * total
}

/// Exact per-node MSE of the quantized FIR filter from the noise covariance:
/// `(1/N) Σ_κ σ²_κ ‖Σ_{k>κ} φₖ S^{k−κ}‖_F²` with `σ²_κ = Δ_κ²/12`.
pub fn fir_mse_exact(s: &ShiftOperator, c: &FirCoefficients, schedule: &StepsizeSchedule) -> f64 {
    let variances: Vec<f64> = (0..c.order())
        .map(|k| noise_variance(schedule.stepsize_at(k)))
        .collect();
    fir_mse_exact_with_variances(s.matrix(), c, &variances)
}

/// [`fir_mse_exact`] with explicit per-round noise variances.
pub fn fir_mse_exact_with_variances(s: &Matrix, c: &FirCoefficients, variances: &[f64]) -> f64 {
    let k_max = c.order();
    let n = s.rows();
    let mut powers = Vec::with_capacity(k_max);
    let mut p = Matrix::identity(n);
    for _ in 0..k_max {
        p = p.matmul(s);
        powers.push(p.clone());
    }
    let mut total = 0.0;
    for (kappa, &var) in variances.iter().enumerate().take(k_max) {
        let mut m = Matrix::zeros(n, n);
        for k in (kappa + 1)..=k_max {
            m = m.add_scaled(&powers[k - kappa - 1], c.phi()[k]);
        }
        let f = m.frobenius_norm();
        total += var * f * f;
    }
    total / n as f64
}

fn away_from_unit(lambda_max: f64) -> f64 {
    if (lambda_max.abs() - 1.0).abs() < UNIT_PERTURBATION {
        lambda_max.abs() + UNIT_PERTURBATION
    } else {
        lambda_max.abs()
    }
}

/// `ηₖ = Σ_{j=1}^{k} λ_max^{2j}`.
pub fn eta(lambda_max: f64, k: usize) -> f64 {
    let l2 = away_from_unit(lambda_max).powi(2);
    (l2 - l2.powi(k as i32 + 1)) / (1.0 - l2)
}

/// Lower and upper bounds `(σ²/N)Σφₖηₖ` and `σ²Σφₖηₖ` around [`fir_mse_printed`].
pub fn fir_mse_bounds_fixed(
    lambda_max: f64,
    c: &FirCoefficients,
    sigma_q2: f64,
    n: usize,
) -> (f64, f64) {
    let s: f64 = (1..=c.order())
        .map(|k| c.phi()[k] * eta(lambda_max, k))
        .sum();
    let upper = sigma_q2 * s;
    (upper / n as f64, upper)
}

/// Bound under the decreasing schedule `Δₖ = λ_max⁻ᵏ Δ₀`:
/// `Δ₀² / (12 (1 − λ_max⁻²)) · 𝟏ᵀφ₁`.
pub fn fir_mse_bound_dynamic(lambda_max: f64, c: &FirCoefficients, delta0: f64) -> Result<f64> {
    if !(lambda_max > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decreasing-stepsize bound needs lambda_max > 1, got {lambda_max}"
        )));
    }
    Ok(delta0 * delta0 / (12.0 * (1.0 - lambda_max.powi(-2))) * c.tail_sum())
}

/// Static graphs scale ARMA bounds by `K`; random graphs by `K²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmaSetting {
    Static,
    Res,
}

impl ArmaSetting {
    pub fn prefactor(self, k: usize) -> f64 {
        match self {
            ArmaSetting::Static => k as f64,
            ArmaSetting::Res => (k * k) as f64,
        }
    }
}

fn contraction(psi_max: f64, bound: f64) -> Result<f64> {
    let a = psi_max * bound;
    if !(a >= 0.0 && a < 1.0) {
        return Err(Error::Unstable { product: a });
    }
    Ok(a)
}

/// `a^power` via logarithms, exact zero for `a = 0`.
fn pow_log(a: f64, power: f64) -> f64 {
    if a == 0.0 {
        if power == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (power * a.ln()).exp()
    }
}

/// Fixed-stepsize ARMA bound at iteration `t`: `P σ² (a² − a^{2(t+1)}) / (1 − a²)`, `a = ψ_max·bound`.
pub fn arma_mse_bound_fixed(
    setting: ArmaSetting,
    k: usize,
    sigma_q2: f64,
    psi_max: f64,
    bound: f64,
    t: usize,
) -> Result<f64> {
    let a = contraction(psi_max, bound)?;
    let a2 = a * a;
    Ok(setting.prefactor(k) * sigma_q2 * (a2 - pow_log(a, 2.0 * (t as f64 + 1.0))) / (1.0 - a2))
}

/// Limit of [`arma_mse_bound_fixed`] as `t → ∞`.
pub fn arma_mse_bound_fixed_steady(
    setting: ArmaSetting,
    k: usize,
    sigma_q2: f64,
    psi_max: f64,
    bound: f64,
) -> Result<f64> {
    let a = contraction(psi_max, bound)?;
    Ok(setting.prefactor(k) * sigma_q2 * a * a / (1.0 - a * a))
}

/// Decreasing-stepsize ARMA bound `P · Δ₀/12 · t · a^{2t}` under `Δₜ = aᵗ Δ₀`.
pub fn arma_mse_bound_dynamic(
    setting: ArmaSetting,
    k: usize,
    delta0: f64,
    psi_max: f64,
    bound: f64,
    t: usize,
) -> Result<f64> {
    let a = contraction(psi_max, bound)?;
    if a == 0.0 {
        return Err(Error::InvalidArgument(
            "contraction factor must be positive".into(),
        ));
    }
    if t == 0 {
        return Ok(0.0);
    }
    Ok(setting.prefactor(k) * delta0 / 12.0 * t as f64 * pow_log(a, 2.0 * t as f64))
}

/// Iteration after which [`arma_mse_bound_dynamic`] decreases, `−1/(2 ln a)`.
pub fn dynamic_peak(a: f64) -> f64 {
    -1.0 / (2.0 * a.ln())
}

/// Random-graph FIR bound `(1/12) Σ_{κ=1}^{K} Δ²_{κ−1} (Σ_{k=κ}^{K} ρ^{k−κ+1} |φₖ|)²`.
pub fn fir_res_mse_bound(rho: f64, c: &FirCoefficients, schedule: &StepsizeSchedule) -> f64 {
    let k_max = c.order();
    let mut total = 0.0;
    for kappa in 1..=k_max {
        let inner: f64 = (kappa..=k_max)
            .map(|k| rho.powi((k - kappa + 1) as i32) * c.phi()[k].abs())
            .sum();
        total += schedule.stepsize_at(kappa - 1).powi(2) * inner * inner;
    }
    total / 12.0
}

/// Fraction bits of an `f64`; a step finer than `range / 2^52` is not resolvable.
pub const MANTISSA_BITS: u32 = f64::MANTISSA_DIGITS - 1;

/// Last iteration `t ≤ t_max` whose incoming noise (sent at `t − 1`) was
/// quantized with at most [`MANTISSA_BITS`] bits over `range`.
///
/// Past this point the quantizer grid is finer than the floating point
/// spacing of the messages and the error stops at rounding level, so bounds
/// that keep decaying can no longer be compared against simulation.
pub fn resolvable_horizon(schedule: &StepsizeSchedule, range: f64, t_max: usize) -> usize {
    (1..=t_max)
        .take_while(|&t| schedule.bits_at(t - 1, range) <= MANTISSA_BITS)
        .last()
        .unwrap_or(0)
}

/// Normalized squared error `‖y_test − y_ref‖² / ‖y_ref‖²`.
pub fn nse(y_test: &[f64], y_ref: &[f64]) -> Result<f64> {
    check_len(y_ref.len(), y_test.len())?;
    let den = linalg::dot(y_ref, y_ref);
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "NSE reference signal is zero".into(),
        ));
    }
    Ok(linalg::dot(&linalg::sub(y_test, y_ref), &linalg::sub(y_test, y_ref)) / den)
}

/// Per-node squared error `‖ε‖² / N`.
pub fn per_node_mse(err: &[f64]) -> f64 {
    linalg::dot(err, err) / err.len() as f64
}

/// Independent reproducible stream for Monte Carlo trial `i`.
pub fn substream(base_seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(i);
    rng
}

/// Sample mean with its 95% halfwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub halfwidth: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Summarizes samples in the given order (sums are order-dependent).
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        Self {
            mean,
            std_dev,
            halfwidth: Z95 * std_dev / (n as f64).sqrt(),
            n,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.std_dev / (self.n as f64).sqrt()
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.halfwidth
    }

    /// A bound holds when `mean − halfwidth ≤ bound`.
    pub fn below(&self, bound: f64) -> bool {
        self.lower() <= bound
    }
}

/// Runs `trials` independent evaluations of `estimator` and returns them in trial order.
///
/// Trial `i` receives [`substream`]`(base_seed, i)`, so results do not depend
/// on how trials are spread over worker threads.
pub fn run_trials<T, F>(trials: usize, base_seed: u64, estimator: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let one = |i: usize| {
        let mut rng = substream(base_seed, i as u64);
        estimator(i, &mut rng)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(one).collect()
    }
}

/// One row of an [`MseReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub t: usize,
    pub formula_value: Option<f64>,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub mc_estimate: f64,
    pub mc_halfwidth: f64,
    pub trials: usize,
}

impl MseRow {
    /// True when the Monte Carlo mean exceeds the upper bound beyond its halfwidth.
    pub fn violates_upper(&self) -> bool {
        matches!(self.bound_upper, Some(b) if self.mc_estimate - self.mc_halfwidth > b)
    }
}

/// Formula and bound values paired with Monte Carlo estimates per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
}

/// Monte Carlo MSE estimation: `estimator` returns one sample per recorded
/// iteration (index `t` of the returned vector) for each trial.
pub fn monte_carlo<F>(trials: usize, base_seed: u64, estimator: F) -> Result<MseReport>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    if trials < 2 {
        return Err(Error::InvalidArgument(
            "Monte Carlo needs at least 2 trials".into(),
        ));
    }
    let samples = run_trials(trials, base_seed, estimator)?;
    let len = samples[0].len();
    if samples.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidArgument(
            "every trial must record the same number of iterations".into(),
        ));
    }
    let rows = (0..len)
        .map(|t| {
            let column: Vec<f64> = samples.iter().map(|s| s[t]).collect();
            let est = MeanEstimate::from_samples(&column);
            MseRow {
                t,
                formula_value: None,
                bound_lower: None,
                bound_upper: None,
                mc_estimate: est.mean,
                mc_halfwidth: est.halfwidth,
                trials,
            }
        })
        .collect();
    let report = MseReport { rows };
    if report.rows.iter().any(|r| !r.mc_estimate.is_finite()) {
        return Err(Error::NonFinite("Monte Carlo estimate".into()));
    }
    Ok(report)
}

/// Summary of an [`MseReport`] for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub rows: usize,
    pub trials: usize,
    pub upper_violations: Vec<usize>,
    pub violated: bool,
    /// Largest `mc_estimate / bound_upper` over rows with a positive bound.
    pub max_ratio_to_bound: Option<f64>,
}

impl MseReport {
    pub fn with_formula(mut self, f: impl Fn(usize) -> Option<f64>) -> Self {
        for r in &mut self.rows {
            r.formula_value = f(r.t);
        }
        self
    }

    pub fn with_bounds(
        mut self,
        lower: impl Fn(usize) -> Option<f64>,
        upper: impl Fn(usize) -> Option<f64>,
    ) -> Self {
        for r in &mut self.rows {
            r.bound_lower = lower(r.t);
            r.bound_upper = upper(r.t);
        }
        self
    }

    /// Renumbers rows starting at `t0`.
    pub fn offset(mut self, t0: usize) -> Self {
        for (i, r) in self.rows.iter_mut().enumerate() {
            r.t = t0 + i;
        }
        self
    }

    pub fn violations(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.violates_upper())
            .map(|r| r.t)
            .collect()
    }

    pub fn summary(&self) -> MseSummary {
        let upper_violations = self.violations();
        let max_ratio_to_bound = self
            .rows
            .iter()
            .filter_map(|r| {
                r.bound_upper
                    .filter(|b| *b > 0.0)
                    .map(|b| r.mc_estimate / b)
            })
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        MseSummary {
            rows: self.rows.len(),
            trials: self.rows.first().map_or(0, |r| r.trials),
            violated: !upper_violations.is_empty(),
            upper_violations,
            max_ratio_to_bound,
        }
    }

    /// Writes the fixed column order `t,formula_value,bound_lower,bound_upper,mc_estimate,mc_halfwidth,trials`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "t",
            "formula_value",
            "bound_lower",
            "bound_upper",
            "mc_estimate",
            "mc_halfwidth",
            "trials",
        ])?;
        for r in &self.rows {
            wr.write_record([
                r.t.to_string(),
                opt(r.formula_value),
                opt(r.bound_lower),
                opt(r.bound_upper),
                fmt_f64(r.mc_estimate),
                fmt_f64(r.mc_halfwidth),
                r.trials.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_shift, eigendecompose, Graph, ShiftKind};
    use rand::Rng;

    fn fir(phi: &[f64]) -> FirCoefficients {
        FirCoefficients::new(phi.to_vec()).unwrap()
    }

    fn scalar(l: f64) -> ShiftOperator {
        ShiftOperator::custom(Matrix::from_diag(&[l])).unwrap()
    }

    #[test]
    fn printed_formula_examples() {
        let s = scalar(0.7);
        let dec = eigendecompose(&s).unwrap();
        assert_eq!(fir_mse_printed(&dec, &fir(&[1.0, 0.0, 0.0]), 0.3), 0.0);
        let v = fir_mse_printed(&dec, &fir(&[0.0, 1.0]), 0.3);
        assert!((v - 0.3 * 0.49).abs() < 1e-15);
    }

    #[test]
    fn printed_equals_exact_for_unit_first_order() {
        let s = build_shift(&Graph::complete(6), ShiftKind::NormalizedLaplacian, None).unwrap();
        let dec = eigendecompose(&s).unwrap();
        let c = fir(&[0.4, 1.0]);
        let sched = StepsizeSchedule::fixed(0.3).unwrap();
        let exact = fir_mse_exact(&s, &c, &sched);
        let printed = fir_mse_printed(&dec, &c, noise_variance(0.3));
        assert!((exact - printed).abs() < 1e-14);
    }

    #[test]
    fn exact_formula_hand_expansion() {
        let l: f64 = 0.8;
        let (p1, p2) = (0.6, -0.3);
        let sched = StepsizeSchedule::explicit(vec![0.5, 0.2]).unwrap();
        let got = fir_mse_exact(&scalar(l), &fir(&[1.0, p1, p2]), &sched);
        let (s0, s1) = (noise_variance(0.5), noise_variance(0.2));
        let want = s0 * (p1 * l + p2 * l * l).powi(2) + s1 * (p2 * l).powi(2);
        assert!((got - want).abs() < 1e-15);
        assert_eq!(
            fir_mse_exact(&scalar(l), &fir(&[1.0, 0.0, 0.0]), &sched),
            0.0
        );
    }

    #[test]
    fn fixed_bounds_examples() {
        assert!((eta(2.0, 1) - 4.0).abs() < 1e-12);
        let (lo, hi) = fir_mse_bounds_fixed(2.0, &fir(&[0.0, 1.0]), 0.5, 10);
        assert!((lo - 4.0 * 0.5 / 10.0).abs() < 1e-12);
        assert!((hi - 10.0 * lo).abs() < 1e-12);
        // λ = 1 is perturbed rather than dividing by zero.
        assert!(eta(1.0, 3).is_finite());
    }

    #[test]
    fn sandwich_for_nonnegative_coefficients() {
        let g = crate::graphs::random_geometric(15, 10.0, 4.0, 2).unwrap();
        let s = build_shift(&g, ShiftKind::NormalizedLaplacian, None).unwrap();
        let dec = eigendecompose(&s).unwrap();
        let c = fir(&[0.1, 0.5, 0.3, 0.2, 0.05]);
        let printed = fir_mse_printed(&dec, &c, 0.01);
        let (lo, hi) = fir_mse_bounds_fixed(dec.spectral_norm(), &c, 0.01, 15);
        assert!(lo <= printed && printed <= hi);
    }

    #[test]
    fn dynamic_bound_examples() {
        assert_eq!(
            fir_mse_bound_dynamic(2.0, &fir(&[1.0, 0.0]), 1.0).unwrap(),
            0.0
        );
        let v = fir_mse_bound_dynamic(2.0, &fir(&[0.0, 1.0]), 1.0).unwrap();
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
        assert!(fir_mse_bound_dynamic(1.0, &fir(&[0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn arma_bound_examples() {
        let s = ArmaSetting::Static;
        assert_eq!(arma_mse_bound_fixed(s, 1, 1.0, 0.5, 1.0, 0).unwrap(), 0.0);
        let steady = arma_mse_bound_fixed_steady(s, 1, 1.0, 0.5, 1.0).unwrap();
        assert!((steady - 1.0 / 3.0).abs() < 1e-15);
        let late = arma_mse_bound_fixed(s, 1, 1.0, 0.5, 1.0, 2000).unwrap();
        assert!((late - steady).abs() < 1e-15);
        assert!(arma_mse_bound_fixed(s, 1, 1.0, 0.5, 2.0, 3).is_err());
        assert_eq!(
            arma_mse_bound_dynamic(s, 1, 12.0, 0.5, 1.0, 0).unwrap(),
            0.0
        );
        let v = arma_mse_bound_dynamic(s, 1, 12.0, 0.5, 1.0, 2).unwrap();
        assert!((v - 0.125).abs() < 1e-15);
        let r = arma_mse_bound_fixed(ArmaSetting::Res, 3, 1.0, 0.5, 1.0, 4).unwrap();
        let st = arma_mse_bound_fixed(s, 3, 1.0, 0.5, 1.0, 4).unwrap();
        assert!((r - 3.0 * st).abs() < 1e-14);
        // no underflow to a hard error far out
        assert!(arma_mse_bound_dynamic(s, 1, 1.0, 0.9, 1.0, 5000).unwrap() >= 0.0);
    }

    #[test]
    fn dynamic_bound_decreases_past_peak() {
        let a: f64 = 0.8;
        let start = dynamic_peak(a).ceil() as usize;
        let vals: Vec<f64> = (start..start + 50)
            .map(|t| arma_mse_bound_dynamic(ArmaSetting::Static, 2, 1.0, a, 1.0, t).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn res_bound_examples() {
        let sched = StepsizeSchedule::fixed(1.0).unwrap();
        assert_eq!(fir_res_mse_bound(0.5, &fir(&[3.0, 0.0, 0.0]), &sched), 0.0);
        let v = fir_res_mse_bound(0.5, &fir(&[0.0, 2.0]), &sched);
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn nse_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(nse(&y, &y).unwrap(), 0.0);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert!((nse(&y2, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((nse(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(nse(&y, &[0.0; 3]).is_err());
    }

    #[test]
    fn monte_carlo_deterministic_estimator() {
        let r = monte_carlo(10, 3, |_, _| Ok(vec![1.5, 2.5])).unwrap();
        assert_eq!(r.rows[0].mc_estimate, 1.5);
        assert_eq!(r.rows[1].mc_halfwidth, 0.0);
        assert!(monte_carlo(1, 3, |_, _| Ok(vec![1.0])).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible_and_ordered() {
        let est = |i: usize, rng: &mut ChaCha8Rng| Ok(vec![rng.random::<f64>() + i as f64 * 0.0]);
        let a = monte_carlo(50, 11, est).unwrap();
        let b = monte_carlo(50, 11, est).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_ne!(a, monte_carlo(50, 12, est).unwrap());
    }

    #[test]
    fn report_violation_flags() {
        let r = monte_carlo(4, 0, |i, _| Ok(vec![i as f64, 1.0]))
            .unwrap()
            .with_bounds(|_| None, |t| Some(if t == 0 { 10.0 } else { 0.5 }));
        assert_eq!(r.violations(), vec![1]);
        let s = r.summary();
        assert!(s.violated);
        assert_eq!(s.max_ratio_to_bound, Some(2.0));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "t,formula_value,bound_lower,bound_upper,mc_estimate,mc_halfwidth,trials\n0,,,10.0,1.5,"
        ));
    }
}
