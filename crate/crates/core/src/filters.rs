//! FIR and parallel ARMA graph filter engines.
//!
//! Every engine applies the shift one matrix-vector product at a time, so a
//! filter of order `K` costs `K` sparse products per output. Quantized
//! variants pass each transmitted vector through [`quantize`](crate::quantization::quantize)
//! and keep an unquantized shadow run to report the quantization error.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graphs::{fmt_f64, res_sample, ResModel, ShiftOperator};
use crate::linalg::{self, Matrix};
use crate::quantization::{
    quantize_logged, DitheredQuantizer, QuantizationLedger, StepsizeSchedule,
};

/// Margin below 1 that `ψ_max · bound` must respect.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Coefficients `(φ₀, …, φ_K)` of `y = Σ φₖ Sᵏ x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirCoefficients {
    phi: Vec<f64>,
}

impl FirCoefficients {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::InvalidArgument(
                "FIR filter needs at least φ₀".into(),
            ));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("FIR coefficients".into()));
        }
        Ok(Self { phi })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn order(&self) -> usize {
        self.phi.len() - 1
    }

    /// `𝟏ᵀφ₁`, the sum of every coefficient except `φ₀`.
    pub fn tail_sum(&self) -> f64 {
        self.phi[1..].iter().sum()
    }
}

/// Parallel first-order branches `w⁽ᵏ⁾ ← ψₖ S w⁽ᵏ⁾ + ϕₖ x`, output `Σₖ w⁽ᵏ⁾`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaCoefficients {
    psi: Vec<f64>,
    varphi: Vec<f64>,
}

impl ArmaCoefficients {
    pub fn new(psi: Vec<f64>, varphi: Vec<f64>) -> Result<Self> {
        check_len(psi.len(), varphi.len())?;
        if psi.is_empty() {
            return Err(Error::InvalidArgument(
                "ARMA filter needs at least one branch".into(),
            ));
        }
        if psi.iter().chain(&varphi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ARMA coefficients".into()));
        }
        Ok(Self { psi, varphi })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn varphi(&self) -> &[f64] {
        &self.varphi
    }

    pub fn order(&self) -> usize {
        self.psi.len()
    }

    pub fn psi_max(&self) -> f64 {
        self.psi.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Contraction factor `ψ_max · bound` of the recursion.
    pub fn contraction(&self, bound: f64) -> f64 {
        self.psi_max() * bound
    }

    pub fn is_stable(&self, bound: f64) -> bool {
        self.contraction(bound) < 1.0 - STABILITY_MARGIN
    }

    pub fn check_stable(&self, bound: f64) -> Result<()> {
        if self.is_stable(bound) {
            Ok(())
        } else {
            Err(Error::Unstable {
                product: self.contraction(bound),
            })
        }
    }

    /// Rational response `Σ ϕₖ / (1 − ψₖ λ)`.
    pub fn freq_response(&self, lambdas: &[f64]) -> Vec<f64> {
        lambdas
            .iter()
            .map(|&l| {
                self.psi
                    .iter()
                    .zip(&self.varphi)
                    .map(|(p, v)| v / (1.0 - p * l))
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FilterSpec {
    Fir { phi: Vec<f64> },
    Arma { psi: Vec<f64>, varphi: Vec<f64> },
}

/// Provenance of a run: coefficients, quantizer seed and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub filter: FilterSpec,
    pub seed: Option<u64>,
    pub schedule: Option<StepsizeSchedule>,
    pub iterations: usize,
}

/// Output trajectory of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// Index of the first recorded output.
    pub first_index: usize,
    /// FIR: partial sums after each round; ARMA: `y_t` for `t = 1..=T`.
    pub outputs: Vec<Vec<f64>>,
    /// Quantized minus unquantized output, aligned with `outputs`.
    pub error_trajectory: Option<Vec<Vec<f64>>>,
    /// FIR only: quantization noise of each transmitted vector, by round.
    pub noises: Vec<Vec<f64>>,
    pub ledger: QuantizationLedger,
    pub metadata: RunMetadata,
}

impl FilterRun {
    pub fn final_output(&self) -> &[f64] {
        self.outputs
            .last()
            .expect("runs record at least one output")
    }

    pub fn final_error(&self) -> Option<&[f64]> {
        self.error_trajectory
            .as_ref()
            .map(|e| e.last().expect("aligned with outputs").as_slice())
    }

    /// Writes `t,node,value,error` rows; `error` is empty for unquantized runs.
    pub fn write_trajectory_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "node", "value", "error"])?;
        for (k, y) in self.outputs.iter().enumerate() {
            let t = (self.first_index + k).to_string();
            for (i, v) in y.iter().enumerate() {
                let err = self
                    .error_trajectory
                    .as_ref()
                    .map(|e| fmt_f64(e[k][i]))
                    .unwrap_or_default();
                wr.write_record([t.as_str(), &i.to_string(), &fmt_f64(*v), &err])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_metadata_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.metadata)?;
        Ok(())
    }
}

/// `Σ φₖ Sᵏ x` by repeated shifts.
pub fn fir_apply(s: &ShiftOperator, c: &FirCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    check_len(s.size(), x.len())?;
    let mut y = linalg::scaled(c.phi[0], x);
    let mut xk = x.to_vec();
    let mut next = vec![0.0; x.len()];
    for &phi in &c.phi[1..] {
        s.apply_into(&xk, &mut next);
        std::mem::swap(&mut xk, &mut next);
        linalg::axpy(phi, &xk, &mut y);
    }
    Ok(y)
}

/// `h(λ) = Σ φₖ λᵏ` by Horner's rule.
pub fn fir_freq_response(c: &FirCoefficients, lambdas: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .map(|&l| c.phi.iter().rev().fold(0.0, |acc, &p| acc * l + p))
        .collect()
}

/// Time-varying FIR: round `k` applies `shifts[k−1]`, i.e. the sequence is
/// `S_{t−1}, S_{t−2}, …, S_{t−K}` and round one uses the newest realization.
pub fn fir_apply_tv(shifts: &[ShiftOperator], c: &FirCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    check_len(c.order(), shifts.len())?;
    let mut y = linalg::scaled(c.phi[0], x);
    let mut xk = x.to_vec();
    for (s, &phi) in shifts.iter().zip(&c.phi[1..]) {
        check_len(s.size(), x.len())?;
        xk = s.apply(&xk);
        linalg::axpy(phi, &xk, &mut y);
    }
    Ok(y)
}

/// Quantized FIR over a static shift.
pub fn fir_apply_quantized(
    s: &ShiftOperator,
    c: &FirCoefficients,
    x: &[f64],
    q: &DitheredQuantizer,
) -> Result<FilterRun> {
    let shifts: Vec<&ShiftOperator> = vec![s; c.order()];
    fir_quantized_core(&shifts, c, x, q)
}

/// Quantized FIR over a supplied realization sequence (see [`fir_apply_tv`]).
pub fn fir_apply_tv_quantized(
    shifts: &[ShiftOperator],
    c: &FirCoefficients,
    x: &[f64],
    q: &DitheredQuantizer,
) -> Result<FilterRun> {
    let refs: Vec<&ShiftOperator> = shifts.iter().collect();
    fir_quantized_core(&refs, c, x, q)
}

/// Draws the `count` realizations consumed by one time-varying FIR output, newest first.
pub fn draw_shifts<R: Rng + ?Sized>(m: &ResModel, count: usize, rng: &mut R) -> Vec<ShiftOperator> {
    (0..count).map(|_| res_sample(m, rng)).collect()
}

fn fir_quantized_core(
    shifts: &[&ShiftOperator],
    c: &FirCoefficients,
    x: &[f64],
    q: &DitheredQuantizer,
) -> Result<FilterRun> {
    check_len(c.order(), shifts.len())?;
    for s in shifts {
        check_len(s.size(), x.len())?;
    }
    let q = q.for_input(x);
    let mut ledger = QuantizationLedger::default();
    let mut y = linalg::scaled(c.phi[0], x);
    let mut y_ref = y.clone();
    let mut xk = x.to_vec();
    let mut xk_ref = x.to_vec();
    let mut outputs = vec![y.clone()];
    let mut errors = vec![vec![0.0; x.len()]];
    let mut noises = Vec::with_capacity(c.order());
    for (k, (s, &phi)) in shifts.iter().zip(&c.phi[1..]).enumerate() {
        let sent = quantize_logged(&xk, k, &q, 0, &mut ledger)?;
        xk = s.apply(&sent.received);
        xk_ref = s.apply(&xk_ref);
        noises.push(sent.noise);
        linalg::axpy(phi, &xk, &mut y);
        linalg::axpy(phi, &xk_ref, &mut y_ref);
        errors.push(linalg::sub(&y, &y_ref));
        outputs.push(y.clone());
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantized FIR output".into()));
    }
    Ok(FilterRun {
        first_index: 0,
        outputs,
        error_trajectory: Some(errors),
        noises,
        ledger,
        metadata: RunMetadata {
            filter: FilterSpec::Fir { phi: c.phi.clone() },
            seed: Some(q.seed),
            schedule: Some(q.schedule.clone()),
            iterations: c.order(),
        },
    })
}

/// Rebuilds the FIR quantization error `Σₖ φₖ Σ_{κ<k} S_{..} n⁽κ⁾` from logged noises.
pub fn fir_error_from_noises(
    shifts: &[&ShiftOperator],
    c: &FirCoefficients,
    noises: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_len(c.order(), shifts.len())?;
    check_len(c.order(), noises.len())?;
    let n = shifts.first().map_or(0, |s| s.size());
    let mut eps = vec![0.0; n];
    for (kappa, noise) in noises.iter().enumerate() {
        // n⁽κ⁾ enters before round κ+1 and is carried by every later round.
        let mut v = noise.clone();
        for k in (kappa + 1)..=c.order() {
            v = shifts[k - 1].apply(&v);
            linalg::axpy(c.phi[k], &v, &mut eps);
        }
    }
    Ok(eps)
}

/// Where the ARMA recursion gets its shift at each iteration.
#[derive(Debug, Clone, Copy)]
pub enum ShiftSource<'a> {
    Static(&'a ShiftOperator),
    /// A fresh realization per iteration, drawn from a stream seeded with `seed`.
    Res {
        model: &'a ResModel,
        seed: u64,
    },
}

impl ShiftSource<'_> {
    /// Norm bound used for the stability check.
    pub fn bound(&self) -> f64 {
        match self {
            ShiftSource::Static(s) => s.rho(),
            ShiftSource::Res { model, .. } => model.rho(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            ShiftSource::Static(s) => s.size(),
            ShiftSource::Res { model, .. } => model.graph().node_count(),
        }
    }
}

/// Runs the parallel ARMA recursion for `iterations` steps.
///
/// Branch `k` transmits its state over link id `k`; only the transmitted copy
/// is quantized, the node keeps its own state at full precision. When a
/// quantizer is supplied an unquantized run over the same shifts provides the
/// error trajectory.
pub fn arma_run(
    source: ShiftSource<'_>,
    c: &ArmaCoefficients,
    x: &[f64],
    iterations: usize,
    q: Option<&DitheredQuantizer>,
    w0: Option<&[Vec<f64>]>,
) -> Result<FilterRun> {
    let n = source.size();
    check_len(n, x.len())?;
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "ARMA run needs at least one iteration".into(),
        ));
    }
    c.check_stable(source.bound())?;
    let kb = c.order();
    let mut w: Vec<Vec<f64>> = match w0 {
        Some(init) => {
            check_len(kb, init.len())?;
            for v in init {
                check_len(n, v.len())?;
            }
            init.to_vec()
        }
        None => vec![vec![0.0; n]; kb],
    };
    let q = q.map(|q| q.for_input(x));
    let mut w_ref = q.as_ref().map(|_| w.clone());
    let mut rng = match source {
        ShiftSource::Res { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ShiftSource::Static(_) => None,
    };
    let mut ledger = QuantizationLedger::default();
    let mut outputs = Vec::with_capacity(iterations);
    let mut errors = q.as_ref().map(|_| Vec::with_capacity(iterations));
    let mut buf = vec![0.0; n];
    for t in 1..=iterations {
        let realized;
        let s = match (&source, rng.as_mut()) {
            (ShiftSource::Static(s), _) => *s,
            (ShiftSource::Res { model, .. }, Some(rng)) => {
                realized = res_sample(model, rng);
                &realized
            }
            (ShiftSource::Res { .. }, None) => unreachable!("RES source always owns a stream"),
        };
        for k in 0..kb {
            let msg = match &q {
                Some(q) => quantize_logged(&w[k], t - 1, q, k as u32, &mut ledger)?.received,
                None => std::mem::take(&mut w[k]),
            };
            s.apply_into(&msg, &mut buf);
            w[k] = buf
                .iter()
                .zip(x)
                .map(|(sv, xv)| c.psi[k] * sv + c.varphi[k] * xv)
                .collect();
            if let Some(wr) = w_ref.as_mut() {
                s.apply_into(&wr[k], &mut buf);
                wr[k] = buf
                    .iter()
                    .zip(x)
                    .map(|(sv, xv)| c.psi[k] * sv + c.varphi[k] * xv)
                    .collect();
            }
        }
        let y = sum_branches(&w, n);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ARMA output at iteration {t}")));
        }
        if let (Some(wr), Some(errs)) = (&w_ref, errors.as_mut()) {
            errs.push(linalg::sub(&y, &sum_branches(wr, n)));
        }
        outputs.push(y);
    }
    Ok(FilterRun {
        first_index: 1,
        outputs,
        error_trajectory: errors,
        noises: Vec::new(),
        ledger,
        metadata: RunMetadata {
            filter: FilterSpec::Arma {
                psi: c.psi.clone(),
                varphi: c.varphi.clone(),
            },
            seed: q.as_ref().map(|q| q.seed),
            schedule: q.as_ref().map(|q| q.schedule.clone()),
            iterations,
        },
    })
}

fn sum_branches(w: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for v in w {
        linalg::axpy(1.0, v, &mut y);
    }
    y
}

/// `Σ ϕₖ (I − ψₖ S)⁻¹ x` by dense solves.
pub fn arma_steady_state(s: &ShiftOperator, c: &ArmaCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    check_len(s.size(), x.len())?;
    let n = s.size();
    let xn = linalg::norm2(x);
    let mut y = vec![0.0; n];
    for (&psi, &phi) in c.psi.iter().zip(&c.varphi) {
        let a = Matrix::identity(n).add_scaled(s.matrix(), -psi);
        let z = linalg::solve(&a, x)?;
        let residual = linalg::norm2(&linalg::sub(&a.matvec(&z), x));
        if residual > 1e-10 * xn.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular);
        }
        linalg::axpy(phi, &z, &mut y);
    }
    Ok(y)
}
