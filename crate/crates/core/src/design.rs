//! Filter coefficient design.
//!
//! FIR designs fit a target response `h*(λ)` on a grid of graph frequencies
//! by least squares, optionally under quantization constraints (a cap on the
//! predicted quantization MSE and on `𝟏ᵀφ₁`). The random-graph design trades
//! the distance to a reference filter on the expected graph against the
//! quantization error bound. ARMA₁ designs are closed form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::filters::{ArmaCoefficients, FirCoefficients};
use crate::graphs::{expected_shift, interpolation_shift, ResModel, ShiftOperator};
use crate::linalg::{self, Matrix};
use crate::optim::{self, KktDiagnostics, QpStatus, QuadraticProgram};
use crate::quantization::StepsizeSchedule;

/// Default number of grid points for the response fit.
pub const DEFAULT_GRID_POINTS: usize = 200;
/// Diagonal regularization of the least-squares normal equations.
pub const LS_REGULARIZATION: f64 = 1e-12;
/// Tolerance for independent re-checks of returned constraints.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// `points` evenly spaced values covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Ideal low-pass response: 1 up to `cutoff`, 0 above.
pub fn ideal_lowpass(cutoff: f64) -> impl Fn(f64) -> f64 {
    move |l| if l <= cutoff { 1.0 } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConstraints {
    /// Cap on the predicted quantization MSE.
    pub epsilon: f64,
    /// Cap on `𝟏ᵀφ₁`, or the penalty weight of the random-graph design.
    pub gamma: f64,
    /// Cap on every stepsize of the schedule.
    pub delta: f64,
    /// Bit cap; with `range` it turns nominal stepsizes into effective ones.
    pub chi: Option<u32>,
    pub range: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub schedule: StepsizeSchedule,
    /// Largest eigenvalue magnitude of the shift the filter runs on.
    pub lambda_max: f64,
}

impl DesignConstraints {
    /// Unconstrained defaults: `ε = γ = δ = ∞`.
    pub fn new(lambda_grid: Vec<f64>, schedule: StepsizeSchedule, lambda_max: f64) -> Self {
        Self {
            epsilon: f64::INFINITY,
            gamma: f64::INFINITY,
            delta: f64::INFINITY,
            chi: None,
            range: None,
            lambda_grid,
            schedule,
            lambda_max,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.lambda_grid.len() < k + 1 {
            return Err(Error::Design(format!(
                "grid has {} points, order {k} needs at least {}",
                self.lambda_grid.len(),
                k + 1
            )));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Design("frequency grid must be sorted".into()));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Design(format!(
                    "{name} must be nonnegative or +inf, got {v}"
                )));
            }
        }
        self.schedule.validate()
    }

    /// Stepsize used in round `k`, after the bit cap when it applies.
    pub fn stepsize(&self, k: usize) -> f64 {
        let mut s = self.schedule.clone();
        if self.chi.is_some() {
            s.max_bits = self.chi;
        }
        match self.range {
            Some(r) => s.effective(k, r).delta,
            None => s.stepsize_at(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DesignedCoefficients {
    Fir(FirCoefficients),
    Arma(ArmaCoefficients),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub coefficients: DesignedCoefficients,
    pub objective: f64,
    pub active_constraints: Vec<String>,
    pub solver_status: QpStatus,
    pub diagnostics: Option<KktDiagnostics>,
    pub iterations: usize,
}

impl DesignResult {
    pub fn fir(&self) -> Option<&FirCoefficients> {
        match &self.coefficients {
            DesignedCoefficients::Fir(c) => Some(c),
            DesignedCoefficients::Arma(_) => None,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Column-scaled least-squares system shared by the plain and constrained fits.
struct LsSystem {
    /// `ṼᵀWṼ + reg·I`
    gram: Matrix,
    /// `ṼᵀWh`
    rhs: Vec<f64>,
    /// Column scales: `φ = scale ∘ a`.
    scale: Vec<f64>,
}

fn ls_system(h_star: &dyn Fn(f64) -> f64, k: usize, grid: &[f64]) -> Result<LsSystem> {
    if grid.len() < k + 1 {
        return Err(Error::Design(format!(
            "grid has {} points, order {k} needs at least {}",
            grid.len(),
            k + 1
        )));
    }
    let m = grid.len();
    let targets: Vec<f64> = grid.iter().map(|&l| h_star(l)).collect();
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target response".into()));
    }
    let raw = Matrix::from_fn(m, k + 1, |i, j| grid[i].powi(j as i32));
    let scale: Vec<f64> = (0..=k)
        .map(|j| {
            let n = linalg::norm2(&raw.column(j));
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    let v = Matrix::from_fn(m, k + 1, |i, j| raw[(i, j)] * scale[j]);
    let vt = v.transpose();
    let mut gram = vt.matmul(&v);
    for j in 0..=k {
        gram[(j, j)] += LS_REGULARIZATION;
    }
    let rhs = vt.matvec(&targets);
    Ok(LsSystem { gram, rhs, scale })
}

/// Discretized `∫ |Σ φₖ λᵏ − h*(λ)|² dλ` on `grid`.
pub fn response_error(c: &FirCoefficients, h_star: &dyn Fn(f64) -> f64, grid: &[f64]) -> f64 {
    let m = grid.len();
    let weight = if m > 1 {
        (grid[m - 1] - grid[0]) / m as f64
    } else {
        1.0
    };
    let h = crate::filters::fir_freq_response(c, grid);
    weight
        * h.iter()
            .zip(grid)
            .map(|(v, &l)| (v - h_star(l)).powi(2))
            .sum::<f64>()
}

/// Least-squares fit of `h*` by an order-`k` polynomial on `grid`.
pub fn fir_ls_design(
    h_star: &dyn Fn(f64) -> f64,
    k: usize,
    grid: &[f64],
) -> Result<FirCoefficients> {
    let sys = ls_system(h_star, k, grid)?;
    let a = linalg::solve(&sys.gram, &sys.rhs)?;
    FirCoefficients::new(a.iter().zip(&sys.scale).map(|(v, s)| v * s).collect())
}

/// Row `a` with `a·φ` the predicted quantization MSE of the constrained FIR design:
/// `aₖ = (1/12) Σ_{κ<k} Δ²_κ λ_max^{2(k−κ)}`.
pub fn mse_constraint_row(dc: &DesignConstraints, k: usize) -> Vec<f64> {
    let l2 = dc.lambda_max * dc.lambda_max;
    (0..=k)
        .map(|j| {
            (0..j)
                .map(|kappa| dc.stepsize(kappa).powi(2) * l2.powi((j - kappa) as i32))
                .sum::<f64>()
                / 12.0
        })
        .collect()
}

/// Least-squares fit under `a·φ ≤ ε` and `𝟏ᵀφ₁ ≤ γ`.
pub fn fir_quantization_aware_design(
    h_star: &dyn Fn(f64) -> f64,
    k: usize,
    dc: &DesignConstraints,
) -> Result<DesignResult> {
    dc.validate(k)?;
    if let Some(kappa) = (0..k).find(|&kappa| dc.stepsize(kappa) > dc.delta) {
        return Err(Error::Design(format!(
            "stepsize {} at round {kappa} exceeds the cap {}",
            dc.stepsize(kappa),
            dc.delta
        )));
    }
    let sys = ls_system(h_star, k, &dc.lambda_grid)?;
    let mse_row = mse_constraint_row(dc, k);
    let sum_row: Vec<f64> = (0..=k).map(|j| if j == 0 { 0.0 } else { 1.0 }).collect();
    let scaled =
        |row: &[f64]| -> Vec<f64> { row.iter().zip(&sys.scale).map(|(a, s)| a * s).collect() };
    let qp = QuadraticProgram::new(sys.gram.scale(2.0), linalg::scaled(-2.0, &sys.rhs))?
        .with_inequality(scaled(&mse_row), dc.epsilon)?
        .with_inequality(scaled(&sum_row), dc.gamma)?;
    let sol = optim::solve_qp(&qp, 1e-10, 100_000)?;
    if sol.status == QpStatus::Unbounded {
        return Err(Error::Design("design problem is unbounded".into()));
    }
    let phi: Vec<f64> = sol.z.iter().zip(&sys.scale).map(|(v, s)| v * s).collect();
    let c = FirCoefficients::new(phi)?;
    let mse = linalg::dot(&mse_row, c.phi());
    let tail = c.tail_sum();
    let mut active = Vec::new();
    let near = |v: f64, cap: f64| cap.is_finite() && (cap - v) <= 1e-7 * cap.abs().max(1.0);
    if near(mse, dc.epsilon) {
        active.push("mse".to_string());
    }
    if near(tail, dc.gamma) {
        active.push("coefficient-sum".to_string());
    }
    if sol.status == QpStatus::Optimal {
        let violation = (mse - dc.epsilon).max(tail - dc.gamma);
        if violation > CONSTRAINT_TOL {
            return Err(Error::Design(format!(
                "solver returned a point violating its constraints by {violation:e}"
            )));
        }
    }
    Ok(DesignResult {
        objective: response_error(&c, h_star, &dc.lambda_grid),
        coefficients: DesignedCoefficients::Fir(c),
        active_constraints: active,
        solver_status: sol.status,
        diagnostics: Some(sol.diagnostics),
        iterations: sol.iterations,
    })
}

/// `Σ φₖ Sᵏ` as a dense matrix, for design-time evaluation only.
pub fn fir_matrix(s: &Matrix, phi: &[f64]) -> Matrix {
    let n = s.rows();
    let mut p = Matrix::identity(n);
    let mut out = Matrix::zeros(n, n);
    for (k, &c) in phi.iter().enumerate() {
        if k > 0 {
            p = p.matmul(s);
        }
        out = out.add_scaled(&p, c);
    }
    out
}

/// Quadratic form of the penalty `(1/12) Σ_κ Δ²_{κ−1} (Σ_{k≥κ} ρ^{k−κ+1} |φₖ|)²` in `|φ|`.
fn res_penalty_matrix(rho: f64, k: usize, dc: &DesignConstraints) -> Matrix {
    let mut h = Matrix::zeros(k + 1, k + 1);
    for kappa in 1..=k {
        let b: Vec<f64> = (0..=k)
            .map(|j| {
                if j >= kappa {
                    rho.powi((j - kappa + 1) as i32)
                } else {
                    0.0
                }
            })
            .collect();
        let w = dc.stepsize(kappa - 1).powi(2) / 12.0;
        for i in 0..=k {
            for j in 0..=k {
                h[(i, j)] += w * b[i] * b[j];
            }
        }
    }
    h
}

/// Coefficients close to `phi_ref` on the expected graph with a small quantization error bound.
///
/// Minimizes `‖Σ φₖ S̄ᵏ − Σ φ°ₖ Sᵏ‖_F² + γ · penalty(|φ|)` over `φ = φ⁺ − φ⁻`,
/// `φ± ≥ 0`. A proximal term of relative weight 1e-12 towards the split of
/// `φ°` makes the minimizer unique.
pub fn fir_robust_res_design(
    phi_ref: &FirCoefficients,
    s: &ShiftOperator,
    m: &ResModel,
    dc: &DesignConstraints,
) -> Result<DesignResult> {
    let k = phi_ref.order();
    check_len(s.size(), m.graph().node_count())?;
    if !(dc.gamma >= 0.0 && dc.gamma.is_finite()) {
        return Err(Error::Design(format!(
            "penalty weight {} must be finite and nonnegative",
            dc.gamma
        )));
    }
    let sbar = expected_shift(m)?;
    let n = s.size();
    let target = fir_matrix(s.matrix(), phi_ref.phi());
    let mut powers = Vec::with_capacity(k + 1);
    let mut p = Matrix::identity(n);
    for j in 0..=k {
        if j > 0 {
            p = p.matmul(sbar.matrix());
        }
        powers.push(p.clone());
    }
    let gram = Matrix::from_fn(k + 1, k + 1, |i, j| powers[i].frobenius_dot(&powers[j]));
    let lin: Vec<f64> = powers.iter().map(|pk| pk.frobenius_dot(&target)).collect();
    let scale: Vec<f64> = (0..=k)
        .map(|j| {
            if gram[(j, j)] > 0.0 {
                1.0 / gram[(j, j)].sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let pen = res_penalty_matrix(m.rho(), k, dc);
    let nv = 2 * (k + 1);
    // z = [φ⁺; φ⁻] in scaled units; φ = S(z⁺ − z⁻), |φ| ≈ S(z⁺ + z⁻).
    let sign = |i: usize| if i <= k { 1.0 } else { -1.0 };
    let idx = |i: usize| i % (k + 1);
    let mut q = Matrix::from_fn(nv, nv, |a, b| {
        let (i, j) = (idx(a), idx(b));
        let si = scale[i] * scale[j];
        2.0 * si * (sign(a) * sign(b) * gram[(i, j)] + dc.gamma * pen[(i, j)])
    });
    let z_ref: Vec<f64> = (0..nv)
        .map(|a| {
            let v = phi_ref.phi()[idx(a)] / scale[idx(a)];
            if a <= k {
                v.max(0.0)
            } else {
                (-v).max(0.0)
            }
        })
        .collect();
    let mu = 1e-12 * (0..nv).map(|a| q[(a, a)]).sum::<f64>() / nv as f64;
    for a in 0..nv {
        q[(a, a)] += 2.0 * mu;
    }
    let c: Vec<f64> = (0..nv)
        .map(|a| -2.0 * sign(a) * scale[idx(a)] * lin[idx(a)] - 2.0 * mu * z_ref[a])
        .collect();
    let qp = QuadraticProgram::new(q, c)?.with_bounds(Some(vec![0.0; nv]), None)?;
    let sol = optim::solve_qp(&qp, 1e-10, 100_000)?;
    if sol.status == QpStatus::Unbounded {
        return Err(Error::Design("robust design problem is unbounded".into()));
    }
    let phi: Vec<f64> = (0..=k)
        .map(|j| scale[j] * (sol.z[j] - sol.z[j + k + 1]))
        .collect();
    let c = FirCoefficients::new(phi)?;
    let e = fir_matrix(sbar.matrix(), c.phi()).add_scaled(&target, -1.0);
    let abs: Vec<f64> = c.phi().iter().map(|v| v.abs()).collect();
    let penalty = linalg::dot(&abs, &pen.matvec(&abs));
    Ok(DesignResult {
        objective: e.frobenius_norm().powi(2) + dc.gamma * penalty,
        coefficients: DesignedCoefficients::Fir(c),
        active_constraints: Vec::new(),
        solver_status: sol.status,
        diagnostics: Some(sol.diagnostics),
        iterations: sol.iterations,
    })
}

/// Denoising filter with steady state `(I + w S)⁻¹ x`: `ψ = −w`, `ϕ = 1`.
pub fn tikhonov_arma1(w: f64, s: &ShiftOperator) -> Result<ArmaCoefficients> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "weight {w} must be nonnegative"
        )));
    }
    let c = ArmaCoefficients::new(vec![-w], vec![1.0])?;
    c.check_stable(s.rho())?;
    Ok(c)
}

/// Interpolation filter with steady state `(T + w S)⁻¹ x′`.
///
/// The recursion runs on `S̃ = T + w S − I` with `ψ = −1`, `ϕ = 1`, so its
/// fixed point solves `(I + S̃) y = x′`.
pub fn interpolation_arma1(
    mask: &[bool],
    w: f64,
    s: &ShiftOperator,
) -> Result<(ShiftOperator, ArmaCoefficients)> {
    let shift = interpolation_shift(s, w, mask)?;
    let c = ArmaCoefficients::new(vec![-1.0], vec![1.0])?;
    c.check_stable(shift.rho())?;
    Ok((shift, c))
}
