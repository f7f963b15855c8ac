//! Convex quadratic programming.
//!
//! Problems have the form `min ½ zᵀQz + cᵀz` subject to `Az ≤ b` and
//! optional box bounds. [`solve_qp`] runs an ADMM operator-splitting scheme
//! on an equilibrated copy of the problem, then guesses the active set from
//! the dual iterate and solves the resulting KKT system exactly, repairing
//! the guess with primal-dual active-set steps until every KKT condition is
//! met.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graphs::fmt_f64;
use crate::linalg::{self, Lu, Matrix};

/// Eigenvalues of `Q` below `−PSD_TOL · max|Q|` are an error; smaller negative ones are clipped.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProgram {
    pub q: Matrix,
    pub c: Vec<f64>,
    /// Inequality rows `aᵢᵀ z ≤ bᵢ`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl QuadraticProgram {
    pub fn new(q: Matrix, c: Vec<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::InvalidArgument("Q must be square".into()));
        }
        check_len(q.rows(), c.len())?;
        Ok(Self {
            q,
            c,
            a: Vec::new(),
            b: Vec::new(),
            lower: None,
            upper: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Adds `row · z ≤ bound`; an infinite bound is dropped.
    pub fn with_inequality(mut self, row: Vec<f64>, bound: f64) -> Result<Self> {
        check_len(self.dim(), row.len())?;
        if bound.is_nan() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inequality row".into()));
        }
        if bound < f64::INFINITY {
            self.a.push(row);
            self.b.push(bound);
        }
        Ok(self)
    }

    pub fn with_bounds(mut self, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> Result<Self> {
        if let Some(l) = &lower {
            check_len(self.dim(), l.len())?;
        }
        if let Some(u) = &upper {
            check_len(self.dim(), u.len())?;
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        0.5 * linalg::dot(z, &self.q.matvec(z)) + linalg::dot(&self.c, z)
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let (rows, l, u) = self.constraint_rows();
        rows.iter()
            .zip(l.iter().zip(&u))
            .map(|(r, (lo, hi))| {
                let v = linalg::dot(r, z);
                (v - hi).max(lo - v).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// All constraints as `l ≤ C z ≤ u` rows, inequalities first, then the box.
    fn constraint_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let mut rows = self.a.clone();
        let mut l = vec![f64::NEG_INFINITY; self.a.len()];
        let mut u = self.b.clone();
        for j in 0..n {
            let lo = self.lower.as_ref().map_or(f64::NEG_INFINITY, |v| v[j]);
            let hi = self.upper.as_ref().map_or(f64::INFINITY, |v| v[j]);
            if lo > f64::NEG_INFINITY || hi < f64::INFINITY {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                rows.push(e);
                l.push(lo);
                u.push(hi);
            }
        }
        (rows, l, u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
    /// Record iterate residuals every `trace_every` iterations when set.
    pub trace_every: Option<usize>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            trace_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Unbounded,
}

/// KKT residuals of a returned point, in the original problem scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktDiagnostics {
    pub stationarity: f64,
    pub primal_violation: f64,
    pub complementarity: f64,
    pub dual_sign_violation: f64,
}

impl KktDiagnostics {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_violation)
            .max(self.complementarity)
            .max(self.dual_sign_violation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    /// Multipliers of the inequality rows, then of box rows with a finite side.
    pub multipliers: Vec<f64>,
    pub diagnostics: KktDiagnostics,
    pub trace: Vec<TraceRow>,
}

impl QpSolution {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "primal_residual", "dual_residual"])?;
        for r in &self.trace {
            wr.write_record([
                r.iteration.to_string(),
                fmt_f64(r.primal_residual),
                fmt_f64(r.dual_residual),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Solves `p` to KKT tolerance `tol` within `max_iter` ADMM iterations.
pub fn solve_qp(p: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution> {
    solve_qp_with(
        p,
        &QpSettings {
            tol,
            max_iter,
            ..QpSettings::default()
        },
    )
}

pub fn solve_qp_with(p: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if p.c.iter().any(|v| !v.is_finite()) || !p.q.is_finite() {
        return Err(Error::NonFinite("quadratic program data".into()));
    }
    let (q, min_eig) = repair_psd(&p.q)?;
    let (rows, l, u) = p.constraint_rows();
    if l.iter().zip(&u).any(|(lo, hi)| lo > hi) {
        return Err(Error::Infeasible);
    }
    let n = p.dim();
    let m = rows.len();
    let c_full = Matrix::from_fn(m, n, |i, j| rows[i][j]);
    let problem = Prepared {
        q,
        c: p.c.clone(),
        cm: c_full,
        l,
        u,
        // A positive definite objective is bounded below on any feasible set.
        may_be_unbounded: min_eig <= 1e-13 * p.q.max_abs(),
    };

    if m == 0 {
        if let Ok(z) = linalg::solve(&problem.q, &linalg::scaled(-1.0, &problem.c)) {
            return Ok(problem.finish(z, Vec::new(), QpStatus::Optimal, 0, true, Vec::new()));
        }
    }
    Admm::new(&problem, settings).run()
}

/// Symmetrizes `Q` and clips slightly negative eigenvalues; also returns the smallest eigenvalue.
fn repair_psd(q: &Matrix) -> Result<(Matrix, f64)> {
    let scale = q.max_abs().max(f64::MIN_POSITIVE);
    let asym = q.max_asymmetry();
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = q.add_scaled(&q.transpose(), 1.0).scale(0.5);
    if q.rows() == 0 || q.max_abs() == 0.0 {
        return Ok((sym, 0.0));
    }
    let (vals, vecs) = linalg::jacobi_eigen(&sym, 1e-14, 100)?;
    let min = vals[0];
    if min < -PSD_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "Q is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    if min < 0.0 {
        log::warn!("clipping eigenvalue {min:e} of Q to zero");
        let n = sym.rows();
        let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
        let repaired = Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| vecs[(i, k)] * clipped[k] * vecs[(j, k)])
                .sum()
        });
        return Ok((repaired, 0.0));
    }
    Ok((sym, min))
}

struct Prepared {
    q: Matrix,
    c: Vec<f64>,
    cm: Matrix,
    l: Vec<f64>,
    u: Vec<f64>,
    may_be_unbounded: bool,
}

impl Prepared {
    fn diagnostics(&self, z: &[f64], y: &[f64]) -> KktDiagnostics {
        let cz = self.cm.matvec(z);
        let grad = linalg::add(
            &linalg::add(&self.q.matvec(z), &self.c),
            &self.cm.transpose().matvec(y),
        );
        let scale = 1.0
            + linalg::norm_inf(&self.c)
                .max(linalg::norm_inf(&self.q.matvec(z)))
                .max(linalg::norm_inf(&self.cm.transpose().matvec(y)));
        let mut primal: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut sign: f64 = 0.0;
        for i in 0..cz.len() {
            primal = primal.max((cz[i] - self.u[i]).max(self.l[i] - cz[i]).max(0.0));
            if y[i] > 0.0 {
                comp = comp.max(y[i] * (self.u[i] - cz[i]).abs().min(f64::MAX));
                if self.u[i] == f64::INFINITY {
                    sign = sign.max(y[i]);
                }
            } else if y[i] < 0.0 {
                comp = comp.max(-y[i] * (cz[i] - self.l[i]).abs().min(f64::MAX));
                if self.l[i] == f64::NEG_INFINITY {
                    sign = sign.max(-y[i]);
                }
            }
        }
        KktDiagnostics {
            stationarity: linalg::norm_inf(&grad) / scale,
            primal_violation: primal,
            complementarity: comp,
            dual_sign_violation: sign,
        }
    }

    fn objective(&self, z: &[f64]) -> f64 {
        0.5 * linalg::dot(z, &self.q.matvec(z)) + linalg::dot(&self.c, z)
    }

    fn finish(
        &self,
        z: Vec<f64>,
        y: Vec<f64>,
        status: QpStatus,
        iterations: usize,
        polished: bool,
        trace: Vec<TraceRow>,
    ) -> QpSolution {
        let y = if y.is_empty() {
            vec![0.0; self.l.len()]
        } else {
            y
        };
        QpSolution {
            objective: self.objective(&z),
            diagnostics: self.diagnostics(&z, &y),
            z,
            status,
            iterations,
            polished,
            multipliers: y,
            trace,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Side {
    Lower,
    Upper,
    Equal,
}

struct Admm<'a> {
    orig: &'a Prepared,
    settings: &'a QpSettings,
    /// Variable scaling `D`, constraint scaling `E` and cost scaling `cs`.
    d: Vec<f64>,
    e: Vec<f64>,
    cs: f64,
    p: Matrix,
    q: Vec<f64>,
    a: Matrix,
    at: Matrix,
    l: Vec<f64>,
    u: Vec<f64>,
}

impl<'a> Admm<'a> {
    fn new(orig: &'a Prepared, settings: &'a QpSettings) -> Self {
        let n = orig.q.rows();
        let m = orig.cm.rows();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut p = orig.q.clone();
        let mut a = orig.cm.clone();
        let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
        for _ in 0..15 {
            let dk: Vec<f64> = (0..n)
                .map(|j| {
                    let pc = (0..n).map(|i| p[(i, j)].abs()).fold(0.0, f64::max);
                    let ac = (0..m).map(|i| a[(i, j)].abs()).fold(0.0, f64::max);
                    1.0 / clamp(pc.max(ac)).sqrt()
                })
                .collect();
            let ek: Vec<f64> = (0..m)
                .map(|i| 1.0 / clamp(a.row(i).iter().fold(0.0, |mx, v| mx.max(v.abs()))).sqrt())
                .collect();
            p = Matrix::from_fn(n, n, |i, j| dk[i] * p[(i, j)] * dk[j]);
            a = Matrix::from_fn(m, n, |i, j| ek[i] * a[(i, j)] * dk[j]);
            for j in 0..n {
                d[j] *= dk[j];
            }
            for i in 0..m {
                e[i] *= ek[i];
            }
        }
        let qd: Vec<f64> = (0..n).map(|j| d[j] * orig.c[j]).collect();
        let mean_col = (0..n)
            .map(|j| (0..n).map(|i| p[(i, j)].abs()).fold(0.0, f64::max))
            .sum::<f64>()
            / n.max(1) as f64;
        let cs = 1.0 / clamp(mean_col.max(linalg::norm_inf(&qd)));
        let p = p.scale(cs);
        let q = linalg::scaled(cs, &qd);
        let l = (0..m).map(|i| e[i] * orig.l[i]).collect();
        let u = (0..m).map(|i| e[i] * orig.u[i]).collect();
        let at = a.transpose();
        Self {
            orig,
            settings,
            d,
            e,
            cs,
            p,
            q,
            a,
            at,
            l,
            u,
        }
    }

    fn rho_vec(&self, rho: f64) -> Vec<f64> {
        (0..self.l.len())
            .map(|i| {
                if self.l[i] == f64::NEG_INFINITY && self.u[i] == f64::INFINITY {
                    1e-6
                } else if self.u[i] - self.l[i] < 1e-12 {
                    1e3 * rho
                } else {
                    rho
                }
            })
            .collect()
    }

    fn factor(&self, rho: &[f64]) -> Result<Lu> {
        let n = self.p.rows();
        let m = self.a.rows();
        let k = Matrix::from_fn(n, n, |i, j| {
            let mut v = self.p[(i, j)] + if i == j { self.settings.sigma } else { 0.0 };
            for r in 0..m {
                v += self.a[(r, i)] * rho[r] * self.a[(r, j)];
            }
            v
        });
        Lu::factor(&k)
    }

    fn unscale(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = x.iter().zip(&self.d).map(|(v, d)| v * d).collect();
        let yy = y
            .iter()
            .zip(&self.e)
            .map(|(v, e)| v * e / self.cs)
            .collect();
        (z, yy)
    }

    fn run(&self) -> Result<QpSolution> {
        let n = self.p.rows();
        let m = self.a.rows();
        let s = self.settings;
        let tol = s.tol;
        let mut rho_s = s.rho;
        let mut rho = self.rho_vec(rho_s);
        let mut lu = self.factor(&rho)?;
        let mut x = vec![0.0; n];
        let mut z = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut trace = Vec::new();
        let mut iter = 0;
        while iter < s.max_iter {
            iter += 1;
            let mut rhs: Vec<f64> = (0..n).map(|j| s.sigma * x[j] - self.q[j]).collect();
            let w: Vec<f64> = (0..m).map(|i| rho[i] * z[i] - y[i]).collect();
            linalg::axpy(1.0, &self.at.matvec(&w), &mut rhs);
            let xt = lu.solve(&rhs);
            let zt = self.a.matvec(&xt);
            let x_new: Vec<f64> = (0..n)
                .map(|j| s.alpha * xt[j] + (1.0 - s.alpha) * x[j])
                .collect();
            let zh: Vec<f64> = (0..m)
                .map(|i| s.alpha * zt[i] + (1.0 - s.alpha) * z[i])
                .collect();
            let z_new: Vec<f64> = (0..m)
                .map(|i| (zh[i] + y[i] / rho[i]).clamp(self.l[i], self.u[i]))
                .collect();
            let y_new: Vec<f64> = (0..m).map(|i| y[i] + rho[i] * (zh[i] - z_new[i])).collect();
            let dy = linalg::sub(&y_new, &y);
            let dx = linalg::sub(&x_new, &x);
            x = x_new;
            z = z_new;
            y = y_new;

            let check = iter % 10 == 0 || iter == s.max_iter;
            if !check {
                continue;
            }
            if self.primal_infeasible(&dy) {
                return Err(Error::Infeasible);
            }
            if self.orig.may_be_unbounded && self.dual_infeasible(&dx) {
                let (zo, yo) = self.unscale(&x, &y);
                return Ok(self
                    .orig
                    .finish(zo, yo, QpStatus::Unbounded, iter, false, trace));
            }
            let (rp, rd, ep, ed) = self.residuals(&x, &z, &y, tol);
            if let Some(every) = s.trace_every {
                if iter % every.max(1) == 0 {
                    trace.push(TraceRow {
                        iteration: iter,
                        primal_residual: rp,
                        dual_residual: rd,
                    });
                }
            }
            let converged = rp <= ep && rd <= ed;
            if s.polish && (converged || iter % 100 == 0) {
                if let Some((xp, yp)) = self.polish(&z, &y) {
                    let (zo, yo) = self.unscale(&xp, &yp);
                    let sol =
                        self.orig
                            .finish(zo, yo, QpStatus::Optimal, iter, true, trace.clone());
                    if sol.diagnostics.max() <= tol {
                        return Ok(sol);
                    }
                }
            }
            if converged {
                let (zo, yo) = self.unscale(&x, &y);
                return Ok(self
                    .orig
                    .finish(zo, yo, QpStatus::Optimal, iter, false, trace));
            }
            if iter % 50 == 0 {
                // Rebalance the penalty towards equal normalized residuals.
                let ratio = ((rp / ep.max(1e-300)) / (rd / ed.max(1e-300)).max(1e-300)).sqrt();
                let candidate = (rho_s * ratio).clamp(1e-6, 1e6);
                if candidate > 5.0 * rho_s || candidate < rho_s / 5.0 {
                    rho_s = candidate;
                    rho = self.rho_vec(rho_s);
                    lu = self.factor(&rho)?;
                }
            }
        }
        let (zo, yo) = self.unscale(&x, &y);
        Ok(self
            .orig
            .finish(zo, yo, QpStatus::MaxIterations, iter, false, trace))
    }

    fn residuals(&self, x: &[f64], z: &[f64], y: &[f64], tol: f64) -> (f64, f64, f64, f64) {
        let ax = self.a.matvec(x);
        let m = ax.len();
        let inv_e = |v: &[f64]| -> Vec<f64> { (0..m).map(|i| v[i] / self.e[i]).collect() };
        let rp = linalg::norm_inf(&inv_e(&linalg::sub(&ax, z)));
        let ep = tol + tol * linalg::norm_inf(&inv_e(&ax)).max(linalg::norm_inf(&inv_e(z)));
        let n = x.len();
        let inv_d =
            |v: &[f64]| -> Vec<f64> { (0..n).map(|j| v[j] / self.d[j] / self.cs).collect() };
        let px = self.p.matvec(x);
        let aty = self.at.matvec(y);
        let rd = linalg::norm_inf(&inv_d(&linalg::add(&linalg::add(&px, &self.q), &aty)));
        let ed = tol
            + tol
                * linalg::norm_inf(&inv_d(&px))
                    .max(linalg::norm_inf(&inv_d(&aty)))
                    .max(linalg::norm_inf(&inv_d(&self.q)));
        (rp, rd, ep, ed)
    }

    fn primal_infeasible(&self, dy: &[f64]) -> bool {
        let m = dy.len();
        if m == 0 {
            return false;
        }
        let edy: Vec<f64> = (0..m).map(|i| self.e[i] * dy[i]).collect();
        let norm = linalg::norm_inf(&edy);
        if norm < 1e-30 {
            return false;
        }
        let eps = 1e-7;
        let atdy = self.at.matvec(dy);
        let n = atdy.len();
        let lhs = (0..n)
            .map(|j| (atdy[j] / self.d[j]).abs())
            .fold(0.0, f64::max);
        if lhs > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..m {
            if dy[i] > 0.0 {
                if self.u[i] == f64::INFINITY {
                    return false;
                }
                support += self.u[i] * dy[i];
            } else if dy[i] < 0.0 {
                if self.l[i] == f64::NEG_INFINITY {
                    return false;
                }
                support += self.l[i] * dy[i];
            }
        }
        support < -eps * norm
    }

    fn dual_infeasible(&self, dx: &[f64]) -> bool {
        let n = dx.len();
        let ddx: Vec<f64> = (0..n).map(|j| self.d[j] * dx[j]).collect();
        let norm = linalg::norm_inf(&ddx);
        if norm < 1e-30 {
            return false;
        }
        let eps = 1e-7;
        let pdx = self.p.matvec(dx);
        let lhs = (0..n)
            .map(|j| (pdx[j] / self.d[j]).abs())
            .fold(0.0, f64::max);
        if lhs > eps * self.cs * norm {
            return false;
        }
        if linalg::dot(&self.q, dx) > -eps * self.cs * norm {
            return false;
        }
        let adx = self.a.matvec(dx);
        for i in 0..adx.len() {
            let v = adx[i] / self.e[i];
            let up = self.u[i] < f64::INFINITY;
            let lo = self.l[i] > f64::NEG_INFINITY;
            if (up && v > eps * norm) || (lo && v < -eps * norm) {
                return false;
            }
        }
        true
    }

    /// Exact KKT solve on a guessed active set, repaired by active-set steps.
    fn polish(&self, z: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.a.rows();
        let mut active: Vec<Option<Side>> = (0..m)
            .map(|i| {
                if self.u[i] - self.l[i] < 1e-12 {
                    Some(Side::Equal)
                } else if z[i] - self.l[i] < -y[i] {
                    Some(Side::Lower)
                } else if self.u[i] - z[i] < y[i] {
                    Some(Side::Upper)
                } else {
                    None
                }
            })
            .collect();
        let feas_tol = 1e-12 * (1.0 + linalg::norm_inf(z));
        let dual_tol = 1e-12 * (1.0 + linalg::norm_inf(y));
        for _ in 0..(3 * m + 20) {
            let (xs, ys) = self.solve_active(&active)?;
            let ax = self.a.matvec(&xs);
            let mut worst_primal = (feas_tol, None);
            for i in 0..m {
                if active[i].is_none() {
                    let over = ax[i] - self.u[i];
                    let under = self.l[i] - ax[i];
                    if over > worst_primal.0 {
                        worst_primal = (over, Some((i, Side::Upper)));
                    }
                    if under > worst_primal.0 {
                        worst_primal = (under, Some((i, Side::Lower)));
                    }
                }
            }
            if let Some((i, side)) = worst_primal.1 {
                active[i] = Some(side);
                continue;
            }
            let mut worst_dual = (dual_tol, None);
            for i in 0..m {
                let wrong = match active[i] {
                    Some(Side::Upper) => -ys[i],
                    Some(Side::Lower) => ys[i],
                    _ => 0.0,
                };
                if wrong > worst_dual.0 {
                    worst_dual = (wrong, Some(i));
                }
            }
            if let Some(i) = worst_dual.1 {
                active[i] = None;
                continue;
            }
            return Some((xs, ys));
        }
        None
    }

    fn solve_active(&self, active: &[Option<Side>]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.p.rows();
        let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i].is_some()).collect();
        let k = idx.len();
        let dim = n + k;
        let kkt = |delta: f64| {
            Matrix::from_fn(dim, dim, |i, j| match (i < n, j < n) {
                (true, true) => self.p[(i, j)] + if i == j { delta } else { 0.0 },
                (true, false) => self.a[(idx[j - n], i)],
                (false, true) => self.a[(idx[i - n], j)],
                (false, false) => {
                    if i == j {
                        -delta
                    } else {
                        0.0
                    }
                }
            })
        };
        let mut rhs: Vec<f64> = self.q.iter().map(|v| -v).collect();
        for &i in &idx {
            rhs.push(match active[i] {
                Some(Side::Lower) => self.l[i],
                _ => self.u[i],
            });
        }
        let exact = kkt(0.0);
        let sol = match Lu::factor(&exact) {
            Ok(lu) => {
                let mut s = lu.solve(&rhs);
                for _ in 0..2 {
                    let r = linalg::sub(&rhs, &exact.matvec(&s));
                    linalg::axpy(1.0, &lu.solve(&r), &mut s);
                }
                s
            }
            Err(_) => {
                // Degenerate active set: regularize, then refine on the exact system.
                let lu = Lu::factor(&kkt(1e-9)).ok()?;
                let mut s = lu.solve(&rhs);
                for _ in 0..25 {
                    let r = linalg::sub(&rhs, &exact.matvec(&s));
                    linalg::axpy(1.0, &lu.solve(&r), &mut s);
                }
                s
            }
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xs = sol[..n].to_vec();
        let mut ys = vec![0.0; active.len()];
        for (j, &i) in idx.iter().enumerate() {
            ys[i] = sol[n + j];
        }
        Some((xs, ys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_scalar() {
        let p = QuadraticProgram::new(Matrix::from_diag(&[2.0]), vec![-2.0]).unwrap();
        let s = solve_qp(&p, 1e-8, 1000).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.status, QpStatus::Optimal);
    }

    #[test]
    fn active_lower_bound() {
        let p = QuadraticProgram::new(Matrix::from_diag(&[2.0]), vec![0.0])
            .unwrap()
            .with_inequality(vec![-1.0], -2.0)
            .unwrap();
        let s = solve_qp(&p, 1e-8, 10_000).unwrap();
        assert!((s.z[0] - 2.0).abs() < 1e-9, "{:?}", s);
        assert!(s.diagnostics.max() <= 1e-8);
    }

    #[test]
    fn box_constrained() {
        let p = QuadraticProgram::new(Matrix::identity(2), vec![-3.0, 1.0])
            .unwrap()
            .with_bounds(Some(vec![0.0, 0.0]), Some(vec![1.0, 1.0]))
            .unwrap();
        let s = solve_qp(&p, 1e-8, 10_000).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-9 && s.z[1].abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let p = QuadraticProgram::new(Matrix::identity(1), vec![0.0])
            .unwrap()
            .with_inequality(vec![1.0], -1.0)
            .unwrap()
            .with_inequality(vec![-1.0], -1.0)
            .unwrap();
        assert!(matches!(
            solve_qp(&p, 1e-8, 100_000),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn detects_unbounded() {
        let p = QuadraticProgram::new(Matrix::zeros(1, 1), vec![1.0])
            .unwrap()
            .with_inequality(vec![1.0], 5.0)
            .unwrap();
        let s = solve_qp(&p, 1e-8, 100_000).unwrap();
        assert_eq!(s.status, QpStatus::Unbounded);
    }

    #[test]
    fn rejects_indefinite_and_clips_noise() {
        let p = QuadraticProgram::new(Matrix::from_diag(&[1.0, -1.0]), vec![0.0, 0.0]).unwrap();
        assert!(solve_qp(&p, 1e-8, 10).is_err());
        let p = QuadraticProgram::new(Matrix::from_diag(&[1.0, -1e-13]), vec![-1.0, 0.0])
            .unwrap()
            .with_bounds(Some(vec![-1.0, -1.0]), Some(vec![1.0, 1.0]))
            .unwrap();
        let s = solve_qp(&p, 1e-8, 10_000).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infinite_rows_are_dropped() {
        let p = QuadraticProgram::new(Matrix::identity(2), vec![1.0, 1.0])
            .unwrap()
            .with_inequality(vec![1.0, 1.0], f64::INFINITY)
            .unwrap();
        assert!(p.a.is_empty());
        let s = solve_qp(&p, 1e-8, 10).unwrap();
        assert_eq!(s.z, vec![-1.0, -1.0]);
    }

    #[test]
    fn trace_is_recorded() {
        let p = QuadraticProgram::new(Matrix::identity(2), vec![-3.0, 1.0])
            .unwrap()
            .with_inequality(vec![1.0, 1.0], 0.5)
            .unwrap();
        let settings = QpSettings {
            trace_every: Some(10),
            polish: false,
            ..QpSettings::default()
        };
        let s = solve_qp_with(&p, &settings).unwrap();
        assert!(!s.trace.is_empty());
        let mut buf = Vec::new();
        s.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("iteration,primal_residual,dual_residual\n"));
    }
}
