//! Graphs, graph shift operators, spectral tools and random edge sampling.
//!
//! A [`ShiftOperator`] is one communication round: applying it to a signal
//! mixes every node value with its neighbours. Every operator carries a
//! certified upper bound `rho` on its spectral norm, which is what the
//! stability checks and all quantization bounds consume.
//!
//! Random edge sampling ([`ResModel`]) keeps every link of the base graph
//! independently with its own activation probability and rebuilds the shift
//! from the surviving links, so a realization is itself a valid operator of
//! the same kind.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, CsrMatrix, Matrix};

/// Attempts made by [`random_geometric`] before giving up on connectivity.
pub const CONNECTIVITY_ATTEMPTS: usize = 1000;
/// Relative margin applied to power-iteration estimates to certify `rho`.
pub const RHO_MARGIN: f64 = 1e-6;
/// Tolerance for successive power-iteration estimates.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITER: usize = 100_000;
/// Relative off-diagonal tolerance of the Jacobi eigensolver.
pub const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected weighted graph with optional planar node positions (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    coords: Option<Vec<[f64; 2]>>,
}

impl Graph {
    /// Builds a graph, normalizing every edge to `i < j` and sorting the edge list.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidArgument(
                "graph needs at least one node".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j {
                return Err(Error::InvalidArgument(format!("self-loop at node {}", e.i)));
            }
            if e.i >= node_count || e.j >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) references a node outside 0..{node_count}",
                    e.i, e.j
                )));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.i, e.j, e.weight
                )));
            }
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            if !seen.insert((i, j)) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({i}, {j})")));
            }
            normalized.push(Edge {
                i,
                j,
                weight: e.weight,
            });
        }
        normalized.sort_by_key(|e| (e.i, e.j));
        Ok(Self {
            node_count,
            edges: normalized,
            coords: None,
        })
    }

    pub fn from_pairs(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            node_count,
            pairs
                .iter()
                .map(|&(i, j)| Edge { i, j, weight: 1.0 })
                .collect(),
        )
    }

    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_pairs(n, &pairs).expect("path graph is valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        Self::from_pairs(n, &pairs).expect("complete graph is valid")
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        check_len(self.node_count, coords.len())?;
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn adjacency(&self) -> Matrix {
        adjacency_of(self.node_count, self.edges.iter())
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.node_count];
        for e in &self.edges {
            d[e.i] += e.weight;
            d[e.j] += e.weight;
        }
        d
    }

    /// Number of connected components (zero-weight edges still connect).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.node_count;
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Writes the edge list as `i,j,weight` rows with a header.
    pub fn write_edge_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "weight"])?;
        for e in &self.edges {
            wr.write_record([e.i.to_string(), e.j.to_string(), fmt_f64(e.weight)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes node positions as `node,x,y` rows with a header.
    pub fn write_coords_csv<W: Write>(&self, w: W) -> Result<()> {
        let coords = self
            .coords
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("graph has no coordinates".into()))?;
        write_coords_csv(coords, w)
    }

    /// Reads an `i,j,weight` edge list (header optional, weight optional).
    pub fn read_edge_csv<R: Read>(node_count: usize, r: R) -> Result<Self> {
        let rows = read_numeric_rows(r)?;
        let mut edges = Vec::with_capacity(rows.len());
        for (line, row) in rows.iter().enumerate() {
            if row.len() < 2 {
                return Err(Error::InvalidArgument(format!("edge row {line} needs i,j")));
            }
            edges.push(Edge {
                i: as_index(row[0], line)?,
                j: as_index(row[1], line)?,
                weight: row.get(2).copied().unwrap_or(1.0),
            });
        }
        Self::new(node_count, edges)
    }
}

pub fn write_coords_csv<W: Write>(coords: &[[f64; 2]], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["node", "x", "y"])?;
    for (i, c) in coords.iter().enumerate() {
        wr.write_record([i.to_string(), fmt_f64(c[0]), fmt_f64(c[1])])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `node,x,y` rows (header optional); rows may come in any node order.
pub fn read_coords_csv<R: Read>(r: R) -> Result<Vec<[f64; 2]>> {
    let rows = read_numeric_rows(r)?;
    let mut coords = vec![None; rows.len()];
    for (line, row) in rows.iter().enumerate() {
        if row.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "coordinate row {line} needs node,x,y"
            )));
        }
        let node = as_index(row[0], line)?;
        if node >= coords.len() || coords[node].is_some() {
            return Err(Error::InvalidArgument(format!(
                "coordinate row {line}: node {node} is out of range or repeated"
            )));
        }
        coords[node] = Some([row[1], row[2]]);
    }
    Ok(coords
        .into_iter()
        .map(|c| c.expect("every slot filled"))
        .collect())
}

/// Parses CSV rows of numbers, skipping a leading non-numeric header row.
pub(crate) fn read_numeric_rows<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidArgument(format!("CSV row {k}: {e}")));
            }
        }
    }
    Ok(rows)
}

fn as_index(v: f64, line: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "row {line}: {v} is not a node index"
        )))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn adjacency_of<'a>(n: usize, edges: impl Iterator<Item = &'a Edge>) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for e in edges {
        a[(e.i, e.j)] = e.weight;
        a[(e.j, e.i)] = e.weight;
    }
    a
}

/// Uniform nodes in `[0, side]²`, linked when within `radius`; resampled until connected.
pub fn random_geometric(n: usize, side: f64, radius: f64, seed: u64) -> Result<Graph> {
    if n == 0 || !(side > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "random geometric graph needs n >= 1, side > 0, radius > 0 (got {n}, {side}, {radius})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..CONNECTIVITY_ATTEMPTS {
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push(Edge { i, j, weight: 1.0 });
                }
            }
        }
        let g = Graph::new(n, edges)?;
        if g.is_connected() {
            return g.with_coords(coords);
        }
    }
    Err(Error::Disconnected {
        n,
        side,
        radius,
        attempts: CONNECTIVITY_ATTEMPTS,
    })
}

/// Symmetrized k-nearest-neighbour graph over planar coordinates.
pub fn knn_graph(coords: &[[f64; 2]], k: usize) -> Result<Graph> {
    let n = coords.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let g = Graph::from_pairs(n, &pairs)?.with_coords(coords.to_vec())?;
    let components = g.component_count();
    if components > 1 {
        return Err(Error::DisconnectedGraph {
            components,
            hint: format!("the {k}-nearest-neighbour graph is disconnected; raise k"),
        });
    }
    Ok(g)
}

/// Family of graph shift operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    Adjacency,
    Laplacian,
    NormalizedLaplacian,
    /// `L / λ_max(L)`, spectrum in `[0, 1]`.
    ScaledLaplacian,
    /// `T + w S − I` for a sampling mask `T` and inner shift `S`.
    InterpolationShift,
    Custom,
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "adjacency" => Self::Adjacency,
            "laplacian" => Self::Laplacian,
            "normalized-laplacian" => Self::NormalizedLaplacian,
            "scaled-laplacian" => Self::ScaledLaplacian,
            "interpolation-shift" => Self::InterpolationShift,
            "custom" => Self::Custom,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown shift kind {other:?}"
                )))
            }
        })
    }
}

/// Parameters of the interpolation shift `T + w S − I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationParams {
    pub w: f64,
    /// `true` where the node value is observed (diagonal of `T`).
    pub mask: Vec<bool>,
    /// Kind of the inner shift `S`.
    pub inner: ShiftKind,
}

/// Everything needed to rebuild an operator of the same kind on a subset of edges.
#[derive(Debug, Clone, PartialEq)]
enum Recipe {
    Adjacency,
    Laplacian,
    NormalizedLaplacian,
    ScaledLaplacian {
        scale: f64,
    },
    Interpolation {
        w: f64,
        mask: Vec<bool>,
        inner: Box<Recipe>,
    },
    Custom,
}

impl Recipe {
    fn assemble(&self, n: usize, edges: &[Edge]) -> Matrix {
        match self {
            Recipe::Adjacency => adjacency_of(n, edges.iter()),
            Recipe::Laplacian => laplacian_of(n, edges),
            Recipe::ScaledLaplacian { scale } => laplacian_of(n, edges).scale(*scale),
            Recipe::NormalizedLaplacian => normalized_laplacian_of(n, edges),
            Recipe::Interpolation { w, mask, inner } => {
                let mut m = inner.assemble(n, edges).scale(*w);
                for (i, &observed) in mask.iter().enumerate() {
                    m[(i, i)] += if observed { 0.0 } else { -1.0 };
                }
                m
            }
            Recipe::Custom => unreachable!("custom operators are never reassembled"),
        }
    }
}

fn laplacian_of(n: usize, edges: &[Edge]) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    for e in edges {
        l[(e.i, e.j)] -= e.weight;
        l[(e.j, e.i)] -= e.weight;
        l[(e.i, e.i)] += e.weight;
        l[(e.j, e.j)] += e.weight;
    }
    l
}

/// `I − D^{-1/2} A D^{-1/2}`; nodes without links get an all-zero row.
fn normalized_laplacian_of(n: usize, edges: &[Edge]) -> Matrix {
    let mut deg = vec![0.0; n];
    for e in edges {
        deg[e.i] += e.weight;
        deg[e.j] += e.weight;
    }
    let mut l = Matrix::zeros(n, n);
    for (i, &d) in deg.iter().enumerate() {
        if d > 0.0 {
            l[(i, i)] = 1.0;
        }
    }
    for e in edges {
        if deg[e.i] > 0.0 && deg[e.j] > 0.0 {
            let v = e.weight / (deg[e.i] * deg[e.j]).sqrt();
            l[(e.i, e.j)] -= v;
            l[(e.j, e.i)] -= v;
        }
    }
    l
}

/// A graph shift operator with a certified spectral-norm bound.
#[derive(Debug, Clone)]
pub struct ShiftOperator {
    matrix: Matrix,
    sparse: CsrMatrix,
    kind: ShiftKind,
    rho: f64,
    symmetric: bool,
    recipe: Recipe,
}

impl ShiftOperator {
    fn from_parts(matrix: Matrix, kind: ShiftKind, rho: f64, recipe: Recipe) -> Self {
        let symmetric = matrix.is_symmetric(1e-12 * matrix.max_abs().max(1.0));
        Self {
            sparse: CsrMatrix::from_dense(&matrix),
            matrix,
            kind,
            rho,
            symmetric,
            recipe,
        }
    }

    /// Wraps an arbitrary square matrix; `rho` is certified by power iteration.
    pub fn custom(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument(
                "shift operator must be square".into(),
            ));
        }
        let mut op = Self::from_parts(matrix, ShiftKind::Custom, 0.0, Recipe::Custom);
        op.rho = certify(spectral_radius(&op, POWER_TOL)?);
        Ok(op)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    /// Certified upper bound on `‖S‖₂`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    /// One communication round: `S x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.sparse.matvec(x)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.sparse.matvec_into(x, out);
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.sparse.transpose_matvec(x)
    }

    fn realize(&self, n: usize, edges: &[Edge]) -> ShiftOperator {
        let matrix = self.recipe.assemble(n, edges);
        Self::from_parts(matrix, self.kind, self.rho, self.recipe.clone())
    }
}

fn certify(estimate: f64) -> f64 {
    estimate * (1.0 + RHO_MARGIN)
}

/// Assembles a shift operator of the requested kind.
pub fn build_shift(
    g: &Graph,
    kind: ShiftKind,
    interpolation: Option<&InterpolationParams>,
) -> Result<ShiftOperator> {
    let n = g.node_count();
    let edges = g.edges();
    let op = match kind {
        ShiftKind::Adjacency | ShiftKind::Laplacian => {
            let recipe = if kind == ShiftKind::Adjacency {
                Recipe::Adjacency
            } else {
                Recipe::Laplacian
            };
            let mut op = ShiftOperator::from_parts(recipe.assemble(n, edges), kind, 0.0, recipe);
            op.rho = certify(spectral_radius(&op, POWER_TOL)?);
            op
        }
        ShiftKind::NormalizedLaplacian => {
            if let Some(i) = g.degrees().iter().position(|&d| d <= 0.0) {
                return Err(Error::IsolatedNode(i));
            }
            let recipe = Recipe::NormalizedLaplacian;
            // The spectrum of any normalized Laplacian lies in [0, 2], realizations included.
            ShiftOperator::from_parts(recipe.assemble(n, edges), kind, 2.0, recipe)
        }
        ShiftKind::ScaledLaplacian => {
            let lap =
                ShiftOperator::from_parts(laplacian_of(n, edges), kind, 0.0, Recipe::Laplacian);
            let lmax = spectral_radius(&lap, POWER_TOL)?;
            let scale = if lmax > 0.0 { 1.0 / lmax } else { 1.0 };
            let recipe = Recipe::ScaledLaplacian { scale };
            let mut op = ShiftOperator::from_parts(recipe.assemble(n, edges), kind, 0.0, recipe);
            op.rho = certify(spectral_radius(&op, POWER_TOL)?);
            op
        }
        ShiftKind::InterpolationShift => {
            let p = interpolation.ok_or(Error::MissingParameter("interpolation w and mask"))?;
            if p.inner == ShiftKind::InterpolationShift || p.inner == ShiftKind::Custom {
                return Err(Error::InvalidArgument(
                    "interpolation inner shift must be a graph-derived kind".into(),
                ));
            }
            let inner = build_shift(g, p.inner, None)?;
            interpolation_shift(&inner, p.w, &p.mask)?
        }
        ShiftKind::Custom => {
            return Err(Error::InvalidArgument(
                "custom shifts are built with ShiftOperator::custom".into(),
            ))
        }
    };
    Ok(op)
}

/// `T + w S − I` where `T = diag(mask)` marks observed nodes.
pub fn interpolation_shift(inner: &ShiftOperator, w: f64, mask: &[bool]) -> Result<ShiftOperator> {
    check_len(inner.size(), mask.len())?;
    if !w.is_finite() {
        return Err(Error::NonFinite("interpolation weight".into()));
    }
    let recipe = match inner.recipe {
        Recipe::Custom | Recipe::Interpolation { .. } => Recipe::Custom,
        ref r => Recipe::Interpolation {
            w,
            mask: mask.to_vec(),
            inner: Box::new(r.clone()),
        },
    };
    let mut matrix = inner.matrix().scale(w);
    for (i, &observed) in mask.iter().enumerate() {
        if !observed {
            matrix[(i, i)] -= 1.0;
        }
    }
    let mut op = ShiftOperator::from_parts(matrix, ShiftKind::InterpolationShift, 0.0, recipe);
    op.rho = certify(spectral_radius(&op, POWER_TOL)?);
    Ok(op)
}

/// Largest singular value of `S` by power iteration.
///
/// Symmetric operators are iterated directly and the estimate is `‖S x‖`
/// for the normalized iterate, which also converges when `±λ` share the
/// largest magnitude. Other operators are iterated through `SᵀS`.
pub fn spectral_radius(s: &ShiftOperator, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let n = s.size();
    let mut x = vec![1.0; n];
    x[0] += 1e-3;
    let nx = linalg::norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let step = |x: &[f64]| -> (Vec<f64>, f64) {
        if s.is_symmetric() {
            let y = s.apply(x);
            let est = linalg::norm2(&y);
            (y, est)
        } else {
            let y = s.apply_transpose(&s.apply(x));
            let est = linalg::norm2(&y).sqrt();
            (y, est)
        }
    };
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let (y, est) = step(&x);
        if est == 0.0 {
            return Ok(0.0);
        }
        if (est - prev).abs() <= tol * est {
            return Ok(est);
        }
        prev = est;
        let ny = linalg::norm2(&y);
        x = y.into_iter().map(|v| v / ny).collect();
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITER,
        last_estimate: prev,
        last_iterate: x,
    })
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric shift.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigvecs: Matrix,
    pub eigvals: Vec<f64>,
}

pub fn eigendecompose(s: &ShiftOperator) -> Result<SpectralDecomposition> {
    eigendecompose_matrix(s.matrix())
}

pub fn eigendecompose_matrix(m: &Matrix) -> Result<SpectralDecomposition> {
    let asym = m.max_asymmetry();
    if asym > 1e-12 * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let (eigvals, eigvecs) = linalg::jacobi_eigen(m, JACOBI_TOL, 200)?;
    Ok(SpectralDecomposition { eigvecs, eigvals })
}

impl SpectralDecomposition {
    pub fn size(&self) -> usize {
        self.eigvals.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigvals.last().expect("non-empty spectrum")
    }

    /// Largest eigenvalue magnitude, i.e. `‖S‖₂` for symmetric `S`.
    pub fn spectral_norm(&self) -> f64 {
        self.eigvals.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Graph Fourier transform `Uᵀ x`.
    pub fn gft(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), x.len())?;
        Ok(self.eigvecs.transpose().matvec(x))
    }

    /// Inverse transform `U x̂`.
    pub fn igft(&self, xhat: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), xhat.len())?;
        Ok(self.eigvecs.matvec(xhat))
    }

    /// `U diag(values) Uᵀ`
    pub fn reconstruct_with(&self, values: &[f64]) -> Matrix {
        let n = self.size();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.eigvecs[(i, k)] * values[k] * self.eigvecs[(j, k)])
                .sum()
        })
    }
}

/// Random edge sampling model: every base link active independently with its own probability.
#[derive(Debug, Clone)]
pub struct ResModel {
    graph: Graph,
    base: ShiftOperator,
    /// Activation probability per edge, parallel to `graph.edges()`.
    edge_probs: Vec<f64>,
}

impl ResModel {
    /// Same activation probability on every link.
    pub fn uniform(graph: Graph, base: ShiftOperator, p: f64) -> Result<Self> {
        let probs = vec![p; graph.edge_count()];
        Self::with_edge_probs(graph, base, probs)
    }

    pub fn with_edge_probs(
        graph: Graph,
        base: ShiftOperator,
        edge_probs: Vec<f64>,
    ) -> Result<Self> {
        check_len(graph.edge_count(), edge_probs.len())?;
        check_len(graph.node_count(), base.size())?;
        if let Some(p) = edge_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "link activation probability {p} outside (0, 1]"
            )));
        }
        match base.kind {
            ShiftKind::Custom | ShiftKind::InterpolationShift => {
                return Err(Error::Unsupported(format!(
                    "random edge sampling over a {:?} shift",
                    base.kind
                )))
            }
            _ => {}
        }
        Ok(Self {
            graph,
            base,
            edge_probs,
        })
    }

    /// Builds the model from a full probability matrix `P`, which must be
    /// symmetric and supported exactly on the edge set.
    pub fn from_matrix(graph: Graph, base: ShiftOperator, probs: &Matrix) -> Result<Self> {
        let n = graph.node_count();
        if probs.rows() != n || probs.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: probs.rows(),
            });
        }
        if !probs.is_symmetric(0.0) {
            return Err(Error::InvalidArgument(
                "probability matrix must be symmetric".into(),
            ));
        }
        let mut on_edge = Matrix::zeros(n, n);
        for e in graph.edges() {
            on_edge[(e.i, e.j)] = 1.0;
            on_edge[(e.j, e.i)] = 1.0;
        }
        for i in 0..n {
            for j in 0..n {
                if on_edge[(i, j)] == 0.0 && probs[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "probability at ({i}, {j}) lies off the edge set"
                    )));
                }
            }
        }
        let edge_probs = graph.edges().iter().map(|e| probs[(e.i, e.j)]).collect();
        Self::with_edge_probs(graph, base, edge_probs)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn base(&self) -> &ShiftOperator {
        &self.base
    }

    pub fn edge_probs(&self) -> &[f64] {
        &self.edge_probs
    }

    /// Certified norm bound shared by every realization.
    pub fn rho(&self) -> f64 {
        self.base.rho
    }

    pub fn prob_matrix(&self) -> Matrix {
        let n = self.graph.node_count();
        let mut p = Matrix::zeros(n, n);
        for (e, &pe) in self.graph.edges().iter().zip(&self.edge_probs) {
            p[(e.i, e.j)] = pe;
            p[(e.j, e.i)] = pe;
        }
        p
    }
}

/// Draws one realization: one uniform per edge in edge-list order, link kept when below its probability.
pub fn res_sample<R: Rng + ?Sized>(m: &ResModel, rng: &mut R) -> ShiftOperator {
    let kept: Vec<Edge> = m
        .graph
        .edges()
        .iter()
        .zip(&m.edge_probs)
        .filter_map(|(e, &p)| (rng.random::<f64>() < p).then_some(*e))
        .collect();
    m.base.realize(m.graph.node_count(), &kept)
}

/// Closed-form expectation of the realized shift.
pub fn expected_shift(m: &ResModel) -> Result<ShiftOperator> {
    let n = m.graph.node_count();
    // Scaling every weight by its probability gives P∘A, and the degrees of
    // the rescaled graph are exactly E[D_t].
    let weighted: Vec<Edge> = m
        .graph
        .edges()
        .iter()
        .zip(&m.edge_probs)
        .map(|(e, &p)| Edge {
            weight: e.weight * p,
            ..*e
        })
        .collect();
    let matrix = match &m.base.recipe {
        r @ (Recipe::Adjacency | Recipe::Laplacian | Recipe::ScaledLaplacian { .. }) => {
            r.assemble(n, &weighted)
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "closed-form expected shift for {:?}",
                m.base.kind
            )))
        }
    };
    let mut op = ShiftOperator::from_parts(matrix, m.base.kind, 0.0, m.base.recipe.clone());
    op.rho = certify(spectral_radius(&op, POWER_TOL)?);
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn path_laplacian_matches_definition() {
        let s = build_shift(&Graph::path(3), ShiftKind::Laplacian, None).unwrap();
        assert_eq!(
            s.matrix(),
            &mat(&[&[1.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 1.0]])
        );
        for i in 0..3 {
            assert_eq!(s.matrix().row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn k2_normalized_laplacian() {
        let s = build_shift(&Graph::complete(2), ShiftKind::NormalizedLaplacian, None).unwrap();
        assert_eq!(s.matrix(), &mat(&[&[1.0, -1.0], &[-1.0, 1.0]]));
        assert_eq!(s.rho(), 2.0);
    }

    #[test]
    fn k2_scaled_laplacian_spectrum() {
        let s = build_shift(&Graph::complete(2), ShiftKind::ScaledLaplacian, None).unwrap();
        let d = eigendecompose(&s).unwrap();
        assert!(d.eigvals[0].abs() < 1e-12);
        assert!((d.eigvals[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isolated_node_rejected_by_normalization() {
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        assert!(matches!(
            build_shift(&g, ShiftKind::NormalizedLaplacian, None),
            Err(Error::IsolatedNode(2))
        ));
    }

    #[test]
    fn interpolation_needs_parameters() {
        assert!(matches!(
            build_shift(&Graph::path(3), ShiftKind::InterpolationShift, None),
            Err(Error::MissingParameter(_))
        ));
    }

    #[test]
    fn interpolation_shift_definition() {
        let g = Graph::path(3);
        let p = InterpolationParams {
            w: 0.3,
            mask: vec![true, false, true],
            inner: ShiftKind::Laplacian,
        };
        let s = build_shift(&g, ShiftKind::InterpolationShift, Some(&p)).unwrap();
        let l = build_shift(&g, ShiftKind::Laplacian, None).unwrap();
        let mut expected = l.matrix().scale(0.3);
        expected[(1, 1)] -= 1.0;
        assert_eq!(s.matrix(), &expected);
    }

    #[test]
    fn spectral_radius_examples() {
        let d = ShiftOperator::custom(Matrix::from_diag(&[1.0, 2.0, 3.0])).unwrap();
        assert!((spectral_radius(&d, 1e-12).unwrap() - 3.0).abs() < 1e-9);
        let k2 = build_shift(&Graph::complete(2), ShiftKind::Laplacian, None).unwrap();
        assert!((spectral_radius(&k2, 1e-12).unwrap() - 2.0).abs() < 1e-9);
        let p3 = build_shift(&Graph::path(3), ShiftKind::Laplacian, None).unwrap();
        assert!((spectral_radius(&p3, 1e-12).unwrap() - 3.0).abs() < 1e-8);
        assert!(p3.rho() >= 3.0);
    }

    #[test]
    fn spectral_radius_handles_bipartite_adjacency() {
        // Path adjacency has eigenvalues ±√2 and 0.
        let a = build_shift(&Graph::path(3), ShiftKind::Adjacency, None).unwrap();
        assert!((spectral_radius(&a, 1e-12).unwrap() - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn spectral_radius_nonsymmetric() {
        let m = mat(&[&[0.0, 2.0], &[0.0, 0.0]]);
        let s = ShiftOperator::custom(m).unwrap();
        assert!(!s.is_symmetric());
        assert!((s.rho() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn spectral_radius_rejects_bad_tol() {
        let s = build_shift(&Graph::path(3), ShiftKind::Laplacian, None).unwrap();
        assert!(spectral_radius(&s, 0.0).is_err());
    }

    #[test]
    fn eigendecompose_examples() {
        let s = ShiftOperator::custom(Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(eigendecompose(&s).unwrap().eigvals, vec![1.0, 2.0, 3.0]);
        let p3 = build_shift(&Graph::path(3), ShiftKind::Laplacian, None).unwrap();
        let d = eigendecompose(&p3).unwrap();
        for (got, want) in d.eigvals.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eigendecompose_rejects_nonsymmetric() {
        let s = ShiftOperator::custom(mat(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!(matches!(eigendecompose(&s), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn gft_examples() {
        let p3 = build_shift(&Graph::path(3), ShiftKind::Laplacian, None).unwrap();
        let d = eigendecompose(&p3).unwrap();
        let u1 = d.eigvecs.column(0);
        let xhat = d.gft(&u1).unwrap();
        assert!((xhat[0] - 1.0).abs() < 1e-12);
        assert!(xhat[1].abs() < 1e-12 && xhat[2].abs() < 1e-12);
        assert_eq!(d.gft(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            d.gft(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_geometric_examples() {
        let g = random_geometric(1, 150.0, 50.0, 3).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        let g = random_geometric(3, 1.0, 2.0, 3).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(random_geometric(0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn random_geometric_gives_up() {
        match random_geometric(30, 1000.0, 1.0, 1) {
            Err(Error::Disconnected { n, attempts, .. }) => {
                assert_eq!(n, 30);
                assert_eq!(attempts, CONNECTIVITY_ATTEMPTS);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::from_pairs(2, &[(0, 0)]).is_err());
        assert!(Graph::from_pairs(2, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_pairs(2, &[(0, 2)]).is_err());
        assert!(Graph::path(2).with_coords(vec![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn res_all_links_kept_equals_base() {
        let g = Graph::complete(4);
        let base = build_shift(&g, ShiftKind::Laplacian, None).unwrap();
        let m = ResModel::uniform(g, base.clone(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = res_sample(&m, &mut rng);
        assert_eq!(s.matrix(), base.matrix());
        assert_eq!(s.rho(), base.rho());
        assert_eq!(expected_shift(&m).unwrap().matrix(), base.matrix());
    }

    #[test]
    fn expected_shift_examples() {
        let g = Graph::complete(2);
        let lap = build_shift(&g, ShiftKind::Laplacian, None).unwrap();
        let m = ResModel::uniform(g.clone(), lap, 0.5).unwrap();
        assert_eq!(
            expected_shift(&m).unwrap().matrix(),
            &mat(&[&[0.5, -0.5], &[-0.5, 0.5]])
        );
        let g = Graph::path(4);
        let adj = build_shift(&g, ShiftKind::Adjacency, None).unwrap();
        let m = ResModel::uniform(g.clone(), adj.clone(), 0.3).unwrap();
        let e = expected_shift(&m).unwrap();
        assert!(
            e.matrix()
                .add_scaled(&adj.matrix().scale(0.3), -1.0)
                .max_abs()
                < 1e-15
        );
        let ln = build_shift(&g, ShiftKind::NormalizedLaplacian, None).unwrap();
        let m = ResModel::uniform(g, ln, 0.3).unwrap();
        assert!(matches!(expected_shift(&m), Err(Error::Unsupported(_))));
    }

    #[test]
    fn res_model_validation() {
        let g = Graph::path(3);
        let base = build_shift(&g, ShiftKind::Adjacency, None).unwrap();
        assert!(ResModel::uniform(g.clone(), base.clone(), 0.0).is_err());
        assert!(ResModel::uniform(g.clone(), base.clone(), 1.5).is_err());
        let mut p = Matrix::zeros(3, 3);
        p[(0, 2)] = 0.5;
        p[(2, 0)] = 0.5;
        assert!(ResModel::from_matrix(g.clone(), base.clone(), &p).is_err());
        let mut p = Matrix::zeros(3, 3);
        p[(0, 1)] = 0.5;
        p[(1, 0)] = 0.5;
        p[(1, 2)] = 0.8;
        p[(2, 1)] = 0.8;
        let m = ResModel::from_matrix(g, base, &p).unwrap();
        assert_eq!(m.edge_probs(), &[0.5, 0.8]);
        assert_eq!(m.prob_matrix(), p);
    }

    #[test]
    fn single_edge_activation_frequency() {
        let g = Graph::complete(2);
        let base = build_shift(&g, ShiftKind::Adjacency, None).unwrap();
        let m = ResModel::uniform(g, base, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| res_sample(&m, &mut rng).matrix()[(0, 1)] == 1.0)
            .count();
        let freq = hits as f64 / draws as f64;
        let se = (0.3 * 0.7 / draws as f64).sqrt();
        assert!((freq - 0.3).abs() < 4.0 * se, "frequency {freq}");
    }

    #[test]
    fn knn_graph_connectivity() {
        let coords = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [100.0, 0.0],
            [101.0, 0.0],
        ];
        assert!(matches!(
            knn_graph(&coords, 1),
            Err(Error::DisconnectedGraph { .. })
        ));
        let g = knn_graph(&coords, 3).unwrap();
        assert!(g.is_connected());
    }

    #[test]
    fn csv_round_trip() {
        let g = random_geometric(12, 10.0, 5.0, 9).unwrap();
        let mut buf = Vec::new();
        g.write_edge_csv(&mut buf).unwrap();
        let back = Graph::read_edge_csv(12, buf.as_slice()).unwrap();
        assert_eq!(back.edges(), g.edges());
        let mut buf = Vec::new();
        g.write_coords_csv(&mut buf).unwrap();
        assert_eq!(
            read_coords_csv(buf.as_slice()).unwrap(),
            g.coords().unwrap()
        );
        let headerless = "0,1\n1,2,0.5\n";
        let g = Graph::read_edge_csv(3, headerless.as_bytes()).unwrap();
        assert_eq!(g.edges()[1].weight, 0.5);
    }
}
