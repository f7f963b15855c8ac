//! Scenario runner for the low-pass, denoising, interpolation and bounds-audit experiments.
//!
//! A run is fully determined by its [`ExperimentConfig`]. Monte Carlo trial
//! `i` draws from [`analysis::substream`]`(seed, i)` at every sweep point, so
//! variants and sweep points are compared on common random numbers. Results
//! are collected in memory and written in a fixed order by [`write_outputs`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, ArmaSetting, MeanEstimate, MseReport, MseRow};
use crate::design::{self, DesignConstraints, DesignResult};
use crate::error::{Error, Result};
use crate::filters::{self, ArmaCoefficients, FilterRun, FirCoefficients, ShiftSource};
use crate::graphs::{
    self, fmt_f64, Graph, ResModel, ShiftKind, ShiftOperator, SpectralDecomposition,
};
use crate::linalg::{self, Matrix};
use crate::quantization::{noise_variance, DitheredQuantizer, RangePolicy, StepsizeSchedule};

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_NODES: usize = 50;
pub const DEFAULT_KNN: usize = 5;
/// Columns of every scenario table.
pub const TABLE_HEADER: [&str; 5] = ["axis", "nse_mean", "nse_ci", "bound", "bits_total"];
/// Largest graph the bounds audit accepts; the exact oracle is dense.
pub const AUDIT_MAX_NODES: usize = 50;
/// Standard errors tolerated between Monte Carlo and exact MSE in the audit.
pub const EXACTNESS_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Lowpass,
    Denoise,
    Interpolate,
    BoundsAudit,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Lowpass,
        Scenario::Denoise,
        Scenario::Interpolate,
        Scenario::BoundsAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Lowpass => "lowpass",
            Scenario::Denoise => "denoise",
            Scenario::Interpolate => "interpolate",
            Scenario::BoundsAudit => "bounds-audit",
        }
    }

    /// Sweep axes the scenario understands.
    pub fn axes(self) -> &'static [SweepAxis] {
        match self {
            Scenario::Lowpass => &[SweepAxis::Order, SweepAxis::Bits],
            Scenario::Denoise => &[SweepAxis::Order, SweepAxis::Probability, SweepAxis::Bits],
            Scenario::Interpolate => &[SweepAxis::MissingFraction, SweepAxis::Bits],
            Scenario::BoundsAudit => &[SweepAxis::Order, SweepAxis::Probability],
        }
    }

    fn default_order(self) -> usize {
        match self {
            Scenario::Lowpass => 15,
            Scenario::Denoise => 10,
            Scenario::Interpolate | Scenario::BoundsAudit => 4,
        }
    }

    fn default_chi(self) -> Option<u32> {
        match self {
            Scenario::Lowpass => Some(32),
            Scenario::Denoise => Some(25),
            Scenario::Interpolate | Scenario::BoundsAudit => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// FIR order `K`.
    #[serde(rename = "K", alias = "k")]
    Order,
    /// Uniform link activation probability.
    #[serde(rename = "p")]
    Probability,
    /// Bit cap `χ`.
    #[serde(rename = "chi")]
    Bits,
    #[serde(rename = "missing-fraction")]
    MissingFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Order => "K",
            SweepAxis::Probability => "p",
            SweepAxis::Bits => "chi",
            SweepAxis::MissingFraction => "missing-fraction",
        }
    }

    fn check_value(self, v: f64) -> Result<()> {
        let integral = v.is_finite() && v.fract() == 0.0;
        let ok = match self {
            SweepAxis::Order => integral && v >= 1.0,
            SweepAxis::Bits => integral && (1.0..=63.0).contains(&v),
            SweepAxis::Probability => v > 0.0 && v <= 1.0,
            SweepAxis::MissingFraction => (0.0..1.0).contains(&v),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "sweep value {v} is invalid for axis {}",
                self.name()
            )))
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepAxis::Order),
            "p" => Ok(SweepAxis::Probability),
            "chi" => Ok(SweepAxis::Bits),
            "missing-fraction" => Ok(SweepAxis::MissingFraction),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'"))),
        }
    }
}

/// The single swept parameter and its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Resampled until connected; `seed` defaults to the experiment seed.
    RandomGeometric {
        nodes: usize,
        #[serde(default = "default_side")]
        side: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `i,j[,weight]` edge rows and optional `node,x,y` coordinate rows.
    Csv {
        nodes: usize,
        edges: PathBuf,
        #[serde(default)]
        coords: Option<PathBuf>,
    },
    /// Symmetrized k-nearest-neighbour graph over `node,x,y` rows.
    Knn {
        coords: PathBuf,
        #[serde(default = "default_knn")]
        k: usize,
    },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::RandomGeometric {
            nodes: DEFAULT_NODES,
            side: default_side(),
            radius: default_radius(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// FIR order `K`.
    #[serde(default)]
    pub order: Option<usize>,
    /// ARMA₁ weight `w`; 0.3 when absent.
    #[serde(default)]
    pub weight: Option<f64>,
    /// Low-pass cutoff; the middle of the spectrum when absent.
    #[serde(default)]
    pub cutoff: Option<f64>,
    /// Coefficient-sum cap (low-pass, default 0) or penalty weight (random-graph design, default 1).
    #[serde(default)]
    pub gamma: Option<f64>,
    /// MSE cap of the quantization-aware design.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Explicit audit coefficients; overrides `tau` and the order.
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
    /// Audit filter `φₖ = τᵏ/k!`; 0.3 when absent.
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationConfig {
    /// Fixed stepsize, or the first stepsize of the decreasing schedule;
    /// 1e-5 for the low-pass scenario and 0.1 otherwise when absent.
    #[serde(default)]
    pub delta0: Option<f64>,
    /// Bit cap; scenario default when absent.
    #[serde(default)]
    pub max_bits: Option<u32>,
    /// Decay rate of the decreasing schedule; derived from the filter when absent.
    #[serde(default)]
    pub rate: Option<f64>,
    /// Quantizer range as a multiple of the worst-case message norm.
    #[serde(default = "default_range_factor")]
    pub range_factor: f64,
    /// Per-round growth of FIR message ranges; the shift's norm bound when absent.
    #[serde(default)]
    pub range_growth: Option<f64>,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        Self {
            delta0: None,
            max_bits: None,
            rate: None,
            range_factor: default_range_factor(),
            range_growth: None,
        }
    }
}

/// Random link failures: one uniform probability or a probability matrix CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResConfig {
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub coords: PathBuf,
    pub signals: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    /// Neighbours per node of the graph built from `coords`.
    #[serde(default = "default_knn")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default = "default_shift")]
    pub shift: ShiftKind,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub quantization: QuantizationConfig,
    #[serde(default)]
    pub res: Option<ResConfig>,
    /// Variance of the additive Gaussian noise in the denoising task.
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "default_missing_fraction")]
    pub missing_fraction: f64,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    pub sweep: Sweep,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_side() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    0.3
}
fn default_knn() -> usize {
    DEFAULT_KNN
}
fn default_range_factor() -> f64 {
    2.0
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_shift() -> ShiftKind {
    ShiftKind::NormalizedLaplacian
}
fn default_noise_variance() -> f64 {
    0.2
}
fn default_missing_fraction() -> f64 {
    0.2
}

/// Parameters of one sweep point after axis overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    k: usize,
    p: Option<f64>,
    chi: Option<u32>,
    missing: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` or TOML file, resolves relative paths against its
    /// directory and validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.graph {
            GraphSpec::RandomGeometric { .. } => {}
            GraphSpec::Csv { edges, coords, .. } => {
                fix(edges);
                if let Some(c) = coords {
                    fix(c);
                }
            }
            GraphSpec::Knn { coords, .. } => fix(coords),
        }
        if let Some(ResConfig {
            matrix: Some(m), ..
        }) = &mut self.res
        {
            fix(m);
        }
        if let Some(d) = &mut self.dataset {
            fix(&mut d.coords);
            fix(&mut d.signals);
            if let Some(m) = &mut d.mask {
                fix(m);
            }
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !self.scenario.axes().contains(&self.sweep.axis) {
            return bad(format!(
                "scenario {} does not sweep over {}",
                self.scenario,
                self.sweep.axis.name()
            ));
        }
        if self.sweep.values.is_empty() {
            return bad("sweep grid is empty".into());
        }
        for &v in &self.sweep.values {
            self.sweep.axis.check_value(v)?;
        }
        if matches!(
            self.shift,
            ShiftKind::InterpolationShift | ShiftKind::Custom
        ) {
            return bad(format!(
                "shift kind {:?} cannot be built from a graph spec",
                self.shift
            ));
        }
        let q = &self.quantization;
        if let Some(d) = q.delta0 {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta0 {d} must be positive"));
            }
        }
        if let Some(g) = q.range_growth {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("range_growth {g} must be positive"));
            }
        }
        if !(q.range_factor > 0.0 && q.range_factor.is_finite()) {
            return bad(format!("range_factor {} must be positive", q.range_factor));
        }
        if let Some(r) = q.rate {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("rate {r} must be positive"));
            }
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad("noise_variance must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)".into());
        }
        if let Some(w) = self.filter.weight {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("filter weight {w} must be nonnegative"));
            }
        }
        if let Some(res) = &self.res {
            match (res.p, &res.matrix) {
                (Some(p), None) => SweepAxis::Probability.check_value(p)?,
                (None, Some(_)) => {}
                _ => return bad("res needs exactly one of p or matrix".into()),
            }
        }
        let random_links = self.res.is_some() || self.sweep.axis == SweepAxis::Probability;
        if self.scenario == Scenario::Denoise
            && random_links
            && self.shift == ShiftKind::NormalizedLaplacian
        {
            return bad(
                "the robust denoising design needs the expected graph, which has no closed form \
                 for the normalized Laplacian; use adjacency, laplacian or scaled-laplacian"
                    .into(),
            );
        }
        let mut files: Vec<&Path> = Vec::new();
        match &self.graph {
            GraphSpec::RandomGeometric {
                nodes,
                side,
                radius,
                ..
            } => {
                if *nodes == 0 || !(*side > 0.0) || !(*radius > 0.0) {
                    return bad("random geometric graph needs nodes, side and radius > 0".into());
                }
            }
            GraphSpec::Csv { edges, coords, .. } => {
                files.push(edges);
                if let Some(c) = coords {
                    files.push(c);
                }
            }
            GraphSpec::Knn { coords, .. } => files.push(coords),
        }
        if let Some(ResConfig {
            matrix: Some(m), ..
        }) = &self.res
        {
            files.push(m);
        }
        if let Some(d) = &self.dataset {
            files.push(&d.coords);
            files.push(&d.signals);
            if let Some(m) = &d.mask {
                files.push(m);
            }
        }
        for f in files {
            if !f.is_file() {
                return bad(format!("referenced file {} does not exist", f.display()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        Ok(sha256_hex(&serde_json::to_vec(&c)?))
    }

    /// Where reports go when no directory is given on the command line.
    pub fn default_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(self.scenario.name()))
    }

    fn point(&self, value: f64) -> Point {
        let axis = self.sweep.axis;
        Point {
            k: if axis == SweepAxis::Order {
                value as usize
            } else {
                self.filter.order.unwrap_or(self.scenario.default_order())
            },
            p: if axis == SweepAxis::Probability {
                Some(value)
            } else {
                self.res.as_ref().and_then(|r| r.p)
            },
            chi: if axis == SweepAxis::Bits {
                Some(value as u32)
            } else {
                self.quantization.max_bits.or(self.scenario.default_chi())
            },
            missing: if axis == SweepAxis::MissingFraction {
                value
            } else {
                self.missing_fraction
            },
        }
    }

    fn weight(&self) -> f64 {
        self.filter.weight.unwrap_or(0.3)
    }

    fn delta0(&self) -> f64 {
        self.quantization.delta0.unwrap_or(match self.scenario {
            Scenario::Lowpass => 1e-5,
            _ => 0.1,
        })
    }

    fn fixed_schedule(&self, chi: Option<u32>) -> Result<StepsizeSchedule> {
        capped(StepsizeSchedule::fixed(self.delta0())?, chi)
    }

    fn decreasing_schedule(&self, derived_rate: f64, chi: Option<u32>) -> Result<StepsizeSchedule> {
        let rate = self.quantization.rate.unwrap_or(derived_rate);
        capped(StepsizeSchedule::geometric(self.delta0(), rate)?, chi)
    }

    /// FIR round `k` sends `Sᵏx`, so its range grows by the norm bound per round.
    fn fir_range(&self, norm_bound: f64) -> RangePolicy {
        RangePolicy::InputNorm {
            factor: self.quantization.range_factor,
            growth: self.quantization.range_growth.unwrap_or(norm_bound),
        }
    }

    /// An ARMA₁ branch state never exceeds `|ϕ| ‖x‖ / (1 − |ψ| bound)`.
    fn arma_range(&self, c: &ArmaCoefficients, bound: f64) -> RangePolicy {
        let gain =
            c.varphi().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / (1.0 - c.contraction(bound));
        RangePolicy::InputNorm {
            factor: self.quantization.range_factor * gain,
            growth: 1.0,
        }
    }

    fn quantizer(
        &self,
        schedule: &StepsizeSchedule,
        range: &RangePolicy,
        seed: u64,
    ) -> DitheredQuantizer {
        DitheredQuantizer::new(schedule.clone(), seed).with_range(range.clone())
    }

    fn res_model(&self, setup: &Setup, p: Option<f64>) -> Result<Option<ResModel>> {
        if let Some(p) = p {
            return ResModel::uniform(setup.graph.clone(), setup.shift.clone(), p).map(Some);
        }
        match &self.res {
            Some(ResConfig {
                matrix: Some(path), ..
            }) => {
                let rows = graphs::read_numeric_rows(File::open(path)?)?;
                let probs = Matrix::from_rows(&rows)?;
                ResModel::from_matrix(setup.graph.clone(), setup.shift.clone(), &probs).map(Some)
            }
            _ => Ok(None),
        }
    }
}

fn capped(s: StepsizeSchedule, chi: Option<u32>) -> Result<StepsizeSchedule> {
    match chi {
        Some(c) => s.with_max_bits(c),
        None => Ok(s),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Node coordinates, a node × snapshot signal matrix and its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub coords: Vec<[f64; 2]>,
    pub signals: Matrix,
    pub mask: Vec<Vec<bool>>,
}

impl DatasetBundle {
    pub fn new(coords: Vec<[f64; 2]>, signals: Matrix, mask: Vec<Vec<bool>>) -> Result<Self> {
        let b = Self {
            coords,
            signals,
            mask,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 || self.signals.cols() == 0 {
            return Err(Error::Config("dataset has no nodes or no snapshots".into()));
        }
        if self.signals.rows() != n {
            return Err(Error::Config(format!(
                "signals have {} rows for {n} nodes",
                self.signals.rows()
            )));
        }
        if self.mask.len() != n || self.mask.iter().any(|r| r.len() != self.signals.cols()) {
            return Err(Error::Config(
                "mask shape differs from the signal matrix".into(),
            ));
        }
        if !self.signals.is_finite() {
            return Err(Error::NonFinite("dataset signals".into()));
        }
        Ok(())
    }

    /// Loads `node,x,y` coordinates, a node-per-row signal CSV and an optional 0/1 mask CSV.
    pub fn load(cfg: &DatasetConfig) -> Result<Self> {
        let coords = graphs::read_coords_csv(File::open(&cfg.coords)?)?;
        let rows = graphs::read_numeric_rows(File::open(&cfg.signals)?)?;
        let signals = Matrix::from_rows(&rows)
            .map_err(|_| Error::Config("signal rows have different lengths".into()))?;
        let mask = match &cfg.mask {
            Some(p) => graphs::read_numeric_rows(File::open(p)?)?
                .into_iter()
                .enumerate()
                .map(|(i, row)| {
                    row.into_iter()
                        .map(|v| match v {
                            0.0 => Ok(false),
                            1.0 => Ok(true),
                            _ => Err(Error::Config(format!(
                                "mask row {i} holds {v}, expected 0 or 1"
                            ))),
                        })
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![vec![true; signals.cols()]; signals.rows()],
        };
        Self::new(coords, signals, mask)
    }

    /// Fully observed smooth snapshots supported on the `bandwidth` lowest graph frequencies.
    pub fn synthetic(
        dec: &SpectralDecomposition,
        coords: Vec<[f64; 2]>,
        snapshots: usize,
        bandwidth: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = dec.size();
        let mut rng = analysis::substream(seed, u64::MAX);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let b = bandwidth.clamp(1, n);
        let mut signals = Matrix::zeros(n, snapshots);
        for s in 0..snapshots {
            let mut xhat = vec![0.0; n];
            for v in xhat.iter_mut().take(b) {
                *v = normal.sample(&mut rng) * (n as f64 / b as f64).sqrt();
            }
            let x = dec.igft(&xhat)?;
            for (i, v) in x.into_iter().enumerate() {
                signals[(i, s)] = v;
            }
        }
        Self::new(coords, signals, vec![vec![true; snapshots]; n])
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn snapshots(&self) -> usize {
        self.signals.cols()
    }

    fn mask_column(&self, s: usize) -> Vec<bool> {
        self.mask.iter().map(|r| r[s]).collect()
    }
}

/// One line of a scenario table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub axis: f64,
    pub nse_mean: f64,
    /// 95% halfwidth.
    pub nse_ci: f64,
    pub bound: Option<f64>,
    /// Mean number of bits sent over the whole network per run.
    pub bits_total: Option<f64>,
}

/// Writes rows under [`TABLE_HEADER`]; missing values become empty cells.
pub fn table_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(TABLE_HEADER)?;
    for r in rows {
        wr.write_record([
            fmt_f64(r.axis),
            fmt_f64(r.nse_mean),
            fmt_f64(r.nse_ci),
            opt(r.bound),
            opt(r.bits_total),
        ])?;
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// True when means never increase along the rows, except for at most one
/// increase whose confidence intervals overlap.
pub fn nonincreasing_within_ci(rows: &[ReportRow]) -> bool {
    let mut inversions = 0;
    for w in rows.windows(2) {
        if w[1].nse_mean > w[0].nse_mean {
            let overlap = w[1].nse_mean - w[1].nse_ci <= w[0].nse_mean + w[0].nse_ci;
            if !overlap {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

/// Mirror of [`nonincreasing_within_ci`].
pub fn nondecreasing_within_ci(rows: &[ReportRow]) -> bool {
    let rev: Vec<ReportRow> = rows.iter().rev().cloned().collect();
    nonincreasing_within_ci(&rev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Whether a failure makes the run fail.
    pub gating: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    pub iterations: usize,
    pub nodes: usize,
    pub shift: ShiftKind,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub tables: BTreeMap<String, Vec<ReportRow>>,
    pub checks: Vec<Check>,
    pub saturation_events: u64,
    /// Failed gating checks.
    pub violations: usize,
}

/// Everything a scenario produces, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: Summary,
}

impl ScenarioOutput {
    pub fn table(&self, name: &str) -> Option<&[ReportRow]> {
        self.summary.tables.get(name).map(Vec::as_slice)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.summary.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    pub files: BTreeMap<String, String>,
}

/// Writes every output file, `summary.json` and `manifest.json` into `dir`.
pub fn write_outputs(out: &ScenarioOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = out.files.clone();
    files.insert("summary.json".into(), json_bytes(&out.summary)?);
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        hashes.insert(name.clone(), sha256_hex(bytes));
    }
    let manifest = Manifest {
        scenario: cfg.scenario,
        seed: cfg.seed,
        config_sha256: cfg.config_hash()?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: hashes,
    };
    fs::write(dir.join("manifest.json"), json_bytes(&manifest)?)?;
    Ok(manifest)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Runs the scenario named in the config.
pub fn execute(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    match cfg.scenario {
        Scenario::Lowpass => run_lowpass(cfg),
        Scenario::Denoise => run_denoise(cfg),
        Scenario::Interpolate => run_interpolate(cfg, None),
        Scenario::BoundsAudit => run_bounds_audit(cfg),
    }
}

struct Setup {
    graph: Graph,
    shift: ShiftOperator,
    dec: SpectralDecomposition,
}

impl Setup {
    fn from_graph(graph: Graph, kind: ShiftKind) -> Result<Self> {
        let shift = graphs::build_shift(&graph, kind, None)?;
        let dec = graphs::eigendecompose(&shift)?;
        Ok(Self { graph, shift, dec })
    }
}

/// Builds the graph described by the config.
pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    match &cfg.graph {
        GraphSpec::RandomGeometric {
            nodes,
            side,
            radius,
            seed,
        } => graphs::random_geometric(*nodes, *side, *radius, seed.unwrap_or(cfg.seed)),
        GraphSpec::Csv {
            nodes,
            edges,
            coords,
        } => {
            let g = Graph::read_edge_csv(*nodes, File::open(edges)?)?;
            match coords {
                Some(c) => g.with_coords(graphs::read_coords_csv(File::open(c)?)?),
                None => Ok(g),
            }
        }
        GraphSpec::Knn { coords, k } => {
            graphs::knn_graph(&graphs::read_coords_csv(File::open(coords)?)?, *k)
        }
    }
}

/// Unit-spectrum input `U 𝟏 / √N`.
fn white_input(dec: &SpectralDecomposition) -> Result<Vec<f64>> {
    let n = dec.size();
    dec.igft(&vec![1.0 / (n as f64).sqrt(); n])
}

fn heat(tau: f64, k: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(k + 1);
    let mut v = 1.0;
    for j in 0..=k {
        if j > 0 {
            v *= tau / j as f64;
        }
        phi.push(v);
    }
    phi
}

fn truncated(c: &FirCoefficients, t: usize) -> FirCoefficients {
    FirCoefficients::new(c.phi()[..=t.min(c.order())].to_vec()).expect("non-empty prefix")
}

#[derive(Debug, Clone)]
struct Sample {
    nse: f64,
    trajectory: Vec<f64>,
    bits: Option<f64>,
    saturations: u64,
}

impl Sample {
    fn plain(nse: f64) -> Self {
        Self {
            nse,
            trajectory: Vec::new(),
            bits: None,
            saturations: 0,
        }
    }

    fn from_run(nse: f64, trajectory: Vec<f64>, run: &FilterRun) -> Self {
        Self {
            nse,
            trajectory,
            bits: Some(run.ledger.total_bits as f64),
            saturations: run.ledger.saturation_events,
        }
    }
}

struct Stats {
    nse: MeanEstimate,
    trajectory: Vec<MeanEstimate>,
    bits: Option<f64>,
    saturations: u64,
}

impl Stats {
    fn row(&self, axis: f64, bound: Option<f64>) -> ReportRow {
        ReportRow {
            axis,
            nse_mean: self.nse.mean,
            nse_ci: self.nse.halfwidth,
            bound,
            bits_total: self.bits,
        }
    }

    fn trajectory_rows(&self, first: usize) -> Vec<ReportRow> {
        self.trajectory
            .iter()
            .enumerate()
            .map(|(i, e)| ReportRow {
                axis: (first + i) as f64,
                nse_mean: e.mean,
                nse_ci: e.halfwidth,
                bound: None,
                bits_total: None,
            })
            .collect()
    }
}

fn check_nse(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} NSE ({v})")))
    }
}

fn aggregate(trials: &[Vec<Sample>], variants: usize) -> Result<Vec<Stats>> {
    (0..variants)
        .map(|v| {
            let col: Vec<&Sample> = trials.iter().map(|t| &t[v]).collect();
            let nses: Vec<f64> = col.iter().map(|s| s.nse).collect();
            for &x in &nses {
                check_nse(x, "trial")?;
            }
            let len = col[0].trajectory.len();
            let trajectory = (0..len)
                .map(|t| {
                    let c: Vec<f64> = col.iter().map(|s| s.trajectory[t]).collect();
                    for &x in &c {
                        check_nse(x, "trajectory")?;
                    }
                    Ok(MeanEstimate::from_samples(&c))
                })
                .collect::<Result<Vec<_>>>()?;
            let bits = col
                .iter()
                .map(|s| s.bits)
                .collect::<Option<Vec<f64>>>()
                .map(|b| b.iter().sum::<f64>() / b.len() as f64);
            Ok(Stats {
                nse: MeanEstimate::from_samples(&nses),
                trajectory,
                bits,
                saturations: col.iter().map(|s| s.saturations).sum(),
            })
        })
        .collect()
}

#[derive(Default)]
struct Report {
    files: BTreeMap<String, Vec<u8>>,
    tables: BTreeMap<String, Vec<ReportRow>>,
    checks: Vec<Check>,
    saturations: u64,
}

impl Report {
    fn table(&mut self, name: String, rows: Vec<ReportRow>) -> Result<()> {
        self.files.insert(format!("{name}.csv"), table_csv(&rows)?);
        self.tables.insert(name, rows);
        Ok(())
    }

    fn trajectory(&mut self, name: String, rows: &[ReportRow]) -> Result<()> {
        self.files.insert(format!("{name}.csv"), table_csv(rows)?);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: String, v: &T) -> Result<()> {
        self.files.insert(name, json_bytes(v)?);
        Ok(())
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, gating: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            gating,
            detail,
        });
    }

    fn finish(self, cfg: &ExperimentConfig, nodes: usize) -> ScenarioOutput {
        let violations = self.checks.iter().filter(|c| c.gating && !c.passed).count();
        ScenarioOutput {
            files: self.files,
            summary: Summary {
                scenario: cfg.scenario,
                seed: cfg.seed,
                trials: cfg.trials,
                iterations: cfg.iterations,
                nodes,
                shift: cfg.shift,
                axis: cfg.sweep.axis,
                values: cfg.sweep.values.clone(),
                tables: self.tables,
                checks: self.checks,
                saturation_events: self.saturations,
                violations,
            },
        }
    }
}

fn expect_scenario(cfg: &ExperimentConfig, sc: Scenario) -> Result<()> {
    cfg.validate()?;
    if cfg.scenario != sc {
        return Err(Error::Config(format!(
            "config describes {}, not {sc}",
            cfg.scenario
        )));
    }
    Ok(())
}

struct LowpassPoint {
    ls: FirCoefficients,
    constrained: DesignResult,
    fixed: StepsizeSchedule,
    dynamic: StepsizeSchedule,
}

struct LowpassSetup {
    setup: Setup,
    grid: Vec<f64>,
    cutoff: f64,
    x: Vec<f64>,
    y_ref: Vec<f64>,
}

impl LowpassSetup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.shift != ShiftKind::NormalizedLaplacian {
            return Err(Error::Config(
                "the low-pass scenario runs on the normalized Laplacian".into(),
            ));
        }
        let setup = Setup::from_graph(build_graph(cfg)?, cfg.shift)?;
        let dec = &setup.dec;
        let (lo, hi) = (dec.lambda_min(), dec.lambda_max());
        let cutoff = cfg.filter.cutoff.unwrap_or(0.5 * (lo + hi));
        let h = design::ideal_lowpass(cutoff);
        let x = white_input(dec)?;
        let shaped: Vec<f64> = dec
            .gft(&x)?
            .iter()
            .zip(&dec.eigvals)
            .map(|(v, &l)| v * h(l))
            .collect();
        let y_ref = dec.igft(&shaped)?;
        Ok(Self {
            grid: design::uniform_grid(lo, hi, design::DEFAULT_GRID_POINTS),
            cutoff,
            x,
            y_ref,
            setup,
        })
    }

    fn point(&self, cfg: &ExperimentConfig, pt: Point) -> Result<LowpassPoint> {
        let hi = self.setup.dec.lambda_max();
        let h = design::ideal_lowpass(self.cutoff);
        let fixed = cfg.fixed_schedule(pt.chi)?;
        let dynamic = cfg.decreasing_schedule(1.0 / hi, pt.chi)?;
        let ls = design::fir_ls_design(&h, pt.k, &self.grid)?;
        let mut dc = DesignConstraints::new(self.grid.clone(), dynamic.clone(), hi);
        dc.gamma = cfg.filter.gamma.unwrap_or(0.0);
        dc.epsilon = cfg.filter.epsilon.unwrap_or(f64::INFINITY);
        dc.chi = pt.chi;
        dc.range = Some(cfg.quantization.range_factor * linalg::norm2(&self.x));
        let constrained = design::fir_quantization_aware_design(&h, pt.k, &dc)?;
        Ok(LowpassPoint {
            ls,
            constrained,
            fixed,
            dynamic,
        })
    }
}

/// Ideal low-pass approximation with fixed, decreasing and design-constrained quantization.
///
/// Tables: `lowpass-exact` (no quantization), `lowpass-fixed`,
/// `lowpass-dynamic` and `lowpass-constrained`, one row per sweep value.
pub fn run_lowpass(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    expect_scenario(cfg, Scenario::Lowpass)?;
    let lp = LowpassSetup::new(cfg)?;
    let shift = &lp.setup.shift;
    const VARIANTS: [&str; 3] = ["fixed", "dynamic", "constrained"];
    let mut report = Report::default();
    let mut exact_rows = Vec::new();
    let mut rows = vec![Vec::new(); VARIANTS.len()];
    for (idx, &value) in cfg.sweep.values.iter().enumerate() {
        let pt = cfg.point(value);
        let lpp = lp.point(cfg, pt)?;
        report.json(format!("lowpass-design-{idx}.json"), &lpp.constrained)?;
        let constrained = lpp.constrained.fir().expect("FIR design").clone();
        if let Some(eps) = cfg.filter.epsilon {
            // The design constraint is linear in the coefficients; compare with the exact oracle.
            let r = cfg.quantization.range_factor * linalg::norm2(&lp.x);
            let variances: Vec<f64> = (0..constrained.order())
                .map(|k| noise_variance(lpp.dynamic.effective(k, r).delta))
                .collect();
            let mse =
                analysis::fir_mse_exact_with_variances(shift.matrix(), &constrained, &variances);
            report.check(
                format!("constrained-exact-mse-within-epsilon-{idx}"),
                mse <= eps * (1.0 + 1e-9),
                false,
                format!("exact quantization MSE {mse:e} vs epsilon {eps:e}"),
            );
        }
        let exact = analysis::nse(&filters::fir_apply(shift, &lpp.ls, &lp.x)?, &lp.y_ref)?;
        check_nse(exact, "unquantized low-pass")?;
        exact_rows.push(ReportRow {
            axis: value,
            nse_mean: exact,
            nse_ci: 0.0,
            bound: None,
            bits_total: None,
        });
        let range = cfg.fir_range(lp.setup.dec.spectral_norm() * (1.0 + graphs::RHO_MARGIN));
        let plans = [
            (&lpp.ls, &lpp.fixed),
            (&lpp.ls, &lpp.dynamic),
            (&constrained, &lpp.dynamic),
        ];
        let samples = analysis::run_trials(cfg.trials, cfg.seed, |_, rng| {
            let qseed: u64 = rng.random();
            plans
                .iter()
                .map(|(c, sched)| {
                    let run = filters::fir_apply_quantized(
                        shift,
                        c,
                        &lp.x,
                        &cfg.quantizer(sched, &range, qseed),
                    )?;
                    Ok(Sample::from_run(
                        analysis::nse(run.final_output(), &lp.y_ref)?,
                        Vec::new(),
                        &run,
                    ))
                })
                .collect()
        })?;
        for (v, st) in aggregate(&samples, VARIANTS.len())?.iter().enumerate() {
            rows[v].push(st.row(value, None));
            report.saturations += st.saturations;
        }
    }
    if let Some(i) = rows[1]
        .iter()
        .rposition(|r| r.axis == 15.0 && cfg.sweep.axis == SweepAxis::Order)
    {
        let (d, f) = (&rows[1][i], &rows[0][i]);
        report.check(
            "dynamic-not-worse-than-fixed-at-K15",
            d.nse_mean <= f.nse_mean,
            false,
            format!("dynamic {:e} vs fixed {:e}", d.nse_mean, f.nse_mean),
        );
    }
    report.table("lowpass-exact".into(), exact_rows)?;
    for (v, name) in VARIANTS.iter().enumerate() {
        report.table(format!("lowpass-{name}"), std::mem::take(&mut rows[v]))?;
    }
    Ok(report.finish(cfg, lp.setup.dec.size()))
}

struct DenoiseSetup {
    setup: Setup,
    arma: ArmaCoefficients,
    grid: Vec<f64>,
    clean: Vec<f64>,
    /// `(I + wS)⁻¹`
    inverse: Matrix,
}

struct DenoisePoint {
    model: Option<ResModel>,
    fixed: StepsizeSchedule,
    dynamic: StepsizeSchedule,
    ls: FirCoefficients,
    robust: Option<DesignResult>,
}

/// Smooth test signal on the three lowest graph frequencies, energy `N`.
fn smooth_signal(dec: &SpectralDecomposition) -> Result<Vec<f64>> {
    let n = dec.size();
    let b = 3.min(n);
    let mut xhat = vec![0.0; n];
    for v in xhat.iter_mut().take(b) {
        *v = (n as f64 / b as f64).sqrt();
    }
    dec.igft(&xhat)
}

impl DenoiseSetup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let setup = Setup::from_graph(build_graph(cfg)?, cfg.shift)?;
        let w = cfg.weight();
        let arma = design::tikhonov_arma1(w, &setup.shift)?;
        arma.check_stable(setup.shift.rho())?;
        let dec = &setup.dec;
        let inv: Vec<f64> = dec.eigvals.iter().map(|l| 1.0 / (1.0 + w * l)).collect();
        Ok(Self {
            grid: design::uniform_grid(
                dec.lambda_min(),
                dec.lambda_max(),
                design::DEFAULT_GRID_POINTS,
            ),
            clean: smooth_signal(dec)?,
            inverse: dec.reconstruct_with(&inv),
            arma,
            setup,
        })
    }

    fn point(&self, cfg: &ExperimentConfig, pt: Point) -> Result<DenoisePoint> {
        let model = cfg.res_model(&self.setup, pt.p)?;
        let bound = model.as_ref().map_or(self.setup.shift.rho(), |m| m.rho());
        let fixed = cfg.fixed_schedule(pt.chi)?;
        let dynamic = cfg.decreasing_schedule(self.arma.contraction(bound), pt.chi)?;
        let w = cfg.weight();
        let h = move |l: f64| 1.0 / (1.0 + w * l);
        let ls = design::fir_ls_design(&h, pt.k, &self.grid)?;
        let robust = match &model {
            Some(m) => {
                let n = self.setup.dec.size() as f64;
                let mut dc = DesignConstraints::new(
                    self.grid.clone(),
                    fixed.clone(),
                    self.setup.dec.lambda_max(),
                );
                dc.gamma = cfg.filter.gamma.unwrap_or(1.0);
                dc.chi = pt.chi;
                let energy = linalg::dot(&self.clean, &self.clean) + n * cfg.noise_variance;
                dc.range = Some(cfg.quantization.range_factor * energy.sqrt());
                Some(design::fir_robust_res_design(
                    &ls,
                    &self.setup.shift,
                    m,
                    &dc,
                )?)
            }
            None => None,
        };
        Ok(DenoisePoint {
            model,
            fixed,
            dynamic,
            ls,
            robust,
        })
    }
}

/// Tikhonov denoising with ARMA₁ (fixed and decreasing stepsize) and a fitted FIR filter.
///
/// On random graphs a robust FIR design is added. NSE is measured against
/// `(I + wS)⁻¹x` for each noisy input `x`.
pub fn run_denoise(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    expect_scenario(cfg, Scenario::Denoise)?;
    let ds = DenoiseSetup::new(cfg)?;
    let n = ds.setup.dec.size();
    let noise = Normal::new(0.0, cfg.noise_variance.sqrt())
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    const VARIANTS: [&str; 4] = ["arma-fixed", "arma-dynamic", "fir", "fir-robust"];
    let mut report = Report::default();
    let mut rows: Vec<Vec<ReportRow>> = vec![Vec::new(); VARIANTS.len()];
    for (idx, &value) in cfg.sweep.values.iter().enumerate() {
        let pt = cfg.point(value);
        let dp = ds.point(cfg, pt)?;
        if let Some(r) = &dp.robust {
            report.json(format!("denoise-robust-design-{idx}.json"), r)?;
        }
        let robust = dp.robust.as_ref().and_then(|r| r.fir()).cloned();
        let bound = dp.model.as_ref().map_or(ds.setup.shift.rho(), |m| m.rho());
        let arma_range = cfg.arma_range(&ds.arma, bound);
        let fir_range = cfg.fir_range(bound);
        let samples = analysis::run_trials(cfg.trials, cfg.seed, |_, rng| {
            let qseed: u64 = rng.random();
            let res_seed: u64 = rng.random();
            let x: Vec<f64> = ds.clean.iter().map(|v| v + noise.sample(rng)).collect();
            let y_ref = ds.inverse.matvec(&x);
            let source = match &dp.model {
                Some(m) => ShiftSource::Res {
                    model: m,
                    seed: res_seed,
                },
                None => ShiftSource::Static(&ds.setup.shift),
            };
            let mut out = Vec::with_capacity(VARIANTS.len());
            for sched in [&dp.fixed, &dp.dynamic] {
                let q = cfg.quantizer(sched, &arma_range, qseed);
                let run = filters::arma_run(source, &ds.arma, &x, cfg.iterations, Some(&q), None)?;
                let traj = run
                    .outputs
                    .iter()
                    .map(|y| analysis::nse(y, &y_ref))
                    .collect::<Result<Vec<_>>>()?;
                out.push(Sample::from_run(
                    *traj.last().expect("iterations >= 1"),
                    traj,
                    &run,
                ));
            }
            let shifts = dp
                .model
                .as_ref()
                .map(|m| filters::draw_shifts(m, pt.k, &mut analysis::substream(res_seed, 1)));
            for c in [Some(&dp.ls), robust.as_ref()] {
                let Some(c) = c else {
                    out.push(Sample::plain(0.0));
                    continue;
                };
                let q = cfg.quantizer(&dp.fixed, &fir_range, qseed);
                let run = match &shifts {
                    Some(sh) => filters::fir_apply_tv_quantized(sh, c, &x, &q)?,
                    None => filters::fir_apply_quantized(&ds.setup.shift, c, &x, &q)?,
                };
                out.push(Sample::from_run(
                    analysis::nse(run.final_output(), &y_ref)?,
                    Vec::new(),
                    &run,
                ));
            }
            Ok(out)
        })?;
        let stats = aggregate(&samples, VARIANTS.len())?;
        for (v, st) in stats.iter().enumerate() {
            if v == 3 && robust.is_none() {
                continue;
            }
            rows[v].push(st.row(value, None));
            report.saturations += st.saturations;
            if v < 2 {
                report.trajectory(
                    format!("denoise-{}-trajectory-{idx}", VARIANTS[v]),
                    &st.trajectory_rows(1),
                )?;
            }
        }
        if dp.model.is_none() && cfg.iterations >= 60 {
            let at60 = stats[1].trajectory[59].mean;
            report.check(
                format!("dynamic-below-1e-10-at-t60-{idx}"),
                at60 < 1e-10,
                false,
                format!("ARMA NSE at t = 60 is {at60:e}"),
            );
        }
    }
    let monotone_axis = matches!(cfg.sweep.axis, SweepAxis::Probability | SweepAxis::Bits);
    for (v, name) in VARIANTS.iter().enumerate() {
        let r = std::mem::take(&mut rows[v]);
        if r.is_empty() {
            continue;
        }
        if monotone_axis && r.len() > 1 {
            report.check(
                format!("{name}-nonincreasing-in-{}", cfg.sweep.axis.name()),
                nonincreasing_within_ci(&r),
                false,
                format!(
                    "means {:?}",
                    r.iter().map(|x| x.nse_mean).collect::<Vec<_>>()
                ),
            );
        }
        report.table(format!("denoise-{name}"), r)?;
    }
    Ok(report.finish(cfg, n))
}

/// Missing-data interpolation with ARMA₁ on `T + wS − I`.
///
/// Uses `data` when given, else the dataset named in the config, else a
/// synthetic smooth stand-in on the configured graph. Each trial wipes a
/// random subset of the observed values; NSE is measured over observed
/// ground-truth entries.
pub fn run_interpolate(
    cfg: &ExperimentConfig,
    data: Option<&DatasetBundle>,
) -> Result<ScenarioOutput> {
    expect_scenario(cfg, Scenario::Interpolate)?;
    let loaded;
    let (bundle, setup) = match (data, &cfg.dataset) {
        (Some(b), _) => {
            b.validate()?;
            let k = cfg.dataset.as_ref().map_or(DEFAULT_KNN, |d| d.k);
            (
                b,
                Setup::from_graph(graphs::knn_graph(&b.coords, k)?, cfg.shift)?,
            )
        }
        (None, Some(d)) => {
            loaded = DatasetBundle::load(d)?;
            let g = graphs::knn_graph(&loaded.coords, d.k)?;
            (&loaded, Setup::from_graph(g, cfg.shift)?)
        }
        (None, None) => {
            let setup = Setup::from_graph(build_graph(cfg)?, cfg.shift)?;
            let n = setup.graph.node_count();
            let coords = setup
                .graph
                .coords()
                .map(<[[f64; 2]]>::to_vec)
                .unwrap_or_else(|| (0..n).map(|i| [i as f64, 0.0]).collect());
            loaded = DatasetBundle::synthetic(&setup.dec, coords, 16, 3, cfg.seed)?;
            (&loaded, setup)
        }
    };
    let n = bundle.node_count();
    if setup.graph.node_count() != n {
        return Err(Error::Config("dataset and graph sizes differ".into()));
    }
    let w = cfg.weight();
    const VARIANTS: [&str; 4] = ["arma-fixed", "arma-dynamic", "steady-state", "zero-fill"];
    let mut report = Report::default();
    let mut rows: Vec<Vec<ReportRow>> = vec![Vec::new(); VARIANTS.len()];
    for (idx, &value) in cfg.sweep.values.iter().enumerate() {
        let pt = cfg.point(value);
        let fixed = cfg.fixed_schedule(pt.chi)?;
        let samples = analysis::run_trials(cfg.trials, cfg.seed, |i, rng| {
            let qseed: u64 = rng.random();
            let snap = i % bundle.snapshots();
            let truth = bundle.signals.column(snap);
            let known = bundle.mask_column(snap);
            let mut observed = known.clone();
            let mut idx: Vec<usize> = (0..n).filter(|&j| known[j]).collect();
            idx.shuffle(rng);
            let wipe =
                ((pt.missing * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
            for &j in &idx[..wipe] {
                observed[j] = false;
            }
            let xp: Vec<f64> = (0..n)
                .map(|j| if observed[j] { truth[j] } else { 0.0 })
                .collect();
            let (st, c) = design::interpolation_arma1(&observed, w, &setup.shift)?;
            let pick =
                |v: &[f64]| -> Vec<f64> { (0..n).filter(|&j| known[j]).map(|j| v[j]).collect() };
            let truth_k = pick(&truth);
            let score = |y: &[f64]| analysis::nse(&pick(y), &truth_k);
            let dynamic = cfg.decreasing_schedule(c.contraction(st.rho()), pt.chi)?;
            let mut out = Vec::with_capacity(VARIANTS.len());
            for sched in [&fixed, &dynamic] {
                let q = cfg.quantizer(sched, &cfg.arma_range(&c, st.rho()), qseed);
                let run = filters::arma_run(
                    ShiftSource::Static(&st),
                    &c,
                    &xp,
                    cfg.iterations,
                    Some(&q),
                    None,
                )?;
                let traj = run
                    .outputs
                    .iter()
                    .map(|y| score(y))
                    .collect::<Result<Vec<_>>>()?;
                out.push(Sample::from_run(
                    *traj.last().expect("iterations >= 1"),
                    traj,
                    &run,
                ));
            }
            out.push(Sample::plain(score(&filters::arma_steady_state(
                &st, &c, &xp,
            )?)?));
            out.push(Sample::plain(score(&xp)?));
            Ok(out)
        })?;
        for (v, s) in aggregate(&samples, VARIANTS.len())?.iter().enumerate() {
            rows[v].push(s.row(value, None));
            report.saturations += s.saturations;
            if v < 2 {
                report.trajectory(
                    format!("interpolate-{}-trajectory-{idx}", VARIANTS[v]),
                    &s.trajectory_rows(1),
                )?;
            }
        }
        let (arma, zero) = (rows[1][idx].nse_mean, rows[3][idx].nse_mean);
        if pt.missing > 0.0 {
            report.check(
                format!("arma-beats-zero-fill-{idx}"),
                arma < zero,
                false,
                format!("ARMA {arma:e} vs zero-fill {zero:e}"),
            );
        }
    }
    for (v, name) in VARIANTS.iter().enumerate() {
        let r = std::mem::take(&mut rows[v]);
        if cfg.sweep.axis == SweepAxis::MissingFraction && v < 3 && r.len() > 1 {
            report.check(
                format!("{name}-nondecreasing-in-missing-fraction"),
                nondecreasing_within_ci(&r),
                false,
                format!(
                    "means {:?}",
                    r.iter().map(|x| x.nse_mean).collect::<Vec<_>>()
                ),
            );
        }
        report.table(format!("interpolate-{name}"), r)?;
    }
    Ok(report.finish(cfg, n))
}

/// How an audit claim decides whether a row is violated.
enum Verdict {
    /// Monte Carlo above the upper bound beyond its halfwidth.
    Upper,
    /// Monte Carlo off the exact formula by more than [`EXACTNESS_SIGMAS`] standard errors.
    Exact,
}

fn row_violates(r: &MseRow, verdict: &Verdict) -> bool {
    match verdict {
        Verdict::Upper => r.violates_upper(),
        Verdict::Exact => match r.formula_value {
            Some(f) => {
                let se = r.mc_halfwidth / analysis::Z95;
                (r.mc_estimate - f).abs() > EXACTNESS_SIGMAS * se + 1e-15 * f.abs()
            }
            None => false,
        },
    }
}

struct ClaimInput<'a> {
    name: &'static str,
    idx: usize,
    value: f64,
    report: MseReport,
    verdict: Verdict,
    /// Last iteration compared against the bound.
    horizon: usize,
    /// Per-node energy of the unquantized output, for the NSE scale of the table row.
    reference_energy: f64,
    bits: f64,
    rows: &'a mut BTreeMap<&'static str, Vec<ReportRow>>,
}

fn record_claim(report: &mut Report, c: ClaimInput<'_>) -> Result<()> {
    let mut buf = Vec::new();
    c.report.write_csv(&mut buf)?;
    report
        .files
        .insert(format!("bounds-audit-{}-{}-report.csv", c.name, c.idx), buf);
    let checked: Vec<&MseRow> = c.report.rows.iter().filter(|r| r.t <= c.horizon).collect();
    let bad: Vec<usize> = checked
        .iter()
        .filter(|r| row_violates(r, &c.verdict))
        .map(|r| r.t)
        .collect();
    let last = checked
        .last()
        .copied()
        .or(c.report.rows.last())
        .expect("non-empty report");
    let scale = 1.0 / c.reference_energy;
    let beyond = c.report.rows.len() - checked.len();
    report.check(
        format!("{}-{}", c.name, c.idx),
        bad.is_empty(),
        true,
        format!(
            "{} = {}: {} rows checked up to t = {}, violations at {:?}{}",
            "axis",
            c.value,
            checked.len(),
            c.horizon,
            bad,
            if beyond > 0 {
                format!(", {beyond} later rows below floating point resolution")
            } else {
                String::new()
            }
        ),
    );
    c.rows.entry(c.name).or_default().push(ReportRow {
        axis: c.value,
        nse_mean: last.mc_estimate * scale,
        nse_ci: last.mc_halfwidth * scale,
        bound: last.bound_upper.or(last.formula_value).map(|b| b * scale),
        bits_total: Some(c.bits),
    });
    Ok(())
}

fn error_mse(run: &FilterRun) -> Vec<f64> {
    run.error_trajectory
        .as_ref()
        .expect("quantized run records errors")
        .iter()
        .map(|e| analysis::per_node_mse(e))
        .collect()
}

/// Bound-versus-simulation audit of the FIR and ARMA quantization MSE results.
///
/// Claims: exact fixed-step FIR MSE (`fir-fixed`), the decreasing-step FIR
/// bound (`fir-dynamic`, nonnegative coefficients and `λ_max > 1`), ARMA₁
/// fixed and decreasing bounds on the static graph, and with random links
/// the FIR bound and both ARMA₁ bounds (`fir-res`, `arma-res-fixed`,
/// `arma-res-dynamic`). Any gating check failing counts as a violation.
pub fn run_bounds_audit(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    expect_scenario(cfg, Scenario::BoundsAudit)?;
    if cfg.trials < 2 {
        return Err(Error::Config(
            "the bounds audit needs at least 2 trials".into(),
        ));
    }
    let setup = Setup::from_graph(build_graph(cfg)?, cfg.shift)?;
    let n = setup.dec.size();
    if n > AUDIT_MAX_NODES {
        return Err(Error::Config(format!(
            "bounds audit needs N <= {AUDIT_MAX_NODES}, got {n}"
        )));
    }
    let s = &setup.shift;
    let x = white_input(&setup.dec)?;
    let lmax = setup.dec.spectral_norm();
    let arma = design::tikhonov_arma1(cfg.weight(), s)?;
    let arma_ref = filters::arma_steady_state(s, &arma, &x)?;
    let arma_energy = analysis::per_node_mse(&arma_ref);
    let delta0 = cfg.delta0();
    let fir_range = cfg.fir_range(s.rho());
    let fq = |sched: &StepsizeSchedule, seed: u64| cfg.quantizer(sched, &fir_range, seed);
    let t_max = cfg.iterations;
    let mut report = Report::default();
    let mut rows: BTreeMap<&'static str, Vec<ReportRow>> = BTreeMap::new();
    let probe = |run: FilterRun| run.ledger.total_bits as f64;
    for (idx, &value) in cfg.sweep.values.iter().enumerate() {
        let pt = cfg.point(value);
        let phi = match &cfg.filter.phi {
            Some(p) => p.clone(),
            None => heat(cfg.filter.tau.unwrap_or(0.3), pt.k),
        };
        let c = FirCoefficients::new(phi)?;
        let k = c.order();
        let nonneg = c.phi()[1..].iter().all(|&v| v >= 0.0);
        let fir_energy = analysis::per_node_mse(&filters::fir_apply(s, &c, &x)?);
        let fixed = cfg.fixed_schedule(pt.chi)?;
        let sigma2 = noise_variance(delta0);
        let fir_seed = |q: &DitheredQuantizer| -> Result<f64> {
            Ok(probe(filters::fir_apply_quantized(s, &c, &x, q)?))
        };

        // Fixed-step FIR against the exact covariance formula.
        let rep = analysis::monte_carlo(cfg.trials, cfg.seed, |_, rng| {
            let run = filters::fir_apply_quantized(s, &c, &x, &fq(&fixed, rng.random()))?;
            Ok(error_mse(&run))
        })?
        .with_formula(|t| Some(analysis::fir_mse_exact(s, &truncated(&c, t), &fixed)));
        let mut printed = csv::Writer::from_writer(Vec::new());
        printed.write_record(["t", "printed", "exact", "relative_gap", "lower", "upper"])?;
        let mut sandwich = true;
        for t in 1..=k {
            let ct = truncated(&c, t);
            let pr = analysis::fir_mse_printed(&setup.dec, &ct, sigma2);
            let ex = analysis::fir_mse_exact(s, &ct, &fixed);
            let (lo, hi) = analysis::fir_mse_bounds_fixed(lmax, &ct, sigma2, n);
            if nonneg {
                let tol = 1e-12 * hi.abs().max(pr.abs());
                sandwich &= lo <= pr + tol && pr <= hi + tol;
            }
            let gap = if ex != 0.0 { (pr - ex) / ex } else { 0.0 };
            printed.write_record([
                t.to_string(),
                fmt_f64(pr),
                fmt_f64(ex),
                fmt_f64(gap),
                fmt_f64(lo),
                fmt_f64(hi),
            ])?;
        }
        report.files.insert(
            format!("bounds-audit-fir-fixed-printed-{idx}.csv"),
            printed
                .into_inner()
                .map_err(|e| Error::Io(e.into_error()))?,
        );
        if nonneg {
            report.check(
                format!("fir-fixed-sandwich-{idx}"),
                sandwich,
                true,
                "lower <= single-sum expression <= upper".into(),
            );
        }
        let bits = fir_seed(&fq(&fixed, 0))?;
        record_claim(
            &mut report,
            ClaimInput {
                name: "fir-fixed",
                idx,
                value,
                report: rep,
                verdict: Verdict::Exact,
                horizon: k,
                reference_energy: fir_energy,
                bits,
                rows: &mut rows,
            },
        )?;

        // Decreasing-step FIR bound.
        if nonneg && lmax > 1.0 {
            let dynamic = cfg.decreasing_schedule(1.0 / lmax, pt.chi)?;
            let rep = analysis::monte_carlo(cfg.trials, cfg.seed, |_, rng| {
                let run = filters::fir_apply_quantized(s, &c, &x, &fq(&dynamic, rng.random()))?;
                Ok(error_mse(&run))
            })?
            .with_formula(|t| Some(analysis::fir_mse_exact(s, &truncated(&c, t), &dynamic)))
            .with_bounds(
                |_| None,
                |t| analysis::fir_mse_bound_dynamic(lmax, &truncated(&c, t), delta0).ok(),
            );
            let bits = fir_seed(&fq(&dynamic, 0))?;
            record_claim(
                &mut report,
                ClaimInput {
                    name: "fir-dynamic",
                    idx,
                    value,
                    report: rep,
                    verdict: Verdict::Upper,
                    horizon: k,
                    reference_energy: fir_energy,
                    bits,
                    rows: &mut rows,
                },
            )?;
        } else {
            report.check(
                format!("fir-dynamic-{idx}"),
                true,
                false,
                format!("skipped: needs nonnegative coefficients and lambda_max > 1 (lambda_max = {lmax})"),
            );
        }

        // ARMA₁ on the static graph.
        let psi = arma.psi_max();
        let arma_claim = |report: &mut Report,
                          rows: &mut BTreeMap<&'static str, Vec<ReportRow>>,
                          name: &'static str,
                          source: ShiftSource<'_>,
                          setting: ArmaSetting,
                          dynamic: bool|
         -> Result<()> {
            let bound = source.bound();
            let sched = if dynamic {
                cfg.decreasing_schedule(arma.contraction(bound), pt.chi)?
            } else {
                fixed.clone()
            };
            let arma_range = cfg.arma_range(&arma, bound);
            let range = match &arma_range {
                RangePolicy::InputNorm { factor, .. } => factor * linalg::norm2(&x),
                _ => unreachable!("ARMA ranges scale with the input"),
            };
            let rep = analysis::monte_carlo(cfg.trials, cfg.seed, |_, rng| {
                let q = cfg.quantizer(&sched, &arma_range, rng.random());
                let src = match source {
                    ShiftSource::Res { model, .. } => ShiftSource::Res {
                        model,
                        seed: rng.random(),
                    },
                    st => st,
                };
                Ok(error_mse(&filters::arma_run(
                    src,
                    &arma,
                    &x,
                    t_max,
                    Some(&q),
                    None,
                )?))
            })?
            .offset(1)
            .with_bounds(
                |_| None,
                |t| {
                    if dynamic {
                        analysis::arma_mse_bound_dynamic(setting, 1, delta0, psi, bound, t).ok()
                    } else {
                        analysis::arma_mse_bound_fixed(setting, 1, sigma2, psi, bound, t).ok()
                    }
                },
            );
            let src0 = match source {
                ShiftSource::Res { model, .. } => ShiftSource::Res { model, seed: 0 },
                st => st,
            };
            let bits = probe(filters::arma_run(
                src0,
                &arma,
                &x,
                t_max,
                Some(&cfg.quantizer(&sched, &arma_range, 0)),
                None,
            )?);
            record_claim(
                report,
                ClaimInput {
                    name,
                    idx,
                    value,
                    report: rep,
                    verdict: Verdict::Upper,
                    horizon: analysis::resolvable_horizon(&sched, range, t_max),
                    reference_energy: arma_energy,
                    bits,
                    rows,
                },
            )
        };
        if let Some(m) = cfg.res_model(&setup, pt.p)? {
            let rep = analysis::monte_carlo(cfg.trials, cfg.seed, |_, rng| {
                let q = fq(&fixed, rng.random());
                let shifts = filters::draw_shifts(&m, k, rng);
                Ok(error_mse(&filters::fir_apply_tv_quantized(
                    &shifts, &c, &x, &q,
                )?))
            })?
            .with_bounds(
                |_| None,
                |t| {
                    Some(analysis::fir_res_mse_bound(
                        m.rho(),
                        &truncated(&c, t),
                        &fixed,
                    ))
                },
            );
            let bits = fir_seed(&fq(&fixed, 0))?;
            record_claim(
                &mut report,
                ClaimInput {
                    name: "fir-res",
                    idx,
                    value,
                    report: rep,
                    verdict: Verdict::Upper,
                    horizon: k,
                    reference_energy: fir_energy,
                    bits,
                    rows: &mut rows,
                },
            )?;
            let src = ShiftSource::Res { model: &m, seed: 0 };
            arma_claim(
                &mut report,
                &mut rows,
                "arma-res-fixed",
                src,
                ArmaSetting::Res,
                false,
            )?;
            arma_claim(
                &mut report,
                &mut rows,
                "arma-res-dynamic",
                src,
                ArmaSetting::Res,
                true,
            )?;
        }
        arma_claim(
            &mut report,
            &mut rows,
            "arma-fixed",
            ShiftSource::Static(s),
            ArmaSetting::Static,
            false,
        )?;
        arma_claim(
            &mut report,
            &mut rows,
            "arma-dynamic",
            ShiftSource::Static(s),
            ArmaSetting::Static,
            true,
        )?;
    }
    for (name, r) in rows {
        report.table(format!("bounds-audit-{name}"), r)?;
    }
    Ok(report.finish(cfg, n))
}

/// Coefficient designs of a low-pass or denoising config, one JSON file per sweep point.
pub fn run_design(cfg: &ExperimentConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let mut report = Report::default();
    let nodes = match cfg.scenario {
        Scenario::Lowpass => {
            let lp = LowpassSetup::new(cfg)?;
            for (idx, &value) in cfg.sweep.values.iter().enumerate() {
                let p = lp.point(cfg, cfg.point(value))?;
                report.json(format!("design-ls-{idx}.json"), &p.ls)?;
                report.json(format!("design-constrained-{idx}.json"), &p.constrained)?;
            }
            lp.setup.dec.size()
        }
        Scenario::Denoise => {
            let ds = DenoiseSetup::new(cfg)?;
            report.json("design-arma.json".into(), &ds.arma)?;
            for (idx, &value) in cfg.sweep.values.iter().enumerate() {
                let p = ds.point(cfg, cfg.point(value))?;
                report.json(format!("design-ls-{idx}.json"), &p.ls)?;
                if let Some(r) = &p.robust {
                    report.json(format!("design-robust-{idx}.json"), r)?;
                }
            }
            ds.setup.dec.size()
        }
        other => {
            return Err(Error::Config(format!(
                "coefficient design applies to lowpass and denoise configs, not {other}"
            )))
        }
    };
    Ok(report.finish(cfg, nodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_coefficients() {
        let phi = heat(0.5, 3);
        assert_eq!(phi[0], 1.0);
        assert!((phi[3] - 0.125 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_allows_one_overlapping_inversion() {
        let row = |m: f64, ci: f64| ReportRow {
            axis: 0.0,
            nse_mean: m,
            nse_ci: ci,
            bound: None,
            bits_total: None,
        };
        assert!(nonincreasing_within_ci(&[
            row(3.0, 0.1),
            row(2.0, 0.1),
            row(2.1, 0.2),
            row(1.0, 0.1)
        ]));
        assert!(!nonincreasing_within_ci(&[row(3.0, 0.1), row(4.0, 0.1)]));
        assert!(!nonincreasing_within_ci(&[
            row(3.0, 1.0),
            row(3.5, 1.0),
            row(3.0, 1.0),
            row(3.2, 1.0)
        ]));
        assert!(nondecreasing_within_ci(&[row(1.0, 0.1), row(2.0, 0.1)]));
    }

    #[test]
    fn sweep_axis_names_round_trip() {
        for a in [
            SweepAxis::Order,
            SweepAxis::Probability,
            SweepAxis::Bits,
            SweepAxis::MissingFraction,
        ] {
            assert_eq!(a.name().parse::<SweepAxis>().unwrap(), a);
        }
    }

    #[test]
    fn config_rejects_second_axis_and_unknown_scenario_axis() {
        let two = "scenario = 'denoise'\n[sweep]\naxis = 'p'\nvalues = [0.7]\ngrid = [1]\n";
        assert!(ExperimentConfig::from_toml_str(two).is_err());
        let wrong = ExperimentConfig::from_toml_str(
            "scenario = 'lowpass'\n[sweep]\naxis = 'p'\nvalues = [0.7]\n",
        )
        .unwrap();
        assert!(wrong.validate().is_err());
    }
}
