//! Problem files: JSON documents describing a chart, an ambient space,
//! reference data `(g, b)` and optionally an immersion.
//!
//! ```json
//! {
//!   "dimension": 2,
//!   "ambient": { "kappa": 0.0 },
//!   "chart": { "sizes": [32, 32], "ranges": [[0, 1], [0, 1]], "periodic": [false, false] },
//!   "reference": { "g": "builtin:cylinder", "b": { "constant": [[1, 0], [0, 0]] } },
//!   "immersion": "perturb:cylinder:0.1:0",
//!   "p": 2.0,
//!   "options": { "max_iters": 50 }
//! }
//! ```
//!
//! Per-node arrays follow the grid order: row-major in the multi-index
//! `(x, y)`, so `y` varies fastest. `ranges` and `periodic` default to the
//! chart of the first builtin named in the file (immersion, then `g`, then
//! `b`), or to the unit square.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use shellrig_core::ambient::AmbientSpace;
use shellrig_core::chart::{ChartGrid, FormField, MetricField};
use shellrig_core::immersion::DiscreteImmersion;
use shellrig_core::scenarios::{perturb, Builtin};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub ambient: AmbientSpec,
    pub chart: ChartSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub immersion: Option<ImmersionSpec>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub options: Options,
}

fn default_dimension() -> usize {
    2
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientSpec {
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub ranges: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub g: TensorSpec,
    pub b: TensorSpec,
}

/// A symmetric tensor field: `"builtin:<name>"`, `{"constant": M}` or one
/// `d x d` matrix per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorSpec {
    Named(String),
    Constant { constant: Vec<Vec<f64>> },
    PerNode(Vec<Vec<Vec<f64>>>),
}

/// `"builtin:<name>"`, `"perturb:<builtin>:<amplitude>:<seed>"` or one
/// coordinate vector per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImmersionSpec {
    Named(String),
    PerNode(Vec<Vec<f64>>),
}

/// Command-specific settings; each command reads the fields it knows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    pub energy_max: Option<f64>,
    pub residual_max: Option<f64>,
    pub floor: Option<f64>,
    pub epsilon: Option<f64>,
    pub t_samples: Option<usize>,
    pub h_t: Option<f64>,
    pub bm_tol: Option<f64>,
    pub df_tol: Option<f64>,
    pub gram_tol: Option<f64>,
    pub c_cal: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol_energy: Option<f64>,
    pub tol_grad: Option<f64>,
    pub grad_step: Option<f64>,
    pub reference_immersion: Option<String>,
    pub expect_status: Option<String>,
    pub energy_min: Option<f64>,
    pub w1p_max: Option<f64>,
    pub normal_w1p_max: Option<f64>,
}

/// Input problem: message plus the offending field path when known.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub path: String,
    pub message: String,
}

impl InputError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for InputError {}

/// A resolved problem ready for the commands.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub grid: ChartGrid,
    pub space: AmbientSpace,
    pub g: MetricField,
    pub b: FormField,
    pub f: Option<DiscreteImmersion>,
}

impl Problem {
    pub fn immersion(&self) -> Result<&DiscreteImmersion, InputError> {
        self.f.as_ref().ok_or_else(|| InputError::new("immersion", "this command needs an immersion"))
    }

    /// The builtin immersion named by `spec`, on this problem's chart.
    pub fn named_immersion(&self, path: &str, spec: &str) -> Result<DiscreteImmersion, InputError> {
        immersion_from_name(path, spec, &self.grid, &self.space)
    }
}

pub fn parse(text: &str) -> Result<ProblemFile, InputError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        InputError::new(path, format!("{inner} (line {}, column {})", inner.line(), inner.column()))
    })
}

fn builtin_named(path: &str, name: &str) -> Result<Builtin, InputError> {
    Builtin::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = Builtin::ALL.iter().map(|b| b.name()).collect();
        InputError::new(path, format!("unknown builtin '{name}' (known: {})", known.join(", ")))
    })
}

fn builtin_of_tensor(spec: &TensorSpec) -> Option<&str> {
    match spec {
        TensorSpec::Named(s) => s.strip_prefix("builtin:"),
        _ => None,
    }
}

fn builtin_of_immersion(spec: &ImmersionSpec) -> Option<&str> {
    match spec {
        ImmersionSpec::Named(s) => s
            .strip_prefix("builtin:")
            .or_else(|| s.strip_prefix("perturb:").and_then(|r| r.split(':').next())),
        ImmersionSpec::PerNode(_) => None,
    }
}

fn to_matrix(path: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, InputError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(InputError::new(path, format!("expected a {d} x {d} matrix")));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(InputError::new(path, "matrix entries must be finite"));
    }
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(InputError::new(path, "matrix must be symmetric"));
    }
    Ok(m)
}

fn tensor_values(
    path: &str,
    spec: &TensorSpec,
    grid: &ChartGrid,
    builtin: impl Fn(Builtin, &[f64]) -> DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>, InputError> {
    let d = grid.d();
    match spec {
        TensorSpec::Named(s) => {
            let name = s
                .strip_prefix("builtin:")
                .ok_or_else(|| InputError::new(path, format!("expected \"builtin:<name>\", got \"{s}\"")))?;
            let b = builtin_named(path, name)?;
            Ok((0..grid.node_count()).map(|n| builtin(b, &grid.position(n))).collect())
        }
        TensorSpec::Constant { constant } => {
            let m = to_matrix(&format!("{path}.constant"), constant, d)?;
            Ok(vec![m; grid.node_count()])
        }
        TensorSpec::PerNode(nodes) => {
            if nodes.len() != grid.node_count() {
                return Err(InputError::new(
                    path,
                    format!("{} matrices for {} nodes", nodes.len(), grid.node_count()),
                ));
            }
            nodes.iter().enumerate().map(|(n, rows)| to_matrix(&format!("{path}[{n}]"), rows, d)).collect()
        }
    }
}

fn immersion_from_name(
    path: &str,
    spec: &str,
    grid: &ChartGrid,
    space: &AmbientSpace,
) -> Result<DiscreteImmersion, InputError> {
    let check_kappa = |b: Builtin| {
        if b.kappa() == space.kappa() {
            Ok(())
        } else {
            Err(InputError::new(
                path,
                format!("builtin '{}' lives in kappa = {}, ambient has kappa = {}", b.name(), b.kappa(), space.kappa()),
            ))
        }
    };
    let core = |e: shellrig_core::Error| InputError::new(path, e.to_string());
    if let Some(name) = spec.strip_prefix("builtin:") {
        let b = builtin_named(path, name)?;
        check_kappa(b)?;
        return b.immersion(grid).map_err(core);
    }
    if let Some(rest) = spec.strip_prefix("perturb:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(InputError::new(path, "expected \"perturb:<builtin>:<amplitude>:<seed>\""));
        }
        let b = builtin_named(path, parts[0])?;
        check_kappa(b)?;
        let amplitude: f64 =
            parts[1].parse().map_err(|_| InputError::new(path, format!("bad amplitude '{}'", parts[1])))?;
        let seed: u64 = parts[2].parse().map_err(|_| InputError::new(path, format!("bad seed '{}'", parts[2])))?;
        let base = b.immersion(grid).map_err(core)?;
        return perturb(&base, amplitude, seed).map_err(core);
    }
    Err(InputError::new(path, format!("expected \"builtin:<name>\" or \"perturb:<name>:<amplitude>:<seed>\", got \"{spec}\"")))
}

/// Validates a parsed file against its own chart and builds the fields.
pub fn resolve(file: ProblemFile) -> Result<Problem, InputError> {
    if file.dimension != 2 {
        return Err(InputError::new("dimension", format!("only d = 2 is supported, got {}", file.dimension)));
    }
    if !file.ambient.kappa.is_finite() {
        return Err(InputError::new("ambient.kappa", "kappa must be finite"));
    }
    if !(file.p >= 1.0 && file.p.is_finite()) {
        return Err(InputError::new("p", format!("p must satisfy p >= 1, got {}", file.p)));
    }
    let d = file.dimension;
    if file.chart.sizes.len() != d {
        return Err(InputError::new("chart.sizes", format!("expected {d} sizes")));
    }
    let named = file
        .immersion
        .as_ref()
        .and_then(builtin_of_immersion)
        .or_else(|| builtin_of_tensor(&file.reference.g))
        .or_else(|| builtin_of_tensor(&file.reference.b))
        .and_then(Builtin::from_name);
    let ranges = match &file.chart.ranges {
        Some(r) => r.clone(),
        None => named.map(|b| b.ranges().to_vec()).unwrap_or_else(|| vec![[0.0, 1.0]; d]),
    };
    let periodic = file.chart.periodic.clone().unwrap_or_else(|| vec![false; d]);
    let grid = ChartGrid::new(file.chart.sizes.clone(), ranges, periodic)
        .map_err(|e| InputError::new("chart", e.to_string()))?;
    let space =
        AmbientSpace::new(file.ambient.kappa, d + 1).map_err(|e| InputError::new("ambient", e.to_string()))?;
    let g_vals = tensor_values("reference.g", &file.reference.g, &grid, |b, x| b.metric(x))?;
    for (n, m) in g_vals.iter().enumerate() {
        if m.clone().cholesky().is_none() {
            return Err(InputError::new(format!("reference.g[{n}]"), "metric must be positive definite"));
        }
    }
    let b_vals = tensor_values("reference.b", &file.reference.b, &grid, |b, x| b.form(x))?;
    let g = MetricField::new(grid.clone(), g_vals).map_err(|e| InputError::new("reference.g", e.to_string()))?;
    let b = FormField::new(grid.clone(), b_vals).map_err(|e| InputError::new("reference.b", e.to_string()))?;
    let f = match &file.immersion {
        None => None,
        Some(ImmersionSpec::Named(s)) => Some(immersion_from_name("immersion", s, &grid, &space)?),
        Some(ImmersionSpec::PerNode(nodes)) => {
            if nodes.len() != grid.node_count() {
                return Err(InputError::new(
                    "immersion",
                    format!("{} points for {} nodes", nodes.len(), grid.node_count()),
                ));
            }
            let len = space.coord_len();
            let mut points = Vec::with_capacity(nodes.len());
            for (n, c) in nodes.iter().enumerate() {
                if c.len() != len || c.iter().any(|v| !v.is_finite()) {
                    return Err(InputError::new(format!("immersion[{n}]"), format!("expected {len} finite coordinates")));
                }
                points.push(DVector::from_column_slice(c));
            }
            Some(
                DiscreteImmersion::new(grid.clone(), space, points)
                    .map_err(|e| InputError::new("immersion", e.to_string()))?,
            )
        }
    };
    Ok(Problem { file, grid, space, g, b, f })
}

pub fn load(text: &str) -> Result<Problem, InputError> {
    resolve(parse(text)?)
}
