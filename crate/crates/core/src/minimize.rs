//! Minimizing sequences of `E_p`.
//!
//! The iterate is moved node by node along `h`-orthonormal tangent frames
//! and retracted with `exp`. Each iteration builds the residual Jacobian by
//! central differences (nodes far enough apart are probed together), takes a
//! damped Gauss-Newton step restricted to a slice transverse to the rigid
//! motions, and accepts it by Armijo backtracking on `E_p`. For `p != 2` the
//! residuals are reweighted by `|R|^{(p-2)/2}` at the current iterate.

use nalgebra::{DMatrix, DVector};

use crate::ambient::AmbientSpace;
use crate::chart::{shape_from_form, ChartGrid, FormField, MetricField};
use crate::energy::{energy_p, normal_w1p_distance, node_residuals, orthonormal_chart_frame, w1p_distance_mod_translation, EnergyBreakdown};
use crate::immersion::{differential_at, nabla_normal_at, normal_at, DiscreteImmersion};
use crate::{par, Error, Result};

/// Chebyshev radius of the node set whose residuals a single node affects.
const DEP_RADIUS: usize = 4;
const MAX_LINE_SEARCH_FAILURES: usize = 60;
const BACKTRACK_STEPS: usize = 8;
const ARMIJO: f64 = 1e-4;
const PROBE_RETRIES: usize = 6;
/// Residual floor for the `p < 2` reweighting.
const IRLS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeConfig {
    pub p: f64,
    pub max_iters: usize,
    /// Finite-difference step for gradients and Jacobians.
    pub grad_step: f64,
    pub tol_energy: f64,
    pub tol_grad: f64,
    pub seed: u64,
    pub line_search: LineSearch,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            max_iters: 100,
            grad_step: 1e-6,
            tol_energy: 1e-9,
            tol_grad: 1e-9,
            seed: 0,
            line_search: LineSearch::Backtracking,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Invalid(format!("p must satisfy p >= 1, got {}", self.p)));
        }
        if self.max_iters < 1 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        for (name, v) in [("grad_step", self.grad_step), ("tol_energy", self.tol_energy), ("tol_grad", self.tol_grad)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Stalled,
    MaxIters,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Stalled => "stalled",
            Status::MaxIters => "max_iters",
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub stretching: f64,
    pub bending: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub w1p: Option<f64>,
    pub normal_w1p: Option<f64>,
    /// Largest pointwise `h`-length of the step that produced this iterate.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeTrace {
    pub rows: Vec<TraceRow>,
    pub status: Status,
    pub immersion: DiscreteImmersion,
}

impl MinimizeTrace {
    pub const CSV_HEADER: [&'static str; 8] =
        ["iteration", "stretching", "bending", "total", "grad_norm", "w1p", "normal_w1p", "step"];

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least the initial row")
    }

    pub fn final_energy(&self) -> f64 {
        self.last().total
    }
}

/// Radial (sphere) or Minkowski (hyperboloid) renormalization of every point.
pub fn project_to_model(space: &AmbientSpace, points: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    points
        .iter()
        .map(|x| {
            let defect = space.constraint_defect(x);
            if !(defect < 0.5) {
                return Err(Error::LeftModel(defect));
            }
            space.normalize_point(x)
        })
        .collect()
}

/// Fixed per-problem data: reference shape operators, `g`-orthonormal chart
/// frames and volume weights.
struct Objective<'a> {
    grid: &'a ChartGrid,
    space: AmbientSpace,
    s_ref: Vec<DMatrix<f64>>,
    chart_frames: Vec<DMatrix<f64>>,
    vol: Vec<f64>,
    qw: Vec<f64>,
    p: f64,
}

/// Residual blocks `(stretch, bend)` of one node, flattened column-major.
type NodeBlocks = (DVector<f64>, DVector<f64>);

impl<'a> Objective<'a> {
    fn new(f: &'a DiscreteImmersion, g: &MetricField, b: &FormField, p: f64) -> Result<Self> {
        if f.grid() != g.grid() || f.grid() != b.grid() {
            return Err(Error::GridMismatch("immersion and reference data live on different grids".into()));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Invalid(format!("p must satisfy p >= 1, got {p}")));
        }
        let grid = f.grid();
        let s = shape_from_form(g, b)?;
        let chart_frames = (0..grid.node_count()).map(|n| orthonormal_chart_frame(g.at(n), n)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            space: *f.space(),
            s_ref: s.into_values(),
            chart_frames,
            vol: (0..grid.node_count()).map(|n| g.at(n).determinant().sqrt()).collect(),
            qw: (0..grid.node_count()).map(|n| grid.quadrature_weight(n)).collect(),
            p,
        })
    }

    fn residuals(&self, points: &[DVector<f64>]) -> Result<Vec<NodeBlocks>> {
        let space = &self.space;
        let grid = self.grid;
        let df = par::try_map(grid.node_count(), |n| differential_at(space, grid, points, n))?;
        let normals = par::try_map(grid.node_count(), |n| normal_at(space, grid, &points[n], &df[n], n))?;
        par::try_map(grid.node_count(), |n| {
            let nabla = nabla_normal_at(space, grid, &points[n], &normals, n);
            let r = node_residuals(space, &points[n], &df[n], &nabla, &self.chart_frames[n], &self.s_ref[n], n)?;
            let flat = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
            Ok((flat(r.stretch), flat(r.bend)))
        })
    }

    fn pow(&self, sq: f64) -> f64 {
        if self.p == 2.0 {
            sq
        } else {
            sq.max(0.0).powf(0.5 * self.p)
        }
    }

    fn weighted(&self, n: usize, density: f64) -> f64 {
        density * self.vol[n] * self.qw[n]
    }

    fn densities(&self, res: &[NodeBlocks]) -> Vec<f64> {
        res.iter()
            .enumerate()
            .map(|(n, (s, b))| self.weighted(n, self.pow(s.norm_squared()) + self.pow(b.norm_squared())))
            .collect()
    }

    fn energy(&self, points: &[DVector<f64>]) -> Result<f64> {
        Ok(par::pairwise_sum(&self.densities(&self.residuals(points)?)))
    }
}

/// Per-axis colour of a grid index: equal colours are at least `period`
/// apart, also across a periodic seam.
fn axis_colour(i: usize, n: usize, period: usize, periodic: bool) -> usize {
    if !periodic || n.is_multiple_of(period) {
        return i % period;
    }
    let full = (n / period) * period;
    if i < full {
        i % period
    } else {
        period + (i - full)
    }
}

/// Node classes whose dependency windows are pairwise disjoint.
fn colour_classes(grid: &ChartGrid) -> Vec<Vec<usize>> {
    let period = 2 * DEP_RADIUS + 1;
    let mut classes: std::collections::BTreeMap<Vec<usize>, Vec<usize>> = Default::default();
    for node in 0..grid.node_count() {
        let key: Vec<usize> = grid
            .multi_index(node)
            .iter()
            .enumerate()
            .map(|(axis, &i)| axis_colour(i, grid.sizes()[axis], period, grid.periodic()[axis]))
            .collect();
        classes.entry(key).or_default().push(node);
    }
    classes.into_values().collect()
}

fn move_point(space: &AmbientSpace, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    space.exp_raw(x, v)
}

/// Runs `probe(eta)` and halves `eta` whenever it fails.
fn with_halving<T>(eta: f64, mut probe: impl FnMut(f64) -> Result<T>) -> Result<(T, f64)> {
    let mut step = eta;
    let mut last = Error::RankDeficient;
    for _ in 0..PROBE_RETRIES {
        match probe(step) {
            Ok(v) => return Ok((v, step)),
            Err(e) => last = e,
        }
        step *= 0.5;
    }
    Err(last)
}

/// Central-difference gradient of `E_p` with respect to node positions,
/// returned as an ambient tangent vector per node.
pub fn gradient(f: &DiscreteImmersion, g: &MetricField, b: &FormField, cfg: &MinimizeConfig) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    let obj = Objective::new(f, g, b, cfg.p)?;
    let space = f.space();
    let grid = f.grid();
    let points = f.points();
    let frames: Vec<DMatrix<f64>> = points.iter().map(|x| space.tangent_frame(x)).collect();
    let mut out: Vec<DVector<f64>> = points.iter().map(|x| DVector::zeros(x.len())).collect();
    for class in colour_classes(grid) {
        for k in 0..space.dim() {
            let probe = |eta: f64| {
                let shifted = |sign: f64| {
                    let mut pts = points.to_vec();
                    for &m in &class {
                        pts[m] = move_point(space, &points[m], &(frames[m].column(k) * (sign * eta)));
                    }
                    obj.residuals(&pts).map(|r| obj.densities(&r))
                };
                Ok::<_, Error>((shifted(1.0)?, shifted(-1.0)?))
            };
            let ((plus, minus), eta) = with_halving(cfg.grad_step, probe)?;
            for &m in &class {
                let diff: Vec<f64> = grid.neighbourhood(m, DEP_RADIUS).iter().map(|&n| plus[n] - minus[n]).collect();
                let d = par::pairwise_sum(&diff) / (2.0 * eta);
                out[m] += frames[m].column(k) * d;
            }
        }
    }
    Ok(out)
}

/// Sparse residual Jacobian: for every residual node, the frame-coordinate
/// dofs it depends on and the corresponding columns of its residual block.
/// `(dof, d stretch, d bend)`.
type JacobianEntry = (usize, DVector<f64>, DVector<f64>);

struct Jacobian {
    rows: Vec<Vec<JacobianEntry>>,
}

fn jacobian(obj: &Objective, points: &[DVector<f64>], frames: &[DMatrix<f64>], eta: f64) -> Result<Jacobian> {
    let grid = obj.grid;
    let space = &obj.space;
    let dim = space.dim();
    let mut rows: Vec<Vec<JacobianEntry>> = vec![vec![]; grid.node_count()];
    for class in colour_classes(grid) {
        for k in 0..dim {
            let probe = |eta: f64| {
                let shifted = |sign: f64| {
                    let mut pts = points.to_vec();
                    for &m in &class {
                        pts[m] = move_point(space, &points[m], &(frames[m].column(k) * (sign * eta)));
                    }
                    obj.residuals(&pts)
                };
                Ok::<_, Error>((shifted(1.0)?, shifted(-1.0)?))
            };
            let ((plus, minus), eta) = with_halving(eta, probe)?;
            for &m in &class {
                for n in grid.neighbourhood(m, DEP_RADIUS) {
                    let ds = (&plus[n].0 - &minus[n].0) / (2.0 * eta);
                    let db = (&plus[n].1 - &minus[n].1) / (2.0 * eta);
                    if ds.amax() > 0.0 || db.amax() > 0.0 {
                        rows[n].push((m * dim + k, ds, db));
                    }
                }
            }
        }
    }
    Ok(Jacobian { rows })
}

/// Symmetric positive definite matrix stored by its lower envelope.
struct Envelope {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Envelope {
    fn new(first: Vec<usize>) -> Self {
        let rows = first.iter().enumerate().map(|(i, &f)| vec![0.0; i - f + 1]).collect();
        Self { first, rows }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.rows[i][j - self.first[i]] += v;
    }

    fn diag(&self, i: usize) -> f64 {
        self.rows[i][i - self.first[i]]
    }

    /// In-place `L L^T` factorization; `None` when not positive definite.
    fn cholesky(mut self) -> Option<Self> {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let (head, tail) = self.rows.split_at_mut(i);
                let row_i = &tail[0];
                let row_j: &[f64] = if j < i { &head[j] } else { row_i };
                let dot: f64 = (start..j).map(|k| row_i[k - fi] * row_j[k - fj]).sum();
                let s = row_i[j - fi] - dot;
                if j < i {
                    let ljj = head[j][j - fj];
                    tail[0][j - fi] = s / ljj;
                } else {
                    if !(s > 0.0) {
                        return None;
                    }
                    tail[0][j - fi] = s.sqrt();
                }
            }
        }
        Some(self)
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = rhs.len();
        let mut y = rhs.clone();
        for i in 0..n {
            let fi = self.first[i];
            let s: f64 = (fi..i).map(|k| self.rows[i][k - fi] * y[k]).sum();
            y[i] = (y[i] - s) / self.rows[i][i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.rows[i][i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.rows[i][k - fi] * yi;
            }
        }
        y
    }
}

/// Normal equations `J^T W J` and right-hand side `J^T W r`.
struct Normal {
    matrix: Envelope,
    rhs: DVector<f64>,
}

fn irls_scale(p: f64, sq: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        sq.sqrt().max(IRLS_FLOOR).powf(p - 2.0)
    }
}

fn normal_equations(obj: &Objective, jac: &Jacobian, res: &[NodeBlocks], ndof: usize) -> Normal {
    let mut first: Vec<usize> = (0..ndof).collect();
    for row in &jac.rows {
        if let Some(lo) = row.iter().map(|c| c.0).min() {
            for c in row {
                first[c.0] = first[c.0].min(lo);
            }
        }
    }
    let mut matrix = Envelope::new(first);
    let mut rhs = DVector::zeros(ndof);
    for (n, row) in jac.rows.iter().enumerate() {
        let w = obj.vol[n] * obj.qw[n];
        let ws = w * irls_scale(obj.p, res[n].0.norm_squared());
        let wb = w * irls_scale(obj.p, res[n].1.norm_squared());
        for (a, (ia, sa, ba)) in row.iter().enumerate() {
            rhs[*ia] += ws * sa.dot(&res[n].0) + wb * ba.dot(&res[n].1);
            for (ib, sb, bb) in &row[..=a] {
                matrix.add(*ia, *ib, ws * sa.dot(sb) + wb * ba.dot(bb));
            }
        }
    }
    Normal { matrix, rhs }
}

/// Linear slice constraints `C delta = -c` against the rigid motions of the
/// starting configuration.
struct Gauge {
    rows: Vec<DVector<f64>>,
    values: Vec<f64>,
}

fn gauge(obj: &Objective, f0: &[DVector<f64>], points: &[DVector<f64>], frames: &[DMatrix<f64>]) -> Gauge {
    let space = &obj.space;
    let dim = space.dim();
    let killing: Vec<Vec<DVector<f64>>> = f0.iter().map(|x| space.killing_fields(x)).collect();
    let m = killing[0].len();
    let nn = points.len();
    let mut rows = vec![];
    let mut values = vec![];
    for i in 0..m {
        let mut row = DVector::zeros(nn * dim);
        let mut terms = Vec::with_capacity(nn);
        for n in 0..nn {
            let w = obj.vol[n] * obj.qw[n];
            let kf = &killing[n][i];
            for k in 0..dim {
                row[n * dim + k] = w * space.form(&frames[n].column(k).into_owned(), kf);
            }
            terms.push(w * space.form(&(&points[n] - &f0[n]), kf));
        }
        let scale = row.norm();
        if scale > 0.0 {
            rows.push(row / scale);
            values.push(par::pairwise_sum(&terms) / scale);
        }
    }
    Gauge { rows, values }
}

/// Damped Gauss-Newton step under the gauge constraints.
fn constrained_step(normal: &Normal, gauge: &Gauge, mu: f64) -> Option<DVector<f64>> {
    let n = normal.rhs.len();
    let max_diag = (0..n).map(|i| normal.matrix.diag(i)).fold(0.0, f64::max);
    let mut damped = Envelope { first: normal.matrix.first.clone(), rows: normal.matrix.rows.clone() };
    for i in 0..n {
        let d = normal.matrix.diag(i).max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
        damped.add(i, i, mu * d);
    }
    let chol = damped.cholesky()?;
    let y = chol.solve(&(-&normal.rhs));
    if gauge.rows.is_empty() {
        return Some(y);
    }
    let z: Vec<DVector<f64>> = gauge.rows.iter().map(|c| chol.solve(c)).collect();
    let m = gauge.rows.len();
    let schur = DMatrix::from_fn(m, m, |i, j| gauge.rows[i].dot(&z[j]));
    let rhs = DVector::from_fn(m, |i, _| gauge.rows[i].dot(&y) + gauge.values[i]);
    let lambda = schur.pseudo_inverse(1e-12).ok()? * rhs;
    let mut step = y;
    for j in 0..m {
        step -= &z[j] * lambda[j];
    }
    Some(step)
}

fn retract(space: &AmbientSpace, points: &[DVector<f64>], frames: &[DMatrix<f64>], delta: &DVector<f64>, alpha: f64) -> Result<(Vec<DVector<f64>>, f64)> {
    let dim = space.dim();
    let mut peak: f64 = 0.0;
    let moved = points
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let v = &frames[n] * delta.rows(n * dim, dim) * alpha;
            peak = peak.max(space.norm(&v));
            move_point(space, x, &v)
        })
        .collect::<Vec<_>>();
    Ok((project_to_model(space, &moved)?, peak))
}

fn record(
    f: &DiscreteImmersion,
    g: &MetricField,
    b: &FormField,
    p: f64,
    reference: Option<&DiscreteImmersion>,
    iteration: usize,
    grad_norm: f64,
    step: f64,
) -> Result<(TraceRow, EnergyBreakdown)> {
    let e = energy_p(f, g, b, p)?;
    let (w1p, normal_w1p) = match reference {
        Some(r) => (Some(w1p_distance_mod_translation(f, r, g, p)?), Some(normal_w1p_distance(f, r, g, p)?)),
        None => (None, None),
    };
    Ok((
        TraceRow { iteration, stretching: e.stretching, bending: e.bending, total: e.total, grad_norm, w1p, normal_w1p, step },
        e,
    ))
}

/// Drives `E_p` down from `f0`. With a reference immersion, every trace row
/// also records the translation-quotient `W^{1,p}` distance and the normal
/// field distance to it.
pub fn minimize(
    f0: &DiscreteImmersion,
    g: &MetricField,
    b: &FormField,
    cfg: &MinimizeConfig,
    reference: Option<&DiscreteImmersion>,
) -> Result<MinimizeTrace> {
    cfg.validate()?;
    if let Some(r) = reference {
        if r.grid() != f0.grid() || r.space() != f0.space() {
            return Err(Error::GridMismatch("reference immersion does not match the initial one".into()));
        }
    }
    let obj = Objective::new(f0, g, b, cfg.p)?;
    let space = *f0.space();
    let dim = space.dim();
    let start = f0.points().to_vec();
    let mut points = start.clone();
    let mut rows = vec![];
    let mut mu = 1e-4;
    let mut failures = 0;
    let mut step = 0.0;
    let mut iteration = 0;
    let status = loop {
        let current = f0.with_points(points.clone())?;
        let res = obj.residuals(&points)?;
        let energy = par::pairwise_sum(&obj.densities(&res));
        let frames: Vec<DMatrix<f64>> = points.iter().map(|x| space.tangent_frame(x)).collect();
        let jac = jacobian(&obj, &points, &frames, cfg.grad_step)?;
        let normal = normal_equations(&obj, &jac, &res, points.len() * dim);
        let grad = &normal.rhs * cfg.p;
        let grad_norm = grad.norm();
        rows.push(record(&current, g, b, cfg.p, reference, iteration, grad_norm, step)?.0);
        if energy <= cfg.tol_energy {
            break Status::Converged;
        }
        if grad_norm <= cfg.tol_grad {
            break Status::Stalled;
        }
        if iteration >= cfg.max_iters {
            break Status::MaxIters;
        }
        let gauge = gauge(&obj, &start, &points, &frames);
        let mut accepted = None;
        while accepted.is_none() && failures < MAX_LINE_SEARCH_FAILURES {
            if let Some(delta) = constrained_step(&normal, &gauge, mu) {
                let slope = grad.dot(&delta);
                let mut alpha = 1.0;
                for _ in 0..BACKTRACK_STEPS {
                    if slope < 0.0 {
                        if let Ok((trial, peak)) = retract(&space, &points, &frames, &delta, alpha) {
                            if let Ok(e) = obj.energy(&trial) {
                                if e <= energy + ARMIJO * alpha * slope {
                                    accepted = Some((trial, peak, alpha));
                                    break;
                                }
                            }
                        }
                    }
                    alpha *= 0.5;
                }
            }
            match &accepted {
                Some((_, _, alpha)) => {
                    failures = 0;
                    if *alpha == 1.0 {
                        mu = (mu / 3.0).max(1e-12);
                    }
                }
                None => {
                    failures += 1;
                    mu *= 10.0;
                }
            }
        }
        match accepted {
            Some((trial, peak, _)) => {
                points = trial;
                step = peak;
                iteration += 1;
            }
            None => break Status::Stalled,
        }
    };
    let immersion = f0.with_points(points)?;
    Ok(MinimizeTrace { rows, status, immersion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{perturb, random_tangent_field, Builtin};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn projection_examples() {
        let flat = AmbientSpace::new(0.0, 3).unwrap();
        let pts = vec![dvector![1.0, 2.0, 3.0]];
        assert_eq!(project_to_model(&flat, &pts).unwrap(), pts);

        let sphere = AmbientSpace::new(1.0, 2).unwrap();
        let out = project_to_model(&sphere, &[dvector![0.0, 0.0, 1.2]]).unwrap();
        assert_eq!(out[0], dvector![0.0, 0.0, 1.0]);
        assert!(matches!(project_to_model(&sphere, &[dvector![0.0, 0.0, 2.0]]), Err(Error::LeftModel(_))));

        let hyp = AmbientSpace::new(-1.0, 2).unwrap();
        let out = project_to_model(&hyp, &[dvector![1.0, 0.0, 2f64.sqrt() + 0.01]]).unwrap();
        assert_abs_diff_eq!(hyp.form(&out[0], &out[0]), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn colour_classes_are_separated() {
        for periodic in [false, true] {
            let grid = ChartGrid::new(vec![20, 13], vec![[0.0, 1.0]; 2], vec![periodic, periodic]).unwrap();
            let classes = colour_classes(&grid);
            assert_eq!(classes.iter().map(Vec::len).sum::<usize>(), grid.node_count());
            for class in &classes {
                for &a in class {
                    let window = grid.neighbourhood(a, DEP_RADIUS);
                    for &b in class {
                        if a != b {
                            assert!(grid.neighbourhood(b, DEP_RADIUS).iter().all(|n| !window.contains(n)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn envelope_cholesky_matches_dense() {
        let n = 7;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = 4.0 + i as f64;
            if i >= 2 {
                dense[(i, i - 2)] = 1.0;
                dense[(i - 2, i)] = 1.0;
            }
        }
        let mut env = Envelope::new((0..n).map(|i| i.saturating_sub(2)).collect());
        for i in 0..n {
            for j in i.saturating_sub(2)..=i {
                env.add(i, j, dense[(i, j)]);
            }
        }
        let rhs = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = env.cholesky().unwrap().solve(&rhs);
        assert_abs_diff_eq!(dense * x, rhs, epsilon = 1e-13);
    }

    #[test]
    fn gradient_vanishes_at_exact_solutions() {
        let s = Builtin::Plane.scenario(10).unwrap();
        let grad = gradient(&s.f, &s.g, &s.b, &MinimizeConfig::default()).unwrap();
        assert!(grad.iter().all(|v| v.norm() <= 1e-6));
    }

    #[test]
    fn gradient_shrinks_a_scaled_plane() {
        let grid = ChartGrid::unit_square(10).unwrap();
        let f = crate::immersion::DiscreteImmersion::from_fn(&grid, AmbientSpace::new(0.0, 3).unwrap(), |x| {
            dvector![1.1 * x[0], 1.1 * x[1], 0.0]
        })
        .unwrap();
        let grad = gradient(&f, &MetricField::identity(&grid), &FormField::zeros(&grid), &MinimizeConfig::default()).unwrap();
        let radial: f64 = (0..grid.node_count())
            .map(|n| {
                let x = &f.points()[n];
                grad[n].dot(&dvector![x[0] - 0.55, x[1] - 0.55, 0.0])
            })
            .sum();
        // the descent direction -grad contracts the sheet
        assert!(radial > 0.0);
    }

    #[test]
    fn gradient_matches_directional_differences() {
        for b in [Builtin::Cylinder, Builtin::EquatorBand] {
            let s = b.scenario(16).unwrap();
            let f = perturb(&s.f, 0.02, 3).unwrap();
            let cfg = MinimizeConfig::default();
            let grad = gradient(&f, &s.g, &s.b, &cfg).unwrap();
            let v = random_tangent_field(&f, 1.0, 11);
            let analytic: f64 = (0..grad.len()).map(|n| s.space.form(&grad[n], &v[n])).sum();
            let eta = 1e-5;
            let e = |sign: f64| {
                let pts: Vec<_> = f.points().iter().zip(&v).map(|(x, w)| s.space.exp_raw(x, &(w * (sign * eta)))).collect();
                energy_p(&f.with_points(pts).unwrap(), &s.g, &s.b, 2.0).unwrap().total
            };
            let fd = (e(1.0) - e(-1.0)) / (2.0 * eta);
            assert!(((analytic - fd) / fd).abs() <= 1e-4, "{}: {analytic} {fd}", b.name());
        }
    }

    #[test]
    fn exact_start_converges_immediately() {
        let s = Builtin::Plane.scenario(10).unwrap();
        let t = minimize(&s.f, &s.g, &s.b, &MinimizeConfig::default(), Some(&s.f)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.rows.len(), 1);
        assert!(t.final_energy() <= 1e-10);
        assert_eq!(t.rows[0].w1p, Some(0.0));
    }

    #[test]
    fn perturbed_cylinder_energy_decreases() {
        let s = Builtin::Cylinder.scenario(16).unwrap();
        let f0 = perturb(&s.f, 0.02, 0).unwrap();
        let cfg = MinimizeConfig { max_iters: 6, tol_energy: 1e-12, ..Default::default() };
        let t = minimize(&f0, &s.g, &s.b, &cfg, Some(&s.f)).unwrap();
        assert!(t.rows.windows(2).all(|w| w[1].total <= w[0].total));
        assert!(t.final_energy() < 1e-2 * t.rows[0].total, "{:?}", t.rows.iter().map(|r| r.total).collect::<Vec<_>>());
    }

    #[test]
    fn config_is_validated() {
        let s = Builtin::Plane.scenario(8).unwrap();
        let cfg = MinimizeConfig { p: 0.5, ..Default::default() };
        assert!(matches!(minimize(&s.f, &s.g, &s.b, &cfg, None), Err(Error::Invalid(_))));
        let cfg = MinimizeConfig { max_iters: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
