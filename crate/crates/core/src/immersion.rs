//! Discrete immersions of the chart into a model space and the objects they
//! induce: differential, unit normal, pullback metric, polar factor, shape
//! operator and second fundamental form.
//!
//! Linear maps `T_pM -> T_{f(p)}N` are `coord_len x d` matrices acting on
//! chart components and producing embedding coordinates.

use nalgebra::{DMatrix, DVector};

use crate::ambient::{AmbientPoint, AmbientSpace, Model};
use crate::chart::{ChartGrid, FormField, MetricField, OperatorField};
use crate::{par, Error, Result};

/// Smallest admissible singular value of `df`.
pub const RANK_TOL: f64 = 1e-8;
const CONSTRAINT_TOL: f64 = 1e-12;
/// Relative size of the part of `nabla n` that may fall outside `im df`.
const IMAGE_RESIDUAL_TOL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteImmersion {
    grid: ChartGrid,
    space: AmbientSpace,
    points: Vec<DVector<f64>>,
}

/// Polar decomposition data of `df` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFactor {
    /// `O(df)` acting on chart components.
    pub o: DMatrix<f64>,
    /// Singular values of `df` in `g`/`h`-orthonormal frames, ascending.
    pub singular_values: DVector<f64>,
    /// `dist_{g,h}(df, O(g,h))`.
    pub dist: f64,
}

/// Orthonormal frames at one node: columns of `chart` are `g`-orthonormal,
/// columns of `ambient` span `T_{f(p)}N` `h`-orthonormally.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub chart: DMatrix<f64>,
    pub ambient: DMatrix<f64>,
}

/// First-order geometry of an immersion, computed once per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub df: Vec<DMatrix<f64>>,
    pub normals: Vec<DVector<f64>>,
    pub pullback: Vec<DMatrix<f64>>,
}

impl DiscreteImmersion {
    pub fn new(grid: ChartGrid, space: AmbientSpace, points: Vec<DVector<f64>>) -> Result<Self> {
        if points.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} points for {} nodes",
                points.len(),
                grid.node_count()
            )));
        }
        if grid.d() + 1 != space.dim() {
            return Err(Error::Invalid(format!(
                "a {}-dimensional chart needs a {}-dimensional ambient space",
                grid.d(),
                grid.d() + 1
            )));
        }
        for p in &points {
            let defect = space.constraint_defect(p);
            if !(defect <= CONSTRAINT_TOL) {
                return Err(Error::OffModel(defect));
            }
        }
        Ok(Self { grid, space, points })
    }

    pub fn from_fn(
        grid: &ChartGrid,
        space: AmbientSpace,
        f: impl Fn(&[f64]) -> DVector<f64> + Sync,
    ) -> Result<Self> {
        let points = par::map(grid.node_count(), |node| f(&grid.position(node)));
        Self::new(grid.clone(), space, points)
    }

    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn space(&self) -> &AmbientSpace {
        &self.space
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, node: usize) -> AmbientPoint {
        AmbientPoint::new(self.points[node].clone())
    }

    pub fn with_points(&self, points: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(self.grid.clone(), self.space, points)
    }

    /// Differential, unit normal and pullback metric at every node.
    pub fn geometry(&self) -> Result<Geometry> {
        let per_node = par::try_map(self.grid.node_count(), |node| {
            let df = differential_at(&self.space, &self.grid, &self.points, node)?;
            let n = normal_at(&self.space, &self.grid, &self.points[node], &df, node)?;
            let pb = pullback_of(&self.space, &df);
            Ok::<_, Error>((df, n, pb))
        })?;
        let mut g = Geometry { df: vec![], normals: vec![], pullback: vec![] };
        for (df, n, pb) in per_node {
            g.df.push(df);
            g.normals.push(n);
            g.pullback.push(pb);
        }
        Ok(g)
    }

    pub fn differential(&self) -> Result<Vec<DMatrix<f64>>> {
        par::try_map(self.grid.node_count(), |node| {
            differential_at(&self.space, &self.grid, &self.points, node)
        })
    }

    pub fn unit_normal(&self) -> Result<Vec<DVector<f64>>> {
        Ok(self.geometry()?.normals)
    }

    pub fn pullback_metric(&self) -> Result<MetricField> {
        MetricField::new(self.grid.clone(), self.geometry()?.pullback)
    }

    /// `nabla_{d_a} n_f` for each chart axis `a`, as the columns of a
    /// `coord_len x d` matrix per node.
    pub fn normal_derivative(&self, normals: &[DVector<f64>]) -> Vec<DMatrix<f64>> {
        par::map(self.grid.node_count(), |node| {
            nabla_normal_at(&self.space, &self.grid, &self.points[node], normals, node)
        })
    }

    pub fn polar_factor(&self, g: &MetricField) -> Result<Vec<PolarFactor>> {
        same_grid(&self.grid, g.grid())?;
        let geo = self.geometry()?;
        par::try_map(self.grid.node_count(), |node| polar_at(&self.space, &geo.df[node], g.at(node)))
    }

    /// Positively oriented orthonormal frames for `g` and `h` at every node.
    pub fn frames(&self, g: &MetricField) -> Result<Vec<Frames>> {
        same_grid(&self.grid, g.grid())?;
        par::try_map(self.grid.node_count(), |node| {
            let l = cholesky_lower(g.at(node)).ok_or(Error::DegenerateMetric(node))?;
            let chart = l.transpose().try_inverse().ok_or(Error::DegenerateMetric(node))?;
            Ok(Frames { chart, ambient: self.space.tangent_frame(&self.points[node]) })
        })
    }

    /// `S_f = -df^{-1} nabla n_f`.
    pub fn shape_operator_of(&self) -> Result<OperatorField> {
        let geo = self.geometry()?;
        let values = self.shape_operators(&geo)?;
        OperatorField::new(self.grid.clone(), values)
    }

    pub(crate) fn shape_operators(&self, geo: &Geometry) -> Result<Vec<DMatrix<f64>>> {
        let nabla = self.normal_derivative(&geo.normals);
        par::try_map(self.grid.node_count(), |node| {
            shape_at(&self.space, &geo.df[node], &geo.pullback[node], &nabla[node], node)
        })
    }

    /// `b_f(X, Y) = (S_f X, Y)_{f*h}`; symmetric only up to discretization error.
    pub fn second_form_of(&self) -> Result<FormField> {
        let geo = self.geometry()?;
        let s = self.shape_operators(&geo)?;
        let values = (0..self.grid.node_count())
            .map(|node| s[node].transpose() * &geo.pullback[node])
            .collect();
        Ok(FormField::new_unchecked(self.grid.clone(), values))
    }
}

fn same_grid(a: &ChartGrid, b: &ChartGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch("immersion and field live on different grids".into()))
    }
}

fn node_error(grid: &ChartGrid, node: usize) -> Error {
    let m = grid.multi_index(node);
    Error::NotImmersion(m[0], m.get(1).copied().unwrap_or(0))
}

/// Tangent-projected finite differences of the point coordinates.
pub(crate) fn differential_at(
    space: &AmbientSpace,
    grid: &ChartGrid,
    points: &[DVector<f64>],
    node: usize,
) -> Result<DMatrix<f64>> {
    let d = grid.d();
    let p = &points[node];
    let mut df = DMatrix::zeros(p.len(), d);
    for axis in 0..d {
        let raw = grid.partial_at(points, node, axis);
        df.set_column(axis, &space.project_tangent(p, &raw));
    }
    let pb = pullback_of(space, &df);
    let min_eig = pb.symmetric_eigenvalues().min();
    if !(min_eig.max(0.0).sqrt() > RANK_TOL) {
        return Err(node_error(grid, node));
    }
    Ok(df)
}

pub(crate) fn pullback_of(space: &AmbientSpace, df: &DMatrix<f64>) -> DMatrix<f64> {
    let d = df.ncols();
    let cols: Vec<DVector<f64>> = (0..d).map(|i| df.column(i).into_owned()).collect();
    DMatrix::from_fn(d, d, |i, j| space.form(&cols[i], &cols[j]))
}

/// `h`-unit normal with `(df e_1, .., df e_d, n)` positively oriented.
pub(crate) fn normal_at(
    space: &AmbientSpace,
    grid: &ChartGrid,
    p: &DVector<f64>,
    df: &DMatrix<f64>,
    node: usize,
) -> Result<DVector<f64>> {
    let n = p.len();
    let d = df.ncols();
    let mut m = DMatrix::zeros(n, n);
    m.columns_mut(0, d).copy_from(df);
    if space.model() != Model::Flat {
        m.set_column(d, p);
    }
    let last = n - 1;
    let mut c = DVector::zeros(n);
    for k in 0..n {
        m.column_mut(last).fill(0.0);
        m[(k, last)] = 1.0;
        c[k] = m.determinant();
    }
    let mut normal = space.lower(&c);
    let len = space.norm(&normal);
    if !(len > 0.0) || !len.is_finite() {
        return Err(node_error(grid, node));
    }
    normal /= len;
    let mut frame = DMatrix::zeros(n, d + 1);
    frame.columns_mut(0, d).copy_from(df);
    frame.set_column(d, &normal);
    if space.orientation(p, &frame) < 0.0 {
        normal.neg_mut();
    }
    Ok(normal)
}

/// Covariant derivative of the normal field: tangent projection of its
/// coordinate derivative.
pub(crate) fn nabla_normal_at(
    space: &AmbientSpace,
    grid: &ChartGrid,
    p: &DVector<f64>,
    normals: &[DVector<f64>],
    node: usize,
) -> DMatrix<f64> {
    let d = grid.d();
    let mut out = DMatrix::zeros(p.len(), d);
    for axis in 0..d {
        let raw = grid.partial_at(normals, node, axis);
        out.set_column(axis, &space.project_tangent(p, &raw));
    }
    out
}

/// Least-squares `S_f = -(f*h)^{-1} df^T h nabla n` with an image guard.
pub(crate) fn shape_at(
    space: &AmbientSpace,
    df: &DMatrix<f64>,
    pullback: &DMatrix<f64>,
    nabla: &DMatrix<f64>,
    node: usize,
) -> Result<DMatrix<f64>> {
    let d = df.ncols();
    let lowered = DMatrix::from_fn(df.nrows(), d, |i, j| {
        if space.model() == Model::Hyperboloid && i + 1 == df.nrows() {
            -df[(i, j)]
        } else {
            df[(i, j)]
        }
    });
    let rhs = lowered.transpose() * nabla;
    let x = pullback.clone().cholesky().ok_or(Error::DegenerateMetric(node))?.solve(&rhs);
    let residual = nabla - df * &x;
    let scale = |m: &DMatrix<f64>| {
        (0..d).map(|j| space.form(&m.column(j).into_owned(), &m.column(j).into_owned())).sum::<f64>().max(0.0).sqrt()
    };
    if scale(&residual) > IMAGE_RESIDUAL_TOL * scale(nabla) + 1e-10 {
        return Err(Error::NormalLeavesImage(node));
    }
    Ok(-x)
}

/// Lower Cholesky factor `L` with `g = L L^T`.
pub(crate) fn cholesky_lower(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    g.clone().cholesky().map(|c| c.l())
}

/// Polar decomposition of `df` with respect to `g` and `h`.
pub(crate) fn polar_at(space: &AmbientSpace, df: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<PolarFactor> {
    let l = cholesky_lower(g).ok_or(Error::DegenerateMetric(0))?;
    let linv_t = l.transpose().try_inverse().ok_or(Error::DegenerateMetric(0))?;
    let b = df * &linv_t;
    let c = pullback_of(space, &b);
    let eig = c.symmetric_eigen();
    let lam = &eig.eigenvalues;
    if lam.min() <= RANK_TOL * RANK_TOL {
        return Err(Error::RankDeficient);
    }
    let inv_sqrt = DMatrix::from_diagonal(&lam.map(|x| 1.0 / x.sqrt()));
    let v = &eig.eigenvectors;
    let o_b = &b * v * inv_sqrt * v.transpose();
    let mut sigma: Vec<f64> = lam.iter().map(|x| x.sqrt()).collect();
    sigma.sort_by(f64::total_cmp);
    let dist = sigma.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>().sqrt();
    Ok(PolarFactor { o: o_b * l.transpose(), singular_values: DVector::from_vec(sigma), dist })
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn flat() -> AmbientSpace {
        AmbientSpace::new(0.0, 3).unwrap()
    }

    fn plane(n: usize) -> DiscreteImmersion {
        let grid = ChartGrid::unit_square(n).unwrap();
        DiscreteImmersion::from_fn(&grid, flat(), |x| dvector![x[0], x[1], 0.0]).unwrap()
    }

    fn cylinder(n: usize) -> DiscreteImmersion {
        let grid = ChartGrid::unit_square(n).unwrap();
        DiscreteImmersion::from_fn(&grid, flat(), |x| dvector![x[0].cos(), x[0].sin(), x[1]]).unwrap()
    }

    fn sphere_patch(n: usize) -> DiscreteImmersion {
        let c = std::f64::consts::FRAC_PI_2;
        let grid = ChartGrid::new(vec![n, n], vec![[c - 0.4, c + 0.4], [-0.4, 0.4]], vec![false; 2]).unwrap();
        DiscreteImmersion::from_fn(&grid, flat(), |x| {
            dvector![x[0].sin() * x[1].cos(), x[0].sin() * x[1].sin(), x[0].cos()]
        })
        .unwrap()
    }

    fn max_over<T>(v: &[T], f: impl Fn(usize, &T) -> f64) -> f64 {
        v.iter().enumerate().fold(0.0, |m, (i, x)| m.max(f(i, x)))
    }

    #[test]
    fn differential_examples() {
        let f = plane(16);
        let df = f.differential().unwrap();
        assert!(max_over(&df, |_, m| (m - dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0]).amax()) < 1e-13);

        let f = cylinder(32);
        let df = f.differential().unwrap();
        let err = max_over(&df, |node, m| {
            let x = f.grid().position(node)[0];
            (m - dmatrix![-x.sin(), 0.0; x.cos(), 0.0; 0.0, 1.0]).amax()
        });
        assert!(err < 1e-3, "{err}");

        let grid = ChartGrid::unit_square(8).unwrap();
        let constant = DiscreteImmersion::from_fn(&grid, flat(), |_| dvector![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(constant.differential(), Err(Error::NotImmersion(0, 0)));
    }

    #[test]
    fn normal_examples() {
        let n = plane(16).unit_normal().unwrap();
        assert!(n.iter().all(|v| (v - dvector![0.0, 0.0, 1.0]).amax() < 1e-15));

        let f = cylinder(32);
        let n = f.unit_normal().unwrap();
        let err = max_over(&n, |node, v| {
            let x = f.grid().position(node)[0];
            (v - dvector![x.cos(), x.sin(), 0.0]).amax()
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn swapping_chart_axes_flips_the_normal() {
        let grid = ChartGrid::unit_square(16).unwrap();
        let swapped = DiscreteImmersion::from_fn(&grid, flat(), |x| dvector![x[1], x[0], 0.0]).unwrap();
        let n = swapped.unit_normal().unwrap();
        assert!(n.iter().all(|v| (v - dvector![0.0, 0.0, -1.0]).amax() < 1e-15));
    }

    #[test]
    fn pullback_examples() {
        let g = plane(16).pullback_metric().unwrap();
        assert!(g.values().iter().all(|m| (m - DMatrix::identity(2, 2)).amax() < 1e-13));
        let f = cylinder(32);
        let g = f.pullback_metric().unwrap();
        assert!(max_over(g.values(), |_, m| (m - DMatrix::identity(2, 2)).amax()) < 2e-3);
        let grid = ChartGrid::unit_square(16).unwrap();
        let scaled = DiscreteImmersion::from_fn(&grid, flat(), |x| dvector![2.0 * x[0], 2.0 * x[1], 0.0]).unwrap();
        let g = scaled.pullback_metric().unwrap();
        assert!(g.values().iter().all(|m| (m - DMatrix::identity(2, 2) * 4.0).amax() < 1e-12));
    }

    #[test]
    fn polar_factor_examples() {
        let f = plane(16);
        let g = MetricField::identity(f.grid());
        let polar = f.polar_factor(&g).unwrap();
        assert!(polar.iter().all(|p| p.dist < 1e-13));
        let df = f.differential().unwrap();
        assert!((&polar[3].o - &df[3]).amax() < 1e-13);

        // singular values (2, 1)
        let space = flat();
        let df = dmatrix![2.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let p = polar_at(&space, &df, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(p.dist, 1.0, epsilon = 1e-14);
        let oto = p.o.transpose() * &p.o;
        assert_abs_diff_eq!(oto, DMatrix::identity(2, 2), epsilon = 1e-12);

        let grid = ChartGrid::unit_square(16).unwrap();
        let scaled = DiscreteImmersion::from_fn(&grid, flat(), |x| dvector![2.0 * x[0], 2.0 * x[1], 0.0]).unwrap();
        let polar = scaled.polar_factor(&MetricField::identity(&grid)).unwrap();
        assert!(polar.iter().all(|p| (p.dist - 2f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn polar_factor_respects_a_non_identity_metric() {
        let space = flat();
        let g = dmatrix![4.0, 1.0; 1.0, 2.0];
        let df = dmatrix![1.0, 0.3; -0.2, 1.5; 0.4, 0.1];
        let p = polar_at(&space, &df, &g).unwrap();
        // O^T h O = g
        assert_abs_diff_eq!(p.o.transpose() * &p.o, g, epsilon = 1e-12);
    }

    #[test]
    fn shape_operator_examples() {
        let s = plane(16).shape_operator_of().unwrap();
        assert!(s.values().iter().all(|m| m.amax() < 1e-13));

        let f = cylinder(32);
        let s = f.shape_operator_of().unwrap();
        let err = |min_depth: usize| {
            max_over(s.values(), |node, m| {
                if f.grid().boundary_depth(node) >= min_depth {
                    (m - dmatrix![-1.0, 0.0; 0.0, 0.0]).amax()
                } else {
                    0.0
                }
            })
        };
        // exact away from the one-sided boundary stencils
        assert!(err(2) < 1e-12, "{}", err(2));
        assert!(err(0) < 1e-3, "{}", err(0));

        let f = sphere_patch(32);
        let s = f.shape_operator_of().unwrap();
        let interior = |node: usize| f.grid().boundary_depth(node) >= 2;
        let err = max_over(s.values(), |node, m| if interior(node) { (m + DMatrix::identity(2, 2)).amax() } else { 0.0 });
        assert!(err < 1e-12, "{err}");
        let err = max_over(s.values(), |_, m| (m + DMatrix::identity(2, 2)).amax());
        assert!(err < 1e-3, "{err}");
        let b = f.second_form_of().unwrap();
        let g = f.pullback_metric().unwrap();
        let err = max_over(b.values(), |node, m| if interior(node) { (m + g.at(node)).amax() } else { 0.0 });
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn second_form_of_cylinder() {
        let b = cylinder(32).second_form_of().unwrap();
        let err = max_over(b.values(), |_, m| (m - dmatrix![-1.0, 0.0; 0.0, 0.0]).amax());
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn shape_operator_of_a_tilted_graph_is_self_adjoint_to_second_order() {
        let asym = |n: usize| {
            let grid = ChartGrid::unit_square(n).unwrap();
            let f = DiscreteImmersion::from_fn(&grid, flat(), |x| {
                dvector![x[0], x[1], 0.3 * (x[0] * 1.3 + 0.5 * x[1]).sin() + 0.2 * x[0] * x[1]]
            })
            .unwrap();
            let s = f.shape_operator_of().unwrap();
            let g = f.pullback_metric().unwrap();
            max_over(s.values(), |node, m| {
                let gs = g.at(node) * m;
                if f.grid().boundary_depth(node) >= n / 4 {
                    (&gs - gs.transpose()).amax()
                } else {
                    0.0
                }
            })
        };
        let (a, b) = (asym(17), asym(33));
        assert!(b < 1e-3 && a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn curved_models_give_tangent_unit_normals() {
        let sphere = AmbientSpace::new(1.0, 3).unwrap();
        let grid = ChartGrid::unit_square(12).unwrap();
        let f = DiscreteImmersion::from_fn(&grid, sphere, |x| {
            let v = dvector![0.3 * x[0], 0.2 * x[1] - 0.1, 0.1 * x[0] * x[1], 0.0];
            sphere.exp_raw(&sphere.origin().coords, &v)
        })
        .unwrap();
        let geo = f.geometry().unwrap();
        for node in 0..grid.node_count() {
            let n = &geo.normals[node];
            let p = &f.points()[node];
            assert_abs_diff_eq!(sphere.form(n, n), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sphere.form(n, p), 0.0, epsilon = 1e-12);
            for a in 0..2 {
                assert_abs_diff_eq!(sphere.form(n, &geo.df[node].column(a).into_owned()), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn off_model_points_are_rejected() {
        let sphere = AmbientSpace::new(1.0, 3).unwrap();
        let grid = ChartGrid::unit_square(8).unwrap();
        let r = DiscreteImmersion::from_fn(&grid, sphere, |x| dvector![x[0], x[1], 0.0, 2.0]);
        assert!(matches!(r, Err(Error::OffModel(_))));
    }
}
