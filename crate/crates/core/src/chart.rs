//! Single rectangular chart of the reference manifold, tensor fields on its
//! nodes, and second-order finite-difference calculus.
//!
//! Nodes are stored row-major with the last axis fastest, so for `d = 2` the
//! node `(i, j)` lives at `i * n_y + j`.

use std::ops::{Add, Mul};

use nalgebra::DMatrix;

use crate::{par, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChartGrid {
    sizes: Vec<usize>,
    ranges: Vec<[f64; 2]>,
    periodic: Vec<bool>,
}

impl ChartGrid {
    pub fn new(sizes: Vec<usize>, ranges: Vec<[f64; 2]>, periodic: Vec<bool>) -> Result<Self> {
        let d = sizes.len();
        if !(1..=2).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if ranges.len() != d || periodic.len() != d {
            return Err(Error::Invalid("sizes, ranges and periodic must have one entry per axis".into()));
        }
        for (axis, (&n, r)) in sizes.iter().zip(&ranges).enumerate() {
            if n < 8 {
                return Err(Error::Invalid(format!("axis {axis} has {n} nodes, need at least 8")));
            }
            if !(r[1] > r[0]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Invalid(format!("axis {axis} range must satisfy lo < hi")));
            }
        }
        Ok(Self { sizes, ranges, periodic })
    }

    /// `n x n` grid on `[0,1]^2`, non-periodic.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(vec![n, n], vec![[0.0, 1.0]; 2], vec![false; 2])
    }

    pub fn d(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn ranges(&self) -> &[[f64; 2]] {
        &self.ranges
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn node_count(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let [lo, hi] = self.ranges[axis];
        let n = self.sizes[axis] as f64;
        if self.periodic[axis] {
            (hi - lo) / n
        } else {
            (hi - lo) / (n - 1.0)
        }
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.sizes).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        let mut out = vec![0; self.d()];
        for axis in (0..self.d()).rev() {
            out[axis] = rest % self.sizes[axis];
            rest /= self.sizes[axis];
        }
        out
    }

    /// Parameter coordinates of a node.
    pub fn position(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.ranges[axis][0] + i as f64 * self.spacing(axis))
            .collect()
    }

    /// True when the node touches a non-periodic boundary.
    pub fn is_boundary(&self, node: usize) -> bool {
        self.multi_index(node)
            .iter()
            .enumerate()
            .any(|(axis, &i)| !self.periodic[axis] && (i == 0 || i + 1 == self.sizes[axis]))
    }

    /// Chebyshev distance (in nodes) to the nearest non-periodic boundary.
    pub fn boundary_depth(&self, node: usize) -> usize {
        self.multi_index(node)
            .iter()
            .enumerate()
            .filter(|&(axis, _)| !self.periodic[axis])
            .map(|(axis, &i)| i.min(self.sizes[axis] - 1 - i))
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Three-point first-derivative stencil at `node` along `axis`.
    pub fn stencil(&self, node: usize, axis: usize) -> [(usize, f64); 3] {
        let mut multi = self.multi_index(node);
        let n = self.sizes[axis];
        let i = multi[axis];
        let h = self.spacing(axis);
        let (offsets, weights): ([isize; 3], [f64; 3]) = if self.periodic[axis] || (i > 0 && i + 1 < n) {
            ([-1, 0, 1], [-0.5, 0.0, 0.5])
        } else if i == 0 {
            ([0, 1, 2], [-1.5, 2.0, -0.5])
        } else {
            ([0, -1, -2], [1.5, -2.0, 0.5])
        };
        let mut out = [(0, 0.0); 3];
        for k in 0..3 {
            let j = (i as isize + offsets[k]).rem_euclid(n as isize) as usize;
            multi[axis] = j;
            out[k] = (self.index(&multi), weights[k] / h);
        }
        out
    }

    /// Grid neighbours within Chebyshev radius `r` (wrapping periodic axes).
    pub fn neighbourhood(&self, node: usize, r: usize) -> Vec<usize> {
        let center = self.multi_index(node);
        let mut ranges: Vec<Vec<usize>> = Vec::with_capacity(self.d());
        for axis in 0..self.d() {
            let n = self.sizes[axis] as isize;
            let c = center[axis] as isize;
            let r = r as isize;
            let mut idx: Vec<usize> = if self.periodic[axis] {
                (c - r..=c + r).map(|j| j.rem_euclid(n) as usize).collect()
            } else {
                ((c - r).max(0)..=(c + r).min(n - 1)).map(|j| j as usize).collect()
            };
            idx.sort_unstable();
            idx.dedup();
            ranges.push(idx);
        }
        let mut out = vec![];
        let mut multi = vec![0; self.d()];
        fn rec(grid: &ChartGrid, ranges: &[Vec<usize>], axis: usize, multi: &mut Vec<usize>, out: &mut Vec<usize>) {
            if axis == ranges.len() {
                out.push(grid.index(multi));
                return;
            }
            for &j in &ranges[axis] {
                multi[axis] = j;
                rec(grid, ranges, axis + 1, multi, out);
            }
        }
        rec(self, &ranges, 0, &mut multi, &mut out);
        out
    }

    /// Partial derivative of a node field along `axis`.
    pub fn partial<T>(&self, field: &[T], axis: usize) -> Vec<T>
    where
        T: Clone + Send + Sync + Add<Output = T> + Mul<f64, Output = T>,
    {
        par::map(self.node_count(), |node| self.partial_at(field, node, axis))
    }

    pub fn partial_at<T>(&self, field: &[T], node: usize, axis: usize) -> T
    where
        T: Clone + Add<Output = T> + Mul<f64, Output = T>,
    {
        let [(a, wa), (b, wb), (c, wc)] = self.stencil(node, axis);
        field[a].clone() * wa + field[b].clone() * wb + field[c].clone() * wc
    }

    /// Second-derivative stencil along one axis: central in the interior,
    /// five-point one-sided at non-periodic boundaries.
    fn second_stencil(&self, node: usize, axis: usize) -> Vec<(usize, f64)> {
        const CLOSURE: [f64; 5] = [35.0 / 12.0, -104.0 / 12.0, 114.0 / 12.0, -56.0 / 12.0, 11.0 / 12.0];
        let mut multi = self.multi_index(node);
        let n = self.sizes[axis];
        let i = multi[axis];
        let h2 = self.spacing(axis).powi(2);
        let (offsets, weights): (&[isize], &[f64]) = if self.periodic[axis] || (i > 0 && i + 1 < n) {
            (&[-1, 0, 1], &[1.0, -2.0, 1.0])
        } else if i == 0 {
            (&[0, 1, 2, 3, 4], &CLOSURE)
        } else {
            (&[0, -1, -2, -3, -4], &CLOSURE)
        };
        offsets
            .iter()
            .zip(weights)
            .map(|(&o, &w)| {
                multi[axis] = (i as isize + o).rem_euclid(n as isize) as usize;
                (self.index(&multi), w / h2)
            })
            .collect()
    }

    /// Second partial derivative `d_a d_b` of a node field at one node.
    pub fn second_partial_at<T>(&self, field: &[T], node: usize, a: usize, b: usize) -> T
    where
        T: Clone + Add<Output = T> + Mul<f64, Output = T>,
    {
        let terms: Vec<(usize, f64)> = if a == b {
            self.second_stencil(node, a)
        } else {
            self.stencil(node, a)
                .iter()
                .flat_map(|&(m, wa)| self.stencil(m, b).map(|(k, wb)| (k, wa * wb)))
                .collect()
        };
        let mut it = terms.into_iter();
        let (k0, w0) = it.next().expect("stencils are non-empty");
        it.fold(field[k0].clone() * w0, |acc, (k, w)| acc + field[k].clone() * w)
    }

    /// Trapezoid quadrature weight of a node (product over axes).
    pub fn quadrature_weight(&self, node: usize) -> f64 {
        self.multi_index(node)
            .iter()
            .enumerate()
            .map(|(axis, &i)| {
                let h = self.spacing(axis);
                if !self.periodic[axis] && (i == 0 || i + 1 == self.sizes[axis]) {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.node_count() {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("field has {len} nodes, grid has {}", self.node_count())))
        }
    }
}

macro_rules! node_field {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            grid: ChartGrid,
            values: Vec<DMatrix<f64>>,
        }

        impl $name {
            pub fn grid(&self) -> &ChartGrid {
                &self.grid
            }

            pub fn values(&self) -> &[DMatrix<f64>] {
                &self.values
            }

            pub fn at(&self, node: usize) -> &DMatrix<f64> {
                &self.values[node]
            }

            pub fn into_values(self) -> Vec<DMatrix<f64>> {
                self.values
            }

            pub fn from_fn(grid: &ChartGrid, f: impl Fn(&[f64]) -> DMatrix<f64> + Sync) -> Result<Self> {
                let values = par::map(grid.node_count(), |node| f(&grid.position(node)));
                Self::new(grid.clone(), values)
            }

            pub fn constant(grid: &ChartGrid, m: DMatrix<f64>) -> Result<Self> {
                Self::new(grid.clone(), vec![m; grid.node_count()])
            }

            fn check_shape(grid: &ChartGrid, values: &[DMatrix<f64>]) -> Result<()> {
                grid.check_len(values.len())?;
                let d = grid.d();
                if let Some(node) = values.iter().position(|m| m.shape() != (d, d)) {
                    return Err(Error::GridMismatch(format!("node {node} is not a {d}x{d} matrix")));
                }
                Ok(())
            }
        }
    };
}

node_field!(
    /// Symmetric positive-definite metric components per node.
    MetricField
);
node_field!(
    /// Symmetric bilinear form per node.
    FormField
);
node_field!(
    /// Endomorphism of the tangent space per node.
    OperatorField
);

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

impl MetricField {
    pub fn new(grid: ChartGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::check_shape(&grid, &values)?;
        for (node, m) in values.iter().enumerate() {
            if asymmetry(m) > SYMMETRY_TOL * (1.0 + m.amax()) {
                return Err(Error::Invalid(format!("metric not symmetric at node {node}")));
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::DegenerateMetric(node));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn identity(grid: &ChartGrid) -> Self {
        let d = grid.d();
        Self { grid: grid.clone(), values: vec![DMatrix::identity(d, d); grid.node_count()] }
    }

    pub fn inverses(&self) -> Result<Vec<DMatrix<f64>>> {
        par::try_map(self.values.len(), |node| {
            self.values[node].clone().try_inverse().ok_or(Error::DegenerateMetric(node))
        })
    }
}

impl FormField {
    pub fn new(grid: ChartGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::check_shape(&grid, &values)?;
        for (node, m) in values.iter().enumerate() {
            if asymmetry(m) > SYMMETRY_TOL * (1.0 + m.amax()) {
                return Err(Error::Invalid(format!("form not symmetric at node {node}")));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &ChartGrid) -> Self {
        let d = grid.d();
        Self { grid: grid.clone(), values: vec![DMatrix::zeros(d, d); grid.node_count()] }
    }

    /// Wraps induced forms that are symmetric only up to discretization error.
    pub(crate) fn new_unchecked(grid: ChartGrid, values: Vec<DMatrix<f64>>) -> Self {
        Self { grid, values }
    }

    pub fn neg(&self) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|m| -m).collect() }
    }
}

impl OperatorField {
    pub fn new(grid: ChartGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::check_shape(&grid, &values)?;
        Ok(Self { grid, values })
    }
}

fn same_grid(a: &ChartGrid, b: &ChartGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch("fields live on different grids".into()))
    }
}

/// `S = g^{-1} b` per node.
pub fn shape_from_form(g: &MetricField, b: &FormField) -> Result<OperatorField> {
    same_grid(g.grid(), b.grid())?;
    let values = par::try_map(g.values.len(), |node| {
        g.values[node]
            .clone()
            .cholesky()
            .map(|c| c.solve(&b.values[node]))
            .ok_or(Error::DegenerateMetric(node))
    })?;
    OperatorField::new(g.grid.clone(), values)
}

/// Levi-Civita symbols `Gamma^k_{ij}` per node, stored at `k*d*d + i*d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelField {
    d: usize,
    values: Vec<Vec<f64>>,
}

impl ChristoffelField {
    pub fn get(&self, node: usize, k: usize, i: usize, j: usize) -> f64 {
        self.values[node][(k * self.d + i) * self.d + j]
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

/// Christoffel symbols from per-node metric components and their partials
/// `dg[l]` along each axis.
pub(crate) fn christoffel_from(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Vec<f64> {
    let d = ginv.nrows();
    let mut out = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += ginv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                }
                out[(k * d + i) * d + j] = 0.5 * s;
                out[(k * d + j) * d + i] = 0.5 * s;
            }
        }
    }
    out
}

pub fn christoffel(g: &MetricField) -> Result<ChristoffelField> {
    let grid = g.grid();
    let d = grid.d();
    let ginv = g.inverses()?;
    let dg: Vec<Vec<DMatrix<f64>>> = (0..d).map(|axis| grid.partial(g.values(), axis)).collect();
    let values = par::map(grid.node_count(), |node| {
        let local: Vec<DMatrix<f64>> = (0..d).map(|axis| dg[axis][node].clone()).collect();
        christoffel_from(&ginv[node], &local)
    });
    Ok(ChristoffelField { d, values })
}

/// Derivative `d_m Gamma^k_{ij}` from the metric, its inverse, and its first
/// and second partials (`dg[i]`, `ddg[m][i]`).
pub(crate) fn christoffel_derivative(
    ginv: &DMatrix<f64>,
    dg: &[DMatrix<f64>],
    ddg: &[Vec<DMatrix<f64>>],
    m: usize,
) -> Vec<f64> {
    let d = ginv.nrows();
    let dginv = -(ginv * &dg[m] * ginv);
    let mut out = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    let first = dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)];
                    let second = ddg[m][i][(l, j)] + ddg[m][j][(l, i)] - ddg[m][l][(i, j)];
                    s += dginv[(k, l)] * first + ginv[(k, l)] * second;
                }
                out[(k * d + i) * d + j] = 0.5 * s;
            }
        }
    }
    out
}

/// Sectional curvature of a two-dimensional metric, from the Riemann tensor
/// `R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{ce} Gamma^e_{db}
/// - Gamma^a_{de} Gamma^e_{cb}`. Derivatives of the symbols are expanded in
/// second partials of `g` so the stencil stays second order at boundaries.
pub fn gauss_curvature(g: &MetricField) -> Result<Vec<f64>> {
    let grid = g.grid();
    if grid.d() != 2 {
        return Err(Error::UnsupportedDimension(grid.d()));
    }
    let ginv = g.inverses()?;
    let idx = |k: usize, i: usize, j: usize| (k * 2 + i) * 2 + j;
    Ok(par::map(grid.node_count(), |node| {
        let gm = &g.values[node];
        let dg: Vec<DMatrix<f64>> = (0..2).map(|a| grid.partial_at(g.values(), node, a)).collect();
        let ddg: Vec<Vec<DMatrix<f64>>> = (0..2)
            .map(|a| (0..2).map(|b| grid.second_partial_at(g.values(), node, a, b)).collect())
            .collect();
        let gam = christoffel_from(&ginv[node], &dg);
        let dgam: Vec<Vec<f64>> = (0..2).map(|m| christoffel_derivative(&ginv[node], &dg, &ddg, m)).collect();
        // R^a_{bcd} with b = 1, c = 0, d = 1
        let riemann = |a: usize| {
            let (b, c, dd) = (1, 0, 1);
            let mut r = dgam[c][idx(a, dd, b)] - dgam[dd][idx(a, c, b)];
            for e in 0..2 {
                r += gam[idx(a, c, e)] * gam[idx(e, dd, b)] - gam[idx(a, dd, e)] * gam[idx(e, c, b)];
            }
            r
        };
        let r1212 = gm[(0, 0)] * riemann(0) + gm[(0, 1)] * riemann(1);
        r1212 / gm.determinant()
    }))
}

/// Trapezoid quadrature of `density * sqrt(det g)`.
pub fn integrate(density: &[f64], g: &MetricField) -> Result<f64> {
    let grid = g.grid();
    grid.check_len(density.len())?;
    let terms = par::map(grid.node_count(), |node| {
        density[node] * g.values[node].determinant().sqrt() * grid.quadrature_weight(node)
    });
    Ok(par::pairwise_sum(&terms))
}

/// Trapezoid quadrature of a plain density with respect to chart measure.
pub fn integrate_flat(grid: &ChartGrid, density: &[f64]) -> Result<f64> {
    grid.check_len(density.len())?;
    let terms: Vec<f64> = (0..grid.node_count()).map(|n| density[n] * grid.quadrature_weight(n)).collect();
    Ok(par::pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use std::f64::consts::PI;

    fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
        v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn grid_validation() {
        assert!(ChartGrid::new(vec![7, 8], vec![[0.0, 1.0]; 2], vec![false; 2]).is_err());
        assert!(ChartGrid::new(vec![8, 8], vec![[1.0, 1.0], [0.0, 1.0]], vec![false; 2]).is_err());
        let g = ChartGrid::new(vec![8, 10], vec![[0.0, 1.0], [0.0, 2.0]], vec![true, false]).unwrap();
        assert_abs_diff_eq!(g.spacing(0), 1.0 / 8.0);
        assert_abs_diff_eq!(g.spacing(1), 2.0 / 9.0);
        assert_eq!(g.index(&[2, 3]), 23);
        assert_eq!(g.multi_index(23), vec![2, 3]);
    }

    #[test]
    fn shape_from_form_examples() {
        let grid = ChartGrid::unit_square(8).unwrap();
        let g = MetricField::identity(&grid);
        let s = shape_from_form(&g, &FormField::zeros(&grid)).unwrap();
        assert!(s.values().iter().all(|m| m.amax() == 0.0));

        let b = FormField::constant(&grid, dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        let s = shape_from_form(&g, &b).unwrap();
        assert_eq!(s.at(5), &dmatrix![1.0, 0.0; 0.0, 0.0]);

        let g = MetricField::constant(&grid, dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        let b = FormField::constant(&grid, dmatrix![2.0, 0.0; 0.0, 3.0]).unwrap();
        let s = shape_from_form(&g, &b).unwrap();
        assert_abs_diff_eq!(s.at(0).clone(), dmatrix![0.5, 0.0; 0.0, 3.0], epsilon = 1e-15);
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let grid = ChartGrid::unit_square(8).unwrap();
        assert!(matches!(
            MetricField::constant(&grid, dmatrix![1.0, 0.0; 0.0, 0.0]),
            Err(Error::DegenerateMetric(0))
        ));
    }

    #[test]
    fn partial_derivative_examples() {
        let grid = ChartGrid::new(vec![64], vec![[0.0, 1.0]], vec![false]).unwrap();
        let c = vec![3.0; 64];
        assert_eq!(max_abs(grid.partial(&c, 0)), 0.0);
        let x: Vec<f64> = (0..64).map(|n| grid.position(n)[0]).collect();
        assert!(max_abs(grid.partial(&x, 0).into_iter().map(|v| v - 1.0)) <= 1e-12);

        let err = |n: usize| {
            let grid = ChartGrid::new(vec![n], vec![[0.0, 2.0]], vec![false]).unwrap();
            let f: Vec<f64> = (0..n).map(|k| grid.position(k)[0].sin()).collect();
            let df = grid.partial(&f, 0);
            max_abs((0..n).map(|k| df[k] - grid.position(k)[0].cos()))
        };
        let ratio = err(33) / err(65);
        assert!((3.5..4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn periodic_partial_wraps() {
        let grid = ChartGrid::new(vec![32], vec![[0.0, 2.0 * PI]], vec![true]).unwrap();
        let f: Vec<f64> = (0..32).map(|k| grid.position(k)[0].sin()).collect();
        let df = grid.partial(&f, 0);
        let h = grid.spacing(0);
        // central difference of sin is exactly cos(x) sin(h)/h
        for k in 0..32 {
            assert_abs_diff_eq!(df[k], grid.position(k)[0].cos() * h.sin() / h, epsilon = 1e-13);
        }
    }

    fn polar_grid(n: usize) -> ChartGrid {
        ChartGrid::new(vec![n, n], vec![[1.0, 2.0], [0.0, 1.0]], vec![false; 2]).unwrap()
    }

    #[test]
    fn christoffel_examples() {
        let grid = ChartGrid::unit_square(8).unwrap();
        let gamma = christoffel(&MetricField::identity(&grid)).unwrap();
        assert!(gamma.values.iter().all(|v| max_abs(v.iter().copied()) == 0.0));

        let err = |n: usize| {
            let grid = polar_grid(n);
            let g = MetricField::from_fn(&grid, |x| dmatrix![1.0, 0.0; 0.0, x[0] * x[0]]).unwrap();
            let gamma = christoffel(&g).unwrap();
            max_abs((0..grid.node_count()).flat_map(|node| {
                let r = grid.position(node)[0];
                [gamma.get(node, 0, 1, 1) + r, gamma.get(node, 1, 0, 1) - 1.0 / r, gamma.get(node, 1, 1, 0) - 1.0 / r]
            }))
        };
        let (e1, e2) = (err(16), err(32));
        // quadratic metric components are differentiated exactly
        assert!(e1 < 1e-12 && e2 < 1e-12, "{e1} {e2}");
    }

    #[test]
    fn christoffel_of_round_sphere() {
        let grid = ChartGrid::new(vec![32, 32], vec![[0.6, 2.4], [0.0, 1.0]], vec![false; 2]).unwrap();
        let g = MetricField::from_fn(&grid, |x| dmatrix![1.0, 0.0; 0.0, x[0].sin().powi(2)]).unwrap();
        let gamma = christoffel(&g).unwrap();
        for node in 0..grid.node_count() {
            let th = grid.position(node)[0];
            assert_abs_diff_eq!(gamma.get(node, 0, 1, 1), -th.sin() * th.cos(), epsilon = 1e-2);
            assert_abs_diff_eq!(gamma.get(node, 1, 0, 1), th.cos() / th.sin(), epsilon = 1e-2);
            assert_eq!(gamma.get(node, 1, 0, 1), gamma.get(node, 1, 1, 0));
        }
    }

    #[test]
    fn gauss_curvature_examples() {
        let grid = ChartGrid::unit_square(16).unwrap();
        assert!(max_abs(gauss_curvature(&MetricField::identity(&grid)).unwrap()) < 1e-10);

        let grid = ChartGrid::new(vec![40, 40], vec![[0.6, 2.4], [0.0, 1.0]], vec![false; 2]).unwrap();
        let sphere = MetricField::from_fn(&grid, |x| dmatrix![1.0, 0.0; 0.0, x[0].sin().powi(2)]).unwrap();
        let k = gauss_curvature(&sphere).unwrap();
        assert!(max_abs(k.iter().map(|v| v - 1.0)) < 2e-2);

        let grid = ChartGrid::new(vec![40, 40], vec![[-1.0, 1.0], [0.0, 1.0]], vec![false; 2]).unwrap();
        let hyp = MetricField::from_fn(&grid, |x| dmatrix![1.0, 0.0; 0.0, x[0].cosh().powi(2)]).unwrap();
        let k = gauss_curvature(&hyp).unwrap();
        assert!(max_abs(k.iter().map(|v| v + 1.0)) < 2e-2);

        let polar = MetricField::from_fn(&polar_grid(40), |x| dmatrix![1.0, 0.0; 0.0, x[0] * x[0]]).unwrap();
        assert!(max_abs(gauss_curvature(&polar).unwrap()) < 2e-2);

        let line = ChartGrid::new(vec![8], vec![[0.0, 1.0]], vec![false]).unwrap();
        assert_eq!(gauss_curvature(&MetricField::identity(&line)), Err(Error::UnsupportedDimension(1)));
    }

    #[test]
    fn integrate_examples() {
        let grid = ChartGrid::unit_square(16).unwrap();
        let ones = vec![1.0; grid.node_count()];
        assert_abs_diff_eq!(integrate(&ones, &MetricField::identity(&grid)).unwrap(), 1.0, epsilon = 1e-14);
        let g = MetricField::constant(&grid, dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(integrate(&ones, &g).unwrap(), 2.0, epsilon = 1e-14);

        let grid = ChartGrid::unit_square(64).unwrap();
        let dens: Vec<f64> = (0..grid.node_count()).map(|n| (2.0 * PI * grid.position(n)[0]).sin().powi(2)).collect();
        assert_abs_diff_eq!(integrate(&dens, &MetricField::identity(&grid)).unwrap(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn integrate_converges_at_second_order() {
        let err = |n: usize| {
            let grid = ChartGrid::unit_square(n).unwrap();
            let dens: Vec<f64> = (0..grid.node_count())
                .map(|k| {
                    let x = grid.position(k);
                    (x[0] + 2.0 * x[1]).exp()
                })
                .collect();
            let exact = (1f64.exp() - 1.0) * (2f64.exp() - 1.0) / 2.0;
            (integrate(&dens, &MetricField::identity(&grid)).unwrap() - exact).abs()
        };
        let ratio = err(17) / err(33);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn metric_compatibility_of_christoffels() {
        // nabla_k g_ij = d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il
        let grid = polar_grid(32);
        let g = MetricField::from_fn(&grid, |x| {
            dmatrix![1.0 + x[1] * x[1], 0.3 * x[0]; 0.3 * x[0], x[0] * x[0]]
        })
        .unwrap();
        let gamma = christoffel(&g).unwrap();
        let mut worst: f64 = 0.0;
        for node in 0..grid.node_count() {
            let x = grid.position(node);
            let dg = [
                dmatrix![0.0, 0.3; 0.3, 2.0 * x[0]],
                dmatrix![2.0 * x[1], 0.0; 0.0, 0.0],
            ];
            let gm = g.at(node);
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut r = dg[k][(i, j)];
                        for l in 0..2 {
                            r -= gamma.get(node, l, k, i) * gm[(l, j)] + gamma.get(node, l, k, j) * gm[(i, l)];
                        }
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }
}
