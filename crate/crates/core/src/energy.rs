//! Stretching and bending energies and Sobolev-type distances between
//! immersions.
//!
//! All pointwise norms are frame-free: a linear map `A: T_pM -> T N` is
//! measured by `|A|^2 = tr(g^{-1} A^T h A)`, which equals the Frobenius norm
//! of its matrix in any pair of orthonormal frames.

use nalgebra::{DMatrix, DVector};

use crate::ambient::AmbientSpace;
use crate::chart::{integrate, shape_from_form, ChartGrid, FormField, MetricField};
use crate::immersion::{cholesky_lower, nabla_normal_at, pullback_of, shape_at, DiscreteImmersion};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBreakdown {
    pub stretching: f64,
    pub bending: f64,
    pub total: f64,
    pub p: f64,
    pub stretching_density: Vec<f64>,
    pub bending_density: Vec<f64>,
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("exponent p must satisfy p >= 1, got {p}")))
    }
}

fn check_grids(a: &ChartGrid, b: &ChartGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch("inputs live on different grids".into()))
    }
}

/// `L^{-T}` for `g = L L^T`: its columns are a `g`-orthonormal frame.
pub(crate) fn orthonormal_chart_frame(g: &DMatrix<f64>, node: usize) -> Result<DMatrix<f64>> {
    cholesky_lower(g)
        .and_then(|l| l.transpose().try_inverse())
        .ok_or(Error::DegenerateMetric(node))
}

/// Writes the columns of an ambient-valued matrix in isometric coordinates.
pub(crate) fn iso_columns(space: &AmbientSpace, p: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..m.ncols()).map(|j| space.isometric_coords(p, &m.column(j).into_owned())).collect();
    DMatrix::from_columns(&cols)
}

/// Stretching and bending residual matrices at one node, in isometric
/// coordinates on a `g`-orthonormal frame. Their Frobenius norms are
/// `dist_{g,h}(df, O(g,h))` and `|df (S - S_f)|_{g,h}`.
#[derive(Debug, Clone)]
pub(crate) struct NodeResiduals {
    pub stretch: DMatrix<f64>,
    pub bend: DMatrix<f64>,
}

pub(crate) fn node_residuals(
    space: &AmbientSpace,
    point: &DVector<f64>,
    df: &DMatrix<f64>,
    nabla: &DMatrix<f64>,
    frame: &DMatrix<f64>,
    s_ref: &DMatrix<f64>,
    node: usize,
) -> Result<NodeResiduals> {
    let pb = pullback_of(space, df);
    let s_f = shape_at(space, df, &pb, nabla, node)?;
    let b = iso_columns(space, point, &(df * frame));
    let c = b.transpose() * &b;
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let v = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
    let polar = &b * v * inv_sqrt * v.transpose();
    let stretch = &b - polar;
    let bend = iso_columns(space, point, &(df * (s_ref - s_f) * frame));
    Ok(NodeResiduals { stretch, bend })
}

/// `|A|^p` from the squared norm.
fn pow_half(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else {
        sq.max(0.0).powf(0.5 * p)
    }
}

/// `E_p(f) = int dist^p(df, O(g,h)) + |df (S - S_f)|^p dVol_g`.
pub fn energy_p(f: &DiscreteImmersion, g: &MetricField, b: &FormField, p: f64) -> Result<EnergyBreakdown> {
    check_p(p)?;
    check_grids(f.grid(), g.grid())?;
    check_grids(f.grid(), b.grid())?;
    let s = shape_from_form(g, b)?;
    let geo = f.geometry()?;
    let nabla = f.normal_derivative(&geo.normals);
    let space = f.space();
    let dens = par::try_map(f.grid().node_count(), |node| {
        let frame = orthonormal_chart_frame(g.at(node), node)?;
        let r = node_residuals(space, &f.points()[node], &geo.df[node], &nabla[node], &frame, s.at(node), node)?;
        Ok::<_, Error>((pow_half(r.stretch.norm_squared(), p), pow_half(r.bend.norm_squared(), p)))
    })?;
    let (stretching_density, bending_density): (Vec<f64>, Vec<f64>) = dens.into_iter().unzip();
    breakdown(stretching_density, bending_density, g, p)
}

fn breakdown(stretching_density: Vec<f64>, bending_density: Vec<f64>, g: &MetricField, p: f64) -> Result<EnergyBreakdown> {
    let stretching = integrate(&stretching_density, g)?;
    let bending = integrate(&bending_density, g)?;
    Ok(EnergyBreakdown { stretching, bending, total: stretching + bending, p, stretching_density, bending_density })
}

/// `|T|^2_g = tr(g^{-1} T g^{-1} T)` for a symmetric 2-tensor `T`.
pub(crate) fn tensor_norm_sq(ginv: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let m = ginv * t;
    (&m * &m).trace().max(0.0)
}

/// `int |g - f*h|^p + |b - b_f|^p dVol_g` with `g`-induced norms.
pub fn energy_physics(f: &DiscreteImmersion, g: &MetricField, b: &FormField, p: f64) -> Result<EnergyBreakdown> {
    check_p(p)?;
    check_grids(f.grid(), g.grid())?;
    check_grids(f.grid(), b.grid())?;
    let geo = f.geometry()?;
    let s_f = f.shape_operators(&geo)?;
    let ginv = g.inverses()?;
    let dens = par::map(f.grid().node_count(), |node| {
        let stretch = g.at(node) - &geo.pullback[node];
        let b_f = s_f[node].transpose() * &geo.pullback[node];
        let bend = b.at(node) - b_f;
        (pow_half(tensor_norm_sq(&ginv[node], &stretch), p), pow_half(tensor_norm_sq(&ginv[node], &bend), p))
    });
    let (s, bd): (Vec<f64>, Vec<f64>) = dens.into_iter().unzip();
    breakdown(s, bd, g, p)
}

fn check_pair(f1: &DiscreteImmersion, f2: &DiscreteImmersion, g: &MetricField, p: f64) -> Result<()> {
    check_p(p)?;
    check_grids(f1.grid(), f2.grid())?;
    check_grids(f1.grid(), g.grid())?;
    if f1.space() != f2.space() {
        return Err(Error::GridMismatch("immersions live in different ambient spaces".into()));
    }
    Ok(())
}

/// `|A|^2_{g,e}` for an embedding-valued map on chart components.
fn chart_norm_sq(ginv: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (ginv * (a.transpose() * a)).trace().max(0.0)
}

/// Sobolev distance of two fields of embedding coordinates, with an
/// optional constant offset subtracted from the zeroth-order term.
fn sobolev(grid: &ChartGrid, g: &MetricField, a: &[DVector<f64>], b: &[DVector<f64>], p: f64, offset: Option<&DVector<f64>>) -> Result<f64> {
    let diff: Vec<DVector<f64>> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ginv = g.inverses()?;
    let derivs: Vec<DMatrix<f64>> = par::map(grid.node_count(), |node| {
        let cols: Vec<DVector<f64>> = (0..grid.d()).map(|axis| grid.partial_at(&diff, node, axis)).collect();
        DMatrix::from_columns(&cols)
    });
    let dens: Vec<f64> = (0..grid.node_count())
        .map(|node| {
            let zeroth = match offset {
                Some(c) => (&diff[node] - c).norm_squared(),
                None => diff[node].norm_squared(),
            };
            pow_half(zeroth, p) + pow_half(chart_norm_sq(&ginv[node], &derivs[node]), p)
        })
        .collect();
    Ok(integrate(&dens, g)?.powf(1.0 / p))
}

/// `W^{1,p}` distance of the embedding coordinates of two immersions.
pub fn w1p_distance(f1: &DiscreteImmersion, f2: &DiscreteImmersion, g: &MetricField, p: f64) -> Result<f64> {
    check_pair(f1, f2, g, p)?;
    sobolev(f1.grid(), g, f1.points(), f2.points(), p, None)
}

/// [`w1p_distance`] minimized over constant translations of `f2` in flat
/// space; identical to it for curved models.
pub fn w1p_distance_mod_translation(
    f1: &DiscreteImmersion,
    f2: &DiscreteImmersion,
    g: &MetricField,
    p: f64,
) -> Result<f64> {
    check_pair(f1, f2, g, p)?;
    if f1.space().kappa() != 0.0 {
        return w1p_distance(f1, f2, g, p);
    }
    let grid = f1.grid();
    let diff: Vec<DVector<f64>> = f1.points().iter().zip(f2.points()).map(|(x, y)| x - y).collect();
    let vol: Vec<f64> = (0..grid.node_count())
        .map(|n| grid.quadrature_weight(n) * g.at(n).determinant().sqrt())
        .collect();
    let weighted_mean = |w: &[f64]| {
        let total = par::pairwise_sum(w);
        let dim = diff[0].len();
        DVector::from_fn(dim, |c, _| {
            let terms: Vec<f64> = (0..diff.len()).map(|n| w[n] * diff[n][c]).collect();
            par::pairwise_sum(&terms) / total
        })
    };
    // p = 2: weighted mean. Otherwise Weiszfeld iterations for the L^p center.
    let mut c = weighted_mean(&vol);
    if p != 2.0 {
        for _ in 0..200 {
            let w: Vec<f64> = (0..diff.len())
                .map(|n| vol[n] * (&diff[n] - &c).norm().max(1e-300).powf(p - 2.0))
                .collect();
            let next = weighted_mean(&w);
            let moved = (&next - &c).norm();
            c = next;
            if moved <= 1e-15 * (1.0 + c.norm()) {
                break;
            }
        }
    }
    sobolev(grid, g, f1.points(), f2.points(), p, Some(&c))
}

/// `L^p` distance of the unit normals plus that of their covariant
/// derivatives, in embedding coordinates.
pub fn normal_w1p_distance(f1: &DiscreteImmersion, f2: &DiscreteImmersion, g: &MetricField, p: f64) -> Result<f64> {
    check_pair(f1, f2, g, p)?;
    let grid = f1.grid();
    let space = f1.space();
    let n1 = f1.unit_normal()?;
    let n2 = f2.unit_normal()?;
    let ginv = g.inverses()?;
    let dens = par::map(grid.node_count(), |node| {
        let d1 = nabla_normal_at(space, grid, &f1.points()[node], &n1, node);
        let d2 = nabla_normal_at(space, grid, &f2.points()[node], &n2, node);
        pow_half((&n1[node] - &n2[node]).norm_squared(), p) + pow_half(chart_norm_sq(&ginv[node], &(d1 - d2)), p)
    });
    Ok(integrate(&dens, g)?.powf(1.0 / p))
}

/// `(int |df|^p dVol_g, int |df S_f|^p dVol_g)`.
pub fn uniform_bounds_check(f: &DiscreteImmersion, g: &MetricField, b: &FormField, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    check_grids(f.grid(), g.grid())?;
    check_grids(f.grid(), b.grid())?;
    let geo = f.geometry()?;
    let s_f = f.shape_operators(&geo)?;
    let ginv = g.inverses()?;
    let dens = par::map(f.grid().node_count(), |node| {
        let pb = &geo.pullback[node];
        let first = (&ginv[node] * pb).trace();
        let second = (&ginv[node] * s_f[node].transpose() * pb * &s_f[node]).trace();
        (pow_half(first, p), pow_half(second, p))
    });
    let (a, c): (Vec<f64>, Vec<f64>) = dens.into_iter().unzip();
    Ok((integrate(&a, g)?, integrate(&c, g)?))
}
