//! The thickened shell `M x [-eps, eps]`: the metric
//! `G = u1^2 g - 2 u1 u2 b + u2^2 S^T g S + dt^2`, its admissible thickness
//! and equivalence constants, the extension of an immersion along normal
//! geodesics with its closed-form differential, the rotation-valued section
//! `A_f` and the rigidity gap `int dist^p(dF, SO(G, h)) dVol_G`.

use nalgebra::{DMatrix, DVector};

use crate::ambient::{jacobi_coefficients, AmbientSpace, JacobiCoefficients};
use crate::chart::{christoffel_from, shape_from_form, FormField, MetricField, OperatorField};
use crate::energy::energy_p;
use crate::immersion::{cholesky_lower, polar_at, DiscreteImmersion};
use crate::{par, Error, Result};

/// Upper end of the thickness search.
pub const EPSILON_SEARCH_MAX: f64 = 1.0;
const EPSILON_MIN: f64 = 1e-4;
const BISECTION_TOL: f64 = 1e-5;
/// `t`-samples used when scanning `[-eps, eps]`.
const SCAN_SAMPLES: usize = 33;
/// Default number of `t`-samples for quadrature.
pub const DEFAULT_T_SAMPLES: usize = 17;

/// Jacobi coefficient law `(kappa, t) -> (u1, u2)`.
pub type JacobiFn = fn(f64, f64) -> JacobiCoefficients;

#[derive(Debug, Clone)]
pub struct ThickenedMetric {
    g: MetricField,
    b: FormField,
    s: OperatorField,
    kappa: f64,
    epsilon: f64,
    jacobi: JacobiFn,
}

/// `m` uniform samples of `[-eps, eps]` (odd `m` includes `t = 0`).
pub fn uniform_samples(epsilon: f64, m: usize) -> Vec<f64> {
    if m <= 1 {
        return vec![0.0];
    }
    (0..m).map(|i| -epsilon + 2.0 * epsilon * i as f64 / (m - 1) as f64).collect()
}

/// Trapezoid weights of a sorted sample set.
pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let m = t.len();
    if m < 2 {
        return vec![1.0; m];
    }
    (0..m)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < m { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

fn upper_block(g: &DMatrix<f64>, b: &DMatrix<f64>, s: &DMatrix<f64>, j: JacobiCoefficients) -> DMatrix<f64> {
    let sgs = s.transpose() * g * s;
    g * (j.u1 * j.u1) - b * (2.0 * j.u1 * j.u2) + sgs * (j.u2 * j.u2)
}

fn smallest_upper_eigenvalue(g: &MetricField, b: &FormField, s: &OperatorField, kappa: f64, jacobi: JacobiFn, epsilon: f64) -> f64 {
    let ts = uniform_samples(epsilon, SCAN_SAMPLES);
    par::map(g.grid().node_count(), |node| {
        ts.iter()
            .map(|&t| upper_block(g.at(node), b.at(node), s.at(node), jacobi(kappa, t)).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

impl ThickenedMetric {
    pub fn new(g: MetricField, b: FormField, kappa: f64, epsilon: f64) -> Result<Self> {
        Self::with_jacobi(g, b, kappa, epsilon, jacobi_coefficients)
    }

    /// Same as [`Self::new`] with a caller-supplied coefficient law.
    pub fn with_jacobi(g: MetricField, b: FormField, kappa: f64, epsilon: f64, jacobi: JacobiFn) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Invalid(format!("thickness must be positive, got {epsilon}")));
        }
        let s = shape_from_form(&g, &b)?;
        let lam = smallest_upper_eigenvalue(&g, &b, &s, kappa, jacobi, epsilon);
        if !(lam > 0.0) {
            return Err(Error::Invalid(format!("G is not positive definite on |t| <= {epsilon}")));
        }
        Ok(Self { g, b, s, kappa, epsilon, jacobi })
    }

    pub fn g(&self) -> &MetricField {
        &self.g
    }

    pub fn b(&self) -> &FormField {
        &self.b
    }

    pub fn s(&self) -> &OperatorField {
        &self.s
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn jacobi(&self, t: f64) -> JacobiCoefficients {
        (self.jacobi)(self.kappa, t)
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if t.abs() <= self.epsilon * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(Error::OutsideThickness { t, epsilon: self.epsilon })
        }
    }

    /// Tangential block of `G(p, t)` without the thickness check.
    fn upper(&self, node: usize, t: f64) -> DMatrix<f64> {
        upper_block(self.g.at(node), self.b.at(node), self.s.at(node), self.jacobi(t))
    }

    fn full(&self, node: usize, t: f64) -> DMatrix<f64> {
        let d = self.g.grid().d();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.upper(node, t));
        m[(d, d)] = 1.0;
        m
    }

    /// `G(p, t)` as a `(d+1) x (d+1)` matrix, `t` last.
    pub fn metric_g(&self, node: usize, t: f64) -> Result<DMatrix<f64>> {
        self.check_t(t)?;
        Ok(self.full(node, t))
    }

    /// `G' = blockdiag(g, 1)`.
    pub fn product_metric(&self, node: usize) -> DMatrix<f64> {
        self.full(node, 0.0)
    }
}

/// Largest thickness (bisection, tolerance 1e-5, search in `(0, 1]`) for
/// which the tangential block of `G` keeps its smallest eigenvalue above
/// `floor` on `|t| <= eps` at every node.
pub fn admissible_epsilon(g: &MetricField, b: &FormField, kappa: f64, floor: f64) -> Result<f64> {
    if !(floor > 0.0) {
        return Err(Error::Invalid(format!("floor must be positive, got {floor}")));
    }
    let s = shape_from_form(g, b)?;
    let ok = |eps: f64| smallest_upper_eigenvalue(g, b, &s, kappa, jacobi_coefficients, eps) >= floor;
    let mut k_max: f64 = 0.0;
    for node in 0..g.grid().node_count() {
        let l = cholesky_lower(g.at(node)).ok_or(Error::DegenerateMetric(node))?;
        let linv = l.try_inverse().ok_or(Error::DegenerateMetric(node))?;
        let k = (&linv * b.at(node) * linv.transpose()).symmetric_eigenvalues();
        k_max = k_max.max(k.amax());
    }
    let focal = focal_distance(kappa, k_max);
    if focal > EPSILON_SEARCH_MAX && ok(EPSILON_SEARCH_MAX) {
        return Ok(EPSILON_SEARCH_MAX);
    }
    let (mut lo, mut hi) = (0.0, EPSILON_SEARCH_MAX.min(focal));
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo < EPSILON_MIN || !ok(lo.max(f64::MIN_POSITIVE)) {
        return Err(Error::TooSingular(EPSILON_MIN));
    }
    Ok(lo)
}

/// Smallest `|t|` at which `u1 - u2 k` vanishes for a principal curvature
/// of modulus `k`; `G` degenerates there.
pub fn focal_distance(kappa: f64, k: f64) -> f64 {
    let k = k.abs();
    if kappa > 0.0 {
        let s = kappa.sqrt();
        (s / k).atan() / s
    } else if kappa < 0.0 {
        let s = (-kappa).sqrt();
        if k > s { (s / k).atanh() / s } else { f64::INFINITY }
    } else if k > 0.0 {
        1.0 / k
    } else {
        f64::INFINITY
    }
}

/// `(c1, c2, c3, c4)`: extremal square roots of the eigenvalues of
/// `G'^{-1} G` and extremal `sqrt(det G / det G')` over nodes and samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

pub fn equivalence_constants(tm: &ThickenedMetric, t_samples: &[f64]) -> Result<EquivalenceConstants> {
    for &t in t_samples {
        tm.check_t(t)?;
    }
    let per_node = par::try_map(tm.g.grid().node_count(), |node| {
        let gp = tm.product_metric(node);
        let l = cholesky_lower(&gp).ok_or(Error::DegenerateMetric(node))?;
        let linv = l.try_inverse().ok_or(Error::DegenerateMetric(node))?;
        let det_p = gp.determinant();
        let mut acc = [f64::INFINITY, 0.0, f64::INFINITY, 0.0];
        for &t in t_samples {
            let gt = tm.full(node, t);
            let lam = (&linv * &gt * linv.transpose()).symmetric_eigenvalues();
            acc[0] = acc[0].min(lam.min());
            acc[1] = acc[1].max(lam.max());
            let vol = (gt.determinant() / det_p).sqrt();
            acc[2] = acc[2].min(vol);
            acc[3] = acc[3].max(vol);
        }
        Ok::<_, Error>(acc)
    })?;
    let mut out = [f64::INFINITY, 0.0, f64::INFINITY, 0.0];
    for a in per_node {
        out[0] = out[0].min(a[0]);
        out[1] = out[1].max(a[1]);
        out[2] = out[2].min(a[2]);
        out[3] = out[3].max(a[3]);
    }
    Ok(EquivalenceConstants { c1: out[0].sqrt(), c2: out[1].sqrt(), c3: out[2], c4: out[3] })
}

/// Second fundamental form of the slice `t = 0` inside `(M x [-eps, eps], G)`
/// with unit normal `d_t`: `b_M(d_i, d_j) = -Gamma^l_{it} G_{lj}`, where the
/// Christoffel symbols of `G` use spatial differences on the grid and a
/// central difference of step `h_t` in `t`.
pub fn second_form_of_slice(tm: &ThickenedMetric, h_t: f64) -> Result<FormField> {
    if !(h_t > 0.0) {
        return Err(Error::Invalid("t-step must be positive".into()));
    }
    tm.check_t(h_t)?;
    let grid = tm.g.grid();
    let d = grid.d();
    let slice: Vec<DMatrix<f64>> = (0..grid.node_count()).map(|n| tm.full(n, 0.0)).collect();
    let values = par::try_map(grid.node_count(), |node| {
        let mut dg: Vec<DMatrix<f64>> = (0..d).map(|axis| grid.partial_at(&slice, node, axis)).collect();
        dg.push((tm.full(node, h_t) - tm.full(node, -h_t)) / (2.0 * h_t));
        let g0 = &slice[node];
        let ginv = g0.clone().try_inverse().ok_or(Error::DegenerateMetric(node))?;
        let gamma = christoffel_from(&ginv, &dg);
        let n = d + 1;
        let sym = |k: usize, i: usize, j: usize| gamma[(k * n + i) * n + j];
        Ok::<_, Error>(DMatrix::from_fn(d, d, |i, j| -(0..n).map(|l| sym(l, i, d) * g0[(l, j)]).sum::<f64>()))
    })?;
    Ok(FormField::new_unchecked(grid.clone(), values))
}

/// `dF_{(p,t)}(v, w) = P_t[u1 df(v) - u2 df(S_f v) + w n]` for first-order
/// data `(point, df, normal, shape)` at one node, returned as a
/// `coord_len x (d+1)` matrix (last column is the `d_t` direction).
pub fn closed_form_df(
    space: &AmbientSpace,
    jacobi: JacobiCoefficients,
    point: &DVector<f64>,
    df: &DMatrix<f64>,
    normal: &DVector<f64>,
    shape: &DMatrix<f64>,
    t: f64,
) -> DMatrix<f64> {
    let d = df.ncols();
    let tangential = df * jacobi.u1 - df * shape * jacobi.u2;
    let mut out = DMatrix::zeros(point.len(), d + 1);
    for j in 0..d {
        let (_, moved) = space.transport_raw(point, normal, t, &tangential.column(j).into_owned());
        out.set_column(j, &moved);
    }
    let (_, moved) = space.transport_raw(point, normal, t, normal);
    out.set_column(d, &moved);
    out
}

/// The extension `F(p, t) = exp_{f(p)}(t n_f(p))` sampled on a set of `t`.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    pub base: DiscreteImmersion,
    pub t_samples: Vec<f64>,
    /// `points[k][node]` is `F(node, t_samples[k])`.
    pub points: Vec<Vec<DVector<f64>>>,
}

pub fn extend(f: &DiscreteImmersion, tm: &ThickenedMetric, t_samples: &[f64]) -> Result<ExtensionField> {
    for &t in t_samples {
        tm.check_t(t)?;
    }
    let normals = f.unit_normal()?;
    let space = f.space();
    let points = t_samples
        .iter()
        .map(|&t| par::map(f.grid().node_count(), |n| space.exp_raw(&f.points()[n], &(&normals[n] * t))))
        .collect();
    Ok(ExtensionField { base: f.clone(), t_samples: t_samples.to_vec(), points })
}

/// Per-node first-order data of an immersion, prepared once for repeated
/// evaluation of `dF` and `A_f`.
#[derive(Debug, Clone)]
pub struct NormalExtension<'a> {
    f: &'a DiscreteImmersion,
    tm: &'a ThickenedMetric,
    df: Vec<DMatrix<f64>>,
    normals: Vec<DVector<f64>>,
    /// `S_f`; only the differential of the extension needs it.
    shape: std::result::Result<Vec<DMatrix<f64>>, Error>,
    polar: Vec<DMatrix<f64>>,
}

impl<'a> NormalExtension<'a> {
    pub fn new(f: &'a DiscreteImmersion, tm: &'a ThickenedMetric) -> Result<Self> {
        if f.grid() != tm.g.grid() {
            return Err(Error::GridMismatch("immersion and thickened metric live on different grids".into()));
        }
        if f.space().kappa() != tm.kappa {
            return Err(Error::Invalid("thickened metric curvature differs from the ambient curvature".into()));
        }
        let geo = f.geometry()?;
        let shape = f.shape_operators(&geo);
        let space = f.space();
        let polar = par::try_map(f.grid().node_count(), |n| Ok::<_, Error>(polar_at(space, &geo.df[n], tm.g.at(n))?.o))?;
        Ok(Self { f, tm, df: geo.df, normals: geo.normals, shape, polar })
    }

    pub fn immersion(&self) -> &DiscreteImmersion {
        self.f
    }

    pub fn point(&self, node: usize, t: f64) -> DVector<f64> {
        self.f.space().exp_raw(&self.f.points()[node], &(&self.normals[node] * t))
    }

    pub fn analytic_df(&self, node: usize, t: f64) -> Result<DMatrix<f64>> {
        self.tm.check_t(t)?;
        let shape = self.shape.as_ref().map_err(Clone::clone)?;
        Ok(closed_form_df(
            self.f.space(),
            self.tm.jacobi(t),
            &self.f.points()[node],
            &self.df[node],
            &self.normals[node],
            &shape[node],
            t,
        ))
    }

    /// Finite-difference differential of the extension at `(node, t)`: grid
    /// differences of `F(., t)` in space and a central difference of step
    /// `h_t` in `t`, projected onto the tangent space at `F(node, t)`.
    pub fn fd_df(&self, node: usize, t: f64, h_t: f64) -> Result<DMatrix<f64>> {
        self.tm.check_t(t)?;
        let space = self.f.space();
        let grid = self.f.grid();
        let center = self.point(node, t);
        let d = grid.d();
        let mut out = DMatrix::zeros(center.len(), d + 1);
        for axis in 0..d {
            let mut col = DVector::zeros(center.len());
            for (n, w) in grid.stencil(node, axis) {
                col += self.point(n, t) * w;
            }
            out.set_column(axis, &space.project_tangent(&center, &col));
        }
        let dt = (self.point(node, t + h_t) - self.point(node, t - h_t)) / (2.0 * h_t);
        out.set_column(d, &space.project_tangent(&center, &dt));
        Ok(out)
    }

    /// `A_f(v, w) = P_t[u1 O(df) v - u2 O(df) S v + w n]` with the reference `S`.
    pub fn section_a(&self, node: usize, t: f64) -> Result<DMatrix<f64>> {
        self.tm.check_t(t)?;
        Ok(closed_form_df(
            self.f.space(),
            self.tm.jacobi(t),
            &self.f.points()[node],
            &self.polar[node],
            &self.normals[node],
            self.tm.s.at(node),
            t,
        ))
    }

    /// `max |A_f^T h A_f - G|` at one sample.
    pub fn gram_defect(&self, node: usize, t: f64) -> Result<f64> {
        let a = self.section_a(node, t)?;
        let space = self.f.space();
        let pulled = DMatrix::from_fn(a.ncols(), a.ncols(), |i, j| {
            space.form(&a.column(i).into_owned(), &a.column(j).into_owned())
        });
        Ok((pulled - self.tm.full(node, t)).amax())
    }

    /// Orientation sign of `A_f` (positive for orientation-preserving maps).
    pub fn section_orientation(&self, node: usize, t: f64) -> Result<f64> {
        let a = self.section_a(node, t)?;
        Ok(self.f.space().orientation(&self.point(node, t), &a))
    }

    /// `dist_{G,h}(L, SO(G, h))` for a linear map `L` at `F(node, t)`.
    pub fn dist_to_so(&self, node: usize, t: f64, map: &DMatrix<f64>) -> Result<f64> {
        dist_to_so(self.f.space(), &self.point(node, t), map, &self.tm.full(node, t))
    }
}

/// Distance of `map: (T M x R, G) -> (T N, h)` from the orientation-preserving
/// isometries: singular values of its orthonormal-frame matrix, the smallest
/// sign-flipped when the frame determinant is negative.
pub fn dist_to_so(space: &AmbientSpace, point: &DVector<f64>, map: &DMatrix<f64>, metric: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(metric).ok_or(Error::DegenerateMetric(0))?;
    let linv_t = l.transpose().try_inverse().ok_or(Error::DegenerateMetric(0))?;
    let frame = space.tangent_frame(point);
    let lowered = DMatrix::from_columns(
        &(0..frame.ncols()).map(|j| space.lower(&frame.column(j).into_owned())).collect::<Vec<_>>(),
    );
    let m = lowered.transpose() * map * linv_t;
    let svd = m.clone().svd(false, false);
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(f64::total_cmp);
    let top = sigma.last().copied().unwrap_or(0.0);
    if !(sigma[0] > 1e-14 * top.max(1e-300)) {
        return Err(Error::RankDeficient);
    }
    if m.determinant() < 0.0 {
        sigma[0] = -sigma[0];
    }
    Ok(sigma.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>().sqrt())
}

pub fn analytic_df(f: &DiscreteImmersion, tm: &ThickenedMetric, node: usize, t: f64) -> Result<DMatrix<f64>> {
    NormalExtension::new(f, tm)?.analytic_df(node, t)
}

pub fn section_a(f: &DiscreteImmersion, tm: &ThickenedMetric, node: usize, t: f64) -> Result<DMatrix<f64>> {
    NormalExtension::new(f, tm)?.section_a(node, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityGap {
    pub lhs: f64,
    pub energy: f64,
    pub ratio: f64,
}

/// Below this energy the ratio is reported as 0 (or flagged when the gap is not).
const ZERO_ENERGY: f64 = 1e-14;
const ZERO_GAP: f64 = 1e-10;

/// `lhs = int dist^p_{G,h}(dF, SO(G,h)) dVol_G` over nodes and `t_samples`
/// (trapezoid in both), and `ratio = lhs / E_p(f)`.
pub fn rigidity_gap(f: &DiscreteImmersion, tm: &ThickenedMetric, p: f64, t_samples: &[f64]) -> Result<RigidityGap> {
    let ext = NormalExtension::new(f, tm)?;
    let grid = f.grid();
    let wt = trapezoid_weights(t_samples);
    let terms = par::try_map(grid.node_count() * t_samples.len(), |idx| {
        let (k, node) = (idx / grid.node_count(), idx % grid.node_count());
        let t = t_samples[k];
        let df = ext.analytic_df(node, t)?;
        let gt = tm.full(node, t);
        let dist = dist_to_so(f.space(), &ext.point(node, t), &df, &gt)?;
        Ok::<_, Error>(dist.powf(p) * gt.determinant().sqrt() * grid.quadrature_weight(node) * wt[k])
    })?;
    let lhs = par::pairwise_sum(&terms);
    let energy = energy_p(f, &tm.g, &tm.b, p)?.total;
    let ratio = if energy <= ZERO_ENERGY {
        if lhs > ZERO_GAP {
            return Err(Error::Inconsistent(format!("rigidity gap {lhs:e} with vanishing energy {energy:e}")));
        }
        0.0
    } else {
        lhs / energy
    };
    Ok(RigidityGap { lhs, energy, ratio })
}
