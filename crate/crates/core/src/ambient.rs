//! Constant-curvature model spaces.
//!
//! Flat space is `R^{dim}` with the Euclidean metric. The sphere of curvature
//! `kappa > 0` is realized in `R^{dim+1}` as `|x|^2 = 1/kappa`, and the
//! hyperbolic space of curvature `kappa < 0` as the upper sheet of
//! `<x,x>_- = 1/kappa` in Minkowski space `R^{dim,1}` (signature `+...+-`,
//! last coordinate timelike). Tangent vectors are stored in the same
//! embedding coordinates as points.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Tolerance for "same base point" comparisons.
const SAME_POINT_TOL: f64 = 1e-12;
const UNIT_SPEED_TOL: f64 = 1e-10;
/// Fraction of the injectivity radius beyond which `log` refuses to answer.
const LOG_GUARD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Flat,
    Sphere,
    Hyperboloid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientSpace {
    kappa: f64,
    dim: usize,
    model: Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPoint {
    pub coords: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbientTangent {
    pub base: AmbientPoint,
    pub vec: DVector<f64>,
}

/// Coefficients of the normal Jacobi field basis along a unit-speed geodesic:
/// `u1(0) = 1, u1'(0) = 0`, `u2(0) = 0, u2'(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiCoefficients {
    pub u1: f64,
    pub u2: f64,
}

impl AmbientPoint {
    pub fn new(coords: DVector<f64>) -> Self {
        Self { coords }
    }

    pub fn from_slice(c: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(c))
    }

    fn same_as(&self, other: &AmbientPoint) -> bool {
        self.coords.len() == other.coords.len()
            && self
                .coords
                .iter()
                .zip(other.coords.iter())
                .all(|(a, b)| (a - b).abs() <= SAME_POINT_TOL * (1.0 + a.abs()))
    }
}

impl AmbientTangent {
    pub fn new(base: AmbientPoint, vec: DVector<f64>) -> Self {
        Self { base, vec }
    }
}

impl AmbientSpace {
    /// Model space of sectional curvature `kappa` and dimension `dim` (= d+1).
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::Invalid(format!("curvature must be finite, got {kappa}")));
        }
        if dim < 2 {
            return Err(Error::UnsupportedDimension(dim));
        }
        let model = if kappa > 0.0 {
            Model::Sphere
        } else if kappa < 0.0 {
            Model::Hyperboloid
        } else {
            Model::Flat
        };
        Ok(Self { kappa, dim, model })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Number of embedding coordinates of a point.
    pub fn coord_len(&self) -> usize {
        match self.model {
            Model::Flat => self.dim,
            _ => self.dim + 1,
        }
    }

    /// Radius of the sphere, or scale `1/sqrt(-kappa)` of the hyperboloid.
    pub fn scale(&self) -> f64 {
        match self.model {
            Model::Flat => f64::INFINITY,
            _ => 1.0 / self.kappa.abs().sqrt(),
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self.model {
            Model::Sphere => std::f64::consts::PI / self.kappa.sqrt(),
            _ => f64::INFINITY,
        }
    }

    /// The model bilinear form: Euclidean, or Minkowski for the hyperboloid.
    pub fn form(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match self.model {
            Model::Hyperboloid => {
                let n = a.len() - 1;
                a.rows(0, n).dot(&b.rows(0, n)) - a[n] * b[n]
            }
            _ => a.dot(b),
        }
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.form(v, v).max(0.0).sqrt()
    }

    /// Gram matrix of [`Self::form`].
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.coord_len();
        let mut h = DMatrix::identity(n, n);
        if self.model == Model::Hyperboloid {
            h[(n - 1, n - 1)] = -1.0;
        }
        h
    }

    /// Applies the Gram matrix to `v` without forming it.
    pub fn lower(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        if self.model == Model::Hyperboloid {
            let n = out.len() - 1;
            out[n] = -out[n];
        }
        out
    }

    /// Dimensionless violation of the model constraint.
    pub fn constraint_defect(&self, x: &DVector<f64>) -> f64 {
        if x.len() != self.coord_len() {
            return f64::INFINITY;
        }
        match self.model {
            Model::Flat => 0.0,
            Model::Sphere => (self.kappa * x.dot(x) - 1.0).abs(),
            Model::Hyperboloid => {
                if x[x.len() - 1] <= 0.0 {
                    f64::INFINITY
                } else {
                    (self.kappa * self.form(x, x) - 1.0).abs()
                }
            }
        }
    }

    /// Model origin: zero for flat space, the "north pole" `scale * e_last`
    /// for the curved models.
    pub fn origin(&self) -> AmbientPoint {
        let mut c = DVector::zeros(self.coord_len());
        if self.model != Model::Flat {
            let n = c.len() - 1;
            c[n] = self.scale();
        }
        AmbientPoint::new(c)
    }

    pub fn point(&self, coords: DVector<f64>) -> Result<AmbientPoint> {
        let defect = self.constraint_defect(&coords);
        if defect > 1e-12 {
            return Err(Error::OffModel(defect));
        }
        Ok(AmbientPoint::new(coords))
    }

    pub fn tangent(&self, base: AmbientPoint, vec: DVector<f64>) -> Result<AmbientTangent> {
        if vec.len() != self.coord_len() {
            return Err(Error::Invalid("tangent length does not match the model".into()));
        }
        if self.model != Model::Flat {
            let off = self.form(&base.coords, &vec).abs() * self.kappa.abs().sqrt();
            if off > 1e-12 * (1.0 + vec.norm()) {
                return Err(Error::Invalid(format!("vector is not tangent (defect {off:e})")));
            }
        }
        Ok(AmbientTangent::new(base, vec))
    }

    /// Orthogonal projection of `v` onto the tangent space at `p`.
    pub fn project_tangent(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self.model {
            Model::Flat => v.clone(),
            _ => v - p * (self.kappa * self.form(p, v)),
        }
    }

    /// Nearest model point (radial / Minkowski normalization).
    pub fn normalize_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self.model {
            Model::Flat => Ok(x.clone()),
            Model::Sphere => {
                let r = x.norm();
                if r == 0.0 {
                    return Err(Error::LeftModel(1.0));
                }
                Ok(x * (self.scale() / r))
            }
            Model::Hyperboloid => {
                let q = -self.form(x, x);
                if q <= 0.0 || x[x.len() - 1] <= 0.0 {
                    return Err(Error::LeftModel(f64::INFINITY));
                }
                Ok(x * (self.scale() / q.sqrt()))
            }
        }
    }

    // ---------------------------------------------------------------------
    // Raw kernels on embedding coordinates.

    pub(crate) fn exp_raw(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self.model {
            Model::Flat => p + v,
            Model::Sphere => {
                let a = self.kappa.sqrt() * self.norm(v);
                if a == 0.0 {
                    return p.clone();
                }
                p * a.cos() + v * (a.sin() / a)
            }
            Model::Hyperboloid => {
                let a = (-self.kappa).sqrt() * self.norm(v);
                if a == 0.0 {
                    return p.clone();
                }
                p * a.cosh() + v * (a.sinh() / a)
            }
        }
    }

    pub(crate) fn log_raw(&self, p: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
        match self.model {
            Model::Flat => Ok(q - p),
            Model::Sphere => {
                let s = self.kappa.sqrt();
                let c = self.kappa * p.dot(q);
                let w = q - p * c;
                let wn = w.norm();
                let theta = (s * wn).atan2(c);
                if theta > LOG_GUARD * std::f64::consts::PI {
                    return Err(Error::LogUndefined);
                }
                if wn == 0.0 {
                    return Ok(DVector::zeros(p.len()));
                }
                Ok(w * (theta / (s * wn)))
            }
            Model::Hyperboloid => {
                let s = (-self.kappa).sqrt();
                let c = self.kappa * self.form(p, q);
                let w = q - p * c;
                let wn = self.norm(&w);
                if wn == 0.0 {
                    return Ok(DVector::zeros(p.len()));
                }
                let theta = (s * wn).asinh();
                Ok(w * (theta / (s * wn)))
            }
        }
    }

    /// Closed-form parallel transport of `x` along the unit-speed geodesic
    /// from `p` with velocity `u`, returning `(gamma(t), P_t x)`.
    pub(crate) fn transport_raw(
        &self,
        p: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
        x: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        match self.model {
            Model::Flat => (p + u * t, x.clone()),
            Model::Sphere | Model::Hyperboloid => {
                let (point, vel) = self.geodesic_raw(p, u, t);
                let a = self.form(x, u);
                let perp = x - u * a;
                (point, perp + vel * a)
            }
        }
    }

    /// Point and velocity at time `t` of the unit-speed geodesic `(p, u)`.
    pub(crate) fn geodesic_raw(
        &self,
        p: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> (DVector<f64>, DVector<f64>) {
        match self.model {
            Model::Flat => (p + u * t, u.clone()),
            Model::Sphere => {
                let s = self.kappa.sqrt();
                let (sn, cs) = (s * t).sin_cos();
                (p * cs + u * (sn / s), u * cs - p * (s * sn))
            }
            Model::Hyperboloid => {
                let s = (-self.kappa).sqrt();
                let (sn, cs) = ((s * t).sinh(), (s * t).cosh());
                (p * cs + u * (sn / s), u * cs + p * (s * sn))
            }
        }
    }

    /// Orthonormal, positively oriented basis of `T_p N` as the columns of a
    /// `coord_len x dim` matrix.
    pub fn tangent_frame(&self, p: &DVector<f64>) -> DMatrix<f64> {
        match self.model {
            Model::Flat => DMatrix::identity(self.dim, self.dim),
            Model::Hyperboloid => {
                let b = self.boost(p);
                b.columns(0, self.dim).into_owned()
            }
            Model::Sphere => {
                let n = self.coord_len();
                let unit = p / p.norm();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| unit[a].abs().total_cmp(&unit[b].abs()));
                let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.dim);
                for &k in &order {
                    if cols.len() == self.dim {
                        break;
                    }
                    let mut v = DVector::zeros(n);
                    v[k] = 1.0;
                    v -= &unit * unit[k];
                    for c in &cols {
                        let proj = c.dot(&v);
                        v -= c * proj;
                    }
                    let norm = v.norm();
                    if norm > 0.1 {
                        cols.push(v / norm);
                    }
                }
                let mut e = DMatrix::from_columns(&cols);
                if self.orientation(p, &e) < 0.0 {
                    let last = self.dim - 1;
                    e.column_mut(last).neg_mut();
                }
                e
            }
        }
    }

    /// Lorentz boost taking `scale * e_last` to `p` (hyperboloid only).
    fn boost(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let n = self.coord_len();
        let xi = p / self.scale();
        let c = xi[n - 1];
        let mut b = DMatrix::identity(n, n);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                b[(j, i)] += xi[i] * xi[j] / (1.0 + c);
            }
            b[(n - 1, i)] = xi[i];
        }
        b.set_column(n - 1, &xi);
        b
    }

    /// Sign-carrying orientation of the tangent basis in the columns of
    /// `vectors`: `det[v_1..v_dim]` (flat) or `det[v_1..v_dim, p]`.
    pub fn orientation(&self, p: &DVector<f64>, vectors: &DMatrix<f64>) -> f64 {
        match self.model {
            Model::Flat => vectors.determinant(),
            _ => {
                let n = self.coord_len();
                let mut m = DMatrix::zeros(n, n);
                m.columns_mut(0, self.dim).copy_from(vectors);
                m.set_column(n - 1, p);
                m.determinant()
            }
        }
    }

    /// Coordinates of a tangent vector at `p` whose Euclidean norm equals the
    /// `h`-norm, depending smoothly on `p`. Identity for flat and spherical
    /// models; boost-frame coefficients for the hyperboloid.
    pub(crate) fn isometric_coords(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self.model {
            Model::Hyperboloid => {
                let n = self.coord_len();
                let xi = p / self.scale();
                let c = xi[n - 1];
                // <B e_i, v>_-  with B e_i = e_i + xi_i/(1+c) (xi_s, 0) + xi_i e_last
                let spatial_dot: f64 = (0..n - 1).map(|j| xi[j] * v[j]).sum();
                DVector::from_fn(n - 1, |i, _| {
                    v[i] + xi[i] * spatial_dot / (1.0 + c) - xi[i] * v[n - 1]
                })
            }
            _ => v.clone(),
        }
    }

    /// Basis of Killing fields of the model evaluated at `p`: translations and
    /// rotations for flat space, `so(dim+1)` for the sphere and `so(dim,1)`
    /// for the hyperboloid.
    pub fn killing_fields(&self, p: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.coord_len();
        let mut out = Vec::new();
        if self.model == Model::Flat {
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                out.push(e);
            }
        }
        let spatial = if self.model == Model::Hyperboloid { n - 1 } else { n };
        for i in 0..spatial {
            for j in i + 1..spatial {
                let mut v = DVector::zeros(n);
                v[i] = p[j];
                v[j] = -p[i];
                out.push(v);
            }
        }
        if self.model == Model::Hyperboloid {
            let t = n - 1;
            for i in 0..t {
                let mut v = DVector::zeros(n);
                v[i] = p[t];
                v[t] = p[i];
                out.push(v);
            }
        }
        out
    }

    // ---------------------------------------------------------------------
    // Typed operations.

    fn check_same(a: &AmbientPoint, b: &AmbientPoint) -> Result<()> {
        if a.same_as(b) {
            Ok(())
        } else {
            Err(Error::BaseMismatch)
        }
    }

    pub fn metric_h(&self, a: &AmbientTangent, b: &AmbientTangent) -> Result<f64> {
        Self::check_same(&a.base, &b.base)?;
        Ok(self.form(&a.vec, &b.vec))
    }

    pub fn exp(&self, v: &AmbientTangent) -> AmbientPoint {
        AmbientPoint::new(self.exp_raw(&v.base.coords, &v.vec))
    }

    pub fn log(&self, p: &AmbientPoint, q: &AmbientPoint) -> Result<AmbientTangent> {
        let v = self.log_raw(&p.coords, &q.coords)?;
        Ok(AmbientTangent::new(p.clone(), v))
    }

    /// Geodesic distance between two points.
    pub fn distance(&self, p: &AmbientPoint, q: &AmbientPoint) -> Result<f64> {
        Ok(self.norm(&self.log(p, q)?.vec))
    }

    fn check_geodesic(&self, gamma_start: &AmbientTangent, x: &AmbientTangent) -> Result<()> {
        Self::check_same(&gamma_start.base, &x.base)?;
        let speed = self.norm(&gamma_start.vec);
        if (speed - 1.0).abs() > UNIT_SPEED_TOL {
            return Err(Error::NonUnitSpeed(speed));
        }
        Ok(())
    }

    /// Parallel transport of `x` by time `t` along the unit-speed geodesic
    /// starting with velocity `gamma_start`.
    pub fn parallel_transport(
        &self,
        gamma_start: &AmbientTangent,
        t: f64,
        x: &AmbientTangent,
    ) -> Result<AmbientTangent> {
        self.check_geodesic(gamma_start, x)?;
        let (point, vec) = self.transport_raw(&gamma_start.base.coords, &gamma_start.vec, t, &x.vec);
        Ok(AmbientTangent::new(AmbientPoint::new(point), vec))
    }

    /// Parallel transport by fixed-step RK4 integration of
    /// `X' + Gamma(gamma', X) = 0` together with the geodesic equation, in a
    /// stereographic (sphere) or Poincare-ball (hyperboloid) chart centered at
    /// the base point.
    pub fn transport_ode(
        &self,
        gamma_start: &AmbientTangent,
        t: f64,
        x: &AmbientTangent,
        steps: usize,
    ) -> Result<AmbientTangent> {
        self.check_geodesic(gamma_start, x)?;
        if steps == 0 {
            return Err(Error::Invalid("transport_ode needs at least one step".into()));
        }
        let p = &gamma_start.base.coords;
        if self.model == Model::Flat {
            // Zero Christoffel symbols: both equations are trivially affine.
            return Ok(AmbientTangent::new(
                AmbientPoint::new(p + &gamma_start.vec * t),
                x.vec.clone(),
            ));
        }
        let chart = ConformalChart::centered(self, p);
        let m = self.dim;
        let mut state = DVector::zeros(3 * m);
        let y_dot = chart.to_chart_vector(self, &gamma_start.vec);
        let x0 = chart.to_chart_vector(self, &x.vec);
        state.rows_mut(m, m).copy_from(&y_dot);
        state.rows_mut(2 * m, m).copy_from(&x0);
        let dt = t / steps as f64;
        for _ in 0..steps {
            let k1 = chart.rhs(&state);
            let k2 = chart.rhs(&(&state + &k1 * (0.5 * dt)));
            let k3 = chart.rhs(&(&state + &k2 * (0.5 * dt)));
            let k4 = chart.rhs(&(&state + &k3 * dt));
            state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let y = state.rows(0, m).into_owned();
        let xv = state.rows(2 * m, m).into_owned();
        let (point, jac) = chart.embed(&y);
        Ok(AmbientTangent::new(AmbientPoint::new(point), jac * xv))
    }

    /// `|P_t(x) - x|` measured in embedding coordinates.
    pub fn transport_deviation(
        &self,
        gamma_start: &AmbientTangent,
        t: f64,
        x: &AmbientTangent,
    ) -> Result<f64> {
        let moved = self.parallel_transport(gamma_start, t, x)?;
        Ok((&moved.vec - &x.vec).norm())
    }

    pub fn jacobi_coefficients(&self, t: f64) -> JacobiCoefficients {
        jacobi_coefficients(self.kappa, t)
    }

    /// Norm of a vector of `TTN` given by its horizontal and vertical parts.
    pub fn sasaki_norm(&self, horizontal: &AmbientTangent, vertical: &AmbientTangent) -> Result<f64> {
        Self::check_same(&horizontal.base, &vertical.base)?;
        let h2 = self.form(&horizontal.vec, &horizontal.vec);
        let v2 = self.form(&vertical.vec, &vertical.vec);
        Ok((h2 + v2).max(0.0).sqrt())
    }
}

/// Solutions of `u'' = -kappa u` with `u1 = (1, 0)`, `u2 = (0, 1)` initial data.
pub fn jacobi_coefficients(kappa: f64, t: f64) -> JacobiCoefficients {
    if kappa > 0.0 {
        let s = kappa.sqrt();
        JacobiCoefficients { u1: (s * t).cos(), u2: (s * t).sin() / s }
    } else if kappa < 0.0 {
        let s = (-kappa).sqrt();
        JacobiCoefficients { u1: (s * t).cosh(), u2: (s * t).sinh() / s }
    } else {
        JacobiCoefficients { u1: 1.0, u2: t }
    }
}

/// Conformal chart `h = e^{2 phi} |dy|^2`, `e^phi = 2R / (1 + sigma |y|^2)`,
/// centered at a base point.
struct ConformalChart {
    scale: f64,
    sigma: f64,
    center: DVector<f64>,
    frame: DMatrix<f64>,
    lowered_frame: DMatrix<f64>,
}

impl ConformalChart {
    fn centered(space: &AmbientSpace, p: &DVector<f64>) -> Self {
        let frame = space.tangent_frame(p);
        let mut lowered_frame = frame.clone();
        for mut c in lowered_frame.column_iter_mut() {
            let v = space.lower(&c.clone_owned());
            c.copy_from(&v);
        }
        Self {
            scale: space.scale(),
            sigma: if space.model() == Model::Sphere { 1.0 } else { -1.0 },
            center: p / space.scale(),
            frame,
            lowered_frame,
        }
    }

    /// Chart components of a tangent vector at the center (`d psi(0) = 2R E`).
    fn to_chart_vector(&self, _space: &AmbientSpace, v: &DVector<f64>) -> DVector<f64> {
        self.lowered_frame.transpose() * v / (2.0 * self.scale)
    }

    /// Embedding of a chart point and the Jacobian of the embedding there.
    fn embed(&self, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let r2 = y.dot(y);
        let num = &self.frame * y * 2.0 + &self.center * (1.0 - self.sigma * r2);
        let den = 1.0 + self.sigma * r2;
        let point = &num * (self.scale / den);
        let mut jac = DMatrix::zeros(self.center.len(), y.len());
        for j in 0..y.len() {
            let dnum = self.frame.column(j) * 2.0 - &self.center * (2.0 * self.sigma * y[j]);
            let dden = 2.0 * self.sigma * y[j];
            let col = (dnum * den - &num * dden) * (self.scale / (den * den));
            jac.set_column(j, &col);
        }
        (point, jac)
    }

    /// Right-hand side of the coupled geodesic and transport equations for
    /// the state `(y, y', X)`.
    fn rhs(&self, state: &DVector<f64>) -> DVector<f64> {
        let m = state.len() / 3;
        let y = state.rows(0, m);
        let v = state.rows(m, m);
        let x = state.rows(2 * m, m);
        let den = 1.0 + self.sigma * y.dot(&y);
        // grad phi
        let dphi = y * (-2.0 * self.sigma / den);
        let dphi_v = dphi.dot(&v);
        let dphi_x = dphi.dot(&x);
        let vv = v.dot(&v);
        let vx = v.dot(&x);
        let mut out = DVector::zeros(3 * m);
        for k in 0..m {
            out[k] = v[k];
            // Gamma^k_ij v^i v^j = 2 (dphi.v) v^k - |v|^2 dphi_k
            out[m + k] = -(2.0 * dphi_v * v[k] - vv * dphi[k]);
            // Gamma^k_ij v^i X^j = (dphi.X) v^k + (dphi.v) X^k - (v.X) dphi_k
            out[2 * m + k] = -(dphi_x * v[k] + dphi_v * x[k] - vx * dphi[k]);
        }
        out
    }
}
