//! Analytic builtin shells and seeded random perturbations.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambient::AmbientSpace;
use crate::chart::{ChartGrid, FormField, MetricField};
use crate::immersion::DiscreteImmersion;
use crate::{par, Error, Result};

/// Half-width of the charts of the curved builtins.
const CAP_HALF_WIDTH: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Plane,
    ScaledPlane,
    Cylinder,
    SphereCap,
    EquatorBand,
    GeodesicBand,
}

/// A chart, ambient space, immersion and reference data bundled together.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub space: AmbientSpace,
    pub f: DiscreteImmersion,
    pub g: MetricField,
    pub b: FormField,
}

impl Builtin {
    pub const ALL: [Builtin; 6] = [
        Builtin::Plane,
        Builtin::ScaledPlane,
        Builtin::Cylinder,
        Builtin::SphereCap,
        Builtin::EquatorBand,
        Builtin::GeodesicBand,
    ];

    /// The isometric builtins, one per test family.
    pub const COMPATIBLE: [Builtin; 5] = [
        Builtin::Plane,
        Builtin::Cylinder,
        Builtin::SphereCap,
        Builtin::EquatorBand,
        Builtin::GeodesicBand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Plane => "plane",
            Builtin::ScaledPlane => "scaled_plane",
            Builtin::Cylinder => "cylinder",
            Builtin::SphereCap => "sphere_cap",
            Builtin::EquatorBand => "equator_band",
            Builtin::GeodesicBand => "geodesic_band",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn kappa(self) -> f64 {
        match self {
            Builtin::EquatorBand => 1.0,
            Builtin::GeodesicBand => -1.0,
            _ => 0.0,
        }
    }

    pub fn space(self) -> AmbientSpace {
        AmbientSpace::new(self.kappa(), 3).expect("builtin spaces are valid")
    }

    pub fn ranges(self) -> [[f64; 2]; 2] {
        let a = CAP_HALF_WIDTH;
        match self {
            Builtin::SphereCap | Builtin::EquatorBand => [[FRAC_PI_2 - a, FRAC_PI_2 + a], [-a, a]],
            Builtin::GeodesicBand => [[-a, a], [-a, a]],
            _ => [[0.0, 1.0], [0.0, 1.0]],
        }
    }

    pub fn grid(self, n: usize) -> Result<ChartGrid> {
        ChartGrid::new(vec![n, n], self.ranges().to_vec(), vec![false, false])
    }

    pub fn point(self, x: &[f64]) -> DVector<f64> {
        let (u, v) = (x[0], x[1]);
        match self {
            Builtin::Plane => DVector::from_vec(vec![u, v, 0.0]),
            Builtin::ScaledPlane => DVector::from_vec(vec![2.0 * u, 2.0 * v, 0.0]),
            Builtin::Cylinder => DVector::from_vec(vec![u.cos(), u.sin(), v]),
            Builtin::SphereCap => DVector::from_vec(vec![u.sin() * v.cos(), u.sin() * v.sin(), u.cos()]),
            Builtin::EquatorBand => DVector::from_vec(vec![u.sin() * v.cos(), u.sin() * v.sin(), u.cos(), 0.0]),
            Builtin::GeodesicBand => {
                DVector::from_vec(vec![u.sinh(), u.cosh() * v.sinh(), 0.0, u.cosh() * v.cosh()])
            }
        }
    }

    /// Analytic differential (columns `d_u f`, `d_v f`).
    pub fn jacobian(self, x: &[f64]) -> DMatrix<f64> {
        let (u, v) = (x[0], x[1]);
        let cols: [Vec<f64>; 2] = match self {
            Builtin::Plane => [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            Builtin::ScaledPlane => [vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]],
            Builtin::Cylinder => [vec![-u.sin(), u.cos(), 0.0], vec![0.0, 0.0, 1.0]],
            Builtin::SphereCap => [
                vec![u.cos() * v.cos(), u.cos() * v.sin(), -u.sin()],
                vec![-u.sin() * v.sin(), u.sin() * v.cos(), 0.0],
            ],
            Builtin::EquatorBand => [
                vec![u.cos() * v.cos(), u.cos() * v.sin(), -u.sin(), 0.0],
                vec![-u.sin() * v.sin(), u.sin() * v.cos(), 0.0, 0.0],
            ],
            Builtin::GeodesicBand => [
                vec![u.cosh(), u.sinh() * v.sinh(), 0.0, u.sinh() * v.cosh()],
                vec![0.0, u.cosh() * v.cosh(), 0.0, u.cosh() * v.sinh()],
            ],
        };
        DMatrix::from_columns(&[DVector::from_vec(cols[0].clone()), DVector::from_vec(cols[1].clone())])
    }

    /// Analytic oriented unit normal.
    pub fn normal(self, x: &[f64]) -> DVector<f64> {
        match self {
            Builtin::Plane | Builtin::ScaledPlane => DVector::from_vec(vec![0.0, 0.0, 1.0]),
            Builtin::Cylinder => DVector::from_vec(vec![x[0].cos(), x[0].sin(), 0.0]),
            Builtin::SphereCap => self.point(x),
            Builtin::EquatorBand => DVector::from_vec(vec![0.0, 0.0, 0.0, -1.0]),
            Builtin::GeodesicBand => DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]),
        }
    }

    /// Reference metric: the pullback of the ambient metric.
    pub fn metric(self, x: &[f64]) -> DMatrix<f64> {
        let diag = |a: f64, b: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]));
        match self {
            Builtin::Plane | Builtin::Cylinder => DMatrix::identity(2, 2),
            Builtin::ScaledPlane => DMatrix::identity(2, 2) * 4.0,
            Builtin::SphereCap | Builtin::EquatorBand => diag(1.0, x[0].sin().powi(2)),
            Builtin::GeodesicBand => diag(1.0, x[0].cosh().powi(2)),
        }
    }

    /// Reference second fundamental form, under the orientation of [`Self::normal`].
    pub fn form(self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Builtin::Cylinder => DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.0])),
            Builtin::SphereCap => -self.metric(x),
            _ => DMatrix::zeros(2, 2),
        }
    }

    /// Reference shape operator `g^{-1} b`.
    pub fn shape(self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Builtin::SphereCap => -DMatrix::identity(2, 2),
            _ => {
                let g = self.metric(x);
                let b = self.form(x);
                DMatrix::from_fn(2, 2, |i, j| b[(i, j)] / g[(i, i)])
            }
        }
    }

    pub fn immersion(self, grid: &ChartGrid) -> Result<DiscreteImmersion> {
        DiscreteImmersion::from_fn(grid, self.space(), |x| self.point(x))
    }

    pub fn metric_field(self, grid: &ChartGrid) -> Result<MetricField> {
        MetricField::from_fn(grid, |x| self.metric(x))
    }

    pub fn form_field(self, grid: &ChartGrid) -> Result<FormField> {
        FormField::from_fn(grid, |x| self.form(x))
    }

    /// The builtin on its default `n x n` chart with its own reference data.
    pub fn scenario(self, n: usize) -> Result<Scenario> {
        let grid = self.grid(n)?;
        Ok(Scenario {
            name: self.name().to_string(),
            space: self.space(),
            f: self.immersion(&grid)?,
            g: self.metric_field(&grid)?,
            b: self.form_field(&grid)?,
        })
    }
}

/// Smooth random scalar field: a trigonometric polynomial of degree
/// `modes` (unit period length in chart coordinates, measured from the lower
/// corner) with decaying coefficients.
#[derive(Debug, Clone)]
pub struct TrigField {
    ranges: Vec<[f64; 2]>,
    terms: Vec<(Vec<f64>, f64, f64)>,
}

impl TrigField {
    pub fn random(rng: &mut impl Rng, grid: &ChartGrid, modes: usize) -> Self {
        let d = grid.d();
        let mut terms = vec![];
        let mut k = vec![0usize; d];
        loop {
            let freq: Vec<f64> = k.iter().map(|&m| 2.0 * PI * m as f64).collect();
            let decay = 1.0 + k.iter().map(|&m| (m * m) as f64).sum::<f64>();
            let amp = rng.random_range(-1.0..1.0) / decay;
            let phase = rng.random_range(0.0..2.0 * PI);
            terms.push((freq, amp, phase));
            // odometer over the mode multi-index
            let mut axis = 0;
            loop {
                if axis == d {
                    return Self { ranges: grid.ranges().to_vec(), terms };
                }
                k[axis] += 1;
                if k[axis] <= modes {
                    break;
                }
                k[axis] = 0;
                axis += 1;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let xi: Vec<f64> = x.iter().zip(&self.ranges).map(|(v, r)| v - r[0]).collect();
        self.terms
            .iter()
            .map(|(freq, amp, phase)| amp * (freq.iter().zip(&xi).map(|(w, s)| w * s).sum::<f64>() + phase).cos())
            .sum()
    }
}

/// Removes the Killing (rigid-motion) components of a tangent field along
/// `f` in the weighted `L^2(dVol)` pairing.
pub fn remove_rigid_components(f: &DiscreteImmersion, field: &mut [DVector<f64>]) {
    let space = f.space();
    let grid = f.grid();
    let weights: Vec<f64> = (0..grid.node_count()).map(|n| grid.quadrature_weight(n)).collect();
    let killing: Vec<Vec<DVector<f64>>> = f.points().iter().map(|p| space.killing_fields(p)).collect();
    let m = killing[0].len();
    let pair = |a: &dyn Fn(usize) -> DVector<f64>, b: &dyn Fn(usize) -> DVector<f64>| {
        let terms: Vec<f64> = (0..grid.node_count()).map(|n| weights[n] * space.form(&a(n), &b(n))).collect();
        par::pairwise_sum(&terms)
    };
    let gram = DMatrix::from_fn(m, m, |i, j| pair(&|n| killing[n][i].clone(), &|n| killing[n][j].clone()));
    let rhs = DVector::from_fn(m, |i, _| pair(&|n| killing[n][i].clone(), &|n| field[n].clone()));
    let coeffs = gram.pseudo_inverse(1e-12).map(|pinv| pinv * rhs).unwrap_or_else(|_| DVector::zeros(m));
    for (n, v) in field.iter_mut().enumerate() {
        for i in 0..m {
            *v -= &killing[n][i] * coeffs[i];
        }
    }
}

/// Smooth random tangent field along `f` with rigid components removed,
/// scaled so its largest `h`-norm equals `amplitude`.
pub fn random_tangent_field(f: &DiscreteImmersion, amplitude: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = f.space();
    let grid = f.grid();
    let comps: Vec<TrigField> = (0..space.coord_len()).map(|_| TrigField::random(&mut rng, grid, 2)).collect();
    let mut field: Vec<DVector<f64>> = (0..grid.node_count())
        .map(|n| {
            let x = grid.position(n);
            let raw = DVector::from_fn(space.coord_len(), |c, _| comps[c].eval(&x));
            space.project_tangent(&f.points()[n], &raw)
        })
        .collect();
    remove_rigid_components(f, &mut field);
    let peak = field.iter().map(|v| space.norm(v)).fold(0.0, f64::max);
    if peak > 0.0 {
        for v in field.iter_mut() {
            *v *= amplitude / peak;
        }
    }
    field
}

/// `exp_f(delta)` node by node, with the result renormalized onto the model.
pub fn displace(f: &DiscreteImmersion, delta: &[DVector<f64>]) -> Result<DiscreteImmersion> {
    let space = f.space();
    let points = par::try_map(f.grid().node_count(), |n| {
        let q = space.exp_raw(&f.points()[n], &delta[n]);
        space.normalize_point(&q)
    })?;
    f.with_points(points)
}

/// Smooth seeded perturbation of amplitude `amplitude` (largest pointwise
/// displacement), free of rigid motions.
pub fn perturb(f: &DiscreteImmersion, amplitude: f64, seed: u64) -> Result<DiscreteImmersion> {
    if !(amplitude >= 0.0) {
        return Err(Error::Invalid(format!("perturbation amplitude must be >= 0, got {amplitude}")));
    }
    let delta = random_tangent_field(f, amplitude, seed);
    displace(f, &delta)
}

/// Random symmetric `d x d` matrix with entries in `[-scale, scale]`.
pub fn random_symmetric(rng: &mut impl Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
    (&a + a.transpose()) * 0.5
}

/// Smooth random reference pair: `g = (I + A(x))^T (I + A(x))`-type metric
/// with bounded distortion and a smooth symmetric form of size `form_scale`.
pub fn random_reference(
    rng: &mut impl Rng,
    grid: &ChartGrid,
    metric_scale: f64,
    form_scale: f64,
) -> Result<(MetricField, FormField)> {
    let d = grid.d();
    let gf: Vec<Vec<TrigField>> = (0..d).map(|_| (0..d).map(|_| TrigField::random(rng, grid, 1)).collect()).collect();
    let bf: Vec<Vec<TrigField>> = (0..d).map(|_| (0..d).map(|_| TrigField::random(rng, grid, 1)).collect()).collect();
    let g = MetricField::from_fn(grid, |x| {
        let a = DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta + metric_scale * gf[i][j].eval(x)
        });
        a.transpose() * a
    })?;
    let b = FormField::from_fn(grid, |x| {
        let m = DMatrix::from_fn(d, d, |i, j| form_scale * bf[i][j].eval(x));
        (&m + m.transpose()) * 0.5
    })?;
    Ok((g, b))
}
