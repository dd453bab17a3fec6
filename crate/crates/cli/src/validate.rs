//! The quick invariant suite behind `shellrig validate`, run across the
//! `kappa = -1, 0, 1` builtins at small resolutions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shellrig_core::ambient::{jacobi_coefficients, AmbientPoint, AmbientSpace, AmbientTangent};
use shellrig_core::chart::{ChartGrid, FormField, MetricField};
use shellrig_core::compatibility::gcm_residuals;
use shellrig_core::energy::energy_p;
use shellrig_core::minimize::{gradient, minimize, MinimizeConfig, Status};
use shellrig_core::scenarios::{perturb, random_reference, random_tangent_field, Builtin};
use shellrig_core::thickening::{
    admissible_epsilon, closed_form_df, equivalence_constants, second_form_of_slice, uniform_samples, JacobiFn,
    NormalExtension, ThickenedMetric, DEFAULT_T_SAMPLES,
};
use shellrig_core::Result;

use crate::report::Check;

pub const KAPPAS: [f64; 3] = [-1.0, 0.0, 1.0];

fn builtin_for(kappa: f64) -> Builtin {
    if kappa > 0.0 {
        Builtin::EquatorBand
    } else if kappa < 0.0 {
        Builtin::GeodesicBand
    } else {
        Builtin::Cylinder
    }
}

fn sup(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

fn unit_tangent(space: &AmbientSpace, rng: &mut ChaCha8Rng, p: &DVector<f64>) -> DVector<f64> {
    loop {
        let raw = DVector::from_fn(space.coord_len(), |_, _| rng.random_range(-1.0..1.0));
        let v = space.project_tangent(p, &raw);
        let n = space.norm(&v);
        if n > 1e-3 {
            return v / n;
        }
    }
}

fn random_point(space: &AmbientSpace, rng: &mut ChaCha8Rng) -> AmbientPoint {
    let o = space.origin();
    let u = unit_tangent(space, rng, &o.coords);
    let r: f64 = rng.random_range(0.0..1.0);
    space.exp(&AmbientTangent::new(o, u * r))
}

fn ambient_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    for (i, &kappa) in KAPPAS.iter().enumerate() {
        let space = AmbientSpace::new(kappa, 3)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100 + i as u64));
        let (mut roundtrip, mut ode, mut drift) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..20 {
            let p = random_point(&space, &mut rng);
            let v = unit_tangent(&space, &mut rng, &p.coords) * rng.random_range(0.0..1.0);
            let q = space.exp(&AmbientTangent::new(p.clone(), v.clone()));
            roundtrip = roundtrip.max((space.log(&p, &q)?.vec - &v).norm());

            let u = AmbientTangent::new(p.clone(), unit_tangent(&space, &mut rng, &p.coords));
            let x = AmbientTangent::new(p.clone(), unit_tangent(&space, &mut rng, &p.coords) * rng.random_range(0.1..2.0));
            let t = rng.random_range(-0.5..0.5);
            let closed = space.parallel_transport(&u, t, &x)?;
            let rk4 = space.transport_ode(&u, t, &x, 1000)?;
            ode = ode.max((&closed.vec - &rk4.vec).norm()).max((&closed.base.coords - &rk4.base.coords).norm());
            drift = drift.max((space.norm(&rk4.vec) - space.norm(&x.vec)).abs());
        }
        out.push(Check::at_most(format!("ambient.exp_log_roundtrip.kappa={kappa}"), roundtrip, 1e-9));
        out.push(Check::at_most(format!("ambient.transport_closed_form_vs_rk4.kappa={kappa}"), ode, 1e-6));
        out.push(Check::at_most(format!("ambient.transport_norm_drift.kappa={kappa}"), drift, 1e-9));
    }
    Ok(())
}

fn compatibility_checks(out: &mut Vec<Check>) -> Result<()> {
    for b in Builtin::COMPATIBLE {
        let s = b.scenario(32)?;
        let gcm = gcm_residuals(&s.g, &s.b, b.kappa())?.sup();
        out.push(Check::at_most(format!("compatibility.gcm_residual.{}", b.name()), gcm, 1e-3));
        let e = energy_p(&s.f, &s.g, &s.b, 2.0)?.total;
        out.push(Check::at_most(format!("energy.zero_on_isometry.{}", b.name()), e, 1e-6));
    }
    let grid = ChartGrid::unit_square(16)?;
    let umbilic = FormField::constant(&grid, DMatrix::identity(2, 2))?;
    let r = gcm_residuals(&MetricField::identity(&grid), &umbilic, 0.0)?;
    let off = sup(r.gauss_residual.iter().map(|v| (v + 1.0).abs()));
    out.push(Check::at_most("compatibility.incompatible_gauss_is_minus_one", off, 1e-3));

    let s = Builtin::Cylinder.scenario(32)?;
    let bending = energy_p(&s.f, &s.g, &FormField::zeros(s.f.grid()), 2.0)?.bending;
    out.push(Check::at_most("energy.cylinder_bending_against_flat_reference", (bending - 1.0).abs(), 1e-2));
    Ok(())
}

fn thickening_checks(seed: u64, jacobi: JacobiFn, out: &mut Vec<Check>) -> Result<()> {
    let grid = ChartGrid::unit_square(10)?;
    for (i, &kappa) in KAPPAS.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for trial in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(300 + 10 * i as u64 + trial));
            let (g, b) = random_reference(&mut rng, &grid, 0.2, 1.0)?;
            let floor = 0.1 * g.values().iter().map(|m| m.symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min);
            let eps = admissible_epsilon(&g, &b, kappa, floor)?;
            let tm = ThickenedMetric::with_jacobi(g, b.clone(), kappa, eps, jacobi)?;
            let bm = second_form_of_slice(&tm, 1e-3_f64.min(0.5 * eps))?;
            worst = worst.max(sup(bm.values().iter().zip(b.values()).map(|(x, y)| (x - y).amax())));
        }
        out.push(Check::at_most(format!("thickening.slice_form_matches_b.kappa={kappa}"), worst, 1e-4));
    }

    let grid = ChartGrid::unit_square(8)?;
    let flat = ThickenedMetric::with_jacobi(MetricField::identity(&grid), FormField::zeros(&grid), 0.0, 0.5, jacobi)?;
    let c = equivalence_constants(&flat, &uniform_samples(0.5, DEFAULT_T_SAMPLES))?;
    let off = [c.c1, c.c2, c.c3, c.c4].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    out.push(Check::at_most("thickening.equivalence_constants_flat", off, 1e-12));

    let eps = admissible_epsilon(
        &MetricField::identity(&grid),
        &FormField::constant(&grid, DMatrix::identity(2, 2))?,
        0.0,
        0.1,
    )?;
    out.push(Check::at_most("thickening.admissible_epsilon_umbilic", (eps - (1.0 - 0.1f64.sqrt())).abs(), 1e-4));

    for (i, &kappa) in KAPPAS.iter().enumerate() {
        let builtin = builtin_for(kappa);
        let grid = builtin.grid(12)?;
        let base = builtin.immersion(&grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(400 + i as u64));
        let (g, b) = random_reference(&mut rng, &grid, 0.2, 0.5)?;
        let f = perturb(&base, 0.03, seed.wrapping_add(500 + i as u64))?;
        let floor = 0.1 * g.values().iter().map(|m| m.symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min);
        let eps = admissible_epsilon(&g, &b, kappa, floor)?.min(0.5);
        let tm = ThickenedMetric::with_jacobi(g, b, kappa, eps, jacobi)?;
        let ext = NormalExtension::new(&f, &tm)?;
        let (mut gram, mut orient) = (0.0f64, f64::INFINITY);
        for node in 0..grid.node_count() {
            for t in uniform_samples(eps, DEFAULT_T_SAMPLES) {
                gram = gram.max(ext.gram_defect(node, t)?);
                orient = orient.min(ext.section_orientation(node, t)?);
            }
        }
        out.push(Check::at_most(format!("thickening.gram_identity.kappa={kappa}"), gram, 1e-8));
        out.push(Check::above(format!("thickening.section_orientation.kappa={kappa}"), orient, 0.0));
    }

    for builtin in [Builtin::Cylinder, Builtin::EquatorBand] {
        let errors = [17usize, 33]
            .iter()
            .map(|&n| {
                let s = builtin.scenario(n)?;
                let tm = ThickenedMetric::with_jacobi(s.g.clone(), s.b.clone(), builtin.kappa(), 0.3, jacobi)?;
                let ext = NormalExtension::new(&s.f, &tm)?;
                let h = s.f.grid().spacing(0);
                let mut worst: f64 = 0.0;
                for node in 0..s.f.grid().node_count() {
                    let x = s.f.grid().position(node);
                    let t = 0.2;
                    let exact = closed_form_df(
                        &s.space,
                        tm.jacobi(t),
                        &builtin.point(&x),
                        &builtin.jacobian(&x),
                        &builtin.normal(&x),
                        &builtin.shape(&x),
                        t,
                    );
                    worst = worst.max((ext.fd_df(node, t, h)? - exact).amax());
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?;
        let order = (errors[0] / errors[1]).log2();
        out.push(Check::at_least(format!("thickening.extension_df_order.{}", builtin.name()), order, 1.7));
    }
    Ok(())
}

fn immersion_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (i, &kappa) in KAPPAS.iter().enumerate() {
        let builtin = builtin_for(kappa);
        let grid = builtin.grid(12)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(600 + i as u64));
        let (g, _) = random_reference(&mut rng, &grid, 0.3, 0.0)?;
        let f = perturb(&builtin.immersion(&grid)?, 0.03, seed.wrapping_add(700 + i as u64))?;
        let polar = f.polar_factor(&g)?;
        let pullback = f.pullback_metric()?;
        for (node, pf) in polar.iter().enumerate() {
            let Some(ginv) = g.at(node).clone().try_inverse() else { continue };
            let m = &ginv * (g.at(node) - pullback.at(node));
            let rhs = (&m * &m).trace().max(0.0).sqrt();
            worst = worst.max(pf.dist - rhs * (1.0 + 1e-12));
        }
    }
    out.push(Check::at_most("immersion.polar_distance_inequality", worst, 1e-14));
    Ok(())
}

fn minimize_checks(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let s = Builtin::Plane.scenario(12)?;
    let cfg = MinimizeConfig { seed, ..Default::default() };
    let trace = minimize(&s.f, &s.g, &s.b, &cfg, None)?;
    out.push(Check::flag(
        "minimize.exact_start_converges",
        trace.status == Status::Converged && trace.last().iteration == 0,
        format!("status {} after {} iterations", trace.status.as_str(), trace.last().iteration),
    ));

    let s = Builtin::SphereCap.scenario(12)?;
    let f = perturb(&s.f, 0.02, seed.wrapping_add(800))?;
    let grad = gradient(&f, &s.g, &s.b, &cfg)?;
    let mut worst: f64 = 0.0;
    for k in 0..3u64 {
        let v = random_tangent_field(&f, 1.0, seed.wrapping_add(900 + k));
        let analytic: f64 = (0..grad.len()).map(|n| s.space.form(&grad[n], &v[n])).sum();
        let eta = 1e-5;
        let energy = |sign: f64| -> Result<f64> {
            let moved = (0..v.len()).map(|n| s.space.exp(&AmbientTangent::new(f.point(n), &v[n] * (sign * eta))).coords);
            Ok(energy_p(&f.with_points(moved.collect())?, &s.g, &s.b, 2.0)?.total)
        };
        let fd = (energy(1.0)? - energy(-1.0)?) / (2.0 * eta);
        worst = worst.max(((analytic - fd) / fd).abs());
    }
    out.push(Check::at_most("minimize.gradient_matches_directional_difference", worst, 1e-4));
    Ok(())
}

type Stage<'a> = dyn Fn(&mut Vec<Check>) -> Result<()> + 'a;

/// Runs the suite; `jacobi` replaces the Jacobi coefficients of every
/// thickened metric (pass [`jacobi_coefficients`] for the real suite).
pub fn run_suite(seed: u64, jacobi: JacobiFn) -> Vec<Check> {
    let mut out = vec![];
    let stages: [(&str, &Stage); 5] = [
        ("ambient", &|o| ambient_checks(seed, o)),
        ("compatibility", &|o| compatibility_checks(o)),
        ("thickening", &|o| thickening_checks(seed, jacobi, o)),
        ("immersion", &|o| immersion_checks(seed, o)),
        ("minimize", &|o| minimize_checks(seed, o)),
    ];
    for (name, stage) in stages {
        if let Err(e) = stage(&mut out) {
            out.push(Check::flag(format!("{name}.completed"), false, e.to_string()));
        }
    }
    out
}

pub fn default_suite(seed: u64) -> Vec<Check> {
    run_suite(seed, jacobi_coefficients)
}
