//! The per-command computations. Each returns results, named checks and
//! optional per-node tables; the caller assembles the report.

use serde_json::{json, Map, Value};
use shellrig_core::compatibility::gcm_residuals;
use shellrig_core::energy::{energy_p, energy_physics, EnergyBreakdown};
use shellrig_core::minimize::{minimize, MinimizeConfig, MinimizeTrace};
use shellrig_core::thickening::{
    admissible_epsilon, equivalence_constants, rigidity_gap, second_form_of_slice, uniform_samples, NormalExtension,
    ThickenedMetric, DEFAULT_T_SAMPLES,
};
use shellrig_core::Error;

use crate::problem::{InputError, Problem};
use crate::report::{float, Check, Table};

pub const DEFAULT_FLOOR: f64 = 0.1;
pub const DEFAULT_H_T: f64 = 1e-3;
pub const DEFAULT_BM_TOL: f64 = 1e-4;
pub const DEFAULT_GRAM_TOL: f64 = 1e-8;
pub const DEFAULT_DF_TOL: f64 = 5e-2;
/// Largest default thickness for `extend`.
pub const EXTEND_EPSILON_CAP: f64 = 0.25;
pub const MODEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Input(InputError),
    Core(Error),
}

impl From<InputError> for RunError {
    fn from(e: InputError) -> Self {
        RunError::Input(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Input(e) => write!(f, "input error: {e}"),
            RunError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Map<String, Value>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

fn breakdown(e: &EnergyBreakdown) -> Value {
    json!({ "stretching": e.stretching, "bending": e.bending, "total": e.total, "p": e.p })
}

fn node_columns(problem: &Problem, node: usize) -> Vec<String> {
    let m = problem.grid.multi_index(node);
    let x = problem.grid.position(node);
    vec![node.to_string(), m[0].to_string(), m[1].to_string(), float(x[0]), float(x[1])]
}

/// Per-node table: `node, i, j, x, y` followed by `extra` columns.
fn node_table(file: &str, extra: &[&str]) -> Table {
    let mut header = vec!["node", "i", "j", "x", "y"];
    header.extend_from_slice(extra);
    Table::new(file, &header)
}

fn sup(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

pub fn energy(problem: &Problem) -> Result<Outcome, RunError> {
    let f = problem.immersion()?;
    let p = problem.file.p;
    let e = energy_p(f, &problem.g, &problem.b, p)?;
    let phys = energy_physics(f, &problem.g, &problem.b, p)?;
    let mut out = Outcome::default();
    out.results.insert("energy_p".into(), breakdown(&e));
    out.results.insert("energy_physics".into(), breakdown(&phys));
    out.checks.push(Check::at_least("energy.nonnegative", e.stretching.min(e.bending), 0.0));
    if let Some(max) = problem.file.options.energy_max {
        out.checks.push(Check::at_most("energy.total_le_max", e.total, max));
    }
    let mut table = node_table("energy_density.csv", &["stretching", "bending"]);
    for n in 0..problem.grid.node_count() {
        let mut row = node_columns(problem, n);
        row.push(float(e.stretching_density[n]));
        row.push(float(e.bending_density[n]));
        table.rows.push(row);
    }
    out.tables.push(table);
    Ok(out)
}

pub fn gcm(problem: &Problem) -> Result<Outcome, RunError> {
    let r = gcm_residuals(&problem.g, &problem.b, problem.space.kappa())?;
    let mut out = Outcome::default();
    let mean_gauss = r.gauss_residual.iter().sum::<f64>() / r.gauss_residual.len() as f64;
    out.results.insert(
        "gcm".into(),
        json!({ "gauss_sup": r.gauss_sup, "codazzi_sup": r.codazzi_sup, "sup": r.sup(), "gauss_mean": mean_gauss }),
    );
    out.checks.push(Check::flag("gcm.finite", r.sup().is_finite(), "all residuals are finite"));
    if let Some(max) = problem.file.options.residual_max {
        out.checks.push(Check::at_most("gcm.sup_le_max", r.sup(), max));
    }
    let mut table = node_table("gcm.csv", &["gauss", "codazzi_1", "codazzi_2"]);
    for n in 0..problem.grid.node_count() {
        let mut row = node_columns(problem, n);
        row.push(float(r.gauss_residual[n]));
        row.push(float(r.codazzi_residual[n][0]));
        row.push(float(r.codazzi_residual[n][1]));
        table.rows.push(row);
    }
    out.tables.push(table);
    Ok(out)
}

fn thickened(problem: &Problem, cap: f64) -> Result<(ThickenedMetric, Vec<f64>, f64), RunError> {
    let o = &problem.file.options;
    let kappa = problem.space.kappa();
    let eps = match o.epsilon {
        Some(e) => e,
        None => admissible_epsilon(&problem.g, &problem.b, kappa, o.floor.unwrap_or(DEFAULT_FLOOR))?.min(cap),
    };
    let samples = o.t_samples.unwrap_or(DEFAULT_T_SAMPLES);
    if samples < 2 {
        return Err(InputError::new("options.t_samples", "need at least 2 samples").into());
    }
    let tm = ThickenedMetric::new(problem.g.clone(), problem.b.clone(), kappa, eps)?;
    Ok((tm, uniform_samples(eps, samples), eps))
}

pub fn thicken(problem: &Problem) -> Result<Outcome, RunError> {
    let o = &problem.file.options;
    let (tm, ts, eps) = thickened(problem, f64::INFINITY)?;
    let mut min_eig = f64::INFINITY;
    for n in 0..problem.grid.node_count() {
        for &t in &ts {
            min_eig = min_eig.min(tm.metric_g(n, t)?.symmetric_eigenvalues().min());
        }
    }
    let c = equivalence_constants(&tm, &ts)?;
    let h_t = o.h_t.unwrap_or(DEFAULT_H_T).min(0.5 * eps);
    let bm = second_form_of_slice(&tm, h_t)?;
    let defect = sup(bm.values().iter().zip(problem.b.values()).map(|(x, y)| (x - y).amax()));
    let mut out = Outcome::default();
    out.results.insert("epsilon".into(), json!(eps));
    out.results.insert("min_eigenvalue_g".into(), json!(min_eig));
    out.results.insert("equivalence_constants".into(), json!({ "c1": c.c1, "c2": c.c2, "c3": c.c3, "c4": c.c4 }));
    out.results.insert("slice_form".into(), json!({ "h_t": h_t, "sup_defect": defect }));
    out.checks.push(Check::above("thicken.g_positive_definite", min_eig, 0.0));
    out.checks.push(Check::flag(
        "thicken.equivalence_constants_valid",
        c.c1 > 0.0 && c.c1 <= c.c2 && c.c2.is_finite() && c.c3 > 0.0 && c.c3 <= c.c4 && c.c4.is_finite(),
        "0 < c1 <= c2 < inf and 0 < c3 <= c4 < inf",
    ));
    out.checks.push(Check::at_most("thicken.slice_form_matches_b", defect, o.bm_tol.unwrap_or(DEFAULT_BM_TOL)));
    Ok(out)
}

pub fn extend(problem: &Problem) -> Result<Outcome, RunError> {
    let f = problem.immersion()?;
    let o = &problem.file.options;
    let (tm, ts, eps) = thickened(problem, EXTEND_EPSILON_CAP)?;
    let ext = NormalExtension::new(f, &tm)?;
    let h_t = o.h_t.unwrap_or(DEFAULT_H_T).min(0.25 * eps);
    let nodes = problem.grid.node_count();
    let mut table = node_table("extension.csv", &["gram_defect", "df_defect", "orientation"]);
    let (mut gram, mut df_defect, mut orient) = (0.0f64, 0.0f64, f64::INFINITY);
    for n in 0..nodes {
        let (mut g_n, mut d_n, mut o_n) = (0.0f64, 0.0f64, f64::INFINITY);
        for &t in &ts {
            g_n = g_n.max(ext.gram_defect(n, t)?);
            o_n = o_n.min(ext.section_orientation(n, t)?);
            let an = ext.analytic_df(n, t)?;
            let fd = ext.fd_df(n, t, h_t)?;
            d_n = d_n.max((&fd - &an).norm() / an.norm().max(1e-300));
        }
        gram = gram.max(g_n);
        df_defect = df_defect.max(d_n);
        orient = orient.min(o_n);
        let mut row = node_columns(problem, n);
        row.extend([float(g_n), float(d_n), float(o_n)]);
        table.rows.push(row);
    }
    let gap = rigidity_gap(f, &tm, problem.file.p, &ts)?;
    let mut out = Outcome::default();
    out.results.insert("epsilon".into(), json!(eps));
    out.results.insert("gram_defect_sup".into(), json!(gram));
    out.results.insert("df_relative_defect_sup".into(), json!(df_defect));
    out.results.insert("min_orientation".into(), json!(orient));
    out.results.insert("rigidity_gap".into(), json!({ "lhs": gap.lhs, "energy": gap.energy, "ratio": gap.ratio }));
    out.checks.push(Check::at_most("extend.gram_identity", gram, o.gram_tol.unwrap_or(DEFAULT_GRAM_TOL)));
    out.checks.push(Check::above("extend.section_orientation_positive", orient, 0.0));
    out.checks.push(Check::at_most("extend.df_agreement", df_defect, o.df_tol.unwrap_or(DEFAULT_DF_TOL)));
    if let Some(c) = o.c_cal {
        out.checks.push(Check::at_most("extend.rotation_distance_bound", gap.ratio, c));
    }
    out.tables.push(table);
    Ok(out)
}

pub fn minimize_config(problem: &Problem, seed: u64) -> MinimizeConfig {
    let o = &problem.file.options;
    let d = MinimizeConfig::default();
    MinimizeConfig {
        p: problem.file.p,
        max_iters: o.max_iters.unwrap_or(d.max_iters),
        grad_step: o.grad_step.unwrap_or(d.grad_step),
        tol_energy: o.tol_energy.unwrap_or(d.tol_energy),
        tol_grad: o.tol_grad.unwrap_or(d.tol_grad),
        seed,
        line_search: d.line_search,
    }
}

fn trace_table(trace: &MinimizeTrace) -> Table {
    let mut table = Table::new("trace.csv", &MinimizeTrace::CSV_HEADER);
    let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
    for r in &trace.rows {
        table.rows.push(vec![
            r.iteration.to_string(),
            float(r.stretching),
            float(r.bending),
            float(r.total),
            float(r.grad_norm),
            opt(r.w1p),
            opt(r.normal_w1p),
            float(r.step),
        ]);
    }
    table
}

pub fn minimize_cmd(problem: &Problem, seed: u64) -> Result<Outcome, RunError> {
    let f0 = problem.immersion()?;
    let o = &problem.file.options;
    let cfg = minimize_config(problem, seed);
    cfg.validate().map_err(|e| InputError::new("options", e.to_string()))?;
    let reference = o
        .reference_immersion
        .as_deref()
        .map(|s| problem.named_immersion("options.reference_immersion", s))
        .transpose()?;
    if let Some(expected) = &o.expect_status {
        if !["converged", "stalled", "max_iters"].contains(&expected.as_str()) {
            return Err(InputError::new("options.expect_status", format!("unknown status '{expected}'")).into());
        }
    }
    let trace = minimize(f0, &problem.g, &problem.b, &cfg, reference.as_ref())?;
    let last = trace.last();
    let rise = trace.rows.windows(2).map(|w| w[1].total - w[0].total).fold(f64::NEG_INFINITY, f64::max);
    let rise = if rise.is_finite() { rise.max(0.0) } else { 0.0 };
    let f = &trace.immersion;
    let defect = sup(f.points().iter().map(|x| f.space().constraint_defect(x)));

    let mut out = Outcome::default();
    out.results.insert("status".into(), json!(trace.status.as_str()));
    out.results.insert("iterations".into(), json!(last.iteration));
    out.results.insert("initial_energy".into(), json!(trace.rows[0].total));
    out.results.insert(
        "final".into(),
        json!({
            "stretching": last.stretching,
            "bending": last.bending,
            "total": last.total,
            "grad_norm": last.grad_norm,
            "w1p": last.w1p,
            "normal_w1p": last.normal_w1p,
        }),
    );
    out.results.insert("model_defect".into(), json!(defect));
    out.checks.push(Check::at_most("minimize.energy_never_increases", rise, 0.0));
    out.checks.push(Check::at_most("minimize.model_constraints", defect, MODEL_TOL));
    if let Some(expected) = &o.expect_status {
        let got = trace.status.as_str();
        out.checks.push(Check::flag("minimize.status", got == expected, format!("expected {expected}, got {got}")));
    }
    if let Some(max) = o.energy_max {
        out.checks.push(Check::at_most("minimize.final_energy_le_max", last.total, max));
    }
    if let Some(min) = o.energy_min {
        out.checks.push(Check::at_least("minimize.final_energy_ge_min", last.total, min));
    }
    for (name, limit, value) in [
        ("minimize.w1p_le_max", o.w1p_max, last.w1p),
        ("minimize.normal_w1p_le_max", o.normal_w1p_max, last.normal_w1p),
    ] {
        if let Some(limit) = limit {
            match value {
                Some(v) => out.checks.push(Check::at_most(name, v, limit)),
                None => {
                    return Err(InputError::new("options.reference_immersion", format!("{name} needs a reference")).into())
                }
            }
        }
    }
    out.tables.push(trace_table(&trace));
    Ok(out)
}
