//! Experiment orchestration: execute a resolved configuration, collect
//! check outcomes, and write the report and data artifacts.
//!
//! Experiments run sequentially on a single seeded generator; inner kernels
//! may parallelize but reduce deterministically, so a fixed config + seed
//! reproduces the report byte for byte (wall times excepted, which live in
//! the metadata field).

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentKind, Resolved};
use crate::frame::{hormander_rank, FrameError};
use crate::grid::{GridError, GridFunction};
use crate::group::{sample_in_ball, GroupError};
use crate::op::{
    check_ellipticity, check_scaling, check_smp_hypotheses, ellipticity_lower_bound,
    estimate_moduli, OperatorError,
};
use crate::report::{csv_table, CheckOutcome, Metadata, Report, SCHEMA_VERSION};
use crate::semiconvex::{
    domain_shrink, grid_metric_lipschitz, inf_convolution, semiconvexity_constant,
    sup_convolution, translation_max_with_mask, SemiError,
};
use crate::solver::{p_limit_study, smp_witness, solve, DirichletProblem, SolveError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Semi(#[from] SemiError),
    #[error("cannot write artifact: {0}")]
    Io(#[from] std::io::Error),
    #[error("report assembly: {0}")]
    Json(#[from] serde_json::Error),
}

pub struct RunOutcome {
    pub passed: bool,
    pub report_path: PathBuf,
    pub report: Report,
}

struct Ctx<'a> {
    cfg: &'a Resolved,
    rng: ChaCha8Rng,
    checks: Vec<CheckOutcome>,
    details: Map<String, Value>,
    artifacts: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn push(&mut self, outcome: CheckOutcome) {
        self.checks.push(outcome);
    }

    fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        std::fs::write(self.cfg.out_dir.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Runs the configured experiment, writes `report.json` (and any CSV/grid
/// artifacts) under the output directory, and returns the overall verdict.
pub fn run(cfg: &Resolved, quiet: bool) -> Result<RunOutcome, ExperimentError> {
    let t0 = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut ctx = Ctx {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        checks: Vec::new(),
        details: Map::new(),
        artifacts: Vec::new(),
    };
    match cfg.kind {
        ExperimentKind::Checks => run_checks(&mut ctx)?,
        ExperimentKind::Solve => run_solve(&mut ctx)?,
        ExperimentKind::Comparison => run_comparison(&mut ctx)?,
        ExperimentKind::PLimit => run_p_limit(&mut ctx)?,
        ExperimentKind::Convolution => run_convolution(&mut ctx)?,
        ExperimentKind::TranslationMap => run_translation_map(&mut ctx)?,
        ExperimentKind::Smp => run_smp(&mut ctx)?,
    }
    let passed = ctx.checks.iter().all(|c| c.passed);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.kind.name().to_string(),
        passed,
        config: cfg.summary(),
        checks: ctx.checks,
        details: Value::Object(ctx.details),
        artifacts: ctx.artifacts,
        metadata: Metadata { wall_time_s: t0.elapsed().as_secs_f64() },
    };
    let report_path = report.write(&cfg.out_dir)?;
    if !quiet {
        for c in &report.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            match (c.value, c.bound) {
                (Some(v), Some(b)) => println!("[{tag}] {} (value {v:.6e}, bound {b:.6e})", c.name),
                (Some(v), None) => println!("[{tag}] {} (value {v:.6e})", c.name),
                _ => println!("[{tag}] {}", c.name),
            }
        }
        println!(
            "experiment {}: {} -> {}",
            cfg.kind,
            if passed { "PASS" } else { "FAIL" },
            report_path.display()
        );
    }
    Ok(RunOutcome { passed, report_path, report })
}

// ------------------------------------------------------------------ checks

fn run_checks(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let m = cfg.group.layer_dims[0];
    let validation = cfg.group.validate();
    ctx.push(CheckOutcome::new("group_table_valid", validation.is_valid()));

    let origin = vec![0.0; cfg.group.dim];
    let (rank, depth) = hormander_rank(&cfg.group, &origin, cfg.group.step + 1)?;
    ctx.push(
        CheckOutcome::new("hormander_full_rank", rank == cfg.group.dim)
            .with_value(rank as f64)
            .with_note(format!("attained at bracket depth {depth}")),
    );

    let ell = check_ellipticity(&cfg.op, m, 2.0, cfg.samples, &mut ctx.rng)?;
    ctx.push(
        CheckOutcome::new("ellipticity_positive", ell.violations == 0)
            .with_value(ell.min_energy),
    );

    let scaling = check_scaling(&cfg.op, m, 2.0, 4.0, cfg.samples, &mut ctx.rng)?;
    ctx.push(
        CheckOutcome::new("scaling_matrix_bound", scaling.matrix_part.ok())
            .with_value(scaling.matrix_part.worst_slack),
    );
    ctx.push(
        CheckOutcome::new("scaling_h_bound", scaling.h_part.ok())
            .with_value(scaling.h_part.worst_slack),
    );

    let smp = check_smp_hypotheses(&cfg.op, m, 2.0, cfg.samples, &mut ctx.rng)?;
    ctx.push(
        CheckOutcome::new("smp_monotonicity", smp.monotonicity.ok())
            .with_value(smp.monotonicity.worst_slack),
    );
    ctx.push(
        CheckOutcome::new("smp_lambda_scaling", smp.lambda_scaling.ok())
            .with_value(smp.lambda_scaling.worst_slack),
    );
    ctx.push(
        CheckOutcome::new("smp_positivity", smp.positivity.ok())
            .with_value(smp.positivity.worst_slack),
    );

    let mut xi = DVector::zeros(m);
    xi[0] = 2.0;
    let lb = ellipticity_lower_bound(&cfg.op, &xi, 1.0, 64, &mut ctx.rng)?;
    ctx.push(
        CheckOutcome::new("ellipticity_lower_bound", lb.ok)
            .with_value(lb.lhs)
            .with_bound(lb.rhs),
    );

    let moduli = estimate_moduli(
        &cfg.op,
        m,
        0.5,
        2.0,
        &[0.05, 0.1, 0.2, 0.4],
        400,
        &mut ctx.rng,
    )?;
    ctx.detail("ellipticity", serde_json::to_value(&ell)?);
    ctx.detail("scaling", serde_json::to_value(&scaling)?);
    ctx.detail("smp_hypotheses", serde_json::to_value(&smp)?);
    ctx.detail("lower_bound", serde_json::to_value(&lb)?);
    ctx.detail("moduli", serde_json::to_value(&moduli)?);
    Ok(())
}

// ------------------------------------------------------------------- solve

fn base_problem(cfg: &Resolved) -> Result<DirichletProblem, ExperimentError> {
    Ok(DirichletProblem::new(
        cfg.group.clone(),
        cfg.op.clone(),
        &cfg.lo,
        &cfg.hi,
        &cfg.shape,
        cfg.boundary.as_ref(),
    )?)
}

fn run_solve(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let problem = base_problem(cfg)?;
    let (u, rep) = solve(&problem, &problem.f, cfg.tolerance, cfg.max_iter)?;
    ctx.push(
        CheckOutcome::new("solver_converged", rep.converged)
            .with_value(rep.final_residual)
            .with_bound(cfg.tolerance),
    );
    let error_vs_reference = u.max_abs_diff(&problem.f)?;
    ctx.detail(
        "solve",
        json!({
            "iterations": rep.iterations,
            "final_residual": rep.final_residual,
            "error_vs_reference": error_vs_reference,
            "reference": "boundary field sampled over the box",
            "scheme_note": rep.note,
            "eps_reg": problem.eps_reg,
        }),
    );
    if cfg.write_solution {
        ctx.write_artifact("solution.grid", &u.encode_binary())?;
    }
    Ok(())
}

// -------------------------------------------------------------- comparison

fn shifted(g: &GridFunction, c: f64) -> GridFunction {
    let values = g.values.iter().map(|v| v + c).collect();
    GridFunction::from_values(&g.lo, &g.hi, &g.shape, values).expect("shift keeps grid valid")
}

fn max_signed_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x - y)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn run_comparison(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let f_grid = GridFunction::sample(&cfg.lo, &cfg.hi, &cfg.shape, cfg.boundary.as_ref())?;
    let (g_desc, g_grid) = match &cfg.partner {
        Some((desc, field)) => (
            desc.clone(),
            GridFunction::sample(&cfg.lo, &cfg.hi, &cfg.shape, field.as_ref())?,
        ),
        None => (format!("{} + {}", cfg.boundary_desc, cfg.shift), shifted(&f_grid, cfg.shift)),
    };
    let band_defect = f_grid
        .values
        .iter()
        .zip(&g_grid.values)
        .zip(&f_grid.boundary)
        .filter(|(_, &b)| b)
        .map(|((f, g), _)| f - g)
        .fold(f64::NEG_INFINITY, f64::max);
    ctx.push(
        CheckOutcome::new("boundary_ordered", band_defect <= 1e-12)
            .with_value(band_defect)
            .with_note(format!("partner: {g_desc}")),
    );

    let make = |grid: GridFunction| -> Result<DirichletProblem, ExperimentError> {
        Ok(DirichletProblem::from_grid(cfg.group.clone(), cfg.op.clone(), grid)?)
    };
    let pf = make(f_grid.clone())?;
    let (u_f, rep_f) = solve(&pf, &pf.f, cfg.tolerance, cfg.max_iter)?;
    let pg = make(g_grid.clone())?;
    let (u_g, rep_g) = solve(&pg, &pg.f, cfg.tolerance, cfg.max_iter)?;
    let order_defect = max_signed_diff(&u_f, &u_g);
    ctx.push(
        CheckOutcome::new("comparison_order", order_defect <= 10.0 * cfg.tolerance)
            .with_value(order_defect)
            .with_bound(10.0 * cfg.tolerance),
    );

    // Additive invariance: constants commute with the operator.
    let c = if cfg.partner.is_none() { cfg.shift } else { 0.5 };
    let (u_fc, rep_fc) = if cfg.partner.is_none() {
        (u_g.clone(), rep_g.clone())
    } else {
        let pfc = make(shifted(&f_grid, c))?;
        solve(&pfc, &pfc.f, cfg.tolerance, cfg.max_iter)?
    };
    let additive_defect = u_fc.max_abs_diff(&shifted(&u_f, c))?;
    ctx.push(
        CheckOutcome::new("additive_invariance", additive_defect <= 2.0 * cfg.tolerance)
            .with_value(additive_defect)
            .with_bound(2.0 * cfg.tolerance),
    );

    // Uniqueness witness: two noisy initializations of the same problem.
    let noisy = |rng: &mut ChaCha8Rng| {
        let mut init = f_grid.clone();
        for lin in 0..init.len() {
            if !init.boundary[lin] {
                init.values[lin] += rng.gen_range(-0.5..0.5);
            }
        }
        init
    };
    let init1 = noisy(&mut ctx.rng);
    let init2 = noisy(&mut ctx.rng);
    let (u1, _) = solve(&pf, &init1, cfg.tolerance, cfg.max_iter)?;
    let (u2, _) = solve(&pf, &init2, cfg.tolerance, cfg.max_iter)?;
    let uniq = u1.max_abs_diff(&u2)?;
    ctx.push(
        CheckOutcome::new("uniqueness_witness", uniq <= 1e-6)
            .with_value(uniq)
            .with_bound(1e-6),
    );

    ctx.detail(
        "comparison",
        json!({
            "partner": g_desc,
            "solves": [
                { "data": "f", "iterations": rep_f.iterations, "residual": rep_f.final_residual },
                { "data": "g", "iterations": rep_g.iterations, "residual": rep_g.final_residual },
                { "data": "f_plus_c", "iterations": rep_fc.iterations,
                  "residual": rep_fc.final_residual },
            ],
            "order_defect": order_defect,
            "additive_defect": additive_defect,
            "uniqueness_gap": uniq,
            "shift": c,
        }),
    );
    Ok(())
}

// ----------------------------------------------------------------- p limit

fn run_p_limit(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let (table, u_inf) = p_limit_study(
        &cfg.group,
        &cfg.lo,
        &cfg.hi,
        &cfg.shape,
        cfg.boundary.as_ref(),
        &cfg.ps,
        cfg.tolerance,
        cfg.max_iter,
    )?;
    let all_converged = table.rows.iter().all(|r| r.converged);
    ctx.push(CheckOutcome::new("p_family_converged", all_converged));
    if table.rows.len() >= 2 {
        let first = table.rows.first().unwrap();
        let last = table.rows.last().unwrap();
        ctx.push(
            CheckOutcome::new(
                "p_limit_trend",
                last.error_vs_reference < first.error_vs_reference,
            )
            .with_value(last.error_vs_reference)
            .with_bound(first.error_vs_reference)
            .with_note(format!("p = {} vs p = {}", last.p, first.p)),
        );
    }
    let rows_json: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "p": r.p,
                "iterations": r.iterations,
                "residual": r.residual,
                "converged": r.converged,
                "error_vs_reference": r.error_vs_reference,
            })
        })
        .collect();
    ctx.detail(
        "p_limit",
        json!({
            "rows": rows_json,
            "reference_iterations": table.reference_iterations,
            "reference_residual": table.reference_residual,
        }),
    );
    if cfg.write_csv {
        let rows: Vec<(f64, f64, usize, f64)> = table
            .rows
            .iter()
            .map(|r| (r.p, r.residual, r.iterations, r.error_vs_reference))
            .collect();
        ctx.write_artifact("p_limit.csv", csv_table("p", &rows).as_bytes())?;
    }
    if cfg.write_solution {
        ctx.write_artifact("solution_infinity.grid", &u_inf.encode_binary())?;
    }
    Ok(())
}

// ------------------------------------------------------------- convolution

fn run_convolution(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let w = GridFunction::sample(&cfg.lo, &cfg.hi, &cfg.shape, cfg.boundary.as_ref())?;
    let mut rows: Vec<(f64, f64, usize, f64)> = Vec::new();
    let mut per_eps: Vec<Value> = Vec::new();
    let mut worst_gap = f64::INFINITY;
    let mut mono_defect = f64::NEG_INFINITY;
    let mut conv_defect = f64::NEG_INFINITY;
    let mut all_semiconvex = true;
    let mut prev: Option<(GridFunction, f64)> = None;
    for &eps in &cfg.epsilons {
        let we = sup_convolution(&cfg.group, &w, eps)?;
        let min_gap = we
            .values
            .iter()
            .zip(&w.values)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        let sup_dist = we.max_abs_diff(&w)?;
        let sc = semiconvexity_constant(&we);
        worst_gap = worst_gap.min(min_gap);
        all_semiconvex &= sc.semiconvex;
        if let Some((prev_grid, prev_dist)) = &prev {
            // Shrinking eps must shrink the envelope and the sup distance.
            mono_defect = mono_defect.max(max_signed_diff(&we, prev_grid));
            conv_defect = conv_defect.max(sup_dist - prev_dist);
        }
        per_eps.push(json!({
            "epsilon": eps,
            "min_gap": min_gap,
            "sup_distance": sup_dist,
            "semiconvexity_constant": sc.lambda,
            "semiconvex": sc.semiconvex,
        }));
        rows.push((eps, min_gap, 0, sup_dist));
        prev = Some((we, sup_dist));
    }
    ctx.push(CheckOutcome::new("envelope_dominates", worst_gap >= -1e-12).with_value(worst_gap));
    if cfg.epsilons.len() >= 2 {
        ctx.push(
            CheckOutcome::new("epsilon_monotone", mono_defect <= 1e-12).with_value(mono_defect),
        );
        ctx.push(
            CheckOutcome::new("uniform_convergence", conv_defect <= 1e-12)
                .with_value(conv_defect),
        );
    }
    ctx.push(CheckOutcome::new("envelope_semiconvex", all_semiconvex));

    // Duality is exact: the dual envelope is the negated envelope of the
    // negation, computed with the same float operations.
    let eps0 = cfg.epsilons[0];
    let neg_w = {
        let values = w.values.iter().map(|v| -v).collect();
        GridFunction::from_values(&w.lo, &w.hi, &w.shape, values)?
    };
    let lhs = inf_convolution(&cfg.group, &w, eps0)?;
    let rhs = sup_convolution(&cfg.group, &neg_w, eps0)?;
    let dual_defect = lhs
        .values
        .iter()
        .zip(&rhs.values)
        .map(|(a, b)| (a + b).abs())
        .fold(0.0f64, f64::max);
    ctx.push(CheckOutcome::new("duality_exact", dual_defect == 0.0).with_value(dual_defect));

    ctx.detail("convolution", json!({ "per_epsilon": per_eps }));
    if cfg.write_csv {
        ctx.write_artifact("convolution.csv", csv_table("lambda", &rows).as_bytes())?;
    }
    Ok(())
}

// --------------------------------------------------------- translation map

fn run_translation_map(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let u = GridFunction::sample(&cfg.lo, &cfg.hi, &cfg.shape, cfg.boundary.as_ref())?;
    let v = match &cfg.partner {
        Some((_, field)) => GridFunction::sample(&cfg.lo, &cfg.hi, &cfg.shape, field.as_ref())?,
        None => u.clone(),
    };
    let masks = domain_shrink(&cfg.group, &u, cfg.delta, 4000, &mut ctx.rng)?;
    let interp = u.interpolation_error_bound().max(v.interpolation_error_bound());

    let mut triples = Vec::with_capacity(cfg.pairs);
    let mut dmax = 0.0f64;
    for _ in 0..cfg.pairs {
        let h = sample_in_ball(&cfg.group, 0.9 * cfg.delta, &mut ctx.rng);
        let h2 = sample_in_ball(&cfg.group, 0.9 * cfg.delta, &mut ctx.rng);
        let l = sample_in_ball(&cfg.group, 0.9 * cfg.delta, &mut ctx.rng);
        dmax = dmax.max(cfg.group.metric(&h, &h2)?);
        triples.push((h, h2, l));
    }
    let scale = (4.0 * cfg.delta).max(1.05 * dmax);
    let lip = grid_metric_lipschitz(&cfg.group, &u, scale)?;

    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut argmax_ok = true;
    for (h, h2, l) in &triples {
        let m1 = translation_max_with_mask(&cfg.group, &u, &v, h, l, &masks)?;
        let m2 = translation_max_with_mask(&cfg.group, &u, &v, h2, l, &masks)?;
        argmax_ok &= m1
            .argmax_nodes
            .iter()
            .chain(&m2.argmax_nodes)
            .all(|&lin| masks.omega_delta[lin]);
        let lhs = (m1.value - m2.value).abs();
        let rhs = cfg.group.metric(h, h2)? * lip + 4.0 * interp;
        let defect = lhs - rhs;
        worst = worst.max(defect);
        if defect > 1e-12 {
            violations += 1;
        }
    }
    ctx.push(
        CheckOutcome::new("translation_lipschitz", violations == 0)
            .with_value(worst)
            .with_note(format!("{} pairs", cfg.pairs)),
    );
    ctx.push(CheckOutcome::new("argmax_in_shrunk_mask", argmax_ok));

    // Relabeling u by a constant shifts the max and keeps the argmax set.
    let (h, _, l) = &triples[0];
    let base = translation_max_with_mask(&cfg.group, &u, &v, h, l, &masks)?;
    let relabeled = translation_max_with_mask(&cfg.group, &shifted(&u, 0.7), &v, h, l, &masks)?;
    let relabel_defect = (relabeled.value - base.value - 0.7).abs();
    let relabel_ok = relabel_defect <= 1e-9 && relabeled.argmax_nodes == base.argmax_nodes;
    ctx.push(CheckOutcome::new("relabel_invariance", relabel_ok).with_value(relabel_defect));

    let (n_delta, n_upper, n_cap) = masks.counts();
    ctx.detail(
        "translation_map",
        json!({
            "delta": cfg.delta,
            "conjugation_constant": masks.c_estimate,
            "mask_nodes": { "omega_delta": n_delta, "omega_upper": n_upper, "omega_cap": n_cap },
            "lipschitz_constant": lip,
            "lipschitz_scale": scale,
            "interpolation_error": interp,
            "worst_defect": worst,
        }),
    );
    Ok(())
}

// --------------------------------------------------------------------- smp

fn run_smp(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let problem = base_problem(cfg)?;
    let (u, rep) = solve(&problem, &problem.f, cfg.tolerance, cfg.max_iter)?;
    ctx.push(
        CheckOutcome::new("solver_converged", rep.converged)
            .with_value(rep.final_residual)
            .with_bound(cfg.tolerance),
    );
    let witness = smp_witness(&u);
    let boundary_only = witness.constant_case || !witness.interior_attained;
    ctx.push(
        CheckOutcome::new("max_on_boundary_band", boundary_only)
            .with_value(witness.interior_max)
            .with_bound(witness.boundary_max)
            .with_note(if witness.constant_case {
                "constant case: every node attains".to_string()
            } else {
                "nonconstant data".to_string()
            }),
    );
    if !witness.constant_case {
        ctx.push(
            CheckOutcome::new("interior_gap", witness.gap > 10.0 * cfg.tolerance)
                .with_value(witness.gap)
                .with_bound(10.0 * cfg.tolerance),
        );
    }
    ctx.detail(
        "smp",
        json!({
            "max_value": witness.max_value,
            "boundary_max": witness.boundary_max,
            "interior_max": witness.interior_max,
            "gap": witness.gap,
            "constant_case": witness.constant_case,
            "tie_tolerance": witness.tie_tolerance,
            "iterations": rep.iterations,
        }),
    );
    if cfg.write_solution {
        ctx.write_artifact("solution.grid", &u.encode_binary())?;
    }
    Ok(())
}
