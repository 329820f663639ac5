use std::fs;
use std::path::Path;

use wc4dvar::assimilation::{generate_twin, outer_update, InnerLoop, OuterState, PrecondSpec, Problem, TwinData};
use wc4dvar::linalg::symmetric_eigenvalues;
use wc4dvar::lmp::build_spectral_lmp;
use wc4dvar::models::Model;
use wc4dvar::operators::{assemble_dense, Preconditioned};
use wc4dvar::study::{run_study, summarize, StudyPlan, StudyResult};
use wc4dvar::{Error, Execution};

use crate::config::{parse_strides, ExperimentConfig, SweepAxis};
use crate::csv::{fmt_g17, write_atomic, Field, Table};
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn setup(cfg: &ExperimentConfig) -> CliResult<(Problem<Model>, TwinData)> {
    let problem = cfg.scenario.build_problem()?;
    let twin = generate_twin(&problem, &cfg.scenario.initial_truth()?, &cfg.twin)?;
    Ok((problem, twin))
}

fn plan(cfg: &ExperimentConfig) -> StudyPlan {
    StudyPlan {
        templates: cfg.templates(),
        sketch_seeds: cfg.precond.seeds.clone(),
        first_loop: cfg.first_loop_solver(),
        compared_loop: cfg.compared_solver(),
        compared_index: cfg.precond.inner_loop,
        with_spectrum: cfg.precond.spectrum,
    }
}

/// Tables written by `run`.
pub struct RunTables {
    pub cost_history: Table,
    pub ritz_values: Table,
    pub summary: Table,
    pub extremes: Table,
}

pub fn tables(result: &StudyResult) -> RunTables {
    let mut cost_history = Table::new(&["spec", "seed", "iteration", "quadratic_cost", "relative_residual"]);
    let mut ritz_values = Table::new(&["spec", "seed", "index", "theta"]);
    let mut extremes = Table::new(&["spec", "seed", "lambda_min", "lambda_max"]);
    for run in &result.runs {
        let r = &run.report;
        for (it, (c, res)) in r.cost.iter().zip(&r.relative_residuals).enumerate() {
            cost_history.push(vec![
                run.label.clone().into(),
                run.seed.into(),
                it.into(),
                (*c).into(),
                (*res).into(),
            ]);
        }
        for (i, theta) in r.ritz_values.iter().enumerate() {
            ritz_values.push(vec![run.label.clone().into(), run.seed.into(), (i + 1).into(), (*theta).into()]);
        }
        if let Some((lo, hi)) = r.preconditioned_extremes {
            extremes.push(vec![run.label.clone().into(), run.seed.into(), lo.into(), hi.into()]);
        }
    }
    let mut summary = Table::new(&["spec", "iteration", "mean", "std", "count"]);
    for row in summarize(&result.runs, |r| &r.cost) {
        summary.push(vec![
            row.label.into(),
            row.iteration.into(),
            row.mean.into(),
            row.std.into(),
            row.count.into(),
        ]);
    }
    RunTables {
        cost_history,
        ritz_values,
        summary,
        extremes,
    }
}

fn study(cfg: &ExperimentConfig, exec: Execution) -> CliResult<StudyResult> {
    let (problem, twin) = setup(cfg)?;
    Ok(run_study(&problem, &twin, &plan(cfg), exec)?)
}

fn write_run(cfg: &ExperimentConfig, result: &StudyResult, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    write_atomic(&out.join("config.cfg"), cfg.dump().as_bytes())?;
    let t = tables(result);
    if cfg.output.cost_history {
        t.cost_history.write(&out.join("cost_history.csv"))?;
    }
    if cfg.output.ritz_values {
        t.ritz_values.write(&out.join("ritz_values.csv"))?;
    }
    if cfg.output.summary {
        t.summary.write(&out.join("summary.csv"))?;
    }
    if cfg.precond.spectrum {
        t.extremes.write(&out.join("extremes.csv"))?;
    }
    Ok(())
}

fn describe(cfg: &ExperimentConfig, result: &StudyResult) {
    println!(
        "{}: n={} N={} control dimension {} ({} x {} Hessian), {} observations",
        cfg.scenario.model.name(),
        cfg.scenario.n,
        cfg.scenario.steps,
        result.dimension,
        result.dimension,
        result.dimension,
        result.observations
    );
    if let Some(first) = &result.first_loop {
        println!(
            "inner loop 1 (no preconditioner): {} iterations, cost {} -> {}",
            first.iterations,
            fmt_g17(first.cost[0]),
            fmt_g17(*first.cost.last().expect("cost history"))
        );
    }
}

pub fn run(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> CliResult<()> {
    let result = study(cfg, exec)?;
    describe(cfg, &result);
    let rows = summarize(&result.runs, |r| &r.cost);
    for label in cfg.templates().iter().map(|t| t.label()) {
        if let Some(last) = rows.iter().rfind(|r| r.label == label) {
            println!(
                "inner loop {} {label}: mean final cost {} over {} run(s)",
                cfg.precond.inner_loop,
                fmt_g17(last.mean),
                last.count
            );
        }
    }
    write_run(cfg, &result, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Eigenvalues in decreasing order of `A` and of every `C^T A C`, using the
/// configured spectrum seed for randomized preconditioners.
pub fn spectrum_table(cfg: &ExperimentConfig, exec: Execution) -> CliResult<Table> {
    let (problem, twin) = setup(cfg)?;
    let dim = problem.dim();
    let cap = cfg.output.dense_cap;
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap }.into());
    }
    let state0 = OuterState::initial(&problem, &twin)?;
    let loop1 = InnerLoop::new(&problem, &state0, &twin)?;
    let (target, previous) = if cfg.precond.inner_loop == 2 {
        let report = loop1.solve(&PrecondSpec::None, &cfg.first_loop_solver(), None, exec, false)?;
        let state1 = outer_update(&problem, &state0, &report)?;
        (InnerLoop::new(&problem, &state1, &twin)?, Some(loop1))
    } else {
        (loop1, None)
    };
    let mut specs = vec![PrecondSpec::None];
    for t in cfg.templates() {
        let spec = t.instantiate(cfg.spectrum_seed());
        if !specs.contains(&spec) {
            specs.push(spec);
        }
    }
    let mut table = Table::new(&["spec", "index", "eigenvalue"]);
    for spec in &specs {
        let pairs = target.ritz_pairs(spec, previous.as_ref(), exec)?;
        let factor = build_spectral_lmp(&pairs)?;
        let op = Preconditioned {
            op: target.hessian(),
            precond: &factor,
        };
        let dense = assemble_dense(&op, cap, exec)?;
        let values = symmetric_eigenvalues(&dense);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "dense eigenvalues" }.into());
        }
        let label = spec.label();
        for (i, v) in values.iter().rev().enumerate() {
            table.push(vec![label.clone().into(), (i + 1).into(), (*v).into()]);
        }
        let smallest = values.first().copied().unwrap_or(f64::NAN);
        let largest = values.last().copied().unwrap_or(f64::NAN);
        println!("{label}: eigenvalues in [{}, {}]", fmt_g17(smallest), fmt_g17(largest));
    }
    Ok(table)
}

pub fn spectrum(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> CliResult<()> {
    let table = spectrum_table(cfg, exec)?;
    create_dir(out)?;
    write_atomic(&out.join("config.cfg"), cfg.dump().as_bytes())?;
    table.write(&out.join("spectrum.csv"))?;
    println!("wrote {}", out.join("spectrum.csv").display());
    Ok(())
}

/// The configuration for one sweep value.
pub fn sweep_point(cfg: &ExperimentConfig, value: &str) -> CliResult<ExperimentConfig> {
    let mut point = cfg.clone();
    let bad = |m: String| CliError::Config(format!("sweep value '{value}': {m}"));
    match cfg.sweep.axis {
        SweepAxis::K => point.precond.ranks = vec![value.parse().map_err(|e| bad(format!("{e}")))?],
        SweepAxis::L => point.precond.oversampling = vec![value.parse().map_err(|e| bad(format!("{e}")))?],
        SweepAxis::Obs => {
            let (s, t) = parse_strides(value).map_err(bad)?;
            point.scenario.space_stride = s;
            point.scenario.time_stride = t;
            wc4dvar::models::ObservationNetwork::new(point.scenario.n, point.scenario.steps, s, t)
                .map_err(|e| bad(e.to_string()))?;
        }
    }
    Ok(point)
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path, exec: Execution) -> CliResult<()> {
    if cfg.sweep.values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    let points = cfg
        .sweep
        .values
        .iter()
        .map(|v| sweep_point(cfg, v))
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(out)?;
    write_atomic(&out.join("config.cfg"), cfg.dump().as_bytes())?;
    let axis = cfg.sweep.axis.name();
    let mut table = Table::new(&["axis", "value", "spec", "iteration", "mean", "std", "count"]);
    for (value, point) in cfg.sweep.values.iter().zip(&points) {
        let result = study(point, exec)?;
        println!("{axis} = {value}:");
        describe(point, &result);
        let dir = out.join(format!("{axis}_{}", value.replace('/', "_")));
        write_run(point, &result, &dir)?;
        for row in summarize(&result.runs, |r| &r.cost) {
            table.push(vec![
                axis.into(),
                value.as_str().into(),
                row.label.into(),
                row.iteration.into(),
                Field::Num(row.mean),
                Field::Num(row.std),
                row.count.into(),
            ]);
        }
    }
    table.write(&out.join("sweep_summary.csv"))?;
    println!("wrote {}", out.join("sweep_summary.csv").display());
    Ok(())
}
