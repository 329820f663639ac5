//! Multi-seed preconditioner comparisons over one or two outer loops.

use crate::assimilation::{outer_update, InnerLoop, InnerLoopReport, OuterState, PrecondSpec, Problem, TwinData};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::krylov::PcgOptions;
use crate::models::Dynamics;
use crate::randevd::{SketchConfig, SketchMethod};

/// Preconditioner family with its rank and oversampling, before a sketch seed
/// is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondTemplate {
    None,
    Deterministic { rank: usize },
    Randomized { method: SketchMethod, rank: usize, oversampling: usize },
}

impl PrecondTemplate {
    pub fn label(&self) -> String {
        self.instantiate(0).label()
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, PrecondTemplate::Randomized { .. })
    }

    pub fn instantiate(&self, seed: u64) -> PrecondSpec {
        match *self {
            PrecondTemplate::None => PrecondSpec::None,
            PrecondTemplate::Deterministic { rank } => PrecondSpec::Deterministic { rank },
            PrecondTemplate::Randomized {
                method,
                rank,
                oversampling,
            } => PrecondSpec::Randomized(SketchConfig::new(method, rank, oversampling, seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub templates: Vec<PrecondTemplate>,
    pub sketch_seeds: Vec<u64>,
    /// Solver for the unpreconditioned first inner loop.
    pub first_loop: PcgOptions,
    /// Solver for the compared inner loop.
    pub compared_loop: PcgOptions,
    /// Inner loop (1 or 2) that the templates are compared on.
    pub compared_index: usize,
    /// Also compute the extreme eigenvalues of `C^T A C`.
    pub with_spectrum: bool,
}

/// One (spec, seed) job. `seed` is `None` for non-randomized specs.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub label: String,
    pub seed: Option<u64>,
    pub report: InnerLoopReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    /// Unpreconditioned first inner loop, when the comparison is on loop 2.
    pub first_loop: Option<InnerLoopReport>,
    /// Sorted by (label, seed).
    pub runs: Vec<StudyRun>,
    pub dimension: usize,
    pub observations: usize,
}

impl StudyResult {
    pub fn runs_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a StudyRun> + 'a {
        self.runs.iter().filter(move |r| r.label == label)
    }
}

/// Runs the plan. Jobs for distinct (spec, seed) pairs are independent and are
/// spread over `exec`; the outer-loop sequence itself is serial.
pub fn run_study<M: Dynamics + Clone>(
    problem: &Problem<M>,
    twin: &TwinData,
    plan: &StudyPlan,
    exec: Execution,
) -> Result<StudyResult> {
    if !(plan.compared_index == 1 || plan.compared_index == 2) {
        return Err(Error::InvalidParameter(format!(
            "compared inner loop must be 1 or 2, got {}",
            plan.compared_index
        )));
    }
    let state0 = OuterState::initial(problem, twin)?;
    let loop1 = InnerLoop::new(problem, &state0, twin)?;
    let (first_loop, target, previous) = if plan.compared_index == 2 {
        let report = loop1.solve(&PrecondSpec::None, &plan.first_loop, None, exec, false)?;
        let state1 = outer_update(problem, &state0, &report)?;
        let loop2 = InnerLoop::new(problem, &state1, twin)?;
        (Some(report), loop2, Some(loop1))
    } else {
        if plan
            .templates
            .iter()
            .any(|t| matches!(t, PrecondTemplate::Deterministic { .. }))
        {
            return Err(Error::NoPreviousLoop);
        }
        (None, loop1, None)
    };

    let mut jobs: Vec<(PrecondTemplate, Option<u64>)> = Vec::new();
    for t in &plan.templates {
        if t.is_randomized() {
            jobs.extend(plan.sketch_seeds.iter().map(|&s| (*t, Some(s))));
        } else {
            jobs.push((*t, None));
        }
    }
    if plan.with_spectrum {
        target.low_rank(exec)?;
    }
    if let Some(prev) = &previous {
        if jobs
            .iter()
            .any(|(t, _)| matches!(t, PrecondTemplate::Deterministic { .. }))
        {
            prev.observation_factor(exec)?;
        }
    }
    let mut runs = exec.try_map(jobs.len(), |j| {
        let (template, seed) = jobs[j];
        let spec = template.instantiate(seed.unwrap_or(0));
        let report = target.solve(
            &spec,
            &plan.compared_loop,
            previous.as_ref(),
            Execution::Serial,
            plan.with_spectrum,
        )?;
        Ok::<_, Error>(StudyRun {
            label: spec.label(),
            seed,
            report,
        })
    })?;
    runs.sort_by(|a, b| a.label.cmp(&b.label).then(a.seed.cmp(&b.seed)));
    Ok(StudyResult {
        first_loop,
        runs,
        dimension: problem.dim(),
        observations: problem.network().total(),
    })
}

/// Per-iteration mean and population standard deviation of one series across
/// the runs of a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub iteration: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Aggregates `series(run)` per label and iteration. Runs that stopped early
/// contribute their final value to later iterations.
pub fn summarize<F>(runs: &[StudyRun], series: F) -> Vec<SummaryRow>
where
    F: Fn(&InnerLoopReport) -> &[f64],
{
    let mut labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut rows = Vec::new();
    for label in labels {
        let group: Vec<&[f64]> = runs
            .iter()
            .filter(|r| r.label == label)
            .map(|r| series(&r.report))
            .filter(|s| !s.is_empty())
            .collect();
        let len = group.iter().map(|s| s.len()).max().unwrap_or(0);
        for it in 0..len {
            let values: Vec<f64> = group.iter().map(|s| s[it.min(s.len() - 1)]).collect();
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                label: label.to_string(),
                iteration: it,
                mean,
                std,
                count: values.len(),
            });
        }
    }
    rows
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
