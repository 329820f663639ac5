//! Experiment configuration.
//!
//! The file format is line based:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Every key lives
//! in a section and may appear once. Lists are comma separated; integer lists
//! also accept half-open ranges such as `0..50`. Booleans are `true`/`false`.
//! `--set section.key=value` on the command line overrides the file.
//!
//! `model.kind` picks the preset that supplies every value not given
//! explicitly. See [`ExperimentConfig::dump`] for the full key list.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use wc4dvar::assimilation::{TwinOptions, TwinSeeds};
use wc4dvar::krylov::PcgOptions;
use wc4dvar::operators::DEFAULT_DENSE_CAP;
use wc4dvar::randevd::SketchMethod;
use wc4dvar::scenario::{ModelKind, Scenario};
use wc4dvar::study::PrecondTemplate;

use crate::csv::fmt_g17;
use crate::error::{CliError, CliResult};

/// Preconditioner family named in `precond.methods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    None,
    Deterministic,
    Sketch(SketchMethod),
}

impl MethodName {
    pub fn name(self) -> &'static str {
        match self {
            MethodName::None => "none",
            MethodName::Deterministic => "deterministic",
            MethodName::Sketch(m) => m.name(),
        }
    }
}

impl FromStr for MethodName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(MethodName::None),
            "deterministic" => Ok(MethodName::Deterministic),
            other => other
                .parse::<SketchMethod>()
                .map(MethodName::Sketch)
                .map_err(|_| format!("unknown preconditioner '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    L,
    Obs,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::L => "l",
            SweepAxis::Obs => "obs",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k" => Ok(SweepAxis::K),
            "l" => Ok(SweepAxis::L),
            "obs" => Ok(SweepAxis::Obs),
            other => Err(format!("unknown sweep axis '{other}' (expected k, l or obs)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub first_loop_max_iter: usize,
    pub rel_tol: f64,
    pub reorthogonalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecondConfig {
    pub methods: Vec<MethodName>,
    pub ranks: Vec<usize>,
    pub oversampling: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Inner loop (1 or 2) the preconditioners are compared on.
    pub inner_loop: usize,
    /// Record the extreme eigenvalues of every preconditioned Hessian.
    pub spectrum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub cost_history: bool,
    pub ritz_values: bool,
    pub summary: bool,
    pub dense_cap: usize,
    /// Sketch seed used by `spectrum`; defaults to the first of `precond.seeds`.
    pub spectrum_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub twin: TwinOptions,
    pub solver: SolverConfig,
    pub precond: PrecondConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Defaults for a model family.
    pub fn preset(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Advection => Self {
                scenario: Scenario::advection(),
                twin: TwinOptions::default(),
                solver: SolverConfig {
                    max_iter: 10,
                    first_loop_max_iter: 100,
                    rel_tol: 1e-6,
                    reorthogonalize: false,
                },
                precond: PrecondConfig {
                    methods: vec![
                        MethodName::None,
                        MethodName::Sketch(SketchMethod::Revd),
                        MethodName::Sketch(SketchMethod::Nystrom),
                        MethodName::Sketch(SketchMethod::Ritzit),
                    ],
                    ranks: vec![25],
                    oversampling: vec![5],
                    seeds: vec![0],
                    inner_loop: 1,
                    spectrum: false,
                },
                sweep: SweepConfig {
                    axis: SweepAxis::K,
                    values: vec!["5".into(), "15".into(), "25".into()],
                },
                output: OutputConfig {
                    cost_history: true,
                    ritz_values: true,
                    summary: true,
                    dense_cap: DEFAULT_DENSE_CAP,
                    spectrum_seed: None,
                },
            },
            ModelKind::Lorenz96 => Self {
                scenario: Scenario::lorenz96_base(),
                twin: TwinOptions::default(),
                solver: SolverConfig {
                    max_iter: 100,
                    first_loop_max_iter: 100,
                    rel_tol: 1e-6,
                    reorthogonalize: false,
                },
                precond: PrecondConfig {
                    methods: vec![
                        MethodName::None,
                        MethodName::Deterministic,
                        MethodName::Sketch(SketchMethod::Revd),
                        MethodName::Sketch(SketchMethod::Nystrom),
                        MethodName::Sketch(SketchMethod::Ritzit),
                    ],
                    ranks: vec![15],
                    oversampling: vec![5],
                    seeds: (0..50).collect(),
                    inner_loop: 2,
                    spectrum: false,
                },
                sweep: SweepConfig {
                    axis: SweepAxis::K,
                    values: vec!["5".into(), "10".into(), "15".into()],
                },
                output: OutputConfig {
                    cost_history: true,
                    ritz_values: true,
                    summary: true,
                    dense_cap: DEFAULT_DENSE_CAP,
                    spectrum_seed: None,
                },
            },
        }
    }

    /// Reads `path` and applies `overrides` (`section.key=value`).
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut entries = parse_entries(text)?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            let (section, name) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| CliError::Config(format!("override key '{key}' is not section.key")))?;
            entries.insert((section.to_string(), name.to_string()), value.trim().to_string());
        }
        let kind = match entries.get(&("model".to_string(), "kind".to_string())) {
            Some(v) => v.parse::<ModelKind>().map_err(|e| CliError::Config(e.to_string()))?,
            None => ModelKind::Lorenz96,
        };
        let mut cfg = Self::preset(kind);
        for ((section, key), value) in &entries {
            cfg.set(section, key, value)
                .map_err(|msg| CliError::Config(format!("{section}.{key} = {value}: {msg}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let sc = &mut self.scenario;
        match (section, key) {
            ("model", "kind") => {}
            ("model", "n") => sc.n = parse(value)?,
            ("model", "steps") => sc.steps = parse(value)?,
            ("model", "dt") => sc.dt = parse(value)?,
            ("model", "forcing") => sc.forcing = parse(value)?,
            ("model", "spinup_steps") => sc.spinup_steps = parse(value)?,
            ("model", "spinup_perturbation") => sc.spinup_perturbation = parse(value)?,
            ("background", "sigma") => sc.sigma_b = parse(value)?,
            ("background", "length") => sc.length_b = parse(value)?,
            ("model_error", "sigma") => sc.sigma_q = parse(value)?,
            ("model_error", "length") => sc.length_q = parse(value)?,
            ("observations", "sigma") => sc.sigma_o = parse(value)?,
            ("observations", "space_stride") => sc.space_stride = parse(value)?,
            ("observations", "time_stride") => sc.time_stride = parse(value)?,
            ("twin", "background_seed") => self.twin.seeds.background = parse(value)?,
            ("twin", "observation_seed") => self.twin.seeds.observations = parse(value)?,
            ("twin", "model_error_seed") => self.twin.seeds.model_error = parse(value)?,
            ("twin", "noise_scale") => self.twin.noise_scale = parse(value)?,
            ("twin", "truth_model_error") => self.twin.truth_model_error = parse(value)?,
            ("solver", "max_iter") => self.solver.max_iter = parse(value)?,
            ("solver", "first_loop_max_iter") => self.solver.first_loop_max_iter = parse(value)?,
            ("solver", "rel_tol") => self.solver.rel_tol = parse(value)?,
            ("solver", "reorthogonalize") => self.solver.reorthogonalize = parse(value)?,
            ("precond", "methods") => self.precond.methods = parse_list(value)?,
            ("precond", "k") => self.precond.ranks = parse_int_list(value)?,
            ("precond", "l") => self.precond.oversampling = parse_int_list(value)?,
            ("precond", "seeds") => self.precond.seeds = parse_int_list(value)?,
            ("precond", "loop") => self.precond.inner_loop = parse(value)?,
            ("precond", "spectrum") => self.precond.spectrum = parse(value)?,
            ("sweep", "axis") => self.sweep.axis = parse(value)?,
            ("sweep", "values") => self.sweep.values = split_list(value).map(str::to_string).collect(),
            ("output", "cost_history") => self.output.cost_history = parse(value)?,
            ("output", "ritz_values") => self.output.ritz_values = parse(value)?,
            ("output", "summary") => self.output.summary = parse(value)?,
            ("output", "dense_cap") => self.output.dense_cap = parse(value)?,
            ("output", "spectrum_seed") => {
                self.output.spectrum_seed = if value == "first" { None } else { Some(parse(value)?) }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let p = &self.precond;
        if p.methods.is_empty() {
            return bad("precond.methods is empty".into());
        }
        if !(p.inner_loop == 1 || p.inner_loop == 2) {
            return bad(format!("precond.loop must be 1 or 2, got {}", p.inner_loop));
        }
        if p.inner_loop == 1 && p.methods.contains(&MethodName::Deterministic) {
            return bad("the deterministic preconditioner needs precond.loop = 2".into());
        }
        let needs_rank = p.methods.iter().any(|m| *m != MethodName::None);
        if needs_rank && p.ranks.is_empty() {
            return bad("precond.k is empty".into());
        }
        let sketched = p.methods.iter().any(|m| matches!(m, MethodName::Sketch(_)));
        if sketched && (p.oversampling.is_empty() || p.seeds.is_empty()) {
            return bad("randomized preconditioners need precond.l and precond.seeds".into());
        }
        if self.solver.max_iter == 0 || self.solver.first_loop_max_iter == 0 {
            return bad("solver iteration caps must be positive".into());
        }
        if self.solver.rel_tol.is_nan() || self.solver.rel_tol < 0.0 {
            return bad("solver.rel_tol must be non-negative".into());
        }
        if !(self.twin.noise_scale >= 0.0 && self.twin.noise_scale.is_finite()) {
            return bad("twin.noise_scale must be finite and non-negative".into());
        }
        // Grid, Courant number, strides and covariance parameters.
        self.scenario.build_model()?;
        wc4dvar::models::ObservationNetwork::new(
            self.scenario.n,
            self.scenario.steps,
            self.scenario.space_stride,
            self.scenario.time_stride,
        )?;
        for (name, v) in [
            ("background.sigma", self.scenario.sigma_b),
            ("background.length", self.scenario.length_b),
            ("model_error.sigma", self.scenario.sigma_q),
            ("model_error.length", self.scenario.length_q),
            ("observations.sigma", self.scenario.sigma_o),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Preconditioner templates in configuration order, without duplicates.
    pub fn templates(&self) -> Vec<PrecondTemplate> {
        let p = &self.precond;
        let mut out = Vec::new();
        for m in &p.methods {
            match m {
                MethodName::None => out.push(PrecondTemplate::None),
                MethodName::Deterministic => {
                    out.extend(p.ranks.iter().map(|&rank| PrecondTemplate::Deterministic { rank }))
                }
                MethodName::Sketch(method) => {
                    for &rank in &p.ranks {
                        for &oversampling in &p.oversampling {
                            out.push(PrecondTemplate::Randomized {
                                method: *method,
                                rank,
                                oversampling,
                            });
                        }
                    }
                }
            }
        }
        let mut seen = Vec::new();
        out.retain(|t| {
            if seen.contains(t) {
                false
            } else {
                seen.push(*t);
                true
            }
        });
        out
    }

    pub fn compared_solver(&self) -> PcgOptions {
        PcgOptions {
            max_iter: self.solver.max_iter,
            rel_tol: self.solver.rel_tol,
            reorthogonalize: self.solver.reorthogonalize,
            ..PcgOptions::default()
        }
    }

    pub fn first_loop_solver(&self) -> PcgOptions {
        PcgOptions {
            max_iter: self.solver.first_loop_max_iter,
            ..self.compared_solver()
        }
    }

    pub fn spectrum_seed(&self) -> u64 {
        self.output
            .spectrum_seed
            .or_else(|| self.precond.seeds.first().copied())
            .unwrap_or(0)
    }

    /// The effective configuration in the file format, with every key.
    /// Loading the dump gives back an equal configuration.
    pub fn dump(&self) -> String {
        let sc = &self.scenario;
        let TwinSeeds {
            background,
            observations,
            model_error,
        } = self.twin.seeds;
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut section = |name: &str, kv: &[(&str, String)]| {
            writeln!(s, "[{name}]").unwrap();
            for (k, v) in kv {
                writeln!(s, "{k} = {v}").unwrap();
            }
            s.push('\n');
        };
        section(
            "model",
            &[
                ("kind", sc.model.name().into()),
                ("n", sc.n.to_string()),
                ("steps", sc.steps.to_string()),
                ("dt", fmt_g17(sc.dt)),
                ("forcing", fmt_g17(sc.forcing)),
                ("spinup_steps", sc.spinup_steps.to_string()),
                ("spinup_perturbation", fmt_g17(sc.spinup_perturbation)),
            ],
        );
        section(
            "background",
            &[("sigma", fmt_g17(sc.sigma_b)), ("length", fmt_g17(sc.length_b))],
        );
        section(
            "model_error",
            &[("sigma", fmt_g17(sc.sigma_q)), ("length", fmt_g17(sc.length_q))],
        );
        section(
            "observations",
            &[
                ("sigma", fmt_g17(sc.sigma_o)),
                ("space_stride", sc.space_stride.to_string()),
                ("time_stride", sc.time_stride.to_string()),
            ],
        );
        section(
            "twin",
            &[
                ("background_seed", background.to_string()),
                ("observation_seed", observations.to_string()),
                ("model_error_seed", model_error.to_string()),
                ("noise_scale", fmt_g17(self.twin.noise_scale)),
                ("truth_model_error", self.twin.truth_model_error.to_string()),
            ],
        );
        section(
            "solver",
            &[
                ("max_iter", self.solver.max_iter.to_string()),
                ("first_loop_max_iter", self.solver.first_loop_max_iter.to_string()),
                ("rel_tol", fmt_g17(self.solver.rel_tol)),
                ("reorthogonalize", self.solver.reorthogonalize.to_string()),
            ],
        );
        let p = &self.precond;
        section(
            "precond",
            &[
                ("methods", join(&mut p.methods.iter().map(|m| m.name().to_string()))),
                ("k", join(&mut p.ranks.iter().map(usize::to_string))),
                ("l", join(&mut p.oversampling.iter().map(usize::to_string))),
                ("seeds", join(&mut p.seeds.iter().map(u64::to_string))),
                ("loop", p.inner_loop.to_string()),
                ("spectrum", p.spectrum.to_string()),
            ],
        );
        section(
            "sweep",
            &[
                ("axis", self.sweep.axis.name().into()),
                ("values", self.sweep.values.join(", ")),
            ],
        );
        let o = &self.output;
        section(
            "output",
            &[
                ("cost_history", o.cost_history.to_string()),
                ("ritz_values", o.ritz_values.to_string()),
                ("summary", o.summary.to_string()),
                ("dense_cap", o.dense_cap.to_string()),
                (
                    "spectrum_seed",
                    o.spectrum_seed.map_or("first".into(), |v| v.to_string()),
                ),
            ],
        );
        s.pop();
        s
    }
}

fn parse_entries(text: &str) -> CliResult<BTreeMap<(String, String), String>> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |m: &str| CliError::Config(format!("line {}: {m}", i + 1));
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header"))?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
        let section = section.clone().ok_or_else(|| err("key outside any section"))?;
        let key = (section, key.trim().to_string());
        if entries.contains_key(&key) {
            return Err(err(&format!("duplicate key {}.{}", key.0, key.1)));
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(entries)
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    split_list(value).map(parse).collect()
}

/// Comma-separated integers and half-open ranges `a..b`.
fn parse_int_list<T>(value: &str) -> Result<Vec<T>, String>
where
    T: FromStr + TryFrom<u64>,
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for item in split_list(value) {
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = parse(a.trim())?;
            let b: u64 = parse(b.trim())?;
            if b <= a {
                return Err(format!("empty range {item}"));
            }
            for v in a..b {
                out.push(T::try_from(v).map_err(|_| format!("{v} out of range"))?);
            }
        } else {
            out.push(parse(item)?);
        }
    }
    Ok(out)
}

/// Parses an observation network `space/time`, e.g. `5/5`.
pub fn parse_strides(value: &str) -> Result<(usize, usize), String> {
    let (s, t) = value
        .split_once('/')
        .ok_or_else(|| format!("observation network '{value}' is not space/time"))?;
    Ok((parse(s.trim())?, parse(t.trim())?))
}
