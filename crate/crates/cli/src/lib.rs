//! Experiment runner: configuration handling and CSV tables for the
//! convergence, adaptive and stability studies.

use std::fmt::Write as _;
use std::path::PathBuf;

use dpg_core::analysis::infsup_gamma;
use dpg_core::assembly::{assemble, best_approx_error, l2_error_u, solve, Discretization};
use dpg_core::estimator::{afem_loop, AfemParams};
use dpg_core::mesh::build_structured_mesh;
use dpg_core::polyspace::TraceMode;
use dpg_core::problem::{benchmark_exp1, benchmark_exp2, benchmark_exp3, TransportProblem};
use dpg_core::{pt, DpgError};
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] DpgError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    /// Constant b, c and f with zero inflow data.
    Custom,
}

/// `None` in [`RunConfig::trace_mode`] means "experiment default": both modes for
/// exp2 convergence runs, conforming otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub bx: f64,
    pub by: f64,
    /// Reaction and source for the custom experiment.
    pub c: f64,
    pub f: f64,
    pub m: usize,
    pub subgrid: usize,
    pub trace_mode: Option<TraceMode>,
    /// Structured meshes with 2^k cells per side, k = level_min..=levels.
    pub level_min: usize,
    pub levels: usize,
    pub iters: usize,
    pub theta: f64,
    /// Cells per side of the initial adaptive mesh.
    pub initial_n: usize,
    pub out: Option<PathBuf>,
    /// Directory receiving one mesh file per adaptive iteration.
    pub snapshots: Option<PathBuf>,
    pub quad_degree: Option<usize>,
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Exp1,
            bx: 1.0,
            by: 1.0,
            c: 0.0,
            f: 1.0,
            m: 1,
            subgrid: 0,
            trace_mode: None,
            level_min: 2,
            levels: 6,
            iters: 12,
            theta: 0.5,
            initial_n: 4,
            out: None,
            snapshots: None,
            quad_degree: None,
            tol: dpg_core::assembly::SOLVER_TOL,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Value { key: key.into(), msg: format!("cannot parse `{value}`") })
}

pub fn parse_trace_mode(value: &str) -> Option<Option<TraceMode>> {
    match value {
        "conforming" => Some(Some(TraceMode::Conforming)),
        "nonconforming" => Some(Some(TraceMode::Nonconforming)),
        "both" | "default" => Some(None),
        _ => None,
    }
}

impl RunConfig {
    /// Defaults overridden by the `key = value` lines of `text`. Blank lines and
    /// `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Syntax { line: i + 1, msg: format!("expected key = value, got `{line}`") })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                CliError::Value { key, msg } => CliError::Syntax { line: i + 1, msg: format!("{key}: {msg}") },
                e => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                self.experiment = match value {
                    "exp1" => Experiment::Exp1,
                    "exp2" => Experiment::Exp2,
                    "exp3" => Experiment::Exp3,
                    "custom" => Experiment::Custom,
                    _ => return Err(CliError::Value { key: key.into(), msg: format!("unknown experiment `{value}`") }),
                }
            }
            "bx" => self.bx = parse_num(key, value)?,
            "by" => self.by = parse_num(key, value)?,
            "c" => self.c = parse_num(key, value)?,
            "f" => self.f = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "subgrid" => self.subgrid = parse_num(key, value)?,
            "trace_mode" | "trace-mode" => {
                self.trace_mode = parse_trace_mode(value).ok_or_else(|| CliError::Value { key: key.into(), msg: format!("unknown trace mode `{value}`") })?
            }
            "level_min" => self.level_min = parse_num(key, value)?,
            "levels" => self.levels = parse_num(key, value)?,
            "iters" => self.iters = parse_num(key, value)?,
            "theta" => self.theta = parse_num(key, value)?,
            "initial_n" => self.initial_n = parse_num(key, value)?,
            "out" => self.out = Some(value.into()),
            "snapshots" => self.snapshots = Some(value.into()),
            "quad_degree" => self.quad_degree = Some(parse_num(key, value)?),
            "tol" => self.tol = parse_num(key, value)?,
            _ => return Err(CliError::Value { key: key.into(), msg: "unknown key".into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(CliError::Invalid(s));
        if !(1..=6).contains(&self.m) {
            return bad(format!("m = {} must lie in 1..=6", self.m));
        }
        if self.subgrid > 4 {
            return bad(format!("subgrid = {} must be at most 4", self.subgrid));
        }
        if self.level_min > self.levels || self.levels > 10 {
            return bad(format!("levels {}..={} must be nonempty and at most 10", self.level_min, self.levels));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta = {} must lie in (0, 1]", self.theta));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol = {} must lie in (0, 1)", self.tol));
        }
        if self.initial_n == 0 {
            return bad("initial_n must be positive".into());
        }
        if !self.bx.is_finite() || !self.by.is_finite() || !self.c.is_finite() || !self.f.is_finite() {
            return bad("field and data parameters must be finite".into());
        }
        match self.experiment {
            Experiment::Exp1 if !(self.bx > 0.0 && self.by >= 0.0) => bad("exp1 needs bx > 0 and by >= 0".into()),
            Experiment::Exp2 if self.bx <= 0.0 => bad("exp2 needs bx > 0".into()),
            Experiment::Custom if self.bx == 0.0 && self.by == 0.0 => bad("custom needs a nonzero field".into()),
            _ => Ok(()),
        }
    }

    pub fn problem(&self) -> TransportProblem {
        let b = pt(self.bx, self.by);
        match self.experiment {
            Experiment::Exp1 => benchmark_exp1(b),
            Experiment::Exp2 => benchmark_exp2(b),
            Experiment::Exp3 => benchmark_exp3(),
            Experiment::Custom => TransportProblem::constant(b, self.c, self.f),
        }
    }

    fn level_range(&self) -> Vec<usize> {
        (self.level_min..=self.levels).collect()
    }
}

/// A CSV table with a short label naming the variant it holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub label: String,
    pub csv: String,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), num)
}

fn mode_name(mode: TraceMode) -> &'static str {
    match mode {
        TraceMode::Conforming => "conforming",
        TraceMode::Nonconforming => "nonconforming",
    }
}

struct LevelResult {
    h: f64,
    dofs: usize,
    l2_error: f64,
    best_approx: f64,
    gamma: Option<f64>,
}

fn run_level(cfg: &RunConfig, problem: &TransportProblem, k: usize, mode: TraceMode, ell: usize, with_gamma: bool) -> Result<LevelResult> {
    let mesh = build_structured_mesh(1 << k);
    let disc = Discretization::new(problem, &mesh, cfg.m, mode, ell, cfg.quad_degree)?;
    let (sys, _) = assemble(&disc, problem)?;
    let sol = solve(&sys, cfg.tol)?;
    let l2_error = l2_error_u(&disc, &sol, problem, disc.quad_degree)?;
    let best_approx = best_approx_error(problem, &disc.coarse, cfg.m - 1, disc.quad_degree)?;
    let gamma = if with_gamma { Some(infsup_gamma(&disc, problem)?.gamma) } else { None };
    Ok(LevelResult { h: disc.coarse.max_diameter(), dofs: disc.num_dofs(), l2_error, best_approx, gamma })
}

/// One table per trace mode with rows (h, dofs, l2_error, best_approx_error, ratio).
pub fn run_convergence(cfg: &RunConfig) -> Result<Vec<Table>> {
    cfg.validate()?;
    if !matches!(cfg.experiment, Experiment::Exp1 | Experiment::Exp2) {
        return Err(CliError::Invalid("convergence runs need experiment exp1 or exp2".into()));
    }
    let problem = cfg.problem();
    let modes = match (cfg.trace_mode, cfg.experiment) {
        (Some(m), _) => vec![m],
        (None, Experiment::Exp2) => vec![TraceMode::Conforming, TraceMode::Nonconforming],
        (None, _) => vec![TraceMode::Conforming],
    };
    modes
        .into_iter()
        .map(|mode| {
            let rows: Vec<LevelResult> =
                cfg.level_range().into_par_iter().map(|k| run_level(cfg, &problem, k, mode, cfg.subgrid, false)).collect::<Result<_>>()?;
            let mut csv = String::from("h,dofs,l2_error,best_approx_error,ratio\n");
            for r in rows {
                let _ = writeln!(csv, "{},{},{},{},{}", num(r.h), r.dofs, num(r.l2_error), num(r.best_approx), num(r.l2_error / r.best_approx));
            }
            Ok(Table { label: mode_name(mode).into(), csv })
        })
        .collect()
}

/// Rows (iteration, triangles, dofs, l2_error, total_indicator); the error is
/// `nan` when the problem has no exact solution.
pub fn run_adaptive(cfg: &RunConfig) -> Result<Table> {
    cfg.validate()?;
    let problem = cfg.problem();
    let params = AfemParams {
        iterations: cfg.iters,
        theta: cfg.theta,
        m: cfg.m,
        subgrid_depth: cfg.subgrid,
        mode: cfg.trace_mode.unwrap_or(TraceMode::Conforming),
        quad_degree: cfg.quad_degree,
    };
    let steps = afem_loop(&problem, &build_structured_mesh(cfg.initial_n), &params)?;
    if let Some(dir) = &cfg.snapshots {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        for s in &steps {
            let path = dir.join(format!("mesh_{:03}.txt", s.iteration));
            std::fs::write(&path, s.mesh.to_text()).map_err(|source| CliError::Io { path, source })?;
        }
    }
    let mut csv = String::from("iteration,triangles,dofs,l2_error,total_indicator\n");
    for s in &steps {
        let _ = writeln!(csv, "{},{},{},{},{}", s.iteration, s.mesh.num_triangles(), s.dofs, opt_num(s.l2_error), num(s.total_indicator));
    }
    Ok(Table { label: "adaptive".into(), csv })
}

/// Rows (h, ell, m, gamma, ratio) for ell = 0..=subgrid and every level.
pub fn run_stability(cfg: &RunConfig) -> Result<Table> {
    cfg.validate()?;
    if !matches!(cfg.experiment, Experiment::Exp1 | Experiment::Exp2) {
        return Err(CliError::Invalid("stability runs need experiment exp1 or exp2".into()));
    }
    if cfg.trace_mode == Some(TraceMode::Nonconforming) {
        return Err(CliError::Invalid("stability runs need conforming traces".into()));
    }
    let problem = cfg.problem();
    let jobs: Vec<(usize, usize)> = (0..=cfg.subgrid).flat_map(|ell| cfg.level_range().into_iter().map(move |k| (ell, k))).collect();
    let rows: Vec<(usize, LevelResult)> = jobs
        .into_par_iter()
        .map(|(ell, k)| Ok((ell, run_level(cfg, &problem, k, TraceMode::Conforming, ell, true)?)))
        .collect::<Result<_>>()?;
    let mut csv = String::from("h,ell,m,gamma,ratio\n");
    for (ell, r) in rows {
        let _ = writeln!(csv, "{},{},{},{},{}", num(r.h), ell, cfg.m, opt_num(r.gamma), num(r.l2_error / r.best_approx));
    }
    Ok(Table { label: "stability".into(), csv })
}

/// Where a table goes when a run produced `count` of them: the configured path,
/// or the path with `_label` inserted before the extension.
pub fn table_path(out: &std::path::Path, label: &str, count: usize) -> PathBuf {
    if count <= 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{label}.{ext}"),
        None => format!("{stem}_{label}"),
    };
    out.with_file_name(name)
}

pub fn write_tables(out: Option<&std::path::Path>, tables: &[Table]) -> Result<String> {
    match out {
        Some(path) => {
            for t in tables {
                let p = table_path(path, &t.label, tables.len());
                std::fs::write(&p, &t.csv).map_err(|source| CliError::Io { path: p, source })?;
            }
            Ok(String::new())
        }
        None => Ok(tables.iter().map(|t| t.csv.as_str()).collect::<Vec<_>>().join("\n")),
    }
}
