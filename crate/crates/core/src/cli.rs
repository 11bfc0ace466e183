//! Run configuration and the driver behind the `shape-newton` binary.
//!
//! Configuration is flat `key=value` text with dotted keys, one assignment
//! per line; `#` starts a comment. Command-line `--set key=value` flags are
//! applied after the file, so they override it.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assembly::assemble_jacobian;
use crate::experiments::{
    manufactured_metric, sweep_y0, SweepResult, TriangleCase, CHANNEL_HALF_LENGTH,
};
use crate::geometry::{build_mesh, BedProfile, MeshParams};
use crate::io::{csv_line, fmt_f64};
use crate::newton::{newton_solve, ErrorMetric, InitialPhi, NewtonConfig, NewtonState, Status};
use crate::problem::ProblemData;

/// Help text listing every key with its default.
pub const CONFIG_HELP: &str = "\
Configuration keys (file lines or --set key=value; flags win):
  experiment          manufactured_dirichlet | submerged_triangle | sweep | custom (required)
  mesh.n_x            x-intervals; 40 for manufactured_dirichlet, 80 otherwise
  mesh.n_y            layers per column; n_x/4 for manufactured_dirichlet, max(4, n_x/4) otherwise
  mesh.x_left         custom only, default -4
  mesh.x_right        custom only, default 4
  case.F              Froude number, default 3
  case.alpha          triangle base angle in radians, `pi/8` style accepted, default pi/8
  case.w0             triangle half width, default 0.3
  sweep.F             comma list, default 2,2.5,3
  sweep.alpha         comma list, default pi/8
  sweep.w0            comma list, default 0.1,0.3
  bed.points          custom bed polyline `x:y,x:y,...`, default flat at 0
  newton.tol          residual tolerance, default 1e-12
  newton.max_iters    default 30
  newton.relaxation   step fraction in (0, 1], default 1
  newton.initial_phi  presolve | zero, default presolve
  emit                comma list of convergence_csv, surface_csv, mesh_dump,
                      system_dump, plot_script; default convergence_csv,surface_csv,plot_script
  output_dir          default out

Exit codes: 0 converged (or sweep finished), 2 iteration limit, 3 solver abort,
1 configuration or output error.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Flag(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Flag(s) => write!(f, "flag `--set {s}`"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("output error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Solver(#[from] crate::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    ManufacturedDirichlet,
    SubmergedTriangle,
    Sweep,
    Custom,
}

impl Experiment {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "manufactured_dirichlet" => Experiment::ManufacturedDirichlet,
            "submerged_triangle" => Experiment::SubmergedTriangle,
            "sweep" => Experiment::Sweep,
            "custom" => Experiment::Custom,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Artifact {
    ConvergenceCsv,
    SurfaceCsv,
    MeshDump,
    SystemDump,
    PlotScript,
}

impl Artifact {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "convergence_csv" => Artifact::ConvergenceCsv,
            "surface_csv" => Artifact::SurfaceCsv,
            "mesh_dump" => Artifact::MeshDump,
            "system_dump" => Artifact::SystemDump,
            "plot_script" => Artifact::PlotScript,
            _ => return None,
        })
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::ConvergenceCsv => "convergence.csv",
            Artifact::SurfaceCsv => "surface.csv",
            Artifact::MeshDump => "mesh.txt",
            Artifact::SystemDump => "system.txt",
            Artifact::PlotScript => "plot.gp",
        }
    }
}

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepLists {
    pub froudes: Vec<f64>,
    pub alphas: Vec<f64>,
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub mesh: MeshParams,
    pub froude: f64,
    pub alpha: f64,
    pub w0: f64,
    pub sweep: SweepLists,
    /// Bed of the custom experiment.
    pub bed: BedProfile,
    pub newton: NewtonConfig,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Artifact>,
}

#[derive(Default)]
struct Raw {
    experiment: Option<Experiment>,
    n_x: Option<usize>,
    n_y: Option<usize>,
    x_left: Option<f64>,
    x_right: Option<f64>,
    froude: Option<f64>,
    alpha: Option<f64>,
    w0: Option<f64>,
    sweep_f: Option<Vec<f64>>,
    sweep_alpha: Option<Vec<f64>>,
    sweep_w0: Option<Vec<f64>>,
    bed: Option<Vec<(f64, f64)>>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    relaxation: Option<f64>,
    initial_phi: Option<InitialPhi>,
    emit: Option<BTreeSet<Artifact>>,
    output_dir: Option<PathBuf>,
}

/// Reads `pi`, `pi/8`, `3pi/8`, `3*pi/8` or a plain number.
pub fn parse_angle(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim().parse::<f64>().ok()?),
        None => (s, 1.0),
    };
    let factor = num.strip_suffix("pi")?.trim().trim_end_matches('*').trim();
    let factor = if factor.is_empty() {
        1.0
    } else {
        factor.parse::<f64>().ok()?
    };
    Some(factor * PI / den)
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    s.split(',').map(|t| item(t.trim())).collect()
}

fn parse_points(s: &str) -> Option<Vec<(f64, f64)>> {
    parse_list(s, |t| {
        let (x, y) = t.split_once(':')?;
        Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
    })
}

impl Raw {
    fn assign(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| format!("`{key}` expects a number, got `{v}`"))
        };
        let count = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| format!("`{key}` expects a count, got `{v}`"))
        };
        let numbers = |v: &str| {
            parse_list(v, |t| t.parse::<f64>().ok())
                .ok_or_else(|| format!("`{key}` expects a comma list of numbers, got `{v}`"))
        };
        let angle =
            |v: &str| parse_angle(v).ok_or_else(|| format!("`{key}` expects an angle, got `{v}`"));
        match key {
            "experiment" => {
                self.experiment = Some(
                    Experiment::parse(value)
                        .ok_or_else(|| format!("unknown experiment `{value}`"))?,
                )
            }
            "mesh.n_x" => self.n_x = Some(count(value)?),
            "mesh.n_y" => self.n_y = Some(count(value)?),
            "mesh.x_left" => self.x_left = Some(num(value)?),
            "mesh.x_right" => self.x_right = Some(num(value)?),
            "case.F" => self.froude = Some(num(value)?),
            "case.alpha" => self.alpha = Some(angle(value)?),
            "case.w0" => self.w0 = Some(num(value)?),
            "sweep.F" => self.sweep_f = Some(numbers(value)?),
            "sweep.alpha" => {
                self.sweep_alpha = Some(parse_list(value, parse_angle).ok_or_else(|| {
                    format!("`{key}` expects a comma list of angles, got `{value}`")
                })?)
            }
            "sweep.w0" => self.sweep_w0 = Some(numbers(value)?),
            "bed.points" => {
                self.bed = Some(
                    parse_points(value)
                        .ok_or_else(|| format!("`{key}` expects `x:y,x:y,...`, got `{value}`"))?,
                )
            }
            "newton.tol" => self.tol = Some(num(value)?),
            "newton.max_iters" => self.max_iters = Some(count(value)?),
            "newton.relaxation" => self.relaxation = Some(num(value)?),
            "newton.initial_phi" => {
                self.initial_phi = Some(match value {
                    "presolve" => InitialPhi::Presolve,
                    "zero" => InitialPhi::Zero,
                    _ => return Err(format!("`{key}` expects presolve or zero, got `{value}`")),
                })
            }
            "emit" => {
                let set = if value.is_empty() {
                    Some(BTreeSet::new())
                } else {
                    parse_list(value, Artifact::parse).map(|v| v.into_iter().collect())
                };
                self.emit = Some(set.ok_or_else(|| format!("unknown artifact in `{value}`"))?);
            }
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig, CliError> {
        let mut bad = Vec::new();
        let Some(experiment) = self.experiment else {
            bad.push("experiment is required".to_string());
            return Err(CliError::Validation(bad));
        };
        let manufactured = experiment == Experiment::ManufacturedDirichlet;
        let n_x = self.n_x.unwrap_or(if manufactured { 40 } else { 80 });
        let n_y = self.n_y.unwrap_or(if manufactured {
            n_x / 4
        } else {
            (n_x / 4).max(4)
        });
        if experiment != Experiment::Custom {
            if self.x_left.is_some() || self.x_right.is_some() {
                bad.push("mesh.x_left and mesh.x_right apply only to experiment=custom".into());
            }
            if self.bed.is_some() {
                bad.push("bed.points applies only to experiment=custom".into());
            }
        }
        let (x_left, x_right) = if manufactured {
            (0.0, 1.0)
        } else {
            (
                self.x_left.unwrap_or(-CHANNEL_HALF_LENGTH),
                self.x_right.unwrap_or(CHANNEL_HALF_LENGTH),
            )
        };
        let mesh = MeshParams {
            n_x,
            n_y,
            x_left,
            x_right,
        };
        if let Err(e) = mesh.validate() {
            bad.extend(split_messages(&e));
        }
        if manufactured && n_x < 8 {
            bad.push(format!(
                "manufactured_dirichlet needs mesh.n_x >= 8, got {n_x}"
            ));
        }

        let froude = self.froude.unwrap_or(3.0);
        let alpha = self.alpha.unwrap_or(PI / 8.0);
        let w0 = self.w0.unwrap_or(0.3);
        match experiment {
            Experiment::SubmergedTriangle => {
                let case = TriangleCase {
                    froude,
                    alpha,
                    w0,
                    n_x,
                    n_y: Some(n_y),
                };
                if let Err(e) = case.validate() {
                    bad.extend(split_messages(&e));
                }
            }
            Experiment::Custom if !(froude > 0.0 && froude.is_finite()) => {
                bad.push(format!("F must be positive, got {froude}"));
            }
            _ => {}
        }

        let sweep = SweepLists {
            froudes: self.sweep_f.unwrap_or_else(|| vec![2.0, 2.5, 3.0]),
            alphas: self.sweep_alpha.unwrap_or_else(|| vec![PI / 8.0]),
            widths: self.sweep_w0.unwrap_or_else(|| vec![0.1, 0.3]),
        };

        let bed = match self.bed {
            Some(points) => BedProfile::Polyline(points),
            None => BedProfile::Flat { level: 0.0 },
        };
        if let Err(e) = bed.validate() {
            bad.push(e.to_string());
        }

        let defaults = NewtonConfig::default();
        let newton = NewtonConfig {
            tol_residual: self.tol.unwrap_or(defaults.tol_residual),
            max_iters: self.max_iters.unwrap_or(defaults.max_iters),
            relaxation: self.relaxation.unwrap_or(defaults.relaxation),
            initial_phi: self.initial_phi.unwrap_or(defaults.initial_phi),
        };
        if let Err(e) = newton.validate() {
            bad.extend(split_messages(&e));
        }

        if !bad.is_empty() {
            return Err(CliError::Validation(bad));
        }
        Ok(RunConfig {
            experiment,
            mesh,
            froude,
            alpha,
            w0,
            sweep,
            bed,
            newton,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            emit: self.emit.unwrap_or_else(|| {
                [
                    Artifact::ConvergenceCsv,
                    Artifact::SurfaceCsv,
                    Artifact::PlotScript,
                ]
                .into()
            }),
        })
    }
}

/// Splits a solver validation message into its individual violations.
fn split_messages(e: &crate::Error) -> Vec<String> {
    let text = match e {
        crate::Error::InvalidParams(s) | crate::Error::InvalidCase(s) => s.clone(),
        other => other.to_string(),
    };
    text.split("; ").map(str::to_string).collect()
}

fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// Parses file text, then applies `overrides` (each `key=value`) in order.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut raw = Raw::default();
    for (n, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let location = Location::Line(n + 1);
        let Some((k, v)) = split_assignment(content) else {
            return Err(CliError::Parse {
                location,
                message: format!("expected key=value, got `{content}`"),
            });
        };
        raw.assign(k, v)
            .map_err(|message| CliError::Parse { location, message })?;
    }
    for flag in overrides {
        let location = Location::Flag(flag.clone());
        let Some((k, v)) = split_assignment(flag) else {
            return Err(CliError::Parse {
                location,
                message: "expected key=value".into(),
            });
        };
        raw.assign(k, v)
            .map_err(|message| CliError::Parse { location, message })?;
    }
    raw.finish()
}

/// What a run produced.
#[derive(Debug)]
pub struct RunOutcome {
    /// Solver status of a single run; `None` for sweeps.
    pub status: Option<Status>,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            None | Some(Status::Converged) => 0,
            Some(Status::MaxIters) => 2,
            Some(Status::AbortSurfacePenetration) | Some(Status::AbortSingular) => 3,
        }
    }
}

pub fn exit_code_for(err: &CliError) -> i32 {
    match err {
        CliError::Solver(_) => 3,
        _ => 1,
    }
}

/// Runs the configuration, prints diagnostics and returns the exit code.
pub fn run(config: &RunConfig, quiet: bool) -> i32 {
    match execute(config, quiet) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn execute(config: &RunConfig, quiet: bool) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(&config.output_dir)?;
    match config.experiment {
        Experiment::Sweep => run_sweep(config, quiet),
        _ => run_single(config, quiet),
    }
}

fn run_single(config: &RunConfig, quiet: bool) -> Result<RunOutcome, CliError> {
    let (problem, mesh, metric) = match config.experiment {
        Experiment::ManufacturedDirichlet => (
            ProblemData::manufactured_dirichlet(),
            build_mesh(&config.mesh, &BedProfile::Flat { level: 0.0 }, |x| {
                x * x + 1.0
            })?,
            manufactured_metric(),
        ),
        Experiment::SubmergedTriangle => {
            let case = TriangleCase {
                froude: config.froude,
                alpha: config.alpha,
                w0: config.w0,
                n_x: config.mesh.n_x,
                n_y: Some(config.mesh.n_y),
            };
            (
                case.problem()?,
                case.initial_mesh()?,
                ErrorMetric::UpdateNorm,
            )
        }
        Experiment::Custom => (
            ProblemData::open_channel(config.froude)?,
            build_mesh(&config.mesh, &config.bed, |_| 1.0)?,
            ErrorMetric::UpdateNorm,
        ),
        Experiment::Sweep => unreachable!("sweeps run separately"),
    };
    let (state, status) = newton_solve(&problem, mesh, &config.newton, &metric)?;
    if !quiet {
        for r in &state.history {
            println!(
                "k={:<3} r1={:.3e} r2={:.3e} surface_err={:.3e}",
                r.k, r.r1_norm, r.r2_norm, r.surface_err
            );
        }
        println!("status: {status} after {} iterations", state.k);
    }

    let mut written = Vec::new();
    for &artifact in &config.emit {
        let path = config.output_dir.join(artifact.file_name());
        let body = match artifact {
            Artifact::ConvergenceCsv => convergence_csv(&state),
            Artifact::SurfaceCsv => surface_csv(&state),
            Artifact::MeshDump => {
                let mut buf = Vec::new();
                state.mesh.write_text(&mut buf)?;
                String::from_utf8(buf).expect("ascii dump")
            }
            Artifact::SystemDump => {
                let sys = assemble_jacobian(&state.mesh, &problem, &state.phi, &state.fs)?;
                let mut buf = Vec::new();
                sys.write_text(&mut buf)?;
                String::from_utf8(buf).expect("ascii dump")
            }
            Artifact::PlotScript => single_plot_script(&config.emit),
        };
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(RunOutcome {
        status: Some(status),
        written,
    })
}

fn run_sweep(config: &RunConfig, quiet: bool) -> Result<RunOutcome, CliError> {
    let lists = &config.sweep;
    let result = sweep_y0(
        &lists.froudes,
        &lists.alphas,
        &lists.widths,
        config.mesh.n_x,
        &config.newton,
    )?;
    if !quiet {
        for r in &result.rows {
            println!(
                "F={} alpha={:.6} w0={} y0={:.10} iterations={} status={}",
                r.froude, r.alpha, r.w0, r.y0, r.iterations, r.status
            );
        }
    }
    let mut written = Vec::new();
    let path = config.output_dir.join(SWEEP_FILE);
    write_file(&path, &result.to_csv())?;
    written.push(path);
    if config.emit.contains(&Artifact::PlotScript) {
        let path = config.output_dir.join(Artifact::PlotScript.file_name());
        write_file(&path, &sweep_plot_script(&result))?;
        written.push(path);
    }
    Ok(RunOutcome {
        status: None,
        written,
    })
}

fn write_file(path: &Path, body: &str) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())
}

pub const CONVERGENCE_HEADER: &str = "k,dirichlet_err,surface_err,r1_norm,r2_norm";
pub const SURFACE_HEADER: &str = "x,eta,eta_x,kappa";

pub fn convergence_csv(state: &NewtonState) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for r in &state.history {
        out.push_str(&csv_line([
            r.k.to_string(),
            fmt_f64(r.dirichlet_err),
            fmt_f64(r.surface_err),
            fmt_f64(r.r1_norm),
            fmt_f64(r.r2_norm),
        ]));
        out.push('\n');
    }
    out
}

pub fn surface_csv(state: &NewtonState) -> String {
    let fs = &state.fs;
    let mut out = format!("{SURFACE_HEADER}\n");
    for j in 0..fs.len() {
        out.push_str(&csv_line([
            fmt_f64(fs.stations[j]),
            fmt_f64(fs.eta[j]),
            fmt_f64(fs.eta_x[j]),
            fmt_f64(fs.kappa[j]),
        ]));
        out.push('\n');
    }
    out
}

const PLOT_PREAMBLE: &str = "set datafile separator \",\"\nset terminal pngcairo size 900,700\n";

fn single_plot_script(emit: &BTreeSet<Artifact>) -> String {
    let mut s = String::from(PLOT_PREAMBLE);
    if emit.contains(&Artifact::ConvergenceCsv) {
        s.push_str(
            "set output \"convergence.png\"\n\
             set logscale y\n\
             set format y \"10^{%L}\"\n\
             set xlabel \"iteration\"\n\
             set multiplot layout 2,1\n\
             set ylabel \"field error\"\n\
             plot \"convergence.csv\" every ::1 using 1:2 with linespoints title \"dirichlet_err\"\n\
             set ylabel \"surface error\"\n\
             plot \"convergence.csv\" every ::1 using 1:3 with linespoints title \"surface_err\"\n\
             unset multiplot\n\
             unset logscale y\n\
             set format y \"%g\"\n",
        );
    }
    if emit.contains(&Artifact::SurfaceCsv) {
        s.push_str(
            "set output \"surface.png\"\n\
             set xlabel \"x\"\n\
             set ylabel \"eta\"\n\
             plot \"surface.csv\" every ::1 using 1:2 with lines title \"free surface\"\n",
        );
    }
    s
}

fn sweep_plot_script(result: &SweepResult) -> String {
    let mut slices: Vec<(f64, f64)> = Vec::new();
    for r in &result.rows {
        if !slices.iter().any(|&(a, w)| a == r.alpha && w == r.w0) {
            slices.push((r.alpha, r.w0));
        }
    }
    let mut s = String::from(PLOT_PREAMBLE);
    s.push_str("set output \"sweep.png\"\nset xlabel \"F\"\nset ylabel \"y0\"\n");
    let curves: Vec<String> = slices
        .iter()
        .map(|&(a, w)| {
            format!(
                "\"sweep.csv\" every ::1 using 1:((strcol(6) eq \"converged\" && $2 == {} && $3 == {}) ? $4 : NaN) \
                 with linespoints title \"alpha={a:.4}, w0={w}\"",
                fmt_f64(a),
                fmt_f64(w)
            )
        })
        .collect();
    s.push_str(&format!("plot {}\n", curves.join(", \\\n     ")));
    s
}
