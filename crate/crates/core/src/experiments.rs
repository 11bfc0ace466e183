//! Preset runs: the manufactured Dirichlet case, flow over a submerged
//! triangle, parameter sweeps and the hydraulic diagnostics of the open
//! channel.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::recover_gradients;
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, BedProfile, BoundaryTag, Mesh, MeshParams};
use crate::io::{csv_line, fmt_f64};
use crate::newton::{newton_solve, ErrorMetric, NewtonConfig, NewtonState, Status};
use crate::problem::ProblemData;
use crate::surface::upwind_stencil;

/// Manufactured case on `[0, 1]` starting from `eta0`, with `n / 4` layers.
pub fn manufactured_mesh(n: usize, eta0: impl Fn(f64) -> f64) -> Result<Mesh> {
    if n < 8 {
        return Err(Error::InvalidParams(format!(
            "manufactured case needs n_x >= 8, got {n}"
        )));
    }
    let params = MeshParams {
        n_x: n,
        n_y: n / 4,
        x_left: 0.0,
        x_right: 1.0,
    };
    build_mesh(&params, &BedProfile::Flat { level: 0.0 }, eta0)
}

pub fn manufactured_metric() -> ErrorMetric {
    ErrorMetric::ExactSolution {
        eta_exact: Arc::new(|x| x + 1.0),
    }
}

/// Manufactured Dirichlet case from the parabola `x^2 + 1`.
pub fn run_manufactured_dirichlet(
    n: usize,
    config: &NewtonConfig,
) -> Result<(NewtonState, Status)> {
    run_manufactured_dirichlet_from(n, |x| x * x + 1.0, config)
}

pub fn run_manufactured_dirichlet_from(
    n: usize,
    eta0: impl Fn(f64) -> f64,
    config: &NewtonConfig,
) -> Result<(NewtonState, Status)> {
    let mesh = manufactured_mesh(n, eta0)?;
    newton_solve(
        &ProblemData::manufactured_dirichlet(),
        mesh,
        config,
        &manufactured_metric(),
    )
}

/// Half-length of the truncated channel.
pub const CHANNEL_HALF_LENGTH: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleCase {
    pub froude: f64,
    pub alpha: f64,
    pub w0: f64,
    pub n_x: usize,
    /// Layers per column; `max(4, n_x / 4)` when unset.
    pub n_y: Option<usize>,
}

impl TriangleCase {
    pub fn new(froude: f64, alpha: f64, w0: f64, n_x: usize) -> Self {
        TriangleCase {
            froude,
            alpha,
            w0,
            n_x,
            n_y: None,
        }
    }

    pub fn layers(&self) -> usize {
        self.n_y.unwrap_or_else(|| (self.n_x / 4).max(4))
    }

    pub fn apex_height(&self) -> f64 {
        self.w0 * self.alpha.tan()
    }

    /// Every violated invariant, joined.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.froude > 0.0 && self.froude.is_finite()) {
            bad.push(format!("F must be positive, got {}", self.froude));
        }
        if !(self.alpha > 0.0 && self.alpha < FRAC_PI_2) {
            bad.push(format!("alpha must lie in (0, pi/2), got {}", self.alpha));
        }
        if !(self.w0 > 0.0 && self.w0 < CHANNEL_HALF_LENGTH) {
            bad.push(format!(
                "w0 must lie in (0, {CHANNEL_HALF_LENGTH}), got {}",
                self.w0
            ));
        }
        if bad.is_empty() && !(self.apex_height() < 1.0) {
            bad.push(format!(
                "apex height w0 tan(alpha) = {} must stay below the unit depth",
                self.apex_height()
            ));
        }
        if self.n_x < 2 {
            bad.push(format!("n_x must be at least 2, got {}", self.n_x));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidCase(bad.join("; ")))
        }
    }

    pub fn mesh_params(&self) -> MeshParams {
        MeshParams {
            n_x: self.n_x,
            n_y: self.layers(),
            x_left: -CHANNEL_HALF_LENGTH,
            x_right: CHANNEL_HALF_LENGTH,
        }
    }

    pub fn bed(&self) -> BedProfile {
        BedProfile::Triangle {
            alpha: self.alpha,
            half_width: self.w0,
        }
    }

    pub fn problem(&self) -> Result<ProblemData> {
        ProblemData::open_channel(self.froude)
    }

    pub fn initial_mesh(&self) -> Result<Mesh> {
        self.validate()?;
        build_mesh(&self.mesh_params(), &self.bed(), |_| 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct TriangleRun {
    pub case: TriangleCase,
    pub state: NewtonState,
    pub status: Status,
    pub y0: f64,
}

/// Surface elevation at the station nearest `x = 0`.
pub fn crest_height(state: &NewtonState) -> f64 {
    let fs = &state.fs;
    let j = (0..fs.len())
        .min_by(|&a, &b| fs.stations[a].abs().total_cmp(&fs.stations[b].abs()))
        .expect("nonempty surface");
    fs.eta[j]
}

pub fn run_submerged_triangle(case: &TriangleCase, config: &NewtonConfig) -> Result<TriangleRun> {
    let mesh = case.initial_mesh()?;
    let problem = case.problem()?;
    let (state, status) = newton_solve(&problem, mesh, config, &ErrorMetric::UpdateNorm)?;
    let y0 = crest_height(&state);
    Ok(TriangleRun {
        case: *case,
        state,
        status,
        y0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub froude: f64,
    pub alpha: f64,
    pub w0: f64,
    /// NaN when the case could not run.
    pub y0: f64,
    pub iterations: usize,
    /// Solver status name, or `invalid` for a rejected case.
    pub status: String,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged.name()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "F,alpha,w0,y0,iterations,status";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&csv_line([
                fmt_f64(r.froude),
                fmt_f64(r.alpha),
                fmt_f64(r.w0),
                fmt_f64(r.y0),
                r.iterations.to_string(),
                r.status.clone(),
            ]));
            out.push('\n');
        }
        out
    }

    /// Converged crest heights in the slice with fixed `alpha` and `w0`,
    /// ordered by `F`.
    pub fn slice_in_froude(&self, alpha: f64, w0: f64) -> Vec<(f64, f64)> {
        let mut v: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.converged() && r.alpha == alpha && r.w0 == w0)
            .map(|r| (r.froude, r.y0))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    pub fn slice_in_width(&self, froude: f64, alpha: f64) -> Vec<(f64, f64)> {
        let mut v: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.converged() && r.froude == froude && r.alpha == alpha)
            .map(|r| (r.w0, r.y0))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

/// Worker count for sweeps: `FBP_THREADS` when set to a positive integer,
/// otherwise the rayon default.
pub fn sweep_threads() -> Option<usize> {
    std::env::var("FBP_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

/// Runs the cartesian product of cases from the same cold start. Rows are
/// ordered by `F`, then `alpha`, then `w0`, in list order.
pub fn sweep_y0(
    froudes: &[f64],
    alphas: &[f64],
    widths: &[f64],
    n_x: usize,
    config: &NewtonConfig,
) -> Result<SweepResult> {
    if froudes.is_empty() || alphas.is_empty() || widths.is_empty() {
        return Err(Error::InvalidParams("sweep lists must be nonempty".into()));
    }
    let mut cases = Vec::new();
    for &f in froudes {
        for &a in alphas {
            for &w in widths {
                cases.push(TriangleCase::new(f, a, w, n_x));
            }
        }
    }
    let run_one = |case: &TriangleCase| match run_submerged_triangle(case, config) {
        Ok(run) => SweepRow {
            froude: case.froude,
            alpha: case.alpha,
            w0: case.w0,
            y0: run.y0,
            iterations: run.state.k,
            status: run.status.name().to_string(),
        },
        Err(_) => SweepRow {
            froude: case.froude,
            alpha: case.alpha,
            w0: case.w0,
            y0: f64::NAN,
            iterations: 0,
            status: "invalid".to_string(),
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = sweep_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let rows = pool.install(|| cases.par_iter().map(run_one).collect());
    Ok(SweepResult { rows })
}

/// Downstream depths compatible with a unit upstream stream at Froude
/// number `F`: the trivial branch and the root of `2 L^2 - F^2 L - F^2 = 0`.
pub fn downstream_depth_branches(froude: f64) -> Result<(f64, Option<f64>)> {
    if !(froude > 0.0) || !froude.is_finite() {
        return Err(Error::NonpositiveFroude(froude));
    }
    let f2 = froude * froude;
    let l = (f2 + (f2 * f2 + 8.0 * f2).sqrt()) / 4.0;
    debug_assert!((froude >= 1.0) == (l >= 1.0) || (l - 1.0).abs() < 1e-12);
    Ok((1.0, Some(l)))
}

/// `F^2 - 2 L^2 / (1 + L)`.
pub fn branch_residual(froude: f64, depth: f64) -> f64 {
    froude * froude - 2.0 * depth * depth / (1.0 + depth)
}

/// Bound tolerance on the crest deviation.
pub const SOLITARY_TOL: f64 = 1e-6;

/// `y0 - 1 <= F^2 / 2` within [`SOLITARY_TOL`].
pub fn solitary_bound_holds(y0: f64, froude: f64) -> bool {
    y0 - 1.0 <= 0.5 * froude * froude + SOLITARY_TOL
}

pub fn solitary_bound_check(state: &NewtonState, froude: f64) -> bool {
    solitary_bound_holds(crest_height(state), froude)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discharge {
    pub q_in: f64,
    pub q_out: f64,
    pub rel_err: f64,
}

/// Inflow `int_{left} -g ds` against outflow `int_{right} phi_x dy`, both by
/// the trapezoid rule on wall nodes. The outflow `phi_x` is a second-order
/// one-sided difference along each node row, corrected for the row tilt with
/// the recovered `phi_y`.
pub fn discharge_check(state: &NewtonState, problem: &ProblemData) -> Discharge {
    let mesh = &state.mesh;
    let phi = &state.phi.phi;
    let grads = recover_gradients(mesh, phi);
    let mut q_in = 0.0;
    for &(a, b, tag) in &mesh.boundary_edges {
        if tag == BoundaryTag::GammaL {
            let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            let g = &problem.robin.left.g;
            q_in -= 0.5 * len * (g(p[0], p[1]) + g(q[0], q[1]));
        }
    }
    let last = mesh.n_stations() - 1;
    let (stencil, weights) = upwind_stencil(&mesh.stations, last, true);
    let wall = &mesh.columns[last];
    let phi_x: Vec<f64> = (0..wall.len())
        .map(|i| {
            let along = |f: &dyn Fn(usize) -> f64| -> f64 {
                stencil
                    .iter()
                    .zip(&weights)
                    .map(|(&k, w)| w * f(mesh.columns[k][i]))
                    .sum()
            };
            let dphi = along(&|n| phi[n]);
            let dy = along(&|n| mesh.nodes[n][1]);
            dphi - grads[wall[i]][1] * dy
        })
        .collect();
    let q_out: f64 = wall
        .windows(2)
        .zip(phi_x.windows(2))
        .map(|(n, v)| 0.5 * (mesh.nodes[n[1]][1] - mesh.nodes[n[0]][1]) * (v[0] + v[1]))
        .sum();
    let rel_err = (q_in - q_out).abs() / q_in.abs();
    Discharge {
        q_in,
        q_out,
        rel_err,
    }
}

/// Largest `|eta(x) - eta(-x)|` over stations with `|x| <= window`, the
/// mirrored value interpolated linearly.
pub fn symmetry_defect(state: &NewtonState, window: f64) -> f64 {
    let fs = &state.fs;
    let interp = |x: f64| -> f64 {
        let k = fs
            .stations
            .partition_point(|&s| s < x)
            .clamp(1, fs.len() - 1);
        let (x0, x1) = (fs.stations[k - 1], fs.stations[k]);
        let t = (x - x0) / (x1 - x0);
        fs.eta[k - 1] * (1.0 - t) + fs.eta[k] * t
    };
    fs.stations
        .iter()
        .zip(&fs.eta)
        .filter(|(x, _)| x.abs() <= window)
        .fold(0.0, |m, (&x, &e)| m.max((e - interp(-x)).abs()))
}

/// Largest deviation of the end elevations from the unit depth.
pub fn far_field_deviation(state: &NewtonState) -> f64 {
    let e = &state.fs.eta;
    (e[0] - 1.0).abs().max((e[e.len() - 1] - 1.0).abs())
}
