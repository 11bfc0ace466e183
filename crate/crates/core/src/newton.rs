//! Coupled shape-Newton iteration with vertical surface updates.
//!
//! The Jacobian linearizes the residuals in Eulerian form, while the unknowns
//! live on nodes that move with the surface. Each update therefore carries
//! the potential along with the mesh motion: a node moved vertically by `v`
//! receives `v * d_y phi` from the recovered gradient on top of the Newton
//! correction. Strong-Dirichlet nodes are instead reset to their datum at
//! the new position.

use std::sync::Arc;
use std::time::Instant;

pub use crate::assembly::apply_update;
use crate::assembly::{
    assemble_field_block, assemble_jacobian, assemble_r1, assemble_residuals, SolutionField,
};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::linsolve::lu_solve;
use crate::problem::{FreeSurfaceCondition, ProblemData};
use crate::surface::{surface_geometry, trapezoid_weights, FreeSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPhi {
    Zero,
    Presolve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Stop once `max(|r1|_inf, |r2|_inf)` is at or below this.
    pub tol_residual: f64,
    pub max_iters: usize,
    /// Step fraction in `(0, 1]`.
    pub relaxation: f64,
    pub initial_phi: InitialPhi,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol_residual: 1e-12,
            max_iters: 30,
            relaxation: 1.0,
            initial_phi: InitialPhi::Presolve,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.tol_residual > 0.0) {
            bad.push(format!(
                "tolerance must be positive, got {}",
                self.tol_residual
            ));
        }
        if self.max_iters < 1 {
            bad.push("max_iters must be at least 1".to_string());
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            bad.push(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    AbortSurfacePenetration,
    AbortSingular,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max_iters",
            Status::AbortSurfacePenetration => "abort_surface_penetration",
            Status::AbortSingular => "abort_singular",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the two error columns of the history are filled.
#[derive(Clone)]
pub enum ErrorMetric {
    /// `|phi - h|_inf` on the surface and `|eta - eta_exact|_inf`.
    ExactSolution {
        eta_exact: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
    /// Discrete L2 norms of the update taken from each iterate; zero on the
    /// final record, from which no step is taken.
    UpdateNorm,
}

impl std::fmt::Debug for ErrorMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorMetric::ExactSolution { .. } => f.write_str("ExactSolution"),
            ErrorMetric::UpdateNorm => f.write_str("UpdateNorm"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub k: usize,
    pub dirichlet_err: f64,
    pub surface_err: f64,
    pub r1_norm: f64,
    pub r2_norm: f64,
    /// Seconds since the solve started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonState {
    pub k: usize,
    pub mesh: Mesh,
    pub fs: FreeSurface,
    pub phi: SolutionField,
    pub history: Vec<ConvergenceRecord>,
}

impl NewtonState {
    pub fn new(mesh: Mesh, phi: SolutionField) -> Result<Self> {
        let fs = surface_geometry(&mesh.stations, &mesh.surface_eta())?;
        Ok(NewtonState {
            k: 0,
            mesh,
            fs,
            phi,
            history: Vec::new(),
        })
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.history.last().map(|r| r.r1_norm.max(r.r2_norm))
    }
}

/// Solves the fixed-domain field problem on the current mesh, with the free
/// surface treated as a homogeneous Neumann boundary.
pub fn presolve_phi(problem: &ProblemData, mesh: &Mesh) -> Result<SolutionField> {
    let (k, _) = assemble_field_block(mesh, problem);
    let r0 = assemble_r1(
        mesh,
        problem,
        &SolutionField::new(vec![0.0; mesh.n_nodes()]),
    )?;
    let rhs: Vec<f64> = r0.iter().map(|v| -v).collect();
    Ok(SolutionField::new(lu_solve(&k, &rhs)?))
}

fn exact_errors(
    problem: &ProblemData,
    state: &NewtonState,
    eta_exact: &(dyn Fn(f64) -> f64 + Send + Sync),
) -> (f64, f64) {
    let h = match &problem.surface {
        FreeSurfaceCondition::Dirichlet { h, .. } => Some(h),
        FreeSurfaceCondition::Bernoulli { .. } => None,
    };
    let mut de = 0.0f64;
    let mut se = 0.0f64;
    for j in 0..state.fs.len() {
        let (x, y) = (state.fs.stations[j], state.fs.eta[j]);
        if let Some(h) = h {
            de = de.max((state.phi.phi[state.mesh.surface_node(j)] - h(x, y)).abs());
        }
        se = se.max((y - eta_exact(x)).abs());
    }
    (de, se)
}

/// Lumped-mass L2 norm of a nodal field and trapezoid L2 norm of a station
/// field.
fn update_norms(mesh: &Mesh, dphi: &[f64], deta: &[f64]) -> (f64, f64) {
    let mut mass = vec![0.0; mesh.n_nodes()];
    for t in 0..mesh.triangles.len() {
        let a = mesh.signed_area(t) / 3.0;
        for &v in &mesh.triangles[t] {
            mass[v] += a;
        }
    }
    let phi2: f64 = dphi.iter().zip(&mass).map(|(d, m)| m * d * d).sum();
    let w = trapezoid_weights(&mesh.stations);
    let eta2: f64 = deta.iter().zip(&w).map(|(d, m)| m * d * d).sum();
    (phi2.sqrt(), eta2.sqrt())
}

pub fn newton_solve(
    problem: &ProblemData,
    mesh0: Mesh,
    config: &NewtonConfig,
    metric: &ErrorMetric,
) -> Result<(NewtonState, Status)> {
    problem.validate()?;
    let phi0 = match config.initial_phi {
        InitialPhi::Presolve => presolve_phi(problem, &mesh0)?,
        InitialPhi::Zero => SolutionField::new(vec![0.0; mesh0.n_nodes()]),
    };
    newton_solve_from(problem, mesh0, phi0, config, metric)
}

/// Newton iteration from a given initial potential.
pub fn newton_solve_from(
    problem: &ProblemData,
    mesh0: Mesh,
    phi0: SolutionField,
    config: &NewtonConfig,
    metric: &ErrorMetric,
) -> Result<(NewtonState, Status)> {
    config.validate()?;
    problem.validate()?;
    let start = Instant::now();
    let mut state = NewtonState::new(mesh0, phi0)?;
    loop {
        let res = assemble_residuals(&state.mesh, problem, &state.phi, &state.fs)?;
        let (r1_norm, r2_norm) = (res.r1_inf(), res.r2_inf());
        let (mut dirichlet_err, mut surface_err) = match metric {
            ErrorMetric::ExactSolution { eta_exact } => {
                exact_errors(problem, &state, eta_exact.as_ref())
            }
            ErrorMetric::UpdateNorm => (0.0, 0.0),
        };
        let record = |state: &mut NewtonState, de: f64, se: f64| {
            state.history.push(ConvergenceRecord {
                k: state.k,
                dirichlet_err: de,
                surface_err: se,
                r1_norm,
                r2_norm,
                wall_time: start.elapsed().as_secs_f64(),
            });
        };
        let combined = r1_norm.max(r2_norm);
        if !combined.is_finite() {
            record(&mut state, dirichlet_err, surface_err);
            return Ok((state, Status::AbortSingular));
        }
        if combined <= config.tol_residual {
            record(&mut state, dirichlet_err, surface_err);
            return Ok((state, Status::Converged));
        }
        if state.k >= config.max_iters {
            record(&mut state, dirichlet_err, surface_err);
            return Ok((state, Status::MaxIters));
        }

        let sys = assemble_jacobian(&state.mesh, problem, &state.phi, &state.fs)?;
        let step = match lu_solve(&sys.matrix, &sys.rhs) {
            Ok(x) => x,
            Err(Error::SingularMatrix { .. }) | Err(Error::ResidualBound { .. }) => {
                record(&mut state, dirichlet_err, surface_err);
                return Ok((state, Status::AbortSingular));
            }
            Err(e) => return Err(e),
        };
        let (dphi, deta) = sys.dof_map.split(&step);
        if let ErrorMetric::UpdateNorm = metric {
            let (a, b) = update_norms(&state.mesh, &dphi, &deta);
            dirichlet_err = config.relaxation * a;
            surface_err = config.relaxation * b;
        }
        record(&mut state, dirichlet_err, surface_err);

        match apply_update(
            &state.mesh,
            problem,
            &state.phi,
            &dphi,
            &deta,
            config.relaxation,
        ) {
            Ok((mesh, phi)) => {
                state.fs = surface_geometry(&mesh.stations, &mesh.surface_eta())?;
                state.mesh = mesh;
                state.phi = phi;
                state.k += 1;
            }
            Err(Error::SurfacePenetratesBed { .. }) => {
                return Ok((state, Status::AbortSurfacePenetration));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Observed convergence order from the `surface_err` column.
///
/// The stagnation level is the smallest positive error; the fit uses the
/// leading run of errors above 100 times that level and returns the
/// least-squares slope of `log e_{k+1}` against `log e_k`.
pub fn estimate_order(history: &[ConvergenceRecord]) -> Result<f64> {
    let errs: Vec<f64> = history.iter().map(|r| r.surface_err).collect();
    let floor = errs
        .iter()
        .copied()
        .filter(|e| *e > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::InsufficientHistory("no positive errors".into()));
    }
    let window: Vec<f64> = errs
        .iter()
        .copied()
        .take_while(|e| *e > 100.0 * floor)
        .collect();
    if window.len() < 3 {
        return Err(Error::InsufficientHistory(format!(
            "{} records above the stagnation level, need 3",
            window.len()
        )));
    }
    let pts: Vec<(f64, f64)> = window.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientHistory("errors do not vary".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, BedProfile, MeshParams};
    use crate::problem::{constant, BoundaryData, RobinData};

    fn synthetic(errs: &[f64]) -> Vec<ConvergenceRecord> {
        errs.iter()
            .enumerate()
            .map(|(k, &e)| ConvergenceRecord {
                k,
                dirichlet_err: e,
                surface_err: e,
                r1_norm: e,
                r2_norm: e,
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn geometric_sequence_is_linear() {
        let errs: Vec<f64> = (0..12).map(|k| 10f64.powi(-k)).collect();
        assert!((estimate_order(&synthetic(&errs)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn squaring_sequence_is_quadratic() {
        let errs: Vec<f64> = (0..6).map(|k| 10f64.powf(-(2f64.powi(k)))).collect();
        assert!((estimate_order(&synthetic(&errs)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_history_rejected() {
        let err = estimate_order(&synthetic(&[1e-1, 1e-5])).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory(_)));
    }

    fn unit_square() -> Mesh {
        let p = MeshParams {
            n_x: 4,
            n_y: 4,
            x_left: 0.0,
            x_right: 1.0,
        };
        build_mesh(&p, &BedProfile::Flat { level: 0.0 }, |_| 1.0).unwrap()
    }

    #[test]
    fn all_neumann_presolve_is_singular() {
        let wall = || BoundaryData::neumann(constant(0.0));
        let problem = ProblemData {
            f: constant(0.0),
            robin: RobinData {
                left: wall(),
                right: wall(),
                bottom: wall(),
            },
            surface: crate::problem::bernoulli_from_froude(1.0).unwrap(),
        };
        let err = presolve_phi(&problem, &unit_square()).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }), "{err:?}");
    }

    fn manufactured_mesh(n: usize, eta0: impl Fn(f64) -> f64) -> Mesh {
        let p = MeshParams {
            n_x: n,
            n_y: n / 4,
            x_left: 0.0,
            x_right: 1.0,
        };
        build_mesh(&p, &BedProfile::Flat { level: 0.0 }, eta0).unwrap()
    }

    fn exact_metric() -> ErrorMetric {
        ErrorMetric::ExactSolution {
            eta_exact: Arc::new(|x| x + 1.0),
        }
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let problem = ProblemData::manufactured_dirichlet();
        let mesh = manufactured_mesh(8, |x| x + 1.0);
        let phi = SolutionField::from_fn(&mesh, |x, y| x + y);
        let cfg = NewtonConfig::default();
        let (state, status) =
            newton_solve_from(&problem, mesh, phi, &cfg, &exact_metric()).unwrap();
        assert_eq!(status, Status::Converged);
        assert_eq!(state.k, 0);
    }

    #[test]
    fn one_step_from_solution_does_not_drift() {
        let problem = ProblemData::manufactured_dirichlet();
        let mesh = manufactured_mesh(16, |x| x + 1.0);
        let phi = SolutionField::from_fn(&mesh, |x, y| x + y);
        let fs = surface_geometry(&mesh.stations, &mesh.surface_eta()).unwrap();
        let sys = assemble_jacobian(&mesh, &problem, &phi, &fs).unwrap();
        let (dphi, deta) = sys.dof_map.split(&lu_solve(&sys.matrix, &sys.rhs).unwrap());
        let (m2, p2) = apply_update(&mesh, &problem, &phi, &dphi, &deta, 1.0).unwrap();
        let drift_eta = m2
            .surface_eta()
            .iter()
            .zip(mesh.surface_eta())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let drift_phi = p2
            .phi
            .iter()
            .zip(&phi.phi)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(
            drift_eta < 1e-13 && drift_phi < 1e-13,
            "{drift_eta} {drift_phi}"
        );
    }

    #[test]
    fn manufactured_case_converges_from_parabola() {
        let problem = ProblemData::manufactured_dirichlet();
        let mesh = manufactured_mesh(8, |x| x * x + 1.0);
        let (state, status) =
            newton_solve(&problem, mesh, &NewtonConfig::default(), &exact_metric()).unwrap();
        assert_eq!(status, Status::Converged);
        assert!(state.k <= 8, "{} iterations", state.k);
        let last = state.history.last().unwrap();
        assert!(last.surface_err < 1e-10 && last.dirichlet_err < 1e-10);
        let h = &state.history;
        for k in 0..3 {
            assert!(h[k + 1].surface_err < h[k].surface_err);
        }
    }

    #[test]
    fn transport_keeps_dirichlet_data() {
        let problem = ProblemData::manufactured_dirichlet();
        let mesh = manufactured_mesh(8, |x| x * x + 1.0);
        let phi = SolutionField::from_fn(&mesh, |x, y| x + y);
        let deta: Vec<f64> = mesh.stations.iter().map(|x| 0.1 * x).collect();
        let (m2, p2) = apply_update(
            &mesh,
            &problem,
            &phi,
            &vec![0.0; mesh.n_nodes()],
            &deta,
            1.0,
        )
        .unwrap();
        for (n, q) in m2.nodes.iter().enumerate() {
            // Linear potential: transport along the recovered gradient is exact.
            assert!((p2.phi[n] - (q[0] + q[1])).abs() < 1e-13);
        }
    }

    #[test]
    fn invalid_config_reports_all_problems() {
        let cfg = NewtonConfig {
            tol_residual: 0.0,
            max_iters: 0,
            relaxation: 1.5,
            ..Default::default()
        };
        let Error::InvalidParams(msg) = cfg.validate().unwrap_err() else {
            panic!()
        };
        assert_eq!(msg.matches(';').count(), 2);
    }
}
