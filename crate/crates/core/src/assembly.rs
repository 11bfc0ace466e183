//! P1 Galerkin residuals and the approximate shape-Newton Jacobian.
//!
//! Unknowns are the nodal potential on every mesh node and one vertical
//! surface correction per station. Rows and columns are interleaved per
//! column (the column's nodes, then its surface correction) so the coupled
//! matrix stays narrow-banded.

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Mesh};
use crate::linsolve::CsrMatrix;
use crate::problem::{
    evaluate_surface_residual_density, FreeSurfaceCondition, Omega, ProblemData, ScalarFn,
};
use crate::surface::{surface_geometry, upwind_stencil, FreeSurface};

/// Nodal potential over all mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub phi: Vec<f64>,
}

impl SolutionField {
    pub fn new(phi: Vec<f64>) -> Self {
        SolutionField { phi }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        SolutionField {
            phi: mesh.nodes.iter().map(|p| f(p[0], p[1])).collect(),
        }
    }

    fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.phi.len() != mesh.n_nodes() {
            return Err(Error::MeshFieldMismatch {
                expected: mesh.n_nodes(),
                got: self.phi.len(),
            });
        }
        Ok(())
    }
}

/// Area and constant barycentric gradients of triangle `t`.
pub fn element_gradients(mesh: &Mesh, t: usize) -> (f64, [[f64; 2]; 3]) {
    let [a, b, c] = mesh.triangles[t];
    let (p, q, r) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
    let area = mesh.signed_area(t);
    let s = 0.5 / area;
    let grads = [
        [(q[1] - r[1]) * s, (r[0] - q[0]) * s],
        [(r[1] - p[1]) * s, (p[0] - r[0]) * s],
        [(p[1] - q[1]) * s, (q[0] - p[0]) * s],
    ];
    (area, grads)
}

/// Area-weighted average of the element gradients around each node.
pub fn recover_gradients(mesh: &Mesh, phi: &[f64]) -> Vec<[f64; 2]> {
    let n = mesh.n_nodes();
    let mut acc = vec![[0.0; 2]; n];
    let mut weight = vec![0.0; n];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (area, grads) = element_gradients(mesh, t);
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += phi[tri[k]] * grads[k][0];
            g[1] += phi[tri[k]] * grads[k][1];
        }
        for &v in tri {
            acc[v][0] += area * g[0];
            acc[v][1] += area * g[1];
            weight[v] += area;
        }
    }
    acc.iter()
        .zip(&weight)
        .map(|(g, w)| [g[0] / w, g[1] / w])
        .collect()
}

/// Linear map from nodal values to the recovered gradient at `node`:
/// `grad(node) = sum_k w_k phi_k`.
pub fn recovery_stencil(mesh: &Mesh, node: usize) -> Vec<(usize, [f64; 2])> {
    let mut total = 0.0;
    let mut raw: Vec<(usize, [f64; 2])> = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !tri.contains(&node) {
            continue;
        }
        let (area, grads) = element_gradients(mesh, t);
        total += area;
        for k in 0..3 {
            raw.push((tri[k], [area * grads[k][0], area * grads[k][1]]));
        }
    }
    raw.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, [f64; 2])> = Vec::new();
    for (k, w) in raw {
        match out.last_mut() {
            Some(last) if last.0 == k => {
                last.1[0] += w[0];
                last.1[1] += w[1];
            }
            _ => out.push((k, w)),
        }
    }
    for e in &mut out {
        e.1[0] /= total;
        e.1[1] /= total;
    }
    out
}

/// Row/column numbering of the stacked unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    n_y: usize,
    n_stations: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        DofMap {
            n_y: mesh.n_y,
            n_stations: mesh.n_stations(),
        }
    }

    fn stride(&self) -> usize {
        self.n_y + 2
    }

    pub fn len(&self) -> usize {
        self.stride() * self.n_stations
    }

    pub fn is_empty(&self) -> bool {
        self.n_stations == 0
    }

    pub fn n_nodes(&self) -> usize {
        (self.n_y + 1) * self.n_stations
    }

    pub fn phi(&self, node: usize) -> usize {
        let per = self.n_y + 1;
        (node / per) * self.stride() + node % per
    }

    pub fn eta(&self, station: usize) -> usize {
        station * self.stride() + self.n_y + 1
    }

    pub fn stack(&self, dphi: &[f64], deta: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for (node, v) in dphi.iter().enumerate() {
            x[self.phi(node)] = *v;
        }
        for (j, v) in deta.iter().enumerate() {
            x[self.eta(j)] = *v;
        }
        x
    }

    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dphi = (0..self.n_nodes()).map(|n| x[self.phi(n)]).collect();
        let deta = (0..self.n_stations).map(|j| x[self.eta(j)]).collect();
        (dphi, deta)
    }
}

/// Residual vectors in node/station numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ResidualPair {
    pub fn r1_inf(&self) -> f64 {
        inf_norm(&self.r1)
    }

    pub fn r2_inf(&self) -> f64 {
        inf_norm(&self.r2)
    }

    pub fn r1_l2(&self) -> f64 {
        l2_norm(&self.r1)
    }

    pub fn r2_l2(&self) -> f64 {
        l2_norm(&self.r2)
    }

    /// `max(|r1|_inf, |r2|_inf)`.
    pub fn combined_inf(&self) -> f64 {
        self.r1_inf().max(self.r2_inf())
    }
}

/// Dirichlet datum of a node, if any fixed boundary through it is strong.
/// Lateral walls take precedence at corners.
pub fn dirichlet_datum<'a>(
    mesh: &Mesh,
    problem: &'a ProblemData,
    node: usize,
) -> Option<&'a ScalarFn> {
    let (j, i) = mesh.node_position(node);
    let last = mesh.n_stations() - 1;
    let mut tags = Vec::with_capacity(2);
    if j == 0 {
        tags.push(BoundaryTag::GammaL);
    }
    if j == last {
        tags.push(BoundaryTag::GammaR);
    }
    if i == 0 {
        tags.push(BoundaryTag::GammaB);
    }
    tags.into_iter()
        .filter_map(|t| problem.robin.get(t))
        .find(|d| d.is_dirichlet())
        .map(|d| &d.h)
}

/// Strong-Dirichlet mask over nodes.
pub fn dirichlet_mask(mesh: &Mesh, problem: &ProblemData) -> Vec<bool> {
    (0..mesh.n_nodes())
        .map(|n| dirichlet_datum(mesh, problem, n).is_some())
        .collect()
}

fn edge_length(mesh: &Mesh, a: usize, b: usize) -> f64 {
    let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
    (q[0] - p[0]).hypot(q[1] - p[1])
}

/// Visits `(area, grads, tri)` for every triangle.
fn for_each_element(mesh: &Mesh, mut f: impl FnMut(f64, [[f64; 2]; 3], [usize; 3])) {
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (area, grads) = element_gradients(mesh, t);
        f(area, grads, *tri);
    }
}

/// Robin edges with finite coefficient: `(a, b, omega, length, tag)`.
fn robin_edges<'a>(
    mesh: &'a Mesh,
    problem: &'a ProblemData,
) -> impl Iterator<Item = (usize, usize, f64, f64, &'a crate::problem::BoundaryData)> + 'a {
    mesh.boundary_edges.iter().filter_map(move |&(a, b, tag)| {
        let data = problem.robin.get(tag)?;
        match data.omega {
            Omega::Finite(w) => Some((a, b, w, edge_length(mesh, a, b), data)),
            Omega::Dirichlet => None,
        }
    })
}

/// Field equation residual.
pub fn assemble_r1(mesh: &Mesh, problem: &ProblemData, phi: &SolutionField) -> Result<Vec<f64>> {
    phi.check(mesh)?;
    let phi = &phi.phi;
    let mut r = vec![0.0; mesh.n_nodes()];
    for_each_element(mesh, |area, grads, tri| {
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += phi[tri[k]] * grads[k][0];
            g[1] += phi[tri[k]] * grads[k][1];
        }
        for k in 0..3 {
            let p = mesh.nodes[tri[k]];
            r[tri[k]] += area * (g[0] * grads[k][0] + g[1] * grads[k][1])
                - area / 3.0 * (problem.f)(p[0], p[1]);
        }
    });
    for (a, b, omega, len, data) in robin_edges(mesh, problem) {
        for v in [a, b] {
            let p = mesh.nodes[v];
            let datum = (data.g)(p[0], p[1]) + omega * (data.h)(p[0], p[1]);
            r[v] += 0.5 * len * (omega * phi[v] - datum);
        }
    }
    for (node, res) in r.iter_mut().enumerate() {
        if let Some(h) = dirichlet_datum(mesh, problem, node) {
            let p = mesh.nodes[node];
            *res = phi[node] - h(p[0], p[1]);
        }
    }
    Ok(r)
}

/// Surface weights `L_j = w_j * arc_weight_j` turning densities into
/// residual entries: the trapezoid rule in `x` after the measure change.
pub fn surface_weights(fs: &FreeSurface) -> Vec<f64> {
    fs.x_weights()
        .iter()
        .zip(&fs.arc_weight)
        .map(|(w, a)| w * a)
        .collect()
}

fn surface_h(problem: &ProblemData, x: f64, y: f64) -> f64 {
    match &problem.surface {
        FreeSurfaceCondition::Dirichlet { h, .. } => h(x, y),
        FreeSurfaceCondition::Bernoulli { .. } => 0.0,
    }
}

fn check_surface(mesh: &Mesh, fs: &FreeSurface) -> Result<()> {
    if fs.len() != mesh.n_stations() {
        return Err(Error::MeshFieldMismatch {
            expected: mesh.n_stations(),
            got: fs.len(),
        });
    }
    Ok(())
}

/// Surface velocity `(d phi / ds) tau` from the surface trace, with the
/// derivative taken on the upstream side of each station.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceVelocity {
    pub velocity: [f64; 2],
    /// `d phi / dx` at the station.
    pub dphi_dx: f64,
    /// Stations of the stencil and their weights in `d phi / dx`.
    pub stations: [usize; 3],
    pub weights: [f64; 3],
}

pub fn surface_velocities(
    mesh: &Mesh,
    phi: &SolutionField,
    fs: &FreeSurface,
) -> Vec<SurfaceVelocity> {
    let trace: Vec<f64> = (0..fs.len())
        .map(|j| phi.phi[mesh.surface_node(j)])
        .collect();
    let n = fs.len();
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(n - 1);
            let forward = trace[hi] >= trace[lo];
            let (stations, weights) = upwind_stencil(&fs.stations, j, forward);
            let dphi_dx: f64 = stations
                .iter()
                .zip(&weights)
                .map(|(&k, w)| w * trace[k])
                .sum();
            let t = fs.tangent(j);
            let dphi_ds = dphi_dx / fs.arc_weight[j];
            SurfaceVelocity {
                velocity: [dphi_ds * t[0], dphi_ds * t[1]],
                dphi_dx,
                stations,
                weights,
            }
        })
        .collect()
}

/// Free-surface residual; the pinned station entry is zero.
pub fn assemble_r2(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    fs: &FreeSurface,
) -> Result<Vec<f64>> {
    surface_density_residual(mesh, problem, phi, fs)
}

fn surface_density_residual(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    fs: &FreeSurface,
) -> Result<Vec<f64>> {
    phi.check(mesh)?;
    check_surface(mesh, fs)?;
    let speeds = match problem.surface {
        FreeSurfaceCondition::Bernoulli { .. } => Some(surface_velocities(mesh, phi, fs)),
        FreeSurfaceCondition::Dirichlet { .. } => None,
    };
    let weights = surface_weights(fs);
    let mut r = vec![0.0; fs.len()];
    for j in 1..fs.len() {
        let node = mesh.surface_node(j);
        let (x, y) = (fs.stations[j], fs.eta[j]);
        let g = speeds.as_ref().map_or([0.0; 2], |s| s[j].velocity);
        let rho = evaluate_surface_residual_density(
            &problem.surface,
            g,
            y,
            phi.phi[node],
            surface_h(problem, x, y),
        );
        r[j] = weights[j] * rho;
    }
    Ok(r)
}

pub fn assemble_residuals(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    fs: &FreeSurface,
) -> Result<ResidualPair> {
    Ok(ResidualPair {
        r1: assemble_r1(mesh, problem, phi)?,
        r2: assemble_r2(mesh, problem, phi, fs)?,
    })
}

/// Linearized coupled system `J [dphi; deta] = -[r1; r2]`.
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    /// Identity rows: strong-Dirichlet nodes and the pinned station.
    pub constrained_rows: Vec<usize>,
}

impl CoupledSystem {
    /// Matrix action on a direction given in node/station numbering.
    pub fn action(&self, dphi: &[f64], deta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.dof_map
            .split(&self.matrix.matvec(&self.dof_map.stack(dphi, deta)))
    }

    /// Coordinate dump, one `row col value` line per stored entry.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for (r, c, v) in self.matrix.triplets() {
            writeln!(w, "{r} {c} {}", crate::io::fmt_f64(v))?;
        }
        Ok(())
    }
}

/// The velocity-potential block alone: stiffness plus Robin mass with
/// Dirichlet rows replaced by identities, in node numbering.
pub fn assemble_field_block(mesh: &Mesh, problem: &ProblemData) -> (CsrMatrix, Vec<bool>) {
    let mask = dirichlet_mask(mesh, problem);
    let mut trips = Vec::with_capacity(9 * mesh.triangles.len());
    field_block_triplets(mesh, problem, &mask, |n| n, &mut trips);
    let n = mesh.n_nodes();
    (CsrMatrix::from_triplets(n, n, &trips), mask)
}

fn field_block_triplets(
    mesh: &Mesh,
    problem: &ProblemData,
    mask: &[bool],
    dof: impl Fn(usize) -> usize,
    trips: &mut Vec<(usize, usize, f64)>,
) {
    for_each_element(mesh, |area, grads, tri| {
        for a in 0..3 {
            if mask[tri[a]] {
                continue;
            }
            for b in 0..3 {
                let k = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                trips.push((dof(tri[a]), dof(tri[b]), k));
            }
        }
    });
    for (a, b, omega, len, _) in robin_edges(mesh, problem) {
        for v in [a, b] {
            if !mask[v] && omega != 0.0 {
                trips.push((dof(v), dof(v), 0.5 * len * omega));
            }
        }
    }
    for (node, &fixed) in mask.iter().enumerate() {
        if fixed {
            trips.push((dof(node), dof(node), 1.0));
        }
    }
}

/// Length scale used for finite-difference steps in data derivatives.
fn domain_scale(mesh: &Mesh) -> f64 {
    let width = mesh.stations.last().unwrap() - mesh.stations[0];
    let height = mesh.nodes.iter().fold(0.0f64, |m, p| m.max(p[1].abs()));
    width.max(height)
}

/// Moves the surface by `relaxation * deta` and transports the potential.
pub fn apply_update(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    dphi: &[f64],
    deta: &[f64],
    relaxation: f64,
) -> Result<(Mesh, SolutionField)> {
    let eta = mesh.surface_eta();
    let new_eta: Vec<f64> = eta
        .iter()
        .zip(deta)
        .map(|(e, d)| e + relaxation * d)
        .collect();
    let new_mesh = mesh.update_surface(&new_eta)?;
    let grads = recover_gradients(mesh, &phi.phi);
    let per = mesh.n_y + 1;
    let mut out = Vec::with_capacity(mesh.n_nodes());
    for node in 0..mesh.n_nodes() {
        let old = mesh.nodes[node];
        let new = new_mesh.nodes[node];
        let base = phi.phi[node] + relaxation * dphi[node];
        let v = match dirichlet_datum(mesh, problem, node) {
            Some(h) => base + h(new[0], new[1]) - h(old[0], old[1]),
            None => {
                let lift = relaxation * deta[node / per] * mesh.column_fraction(node);
                base + lift * grads[node][1]
            }
        };
        out.push(v);
    }
    Ok((new_mesh, SolutionField::new(out)))
}

/// Station classes perturbed together; each surface row sees at most one
/// perturbed station of a class.
const SURFACE_COLORS: usize = 5;

/// Surface-motion columns of a Bernoulli problem, differentiated through
/// [`apply_update`] so they include the mesh motion and the transported
/// potential. Rows of column or station `j` depend on stations `j-2..=j+2`
/// at most, so stations are perturbed in classes. Strong-Dirichlet rows are
/// unaffected by surface motion and get no entries.
fn surface_motion_block(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    dofs: &DofMap,
    mask: &[bool],
    scale: f64,
    trips: &mut Vec<(usize, usize, f64)>,
) -> Result<()> {
    let n_st = mesh.n_stations();
    let per = mesh.n_y + 1;
    let eps = 1e-6 * scale;
    let zero = vec![0.0; mesh.n_nodes()];
    let perturbed = |deta: &[f64], step: f64| -> Result<ResidualPair> {
        let (m, p) = apply_update(mesh, problem, phi, &zero, deta, step)?;
        let fs = surface_geometry(&m.stations, &m.surface_eta())?;
        Ok(ResidualPair {
            r1: assemble_r1(&m, problem, &p)?,
            r2: surface_density_residual(&m, problem, &p, &fs)?,
        })
    };
    for color in 0..SURFACE_COLORS.min(n_st) {
        let mut deta = vec![0.0; n_st];
        let mut any = false;
        for j in (color..n_st).step_by(SURFACE_COLORS).filter(|&j| j != 0) {
            deta[j] = 1.0;
            any = true;
        }
        if !any {
            continue;
        }
        let plus = perturbed(&deta, eps)?;
        let minus = perturbed(&deta, -eps)?;
        let source = |j: usize| {
            let lo = j.saturating_sub(2);
            let hi = (j + 2).min(n_st - 1);
            (lo..=hi).find(|&k| deta[k] != 0.0)
        };
        for node in (0..mesh.n_nodes()).filter(|&n| !mask[n]) {
            if let Some(k) = source(node / per) {
                let v = (plus.r1[node] - minus.r1[node]) / (2.0 * eps);
                trips.push((dofs.phi(node), dofs.eta(k), v));
            }
        }
        for j in 1..n_st {
            if let Some(k) = source(j) {
                let v = (plus.r2[j] - minus.r2[j]) / (2.0 * eps);
                trips.push((dofs.eta(j), dofs.eta(k), v));
            }
        }
    }
    Ok(())
}

pub fn assemble_jacobian(
    mesh: &Mesh,
    problem: &ProblemData,
    phi: &SolutionField,
    fs: &FreeSurface,
) -> Result<CoupledSystem> {
    problem.validate()?;
    phi.check(mesh)?;
    check_surface(mesh, fs)?;
    let res = assemble_residuals(mesh, problem, phi, fs)?;
    let dofs = DofMap::new(mesh);
    let mask = dirichlet_mask(mesh, problem);
    let n_st = mesh.n_stations();
    let mut trips = Vec::with_capacity(9 * mesh.triangles.len() + 16 * n_st);

    field_block_triplets(mesh, problem, &mask, |n| dofs.phi(n), &mut trips);

    let xw = fs.x_weights();
    let bernoulli = matches!(problem.surface, FreeSurfaceCondition::Bernoulli { .. });
    if !bernoulli {
        // Surface motion in the field equation.
        for j in 0..n_st - 1 {
            let (sa, sb) = (mesh.surface_node(j), mesh.surface_node(j + 1));
            let len = edge_length(mesh, sa, sb);
            let dx = fs.stations[j + 1] - fs.stations[j];
            let slope = (phi.phi[sb] - phi.phi[sa]) / len;
            let coef = 0.5 * slope * dx / len;
            for (node, sign) in [(sa, -1.0), (sb, 1.0)] {
                if mask[node] {
                    continue;
                }
                for st in [j, j + 1] {
                    trips.push((dofs.phi(node), dofs.eta(st), sign * coef));
                }
            }
        }
        for j in 0..n_st {
            let node = mesh.surface_node(j);
            if mask[node] {
                continue;
            }
            let p = mesh.nodes[node];
            let f = (problem.f)(p[0], p[1]);
            if f != 0.0 {
                trips.push((dofs.phi(node), dofs.eta(j), -xw[j] * f));
            }
        }
    }

    // Surface equation.
    let weights = surface_weights(fs);
    let scale = domain_scale(mesh);
    let speeds = surface_velocities(mesh, phi, fs);
    for j in 1..n_st {
        let node = mesh.surface_node(j);
        let row = dofs.eta(j);
        let (x, y) = (fs.stations[j], fs.eta[j]);
        match &problem.surface {
            FreeSurfaceCondition::Dirichlet { .. } => {
                trips.push((row, dofs.phi(node), weights[j]));
                let dnh = problem
                    .surface
                    .normal_derivative_h(x, y, fs.normal[j], scale);
                trips.push((row, row, -xw[j] * dnh));
            }
            FreeSurfaceCondition::Bernoulli { a, .. } => {
                let s = &speeds[j];
                let arc2 = fs.arc_weight[j] * fs.arc_weight[j];
                for (&st, w) in s.stations.iter().zip(&s.weights) {
                    let v = weights[j] * 2.0 * a * s.dphi_dx * w / arc2;
                    trips.push((row, dofs.phi(mesh.surface_node(st)), v));
                }
            }
        }
    }
    if bernoulli {
        surface_motion_block(mesh, problem, phi, &dofs, &mask, scale, &mut trips)?;
    }
    let pinned = dofs.eta(0);
    trips.push((pinned, pinned, 1.0));

    let mut constrained_rows: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&n| mask[n])
        .map(|n| dofs.phi(n))
        .collect();
    constrained_rows.push(pinned);
    constrained_rows.sort_unstable();

    let rhs = dofs.stack(
        &res.r1.iter().map(|v| -v).collect::<Vec<_>>(),
        &res.r2.iter().map(|v| -v).collect::<Vec<_>>(),
    );
    let n = dofs.len();
    Ok(CoupledSystem {
        matrix: CsrMatrix::from_triplets(n, n, &trips),
        rhs,
        dof_map: dofs,
        constrained_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, BedProfile, MeshParams};
    use crate::linsolve::lu_solve;
    use crate::problem::{bernoulli_from_froude, constant, BoundaryData, RobinData};
    use crate::surface::surface_geometry;
    use std::sync::Arc;

    fn square(n: usize) -> Mesh {
        let p = MeshParams {
            n_x: n,
            n_y: n,
            x_left: 0.0,
            x_right: 1.0,
        };
        build_mesh(&p, &BedProfile::Flat { level: 0.0 }, |_| 1.0).unwrap()
    }

    fn all_neumann(f: f64, surface: FreeSurfaceCondition) -> ProblemData {
        let wall = || BoundaryData::neumann(constant(0.0));
        ProblemData {
            f: constant(f),
            robin: RobinData {
                left: wall(),
                right: wall(),
                bottom: wall(),
            },
            surface,
        }
    }

    fn fs_of(mesh: &Mesh) -> FreeSurface {
        surface_geometry(&mesh.stations, &mesh.surface_eta()).unwrap()
    }

    #[test]
    fn element_gradients_reproduce_linear_fields() {
        let mesh = square(3);
        for t in 0..mesh.triangles.len() {
            let (area, g) = element_gradients(&mesh, t);
            assert!(area > 0.0);
            let tri = mesh.triangles[t];
            let mut grad = [0.0; 2];
            for k in 0..3 {
                let p = mesh.nodes[tri[k]];
                let v = 2.0 * p[0] - 3.0 * p[1];
                grad[0] += v * g[k][0];
                grad[1] += v * g[k][1];
            }
            assert!((grad[0] - 2.0).abs() < 1e-13 && (grad[1] + 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn constants_annihilate_the_field_residual() {
        let mesh = square(4);
        let problem = all_neumann(0.0, bernoulli_from_froude(2.0).unwrap());
        let r1 = assemble_r1(
            &mesh,
            &problem,
            &SolutionField::new(vec![3.5; mesh.n_nodes()]),
        )
        .unwrap();
        assert!(inf_norm(&r1) < 1e-14);
    }

    #[test]
    fn unit_load_on_square() {
        // 2x2 cells: the centre node is the only unconstrained one and its
        // P1 load of f = 1 is dx^2.
        let mesh = square(2);
        let zero = || BoundaryData::dirichlet(constant(0.0));
        let problem = ProblemData {
            f: constant(1.0),
            robin: RobinData {
                left: zero(),
                right: zero(),
                bottom: zero(),
            },
            surface: bernoulli_from_froude(1.0).unwrap(),
        };
        let r1 = assemble_r1(
            &mesh,
            &problem,
            &SolutionField::new(vec![0.0; mesh.n_nodes()]),
        )
        .unwrap();
        let centre = mesh.columns[1][1];
        assert!((r1[centre] + 0.25).abs() < 1e-15);
        for (node, v) in r1.iter().enumerate() {
            let (_, i) = mesh.node_position(node);
            if node != centre && i < mesh.n_y {
                assert_eq!(*v, 0.0);
            }
        }
        // Surface nodes carry natural conditions: corner-free top middle node
        // gets two-triangle and one-triangle shares of the load.
        let top = mesh.surface_node(1);
        assert!((r1[top] + 0.125).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_surface_residual() {
        let mesh = square(4);
        // Density a*1 + 1 + c with c chosen so it equals d everywhere.
        let d = 0.7;
        let cond = FreeSurfaceCondition::Bernoulli {
            a: 2.0,
            b: 1.0,
            c: d - 3.0,
        };
        let problem = all_neumann(0.0, cond);
        let phi = SolutionField::from_fn(&mesh, |x, _| x);
        let r2 = assemble_r2(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        assert_eq!(r2[0], 0.0);
        for j in 1..4 {
            assert!((r2[j] - d * 0.25).abs() < 1e-14);
        }
        assert!((r2[4] - d * 0.125).abs() < 1e-14);
    }

    #[test]
    fn uniform_stream_zero_surface_residual() {
        let mesh = square(6);
        let problem = all_neumann(0.0, bernoulli_from_froude(2.0).unwrap());
        let phi = SolutionField::from_fn(&mesh, |x, _| x);
        let r2 = assemble_r2(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        assert!(inf_norm(&r2) < 1e-14);
    }

    #[test]
    fn dirichlet_surface_residual_vanishes_on_datum() {
        let mesh = square(4);
        let problem = ProblemData::manufactured_dirichlet();
        let phi = SolutionField::from_fn(&mesh, |_, y| 2.0 * y - 1.0);
        let r2 = assemble_r2(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        assert!(inf_norm(&r2) < 1e-15);
    }

    fn surface_block(sys: &CoupledSystem, n_st: usize) -> Vec<Vec<f64>> {
        (0..n_st)
            .map(|r| {
                (0..n_st)
                    .map(|c| sys.matrix.get(sys.dof_map.eta(r), sys.dof_map.eta(c)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn dirichlet_surface_block_is_scaled_mass() {
        // h = x + q y has d_n h = q on a flat surface.
        let p = MeshParams {
            n_x: 2,
            n_y: 1,
            x_left: 0.0,
            x_right: 1.0,
        };
        let mesh = build_mesh(&p, &BedProfile::Flat { level: 0.0 }, |_| 1.0).unwrap();
        let q = 1.5;
        let mut problem = all_neumann(
            0.0,
            FreeSurfaceCondition::Dirichlet {
                h: Arc::new(move |x, y| x + q * y),
                grad_h: None,
            },
        );
        problem.robin.right = BoundaryData::dirichlet(constant(0.0));
        let phi = SolutionField::new(vec![0.0; mesh.n_nodes()]);
        let sys = assemble_jacobian(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        let block = surface_block(&sys, 3);
        assert_eq!(block[0], vec![1.0, 0.0, 0.0]);
        assert!((block[1][1] + q * 0.5).abs() < 1e-9);
        assert!((block[2][2] + q * 0.25).abs() < 1e-9);
        assert_eq!(block[1][2], 0.0);
    }

    #[test]
    fn bernoulli_flat_surface_block_is_lumped_mass() {
        let mesh = square(4);
        let problem = all_neumann(0.0, bernoulli_from_froude(2.0).unwrap());
        let phi = SolutionField::from_fn(&mesh, |x, _| x);
        let sys = assemble_jacobian(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        let block = surface_block(&sys, 5);
        let w = [1.0, 0.25, 0.25, 0.25, 0.125];
        for r in 0..5 {
            for c in 0..5 {
                let expect = if r == c { w[r] } else { 0.0 };
                // Surface columns are central differences, exact up to cancellation.
                assert!((block[r][c] - expect).abs() < 1e-9, "({r},{c})");
            }
        }
    }

    #[test]
    fn field_block_is_symmetric_on_free_rows() {
        let p = MeshParams {
            n_x: 8,
            n_y: 3,
            x_left: -1.0,
            x_right: 1.0,
        };
        let bed = BedProfile::Triangle {
            alpha: 0.4,
            half_width: 0.5,
        };
        let mesh = build_mesh(&p, &bed, |x| 1.0 + 0.1 * x.sin()).unwrap();
        let problem = ProblemData::open_channel(2.0).unwrap();
        let (k, mask) = assemble_field_block(&mesh, &problem);
        let scale = k.max_abs();
        for r in 0..mesh.n_nodes() {
            for c in 0..mesh.n_nodes() {
                if !mask[r] && !mask[c] {
                    assert!((k.get(r, c) - k.get(c, r)).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn patch_test_reproduces_linear_field() {
        let p = MeshParams {
            n_x: 6,
            n_y: 4,
            x_left: 0.0,
            x_right: 2.0,
        };
        let mesh = build_mesh(&p, &BedProfile::Flat { level: 0.0 }, |x| 1.0 + 0.2 * x).unwrap();
        let exact = |x: f64, y: f64| 0.3 * x - 1.2 * y + 0.5;
        let wall = || BoundaryData::dirichlet(Arc::new(exact));
        let problem = ProblemData {
            f: constant(0.0),
            robin: RobinData {
                left: wall(),
                right: wall(),
                bottom: wall(),
            },
            surface: bernoulli_from_froude(1.0).unwrap(),
        };
        let (k, mut mask) = assemble_field_block(&mesh, &problem);
        // Prescribe the surface trace as well.
        let mut trips = k.triplets();
        for &s in &mesh.surface_nodes() {
            mask[s] = true;
            trips.retain(|&(r, _, _)| r != s);
            trips.push((s, s, 1.0));
        }
        let k = CsrMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &trips);
        let b: Vec<f64> = (0..mesh.n_nodes())
            .map(|n| {
                if mask[n] {
                    exact(mesh.nodes[n][0], mesh.nodes[n][1])
                } else {
                    0.0
                }
            })
            .collect();
        let phi = lu_solve(&k, &b).unwrap();
        for (n, v) in phi.iter().enumerate() {
            let q = mesh.nodes[n];
            assert!((v - exact(q[0], q[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_stencil_matches_recovered_gradient() {
        let p = MeshParams {
            n_x: 5,
            n_y: 3,
            x_left: 0.0,
            x_right: 1.0,
        };
        let mesh = build_mesh(&p, &BedProfile::Flat { level: 0.0 }, |x| 1.0 + 0.3 * x * x).unwrap();
        let phi: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|q| (q[0] * 2.0).sin() + q[1] * q[1])
            .collect();
        let rec = recover_gradients(&mesh, &phi);
        for node in [0, 7, mesh.surface_node(2), mesh.n_nodes() - 1] {
            let mut g = [0.0; 2];
            for (k, w) in recovery_stencil(&mesh, node) {
                g[0] += w[0] * phi[k];
                g[1] += w[1] * phi[k];
            }
            assert!((g[0] - rec[node][0]).abs() < 1e-13 && (g[1] - rec[node][1]).abs() < 1e-13);
        }
    }

    #[test]
    fn dof_map_round_trip() {
        let mesh = square(3);
        let d = DofMap::new(&mesh);
        assert_eq!(d.len(), mesh.n_nodes() + mesh.n_stations());
        let dphi: Vec<f64> = (0..mesh.n_nodes()).map(|k| k as f64).collect();
        let deta: Vec<f64> = (0..mesh.n_stations()).map(|k| -(k as f64)).collect();
        let (a, b) = d.split(&d.stack(&dphi, &deta));
        assert_eq!((a, b), (dphi, deta));
    }

    #[test]
    fn constrained_rows_are_identities() {
        let mesh = square(4);
        let problem = ProblemData::manufactured_dirichlet();
        let phi = SolutionField::from_fn(&mesh, |x, y| x * y);
        let sys = assemble_jacobian(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap();
        for &r in &sys.constrained_rows {
            let row: Vec<_> = sys.matrix.row(r).collect();
            assert_eq!(row, vec![(r, 1.0)]);
        }
        for r in 0..sys.matrix.n_rows() {
            assert!(sys.matrix.row(r).next().is_some(), "empty row {r}");
        }
    }

    #[test]
    fn zero_bernoulli_coefficient_rejected() {
        let mesh = square(2);
        let problem = all_neumann(
            0.0,
            FreeSurfaceCondition::Bernoulli {
                a: 0.0,
                b: 1.0,
                c: -1.0,
            },
        );
        let phi = SolutionField::new(vec![0.0; mesh.n_nodes()]);
        let err = assemble_jacobian(&mesh, &problem, &phi, &fs_of(&mesh)).unwrap_err();
        assert_eq!(err, Error::SingularSurfaceBlock);
    }
}
