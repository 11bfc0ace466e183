//! Finite-difference geometry of a graph surface `y = eta(x)`.
//!
//! Derivatives use three-point Lagrange stencils: centered at interior
//! stations and one-sided at the two ends. Both are second order, also on
//! nonuniform stations.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FreeSurface {
    pub stations: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_x: Vec<f64>,
    /// `d/dx (eta_x / sqrt(1 + eta_x^2))`, negative on crests.
    pub kappa: Vec<f64>,
    /// Outward (upward) unit normal `(-eta_x, 1) / sqrt(1 + eta_x^2)`.
    pub normal: Vec<[f64; 2]>,
    /// `sqrt(1 + eta_x^2)`, the ratio `ds / dx`.
    pub arc_weight: Vec<f64>,
}

/// Derivative weights of the Lagrange interpolant through `nodes` at `x`.
fn lagrange_derivative_weights(nodes: [f64; 3], x: f64) -> [f64; 3] {
    let mut w = [0.0; 3];
    for k in 0..3 {
        let mut acc = 0.0;
        for m in 0..3 {
            if m == k {
                continue;
            }
            let mut prod = 1.0 / (nodes[k] - nodes[m]);
            for n in 0..3 {
                if n != k && n != m {
                    prod *= (x - nodes[n]) / (nodes[k] - nodes[n]);
                }
            }
            acc += prod;
        }
        w[k] = acc;
    }
    w
}

fn check_stations(stations: &[f64]) -> Result<()> {
    if stations.len() < 3 {
        return Err(Error::TooFewStations(stations.len()));
    }
    if stations.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::UnorderedStations);
    }
    Ok(())
}

/// Second-order derivative of station values.
pub fn derivative(stations: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    check_stations(stations)?;
    let n = stations.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let base = j.clamp(1, n - 2) - 1;
        let nodes = [stations[base], stations[base + 1], stations[base + 2]];
        let w = lagrange_derivative_weights(nodes, stations[j]);
        out.push(w[0] * values[base] + w[1] * values[base + 1] + w[2] * values[base + 2]);
    }
    Ok(out)
}

/// Second-order one-sided stencil at station `j` using `j` and the two
/// stations on the upstream side (`j-1, j-2` when `forward`). Falls back to
/// the centered stencil where the upstream side is too short.
pub fn upwind_stencil(stations: &[f64], j: usize, forward: bool) -> ([usize; 3], [f64; 3]) {
    let n = stations.len();
    let base = if forward {
        j.saturating_sub(2)
    } else {
        j.min(n - 3)
    };
    let base = base.min(n - 3);
    let idx = [base, base + 1, base + 2];
    let nodes = idx.map(|k| stations[k]);
    (idx, lagrange_derivative_weights(nodes, stations[j]))
}

/// Trapezoid weights of the stations in the `x` measure.
pub fn trapezoid_weights(stations: &[f64]) -> Vec<f64> {
    let n = stations.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let dx = stations[k + 1] - stations[k];
        w[k] += 0.5 * dx;
        w[k + 1] += 0.5 * dx;
    }
    w
}

pub fn surface_geometry(stations: &[f64], eta: &[f64]) -> Result<FreeSurface> {
    check_stations(stations)?;
    if eta.len() != stations.len() {
        return Err(Error::MeshFieldMismatch {
            expected: stations.len(),
            got: eta.len(),
        });
    }
    let eta_x = derivative(stations, eta)?;
    let arc_weight: Vec<f64> = eta_x.iter().map(|s| (1.0 + s * s).sqrt()).collect();
    let slope_sine: Vec<f64> = eta_x.iter().zip(&arc_weight).map(|(s, w)| s / w).collect();
    let kappa = derivative(stations, &slope_sine)?;
    let normal = eta_x
        .iter()
        .zip(&arc_weight)
        .map(|(s, w)| [-s / w, 1.0 / w])
        .collect();
    Ok(FreeSurface {
        stations: stations.to_vec(),
        eta: eta.to_vec(),
        eta_x,
        kappa,
        normal,
        arc_weight,
    })
}

impl FreeSurface {
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    /// Unit tangent `(1, eta_x) / sqrt(1 + eta_x^2)`.
    pub fn tangent(&self, j: usize) -> [f64; 2] {
        let w = self.arc_weight[j];
        [1.0 / w, self.eta_x[j] / w]
    }

    pub fn x_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.stations)
    }
}

/// `d_n |grad phi|^2 = 2 kappa |grad phi|^2`, valid where `d_n phi = 0`.
pub fn normal_derivative_speed_squared(fs: &FreeSurface, grad_phi: &[[f64; 2]]) -> Vec<f64> {
    fs.kappa
        .iter()
        .zip(grad_phi)
        .map(|(k, g)| 2.0 * k * (g[0] * g[0] + g[1] * g[1]))
        .collect()
}

/// Normal displacement `delta theta . n` to vertical displacement `delta eta`.
pub fn measure_to_x(fs: &FreeSurface, delta_theta_n: &[f64]) -> Vec<f64> {
    delta_theta_n
        .iter()
        .zip(&fs.arc_weight)
        .map(|(d, w)| d * w)
        .collect()
}

/// Inverse of [`measure_to_x`].
pub fn x_to_measure(fs: &FreeSurface, delta_eta: &[f64]) -> Vec<f64> {
    delta_eta
        .iter()
        .zip(&fs.arc_weight)
        .map(|(d, w)| d / w)
        .collect()
}

/// Surface gradient of a trace: `(dv/ds) tau` with `d/ds = (1 / arc_weight) d/dx`.
pub fn tangential_gradient(fs: &FreeSurface, values: &[f64]) -> Result<Vec<[f64; 2]>> {
    let dvdx = derivative(&fs.stations, values)?;
    Ok((0..fs.len())
        .map(|j| {
            let dvds = dvdx[j] / fs.arc_weight[j];
            let t = fs.tangent(j);
            [dvds * t[0], dvds * t[1]]
        })
        .collect())
}
