//! Problem data: source term, Robin data on the fixed walls and the
//! free-surface condition.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::BoundaryTag;

/// Scalar data function of position.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Gradient of a data function.
pub type GradFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

pub fn constant(v: f64) -> ScalarFn {
    Arc::new(move |_, _| v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega {
    Finite(f64),
    /// Strong Dirichlet condition `phi = h`.
    Dirichlet,
}

/// `d_n phi + omega phi = g + omega h` on one fixed boundary.
#[derive(Clone)]
pub struct BoundaryData {
    pub omega: Omega,
    pub g: ScalarFn,
    pub h: ScalarFn,
}

impl BoundaryData {
    pub fn neumann(g: ScalarFn) -> Self {
        BoundaryData {
            omega: Omega::Finite(0.0),
            g,
            h: constant(0.0),
        }
    }

    pub fn dirichlet(h: ScalarFn) -> Self {
        BoundaryData {
            omega: Omega::Dirichlet,
            g: constant(0.0),
            h,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        self.omega == Omega::Dirichlet
    }
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("omega", &self.omega)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct RobinData {
    pub left: BoundaryData,
    pub right: BoundaryData,
    pub bottom: BoundaryData,
}

impl RobinData {
    /// Data for a fixed tag; `None` for the free surface.
    pub fn get(&self, tag: BoundaryTag) -> Option<&BoundaryData> {
        match tag {
            BoundaryTag::GammaL => Some(&self.left),
            BoundaryTag::GammaR => Some(&self.right),
            BoundaryTag::GammaB => Some(&self.bottom),
            BoundaryTag::GammaF => None,
        }
    }

    pub fn has_dirichlet(&self) -> bool {
        self.left.is_dirichlet() || self.right.is_dirichlet() || self.bottom.is_dirichlet()
    }
}

#[derive(Clone)]
pub enum FreeSurfaceCondition {
    /// `phi = h` on the surface; `grad_h` is used for `d_n h` when given.
    Dirichlet { h: ScalarFn, grad_h: Option<GradFn> },
    /// `a |grad phi|^2 + b eta + c = 0` on the surface.
    Bernoulli { a: f64, b: f64, c: f64 },
}

impl fmt::Debug for FreeSurfaceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreeSurfaceCondition::Dirichlet { grad_h, .. } => f
                .debug_struct("Dirichlet")
                .field("analytic_gradient", &grad_h.is_some())
                .finish_non_exhaustive(),
            FreeSurfaceCondition::Bernoulli { a, b, c } => f
                .debug_struct("Bernoulli")
                .field("a", a)
                .field("b", b)
                .field("c", c)
                .finish(),
        }
    }
}

impl FreeSurfaceCondition {
    pub fn validate(&self) -> Result<()> {
        match self {
            FreeSurfaceCondition::Bernoulli { a, .. } if *a == 0.0 => {
                Err(Error::SingularSurfaceBlock)
            }
            _ => Ok(()),
        }
    }

    /// Normal derivative of the surface Dirichlet datum at `(x, y)`.
    /// Falls back to a central difference with step `1e-6 * scale`.
    pub fn normal_derivative_h(&self, x: f64, y: f64, n: [f64; 2], scale: f64) -> f64 {
        match self {
            FreeSurfaceCondition::Dirichlet {
                grad_h: Some(grad), ..
            } => {
                let g = grad(x, y);
                g[0] * n[0] + g[1] * n[1]
            }
            FreeSurfaceCondition::Dirichlet { h, grad_h: None } => {
                let step = 1e-6 * scale.max(1.0);
                let fwd = h(x + step * n[0], y + step * n[1]);
                let bwd = h(x - step * n[0], y - step * n[1]);
                (fwd - bwd) / (2.0 * step)
            }
            FreeSurfaceCondition::Bernoulli { .. } => 0.0,
        }
    }
}

/// Bernoulli constants for the nondimensional open-channel problem with
/// unit upstream depth and speed: `F^2/2 |grad phi|^2 + eta - (F^2/2 + 1) = 0`.
pub fn bernoulli_from_froude(froude: f64) -> Result<FreeSurfaceCondition> {
    if !(froude > 0.0) || !froude.is_finite() {
        return Err(Error::NonpositiveFroude(froude));
    }
    let a = 0.5 * froude * froude;
    Ok(FreeSurfaceCondition::Bernoulli {
        a,
        b: 1.0,
        c: -(a + 1.0),
    })
}

/// Pointwise residual of the surface condition.
pub fn evaluate_surface_residual_density(
    cond: &FreeSurfaceCondition,
    grad_phi: [f64; 2],
    eta: f64,
    phi: f64,
    h_val: f64,
) -> f64 {
    match cond {
        FreeSurfaceCondition::Bernoulli { a, b, c } => {
            a * (grad_phi[0] * grad_phi[0] + grad_phi[1] * grad_phi[1]) + b * eta + c
        }
        FreeSurfaceCondition::Dirichlet { .. } => phi - h_val,
    }
}

#[derive(Clone)]
pub struct ProblemData {
    pub f: ScalarFn,
    pub robin: RobinData,
    pub surface: FreeSurfaceCondition,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("robin", &self.robin)
            .field("surface", &self.surface)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    pub fn validate(&self) -> Result<()> {
        self.surface.validate()
    }

    /// Data with exact solution `phi = x + y`, `eta = x + 1`: `f = 0`,
    /// `h = x + y` (strong) on the fixed walls and `phi = 2y - 1` on the surface.
    pub fn manufactured_dirichlet() -> Self {
        let wall = || BoundaryData::dirichlet(Arc::new(|x, y| x + y));
        ProblemData {
            f: constant(0.0),
            robin: RobinData {
                left: wall(),
                right: wall(),
                bottom: wall(),
            },
            surface: FreeSurfaceCondition::Dirichlet {
                h: Arc::new(|_, y| 2.0 * y - 1.0),
                grad_h: Some(Arc::new(|_, _| [0.0, 2.0])),
            },
        }
    }

    /// Open-channel flow: unit inflow flux through the left wall, `phi = 0`
    /// on the right wall, impermeable bed and Bernoulli surface.
    pub fn open_channel(froude: f64) -> Result<Self> {
        Ok(ProblemData {
            f: constant(0.0),
            robin: RobinData {
                left: BoundaryData::neumann(constant(-1.0)),
                right: BoundaryData::dirichlet(constant(0.0)),
                bottom: BoundaryData::neumann(constant(0.0)),
            },
            surface: bernoulli_from_froude(froude)?,
        })
    }
}
