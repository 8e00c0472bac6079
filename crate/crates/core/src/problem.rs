//! Shared per-run context: discretization, physics, time-integration
//! parameters and the derived stabilization values.

use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::small_scales::{condensation_coefficients, Condensation};
use crate::spline::SplineSpace2D;
use crate::stabilization::{self, RSwitch, StabilizationParams};
use crate::time_integration::AlphaParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    Periodic,
    /// Optional mode: homogeneous Dirichlet data imposed by pinning every
    /// basis function whose support crosses the domain boundary to zero.
    HomogeneousDirichlet,
}

/// Everything a formulation needs to assemble and diagnose one run.
#[derive(Debug, Clone)]
pub struct ProblemContext {
    pub space: SplineSpace2D,
    pub grid: QuadratureGrid,
    pub velocity: [f64; 2],
    pub kappa: f64,
    /// Constant body force (all verification experiments use zero).
    pub forcing: f64,
    pub alpha: AlphaParams,
    pub dt: f64,
    pub c_inv: f64,
    pub r_switch: RSwitch,
    pub bc: BoundaryCondition,
    tau_static: Option<f64>,
    tau_dynamic: Option<f64>,
    /// Per global function: pinned to zero under Dirichlet conditions.
    prescribed: Vec<bool>,
}

impl ProblemContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        space: SplineSpace2D,
        velocity: [f64; 2],
        kappa: f64,
        forcing: f64,
        alpha: AlphaParams,
        dt: f64,
        c_inv: f64,
        r_switch: RSwitch,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if kappa < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "diffusivity must be non-negative, got {kappa}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let grid = QuadratureGrid::new(&space);
        let params = StabilizationParams {
            velocity,
            kappa,
            c_inv,
            alpha,
            dt,
            r_switch,
        };
        let g = grid.metric_tensor();
        let tau_static = stabilization::tau_static(&params, &g).ok();
        let tau_dynamic = stabilization::tau_dyn(&params, &g).ok();
        let prescribed = prescribed_mask(&space, bc);
        Ok(Self {
            space,
            grid,
            velocity,
            kappa,
            forcing,
            alpha,
            dt,
            c_inv,
            r_switch,
            bc,
            tau_static,
            tau_dynamic,
            prescribed,
        })
    }

    pub fn stabilization_params(&self) -> StabilizationParams {
        StabilizationParams {
            velocity: self.velocity,
            kappa: self.kappa,
            c_inv: self.c_inv,
            alpha: self.alpha,
            dt: self.dt,
            r_switch: self.r_switch,
        }
    }

    pub fn tau_stat(&self) -> Result<f64> {
        self.tau_static.ok_or(Error::DegenerateStabilization)
    }

    pub fn tau_dynamic(&self) -> Result<f64> {
        self.tau_dynamic.ok_or(Error::DegenerateStabilization)
    }

    pub fn tau_time(&self) -> f64 {
        stabilization::tau_time(&self.stabilization_params())
    }

    pub fn tau_eff(&self) -> Result<f64> {
        let td = self.tau_dynamic()?;
        Ok(1.0 / (1.0 / self.tau_time() + 1.0 / td))
    }

    /// Condensation maps of the dynamic small-scale update for this run.
    pub fn condensation(&self) -> Result<Condensation> {
        condensation_coefficients(&self.alpha, self.dt, self.tau_dynamic()?, true)
    }

    pub fn is_prescribed(&self, func: usize) -> bool {
        self.prescribed[func]
    }

    pub fn has_prescribed(&self) -> bool {
        self.bc == BoundaryCondition::HomogeneousDirichlet
    }

    /// Number of quadrature points in the whole mesh.
    pub fn total_points(&self) -> usize {
        self.space.num_elements() * self.grid.points_per_element()
    }
}

fn prescribed_mask(space: &SplineSpace2D, bc: BoundaryCondition) -> Vec<bool> {
    let n = space.num_functions();
    match bc {
        BoundaryCondition::Periodic => vec![false; n],
        BoundaryCondition::HomogeneousDirichlet => {
            let p = space.degree();
            let (m_x, m_y) = (space.x.num_functions(), space.y.num_functions());
            let crosses = |i: usize, m: usize| i >= m - p;
            (0..n)
                .map(|g| crosses(g % m_x, m_x) || crosses(g / m_x, m_y))
                .collect()
        }
    }
}
