//! Run configuration: the JSON schema, presets and validation.

use crate::error::{Error, Result};
use crate::formulation::FormulationKind;
use crate::initial_condition::InitialCondition;
use crate::problem::BoundaryCondition;
use crate::time_integration::AlphaParams;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Time-integrator selection: a named preset or raw coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Preset(AlphaPreset),
    EnergyDecaying {
        alpha_f: f64,
    },
    Raw {
        alpha_f: f64,
        alpha_m: f64,
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPreset {
    CrankNicolson,
    BackwardEuler,
}

impl AlphaSpec {
    pub fn resolve(&self) -> Result<AlphaParams> {
        match *self {
            AlphaSpec::Preset(AlphaPreset::CrankNicolson) => Ok(AlphaParams::crank_nicolson()),
            AlphaSpec::Preset(AlphaPreset::BackwardEuler) => Ok(AlphaParams::backward_euler()),
            AlphaSpec::EnergyDecaying { alpha_f } => AlphaParams::energy_decaying(alpha_f),
            AlphaSpec::Raw {
                alpha_f,
                alpha_m,
                gamma,
            } => AlphaParams::new(alpha_f, alpha_m, gamma),
        }
    }
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Preset(AlphaPreset::CrankNicolson)
    }
}

fn default_degree() -> usize {
    2
}
fn default_velocity() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_kappa() -> f64 {
    5e-4
}
fn default_end_time() -> f64 {
    1.0
}
fn default_r_switch() -> u32 {
    2
}
fn default_output_every() -> usize {
    1
}
fn default_bc() -> BoundaryCondition {
    BoundaryCondition::Periodic
}

/// How the discrete rate is started at t = 0.
///
/// The consistent start solves the weak form at t = 0 and keeps the
/// trajectory free of the undamped rate mode the alpha_m = gamma = 1/2
/// family carries. The zero start leaves that mode excited with an O(1)
/// amplitude, which is what makes the energy pathology of the classical
/// static forms visible; the correct-energy formulations are insensitive
/// to it (their energy identity holds for any start).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateInit {
    #[default]
    Consistent,
    Zero,
}

/// Full description of one run. Serialized into `meta.json` with the
/// derived quantities attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub formulation: FormulationKind,
    /// Elements per direction.
    pub mesh: [usize; 2],
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_velocity")]
    pub velocity: [f64; 2],
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Exactly one of `cfl` and `dt` must be given. The CFL mapping is
    /// per-axis: `dt = cfl * min(h) / max(|a_x|, |a_y|)`.
    #[serde(default)]
    pub cfl: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_end_time")]
    pub end_time: f64,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default = "default_r_switch")]
    pub r_switch: u32,
    /// Override of the inverse-estimate constant; the degree default
    /// applies when absent.
    #[serde(default)]
    pub c_inv: Option<f64>,
    /// Constant body force.
    #[serde(default)]
    pub forcing: f64,
    #[serde(default)]
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub rate_init: RateInit,
    #[serde(default = "default_bc")]
    pub boundary: BoundaryCondition,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Progress/debug output cadence in steps.
    #[serde(default = "default_output_every")]
    pub output_every: usize,
    /// Times at which field snapshots are taken (matched to the nearest
    /// step; 0 is handled before the loop).
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Also dump the small-scale point field at snapshot times.
    #[serde(default)]
    pub dump_small_scales: bool,
}

impl RunConfig {
    /// Paper-experiment preset on an `m x m` mesh: convection skew to the
    /// mesh on the periodic unit square, `a = (1,1)`, `kappa = 5e-4`,
    /// quadratics, CFL 0.5, one full loop of the profile.
    pub fn preset(mesh: usize, formulation: FormulationKind) -> Self {
        Self {
            formulation,
            mesh: [mesh, mesh],
            degree: 2,
            velocity: [1.0, 1.0],
            kappa: 5e-4,
            cfl: Some(0.5),
            dt: None,
            end_time: 1.0,
            alpha: AlphaSpec::default(),
            r_switch: 2,
            c_inv: None,
            forcing: 0.0,
            initial_condition: InitialCondition::default(),
            rate_init: RateInit::Consistent,
            boundary: BoundaryCondition::Periodic,
            output_dir: None,
            output_every: 1,
            snapshot_times: vec![0.0, 0.25, 0.625, 1.0],
            dump_small_scales: false,
        }
    }

    pub fn preset_by_name(name: &str, formulation: FormulationKind) -> Result<Self> {
        let mesh = match name {
            "paper-16" => 16,
            "paper-32" => 32,
            "paper-64" => 64,
            "paper-128" => 128,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset '{other}' (expected paper-16, paper-32, paper-64 or paper-128)"
                )))
            }
        };
        Ok(Self::preset(mesh, formulation))
    }

    /// Validates the configuration, listing every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.degree != 1 && self.degree != 2 {
            problems.push(format!("degree must be 1 or 2, got {}", self.degree));
        }
        if self.mesh[0] < 4 || self.mesh[1] < 4 {
            problems.push(format!(
                "mesh dimensions must be at least 4, got {}x{}",
                self.mesh[0], self.mesh[1]
            ));
        }
        match (self.cfl, self.dt) {
            (Some(_), Some(_)) => {
                problems.push("give exactly one of cfl and dt, not both".into())
            }
            (None, None) => problems.push("one of cfl or dt is required".into()),
            (Some(c), None) => {
                if !(c > 0.0) {
                    problems.push(format!("cfl must be positive, got {c}"));
                }
                if self.velocity[0] == 0.0 && self.velocity[1] == 0.0 {
                    problems.push("cfl needs a nonzero velocity; give dt instead".into());
                }
            }
            (None, Some(d)) => {
                if !(d > 0.0) {
                    problems.push(format!("dt must be positive, got {d}"));
                }
            }
        }
        if !(self.end_time > 0.0) {
            problems.push(format!("end_time must be positive, got {}", self.end_time));
        }
        if self.kappa < 0.0 {
            problems.push(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if self.formulation == FormulationKind::DynamicOrthogonal && self.kappa == 0.0 {
            problems.push("the orthogonal formulation requires positive diffusivity".into());
        }
        if let Some(c) = self.c_inv {
            if !(c > 0.0) {
                problems.push(format!("c_inv must be positive, got {c}"));
            }
        }
        if self.r_switch != 1 && self.r_switch != 2 {
            problems.push(format!("r_switch must be 1 or 2, got {}", self.r_switch));
        }
        if self.output_every == 0 {
            problems.push("output_every must be at least 1".into());
        }
        if let Err(e) = self.alpha.resolve() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Derived time step.
    pub fn resolve_dt(&self) -> Result<f64> {
        self.validate()?;
        match (self.cfl, self.dt) {
            (None, Some(d)) => Ok(d),
            (Some(c), None) => {
                let h = (1.0 / self.mesh[0] as f64).min(1.0 / self.mesh[1] as f64);
                let a_max = self.velocity[0].abs().max(self.velocity[1].abs());
                Ok(c * h / a_max)
            }
            _ => unreachable!("validate enforces exactly one"),
        }
    }

    pub fn num_steps(&self) -> Result<usize> {
        let dt = self.resolve_dt()?;
        let n = (self.end_time / dt).round();
        if n < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "end_time {} shorter than one step dt {dt}",
                self.end_time
            )));
        }
        Ok(n as usize)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
