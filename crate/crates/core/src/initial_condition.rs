//! Initial conditions for the model problem.
//!
//! The block profile is the sharpest field exactly representable by
//! quadratic splines on the coarse reference mesh: a unit plateau centered
//! at (1/2, 1/2) whose shoulders blend to zero through two quadratic
//! segments per side. The segment boundaries `l_0 < l_1 < l_2` are tied to
//! lines of the coarse mesh, so the same function is exactly representable
//! on every refinement of it and runs on different meshes start from the
//! identical field.

use serde::{Deserialize, Serialize};

/// Piecewise-quadratic block profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockIc {
    /// Plateau half-width in coarse cells.
    pub n: u32,
    /// Coarse cell size the segment lengths refer to.
    pub h_coarse: f64,
}

impl Default for BlockIc {
    fn default() -> Self {
        Self {
            n: 2,
            h_coarse: 1.0 / 16.0,
        }
    }
}

impl BlockIc {
    pub fn l0(&self) -> f64 {
        self.n as f64 * self.h_coarse
    }

    pub fn l1(&self) -> f64 {
        (self.n + 1) as f64 * self.h_coarse
    }

    pub fn l2(&self) -> f64 {
        (self.n + 2) as f64 * self.h_coarse
    }

    /// One-dimensional shoulder profile: 1 on the plateau, two blending
    /// quadratics, then 0.
    pub fn shoulder(&self, z: f64) -> f64 {
        let (l0, l1, l2) = (self.l0(), self.l1(), self.l2());
        let hc2 = 2.0 * self.h_coarse * self.h_coarse;
        if z < l0 {
            1.0
        } else if z < l1 {
            1.0 - (z - l0) * (z - l0) / hc2
        } else if z < l2 {
            (l2 - z) * (l2 - z) / hc2
        } else {
            0.0
        }
    }

    /// Profile value at a point of the unit square, centered at (1/2, 1/2).
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.shoulder((x - 0.5).abs()) * self.shoulder((y - 0.5).abs())
    }
}

/// Initial condition selection for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InitialCondition {
    Block(BlockIc),
    Constant { value: f64 },
}

impl InitialCondition {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Block(b) => b.value(x, y),
            Self::Constant { value } => *value,
        }
    }
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Block(BlockIc::default())
    }
}
