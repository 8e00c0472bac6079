//! The stabilized weak-form variants the laboratory implements.
//!
//! All variants share the Galerkin backbone and differ in (i) whether the
//! small-scales are algebraic (static) or carry their own time integration
//! (dynamic), (ii) the weighting operator tested against `phi'`, (iii)
//! whether the diffusive term enters the small-scale residual, and (iv)
//! whether scale orthogonality is enforced with a multiplier.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FormulationKind {
    /// Plain Galerkin, no small scales.
    Galerkin,
    /// Streamline-upwind weighting, algebraic small-scales.
    SupgStatic,
    /// Multiscale weighting `a.grad w + kappa Lap w`, algebraic small-scales.
    VmsStatic,
    /// Least-squares weighting `a.grad w - kappa Lap w`, algebraic small-scales.
    GlsStatic,
    /// Multiscale weighting with dynamic small-scales.
    VmsDynamic,
    /// Streamline weighting, dynamic small-scales, full residual drive.
    SupgDynamicConsistent,
    /// Streamline weighting, dynamic small-scales, diffusive term removed
    /// from the drive (correct energy, inconsistent residual).
    SupgDynamicInconsistent,
    /// Least-squares weighting with dynamic small-scales (correct energy).
    GlsDynamic,
    /// Dynamic small-scales with the orthogonality constraint enforced by a
    /// Lagrange multiplier (correct energy).
    DynamicOrthogonal,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 9] = [
        FormulationKind::Galerkin,
        FormulationKind::SupgStatic,
        FormulationKind::VmsStatic,
        FormulationKind::GlsStatic,
        FormulationKind::VmsDynamic,
        FormulationKind::SupgDynamicConsistent,
        FormulationKind::SupgDynamicInconsistent,
        FormulationKind::GlsDynamic,
        FormulationKind::DynamicOrthogonal,
    ];

    /// Small scales integrated in time rather than slaved to the residual.
    pub fn is_dynamic(&self) -> bool {
        matches!(
            self,
            Self::VmsDynamic
                | Self::SupgDynamicConsistent
                | Self::SupgDynamicInconsistent
                | Self::GlsDynamic
                | Self::DynamicOrthogonal
        )
    }

    pub fn has_small_scales(&self) -> bool {
        !matches!(self, Self::Galerkin)
    }

    /// Carries the multiplier block.
    pub fn has_multiplier(&self) -> bool {
        matches!(self, Self::DynamicOrthogonal)
    }

    /// Coefficient of `kappa Lap w` in the weighting operator
    /// `a.grad w + c * kappa Lap w` tested against `phi'`.
    pub fn weighting_laplacian_coefficient(&self) -> f64 {
        match self {
            Self::Galerkin => 0.0,
            Self::VmsStatic | Self::VmsDynamic | Self::DynamicOrthogonal => 1.0,
            Self::SupgStatic | Self::SupgDynamicConsistent | Self::SupgDynamicInconsistent => 0.0,
            Self::GlsStatic | Self::GlsDynamic => -1.0,
        }
    }

    /// Whether the small-scale drive contains the `-kappa Lap phi` term.
    pub fn residual_includes_diffusion(&self) -> bool {
        !matches!(self, Self::SupgDynamicInconsistent)
    }

    /// Coefficient of the orthogonality term `(kappa Lap phi, phi')` in the
    /// total-energy balance. Zero means the formulation has no such
    /// sign-indefinite term.
    pub fn orthogonality_energy_coefficient(&self) -> f64 {
        match self {
            Self::Galerkin | Self::SupgDynamicInconsistent | Self::GlsDynamic | Self::GlsStatic => {
                0.0
            }
            Self::SupgStatic | Self::SupgDynamicConsistent => 1.0,
            Self::VmsStatic | Self::VmsDynamic => 2.0,
            // Enforced orthogonality: the term exists but vanishes.
            Self::DynamicOrthogonal => 0.0,
        }
    }

    /// Same coefficient for the large-scale-energy balance.
    pub fn orthogonality_large_scale_coefficient(&self) -> f64 {
        match self {
            Self::Galerkin => 0.0,
            Self::SupgStatic | Self::SupgDynamicConsistent => 1.0,
            Self::VmsStatic | Self::VmsDynamic => 2.0,
            Self::GlsStatic | Self::GlsDynamic => 0.0,
            Self::SupgDynamicInconsistent => 0.0,
            Self::DynamicOrthogonal => 0.0,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "galerkin" => Ok(Self::Galerkin),
            "supgs" | "supg-static" => Ok(Self::SupgStatic),
            "vmss" | "vms-static" => Ok(Self::VmsStatic),
            "glss" | "gls-static" => Ok(Self::GlsStatic),
            "vmsd" | "vms-dynamic" => Ok(Self::VmsDynamic),
            "supgd" | "supg-dynamic-consistent" => Ok(Self::SupgDynamicConsistent),
            "supgd-inconsistent" | "supg-dynamic-inconsistent" => {
                Ok(Self::SupgDynamicInconsistent)
            }
            "glsd" | "gls-dynamic" => Ok(Self::GlsDynamic),
            "do" | "dynamic-orthogonal" => Ok(Self::DynamicOrthogonal),
            other => Err(Error::InvalidConfig(format!(
                "unknown formulation '{other}' (expected one of galerkin, supgs, vmss, glss, vmsd, supgd, supgd-inconsistent, glsd, do)"
            ))),
        }
    }

    /// Short name used in the CLI and in output metadata.
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Galerkin => "galerkin",
            Self::SupgStatic => "supgs",
            Self::VmsStatic => "vmss",
            Self::GlsStatic => "glss",
            Self::VmsDynamic => "vmsd",
            Self::SupgDynamicConsistent => "supgd",
            Self::SupgDynamicInconsistent => "supgd-inconsistent",
            Self::GlsDynamic => "glsd",
            Self::DynamicOrthogonal => "do",
        }
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl From<FormulationKind> for String {
    fn from(kind: FormulationKind) -> Self {
        kind.short_name().to_string()
    }
}

impl TryFrom<String> for FormulationKind {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        Self::parse(&value).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_names() {
        for kind in FormulationKind::ALL {
            assert_eq!(FormulationKind::parse(kind.short_name()).unwrap(), kind);
        }
        assert!(FormulationKind::parse("nope").is_err());
    }

    #[test]
    fn classification() {
        use FormulationKind::*;
        assert!(!Galerkin.has_small_scales());
        assert!(SupgStatic.has_small_scales() && !SupgStatic.is_dynamic());
        assert!(GlsDynamic.is_dynamic() && !GlsDynamic.has_multiplier());
        assert!(DynamicOrthogonal.has_multiplier());
        assert!(!SupgDynamicInconsistent.residual_includes_diffusion());
        assert!(SupgDynamicConsistent.residual_includes_diffusion());
    }
}
