//! Quadrature-point small-scale state and its time integration.
//!
//! Dynamic formulations model the unresolved scales by the pointwise ODE
//! `d/dt phi' + tau_dyn^-1 phi' = -R`, driven by the large-scale residual
//! `R` at each quadrature point. Under generalized-alpha the update has a
//! closed form, so the small-scale unknowns never enter the global system:
//! both `phi'_{n+alpha_f}` and `d/dt phi'_{n+alpha_m}` are affine in `R`
//! with slopes `-tau_eff` and `-tau_eff / tau_time`. Assembly folds those
//! affine maps in (static condensation); after the solve `commit_step`
//! advances the stored per-point history with the converged residual.
//!
//! In the orthogonal formulation the drive is `R - kappa Lap(sigma)`; the
//! same maps apply to that combination.

use crate::error::{Error, Result};
use crate::time_integration::AlphaParams;

/// Precomputed coefficients of the condensed small-scale update for one
/// element (tau is constant per element on a uniform mesh).
#[derive(Debug, Clone, Copy)]
pub struct Condensation {
    /// `d phi'_{n+alpha_f} / d R = -tau_eff`.
    pub slope_value: f64,
    /// `d (d/dt phi')_{n+alpha_m} / d R = -tau_eff / tau_time`.
    pub slope_rate: f64,
    /// `phi'_{n+alpha_f} = h_value . (phi'_n, phi'_dot_n) + slope_value * R`.
    pub h_value: [f64; 2],
    /// `(d/dt phi')_{n+alpha_m} = h_rate . (phi'_n, phi'_dot_n) + slope_rate * R`.
    pub h_rate: [f64; 2],
    /// `phi'_dot_{n+1} = next_rate . (phi'_n, phi'_dot_n) + slope_next_rate * R`.
    pub next_rate: [f64; 2],
    pub slope_next_rate: f64,
}

impl Condensation {
    pub fn value_at_alpha(&self, phi_p: f64, phi_p_dot: f64, r: f64) -> f64 {
        self.h_value[0] * phi_p + self.h_value[1] * phi_p_dot + self.slope_value * r
    }

    pub fn rate_at_alpha(&self, phi_p: f64, phi_p_dot: f64, r: f64) -> f64 {
        self.h_rate[0] * phi_p + self.h_rate[1] * phi_p_dot + self.slope_rate * r
    }
}

/// Builds the affine condensation maps from the closed-form solution of the
/// generalized-alpha system applied to the small-scale ODE.
///
/// Static formulations have no rate history to condense; calling this for
/// them is a programming error and is rejected.
pub fn condensation_coefficients(
    alpha: &AlphaParams,
    dt: f64,
    tau_dyn: f64,
    dynamic: bool,
) -> Result<Condensation> {
    if !dynamic {
        return Err(Error::Unsupported(
            "condensation applies to dynamic small-scales only; static scales are algebraic".into(),
        ));
    }
    if !(dt > 0.0 && tau_dyn > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "condensation needs dt > 0 and tau_dyn > 0 (got dt={dt}, tau_dyn={tau_dyn})"
        )));
    }
    let (af, am, g) = (alpha.alpha_f, alpha.alpha_m, alpha.gamma);
    let gdt = g * dt;
    let tau_time = af * gdt / am;
    // c = alpha_f^-1 (tau_time^-1 + tau_dyn^-1)^-1
    let c = 1.0 / (af * (1.0 / tau_time + 1.0 / tau_dyn));
    let tau_eff = af * c;

    // phi'_dot_{n+1} = q_r phi'_dot_n + q_p phi'_n - (c/(g dt)) R
    let q_r = -(c / gdt) * (1.0 - am + (1.0 - g) * af * dt / tau_dyn);
    let q_p = -c / (tau_dyn * gdt);
    let slope_next_rate = -c / gdt;

    // phi'_{n+1} through the gamma update, then the alpha_f combination.
    let v1_p = 1.0 + gdt * q_p;
    let v1_r = dt * (1.0 - g) + gdt * q_r;
    let h_value = [(1.0 - af) + af * v1_p, af * v1_r];
    let h_rate = [am * q_p, (1.0 - am) + am * q_r];

    Ok(Condensation {
        slope_value: -tau_eff,
        slope_rate: -am * c / gdt,
        h_value,
        h_rate,
        next_rate: [q_p, q_r],
        slope_next_rate,
    })
}

/// Algebraic small-scale closure of the static formulations:
/// `phi' = -tau_stat R`, opposing the residual.
pub fn static_evaluate(residual: f64, tau_stat: f64) -> f64 {
    -tau_stat * residual
}

/// Per-quadrature-point small-scale history for one run.
#[derive(Debug, Clone)]
pub struct SmallScaleField {
    /// `phi'_n`, one value per quadrature point (element-major).
    pub value: Vec<f64>,
    /// `phi'_dot_n`.
    pub rate: Vec<f64>,
    /// Per-element dynamic stabilization parameter.
    pub tau_dyn: Vec<f64>,
    pub points_per_element: usize,
}

impl SmallScaleField {
    /// Field starting from rest: `phi'_0 = 0` with the rate chosen so the
    /// ODE holds at t = 0, `phi'_dot_0 = -R_0`.
    pub fn from_rest(
        num_elements: usize,
        points_per_element: usize,
        tau_dyn: f64,
        initial_residual: &[f64],
    ) -> Self {
        let n = num_elements * points_per_element;
        assert_eq!(initial_residual.len(), n);
        Self {
            value: vec![0.0; n],
            rate: initial_residual.iter().map(|r| -r).collect(),
            tau_dyn: vec![tau_dyn; num_elements],
            points_per_element,
        }
    }

    pub fn num_points(&self) -> usize {
        self.value.len()
    }

    /// Advances the history to `n+1` given the residual drive at the alpha
    /// level, evaluated with the converged end-of-step solution (for the
    /// orthogonal formulation the drive already includes the multiplier
    /// term).
    pub fn commit_step(
        &mut self,
        cond: &Condensation,
        alpha: &AlphaParams,
        dt: f64,
        residual_alpha: &[f64],
    ) -> Result<()> {
        if residual_alpha.len() != self.value.len() {
            return Err(Error::InvalidConfig(format!(
                "residual field has {} points, small-scale field has {}",
                residual_alpha.len(),
                self.value.len()
            )));
        }
        let g = alpha.gamma;
        for (i, &r) in residual_alpha.iter().enumerate() {
            let v0 = self.value[i];
            let r0 = self.rate[i];
            let rate_next =
                cond.next_rate[0] * v0 + cond.next_rate[1] * r0 + cond.slope_next_rate * r;
            self.value[i] = v0 + dt * ((1.0 - g) * r0 + g * rate_next);
            self.rate[i] = rate_next;
        }
        Ok(())
    }

    /// `phi'` at level `n + alpha_f` for the given residual drive.
    pub fn value_at_alpha(&self, cond: &Condensation, residual_alpha: &[f64]) -> Vec<f64> {
        self.value
            .iter()
            .zip(&self.rate)
            .zip(residual_alpha)
            .map(|((&v, &r), &res)| cond.value_at_alpha(v, r, res))
            .collect()
    }
}
