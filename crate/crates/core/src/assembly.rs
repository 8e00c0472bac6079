//! Per-step assembly of the global linear systems.
//!
//! The unknown is the coefficient vector `phi_{n+1}` (plus the multiplier
//! for the orthogonal formulation, stacked after the scalar dofs). All
//! generalized-alpha level combinations are folded in: values enter at
//! `n + alpha_f`, rates at `n + alpha_m`, and the rate at `n+1` is
//! eliminated through the gamma update. Dynamic small-scales are replaced
//! by their affine condensation maps, so the matrix is constant over a run
//! and only the right-hand side changes per step.

use crate::error::{Error, Result};
use crate::formulation::FormulationKind;
use crate::linsolve::{CsrMatrix, LinearSolver, SystemStructure};
use crate::problem::ProblemContext;
use crate::quadrature::PointTables;
use crate::small_scales::{Condensation, SmallScaleField};
use crate::time_integration::StepState;

/// One assembled linear system `A x = b`. For the orthogonal formulation
/// the unknown ordering is scalar dofs first, multiplier dofs second, and
/// the matrix has the 2x2 block layout
/// `[[A_pp, A_ps], [A_sp, A_ss]]` with the constraint rows at the bottom.
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub n_phi: usize,
    pub n_sigma: usize,
    pub structure: SystemStructure,
}

/// Pointwise field data of a spline coefficient vector at one quadrature
/// point.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointField {
    pub value: f64,
    pub grad: [f64; 2],
    pub laplacian: f64,
}

pub(crate) fn eval_point(tab: &PointTables, conn: &[usize], coeffs: &[f64]) -> PointField {
    let mut f = PointField::default();
    for (a, &g) in conn.iter().enumerate() {
        let c = coeffs[g];
        f.value += c * tab.value[a];
        f.grad[0] += c * tab.grad_x[a];
        f.grad[1] += c * tab.grad_y[a];
        f.laplacian += c * tab.laplacian[a];
    }
    f
}

/// The matrix side of one formulation, factor-ready, plus the per-point
/// coefficient tables needed to rebuild right-hand sides and residuals.
pub struct FormulationOperator {
    pub kind: FormulationKind,
    pub matrix: CsrMatrix,
    pub structure: SystemStructure,
    pub n_phi: usize,
    pub n_sigma: usize,
    /// Residual operator applied to a trial function at each quadrature
    /// point: `resid[q][j] = c_r N_j + alpha_f (a.grad N_j - kappa Lap N_j)`
    /// (the Laplacian term is dropped for the inconsistent variant).
    resid: Vec<Vec<f64>>,
    /// Weighting operator `a.grad N_i + c_w kappa Lap N_i` per point.
    weight: Vec<Vec<f64>>,
    /// Stabilization data; `None` for plain Galerkin.
    stab: Option<StabData>,
}

#[derive(Debug, Clone, Copy)]
enum StabData {
    Static { tau: f64 },
    Dynamic { cond: Condensation },
}

impl FormulationOperator {
    pub fn build(kind: FormulationKind, ctx: &ProblemContext) -> Result<Self> {
        if kind == FormulationKind::DynamicOrthogonal && !(ctx.kappa > 0.0) {
            return Err(Error::InvalidConfig(
                "the orthogonal formulation requires positive diffusivity".into(),
            ));
        }
        let stab = if !kind.has_small_scales() {
            None
        } else if kind.is_dynamic() {
            Some(StabData::Dynamic {
                cond: ctx.condensation()?,
            })
        } else {
            Some(StabData::Static {
                tau: ctx.tau_stat()?,
            })
        };

        let grid = &ctx.grid;
        let n_q = grid.points_per_element();
        let n_loc = grid.funcs_per_element();
        let a = ctx.velocity;
        let kappa = ctx.kappa;
        let alpha_f = ctx.alpha.alpha_f;
        let c_r = ctx.alpha.rate_slope(ctx.dt);
        let c_w = kind.weighting_laplacian_coefficient();
        let with_diff = kind.residual_includes_diffusion();

        let mut resid = vec![vec![0.0; n_loc]; n_q];
        let mut weight = vec![vec![0.0; n_loc]; n_q];
        for q in 0..n_q {
            let t = grid.tables(q);
            for j in 0..n_loc {
                let adv = a[0] * t.grad_x[j] + a[1] * t.grad_y[j];
                resid[q][j] = c_r * t.value[j]
                    + alpha_f * (adv - if with_diff { kappa * t.laplacian[j] } else { 0.0 });
                weight[q][j] = adv + c_w * kappa * t.laplacian[j];
            }
        }

        // Element-local blocks; identical for every element on the uniform
        // mesh, scattered with wrapped connectivity.
        let mut local_pp = vec![0.0; n_loc * n_loc];
        let mut local_ps = vec![0.0; n_loc * n_loc];
        let mut local_sp = vec![0.0; n_loc * n_loc];
        let mut local_ss = vec![0.0; n_loc * n_loc];
        let (slope_value, slope_rate) = match stab {
            Some(StabData::Dynamic { cond }) => (cond.slope_value, cond.slope_rate),
            _ => (0.0, 0.0),
        };
        for q in 0..n_q {
            let w = grid.weight(q);
            let t = grid.tables(q);
            for i in 0..n_loc {
                let wi = weight[q][i];
                for j in 0..n_loc {
                    let adv_j = a[0] * t.grad_x[j] + a[1] * t.grad_y[j];
                    let grad_dot = t.grad_x[i] * t.grad_x[j] + t.grad_y[i] * t.grad_y[j];
                    // Galerkin backbone at the alpha levels.
                    let mut k = t.value[i] * (c_r * t.value[j] + alpha_f * adv_j)
                        + alpha_f * kappa * grad_dot;
                    match stab {
                        Some(StabData::Static { tau }) => {
                            k += tau * wi * resid[q][j];
                        }
                        Some(StabData::Dynamic { .. }) => {
                            // -(W w, phi'_alpha) and +(w, d/dt phi'_alpha):
                            // the residual slopes carry the signs.
                            k += -wi * slope_value * resid[q][j]
                                + t.value[i] * slope_rate * resid[q][j];
                        }
                        None => {}
                    }
                    local_pp[i * n_loc + j] += w * k;

                    if kind.has_multiplier() {
                        let lap_i = kappa * t.laplacian[i];
                        let lap_j = kappa * t.laplacian[j];
                        // phi' gains +tau_eff * kappa Lap sigma, its rate
                        // +(tau_eff/tau_time) * kappa Lap sigma.
                        local_ps[i * n_loc + j] += w
                            * (t.value[i] * (-slope_rate) * lap_j - wi * (-slope_value) * lap_j);
                        // Constraint row: (kappa Lap eta, phi'_alpha) = 0.
                        local_sp[i * n_loc + j] += w * lap_i * slope_value * resid[q][j];
                        local_ss[i * n_loc + j] += w * lap_i * (-slope_value) * lap_j;
                    }
                }
            }
        }

        let n_phi = ctx.space.num_functions();
        let n_sigma = if kind.has_multiplier() { n_phi } else { 0 };
        let n_total = n_phi + n_sigma;
        let mut triplets: Vec<(usize, usize, f64)> =
            Vec::with_capacity(ctx.space.num_elements() * n_loc * n_loc * 4);
        for e in 0..ctx.space.num_elements() {
            let conn = ctx.space.connectivity(e);
            for i in 0..n_loc {
                let gi = conn[i];
                if ctx.is_prescribed(gi) {
                    continue;
                }
                for j in 0..n_loc {
                    let gj = conn[j];
                    if ctx.is_prescribed(gj) {
                        continue;
                    }
                    triplets.push((gi, gj, local_pp[i * n_loc + j]));
                    if kind.has_multiplier() {
                        triplets.push((gi, n_phi + gj, local_ps[i * n_loc + j]));
                        triplets.push((n_phi + gi, gj, local_sp[i * n_loc + j]));
                        triplets.push((n_phi + gi, n_phi + gj, local_ss[i * n_loc + j]));
                    }
                }
            }
        }
        if ctx.has_prescribed() {
            for g in 0..n_phi {
                if ctx.is_prescribed(g) {
                    triplets.push((g, g, 1.0));
                    if kind.has_multiplier() {
                        triplets.push((n_phi + g, n_phi + g, 1.0));
                    }
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(n_total, n_total, &triplets);
        let structure = if ctx.has_prescribed() {
            SystemStructure::General
        } else {
            SystemStructure::BlockCirculant {
                m_x: ctx.space.x.num_functions(),
                m_y: ctx.space.y.num_functions(),
                blocks: if kind.has_multiplier() { 2 } else { 1 },
            }
        };
        Ok(Self {
            kind,
            matrix,
            structure,
            n_phi,
            n_sigma,
            resid,
            weight,
            stab,
        })
    }

    /// Known part of the residual drive at one point, given history data:
    /// `R_known = e_r rate_n - c_r value_n + (1-alpha_f)(a.grad phi_n
    /// [- kappa Lap phi_n]) - f`.
    fn residual_known(&self, ctx: &ProblemContext, phi_n: &PointField, rate_n: f64) -> f64 {
        let alpha = &ctx.alpha;
        let c_r = alpha.rate_slope(ctx.dt);
        let e_r = alpha.rate_history_weight();
        let adv = ctx.velocity[0] * phi_n.grad[0] + ctx.velocity[1] * phi_n.grad[1];
        let diff = if self.kind.residual_includes_diffusion() {
            ctx.kappa * phi_n.laplacian
        } else {
            0.0
        };
        e_r * rate_n - c_r * phi_n.value + (1.0 - alpha.alpha_f) * (adv - diff) - ctx.forcing
    }

    /// Builds the right-hand side for the step from `state` (level n).
    pub fn assemble_rhs(
        &self,
        ctx: &ProblemContext,
        state: &StepState,
        field: Option<&SmallScaleField>,
    ) -> Result<Vec<f64>> {
        let grid = &ctx.grid;
        let n_q = grid.points_per_element();
        let n_loc = grid.funcs_per_element();
        let alpha = &ctx.alpha;
        let kappa = ctx.kappa;
        let a = ctx.velocity;
        let mut rhs = vec![0.0; self.n_phi + self.n_sigma];

        if self.kind.is_dynamic() && field.is_none() {
            return Err(Error::InvalidConfig(
                "dynamic formulation stepped without a small-scale field".into(),
            ));
        }

        for e in 0..ctx.space.num_elements() {
            let conn = ctx.space.connectivity(e);
            for q in 0..n_q {
                let w = grid.weight(q);
                let t = grid.tables(q);
                let phi_n = eval_point(t, &conn, &state.phi);
                let rate_n = eval_point(t, &conn, &state.phi_dot).value;
                let adv_n = a[0] * phi_n.grad[0] + a[1] * phi_n.grad[1];
                let r_known = self.residual_known(ctx, &phi_n, rate_n);

                // History parts of the condensed small scales.
                let (h_value, h_rate, slope_value, slope_rate, tau_static) = match self.stab {
                    Some(StabData::Dynamic { cond }) => {
                        let f = field.unwrap();
                        let idx = e * n_q + q;
                        (
                            cond.h_value[0] * f.value[idx] + cond.h_value[1] * f.rate[idx],
                            cond.h_rate[0] * f.value[idx] + cond.h_rate[1] * f.rate[idx],
                            cond.slope_value,
                            cond.slope_rate,
                            0.0,
                        )
                    }
                    Some(StabData::Static { tau }) => (0.0, 0.0, 0.0, 0.0, tau),
                    None => (0.0, 0.0, 0.0, 0.0, 0.0),
                };

                for i in 0..n_loc {
                    let gi = conn[i];
                    if ctx.is_prescribed(gi) {
                        continue;
                    }
                    // Galerkin history + forcing.
                    let mut b = t.value[i]
                        * (ctx.forcing
                            - (alpha.rate_history_weight() * rate_n
                                - alpha.rate_slope(ctx.dt) * phi_n.value)
                            - (1.0 - alpha.alpha_f) * adv_n)
                        - kappa
                            * (1.0 - alpha.alpha_f)
                            * (t.grad_x[i] * phi_n.grad[0] + t.grad_y[i] * phi_n.grad[1]);
                    match self.stab {
                        Some(StabData::Static { .. }) => {
                            b -= tau_static * self.weight[q][i] * r_known;
                        }
                        Some(StabData::Dynamic { .. }) => {
                            b -= t.value[i] * (h_rate + slope_rate * r_known);
                            b += self.weight[q][i] * (h_value + slope_value * r_known);
                        }
                        None => {}
                    }
                    rhs[gi] += w * b;
                    if self.kind.has_multiplier() {
                        let lap_i = kappa * t.laplacian[i];
                        rhs[self.n_phi + gi] -= w * lap_i * (h_value + slope_value * r_known);
                    }
                }
            }
        }
        Ok(rhs)
    }

    /// Residual drive at every quadrature point at the alpha level, using
    /// the converged end-of-step coefficients. For the orthogonal
    /// formulation the multiplier term `-kappa Lap sigma` is included.
    pub fn residual_drive(
        &self,
        ctx: &ProblemContext,
        state: &StepState,
        phi_next: &[f64],
        sigma: Option<&[f64]>,
    ) -> Vec<f64> {
        let grid = &ctx.grid;
        let n_q = grid.points_per_element();
        let mut out = vec![0.0; ctx.total_points()];
        for e in 0..ctx.space.num_elements() {
            let conn = ctx.space.connectivity(e);
            for q in 0..n_q {
                let t = grid.tables(q);
                let phi_n = eval_point(t, &conn, &state.phi);
                let rate_n = eval_point(t, &conn, &state.phi_dot).value;
                let mut r = self.residual_known(ctx, &phi_n, rate_n);
                for (j, &gj) in conn.iter().enumerate() {
                    r += self.resid[q][j] * phi_next[gj];
                }
                if let Some(s) = sigma {
                    let lap_sigma = eval_point(t, &conn, s).laplacian;
                    r -= ctx.kappa * lap_sigma;
                }
                out[e * n_q + q] = r;
            }
        }
        out
    }

    /// Small-scale values at `n + alpha_f` consistent with the converged
    /// solve: empty-field zero for Galerkin, `-tau_stat R` for static
    /// variants, the condensed affine map for dynamic ones.
    pub fn recover_small_scales(
        &self,
        ctx: &ProblemContext,
        state: &StepState,
        phi_next: &[f64],
        sigma: Option<&[f64]>,
        field: Option<&SmallScaleField>,
    ) -> Result<Vec<f64>> {
        match self.stab {
            None => Ok(vec![0.0; ctx.total_points()]),
            Some(StabData::Static { tau }) => {
                let drive = self.residual_drive(ctx, state, phi_next, None);
                Ok(drive.iter().map(|r| -tau * r).collect())
            }
            Some(StabData::Dynamic { cond }) => {
                let f = field.ok_or_else(|| {
                    Error::InvalidConfig("dynamic recovery needs the small-scale field".into())
                })?;
                let drive = self.residual_drive(ctx, state, phi_next, sigma);
                Ok(f.value_at_alpha(&cond, &drive))
            }
        }
    }
}

/// Assembles the full system (matrix and right-hand side) for one step.
pub fn assemble(
    kind: FormulationKind,
    ctx: &ProblemContext,
    state: &StepState,
    field: Option<&SmallScaleField>,
) -> Result<AssembledSystem> {
    let op = FormulationOperator::build(kind, ctx)?;
    let rhs = op.assemble_rhs(ctx, state, field)?;
    Ok(AssembledSystem {
        rhs,
        n_phi: op.n_phi,
        n_sigma: op.n_sigma,
        structure: op.structure,
        matrix: op.matrix,
    })
}

/// One-shot factorization and solve of an assembled system.
pub fn solve(system: &AssembledSystem) -> Result<Vec<f64>> {
    let solver = LinearSolver::prepare(&system.matrix, system.structure)?;
    solver.solve(&system.matrix, &system.rhs)
}

/// Consistent initial rate: solves the weak form at t = 0 for `phi_dot_0`.
/// Static variants couple the rate into the stabilization term, so the
/// system is the mass matrix plus the weighted rate block. Dynamic variants
/// start from resting small-scales whose initial rate absorbs the residual,
/// which makes the t = 0 statement hold for any large-scale rate; the
/// Galerkin-consistent rate is the natural choice and is used for them.
pub fn initial_rate(
    kind: FormulationKind,
    ctx: &ProblemContext,
    phi0: &[f64],
) -> Result<Vec<f64>> {
    let grid = &ctx.grid;
    let n_q = grid.points_per_element();
    let n_loc = grid.funcs_per_element();
    let n = ctx.space.num_functions();
    let a = ctx.velocity;
    let kappa = ctx.kappa;
    let static_tau = if kind.has_small_scales() && !kind.is_dynamic() {
        Some(ctx.tau_stat()?)
    } else {
        None
    };
    let c_w = kind.weighting_laplacian_coefficient();

    let mut local = vec![0.0; n_loc * n_loc];
    for q in 0..n_q {
        let w = grid.weight(q);
        let t = grid.tables(q);
        for i in 0..n_loc {
            let wi = a[0] * t.grad_x[i] + a[1] * t.grad_y[i] + c_w * kappa * t.laplacian[i];
            for j in 0..n_loc {
                let mut k = t.value[i] * t.value[j];
                if let Some(tau) = static_tau {
                    k += tau * wi * t.value[j];
                }
                local[i * n_loc + j] += w * k;
            }
        }
    }

    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    for e in 0..ctx.space.num_elements() {
        let conn = ctx.space.connectivity(e);
        for i in 0..n_loc {
            let gi = conn[i];
            if ctx.is_prescribed(gi) {
                continue;
            }
            for j in 0..n_loc {
                if !ctx.is_prescribed(conn[j]) {
                    triplets.push((gi, conn[j], local[i * n_loc + j]));
                }
            }
        }
        for q in 0..n_q {
            let w = grid.weight(q);
            let t = grid.tables(q);
            let f0 = eval_point(t, &conn, phi0);
            let adv = a[0] * f0.grad[0] + a[1] * f0.grad[1];
            for i in 0..n_loc {
                let gi = conn[i];
                if ctx.is_prescribed(gi) {
                    continue;
                }
                let mut b = t.value[i] * (ctx.forcing - adv)
                    - kappa * (t.grad_x[i] * f0.grad[0] + t.grad_y[i] * f0.grad[1]);
                if let Some(tau) = static_tau {
                    let wi =
                        a[0] * t.grad_x[i] + a[1] * t.grad_y[i] + c_w * kappa * t.laplacian[i];
                    b -= tau * wi * (adv - kappa * f0.laplacian - ctx.forcing);
                }
                rhs[gi] += w * b;
            }
        }
    }
    if ctx.has_prescribed() {
        for g in 0..n {
            if ctx.is_prescribed(g) {
                triplets.push((g, g, 1.0));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n, n, &triplets);
    let structure = if ctx.has_prescribed() {
        SystemStructure::General
    } else {
        SystemStructure::BlockCirculant {
            m_x: ctx.space.x.num_functions(),
            m_y: ctx.space.y.num_functions(),
            blocks: 1,
        }
    };
    let solver = LinearSolver::prepare(&matrix, structure)?;
    solver.solve(&matrix, &rhs)
}

/// Residual vector of the t = 0 weak statement for `(phi_0, phi_dot_0)`,
/// with the initial small scales of the formulation folded in. Used to
/// check that the rate initialization is consistent.
pub fn initial_weak_residual(
    kind: FormulationKind,
    ctx: &ProblemContext,
    phi0: &[f64],
    phi_dot0: &[f64],
) -> Result<Vec<f64>> {
    let grid = &ctx.grid;
    let n_q = grid.points_per_element();
    let n_loc = grid.funcs_per_element();
    let a = ctx.velocity;
    let kappa = ctx.kappa;
    let static_tau = if kind.has_small_scales() && !kind.is_dynamic() {
        Some(ctx.tau_stat()?)
    } else {
        None
    };
    let c_w = kind.weighting_laplacian_coefficient();
    let mut res = vec![0.0; ctx.space.num_functions()];
    for e in 0..ctx.space.num_elements() {
        let conn = ctx.space.connectivity(e);
        for q in 0..n_q {
            let w = grid.weight(q);
            let t = grid.tables(q);
            let f0 = eval_point(t, &conn, phi0);
            let r0 = eval_point(t, &conn, phi_dot0).value;
            let adv = a[0] * f0.grad[0] + a[1] * f0.grad[1];
            let resid0 = r0 + adv
                - if kind.residual_includes_diffusion() {
                    kappa * f0.laplacian
                } else {
                    0.0
                }
                - ctx.forcing;
            for i in 0..n_loc {
                let gi = conn[i];
                if ctx.is_prescribed(gi) {
                    continue;
                }
                let mut v = t.value[i] * (r0 + adv - ctx.forcing)
                    + kappa * (t.grad_x[i] * f0.grad[0] + t.grad_y[i] * f0.grad[1]);
                let wi = a[0] * t.grad_x[i] + a[1] * t.grad_y[i] + c_w * kappa * t.laplacian[i];
                if let Some(tau) = static_tau {
                    v += tau * wi * resid0;
                }
                if kind.is_dynamic() {
                    // phi'_0 = 0 and phi'_dot_0 = -R_0 at every point.
                    v += t.value[i] * (-resid0);
                }
                res[gi] += w * v;
            }
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BoundaryCondition;
    use crate::spline::SplineSpace2D;
    use crate::stabilization::RSwitch;
    use crate::time_integration::AlphaParams;

    fn ctx(m: usize, p: usize, a: [f64; 2], kappa: f64) -> ProblemContext {
        let space = SplineSpace2D::new(p, m, m, [1.0, 1.0]).unwrap();
        let dt = 0.5 / m as f64;
        ProblemContext::new(
            space,
            a,
            kappa,
            0.0,
            AlphaParams::crank_nicolson(),
            dt,
            36.0,
            RSwitch::R2,
            BoundaryCondition::Periodic,
        )
        .unwrap()
    }

    fn zero_state(ctx: &ProblemContext) -> StepState {
        let n = ctx.space.num_functions();
        StepState::new(0.0, vec![0.0; n], vec![0.0; n])
    }

    #[test]
    fn do_requires_positive_diffusivity() {
        let c = ctx(6, 2, [1.0, 1.0], 0.0);
        let err = FormulationOperator::build(FormulationKind::DynamicOrthogonal, &c);
        assert!(err.is_err());
    }

    #[test]
    fn linear_basis_makes_static_variants_coincide() {
        let c = ctx(8, 1, [1.0, 1.0], 5e-4);
        let supg = FormulationOperator::build(FormulationKind::SupgStatic, &c).unwrap();
        let vms = FormulationOperator::build(FormulationKind::VmsStatic, &c).unwrap();
        let gls = FormulationOperator::build(FormulationKind::GlsStatic, &c).unwrap();
        let n = supg.matrix.n_rows;
        for r in 0..n {
            for col in 0..n {
                let s = supg.matrix.get(r, col);
                let v = vms.matrix.get(r, col);
                let g = gls.matrix.get(r, col);
                assert!((s - v).abs() <= 1e-14 && (s - g).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn galerkin_convection_is_skew_in_energy() {
        // With kappa = 0 and no rate part the convection block satisfies
        // c^T K c = 0 for every coefficient vector (periodic integration by
        // parts leaves a pure boundary term). Isolate the convection block
        // by subtracting the kappa = 0, a = 0 operator (pure rate block).
        let c_a = ctx(6, 2, [1.3, -0.6], 0.0);
        let with_conv = FormulationOperator::build(FormulationKind::Galerkin, &c_a).unwrap();
        let c_0 = ctx(6, 2, [0.0, 0.0], 0.0);
        let mass_only = FormulationOperator::build(FormulationKind::Galerkin, &c_0).unwrap();
        let n = with_conv.matrix.n_rows;
        for trial in 0..5 {
            let coeffs: Vec<f64> = (0..n)
                .map(|i| ((i * 37 + trial * 11) % 19) as f64 / 19.0 - 0.4)
                .collect();
            let kx: f64 = with_conv
                .matrix
                .matvec(&coeffs)
                .iter()
                .zip(mass_only.matrix.matvec(&coeffs).iter())
                .zip(&coeffs)
                .map(|((full, mass), c)| (full - mass) * c)
                .sum();
            assert!(kx.abs() < 1e-12, "quadratic form {kx} not skew");
        }
    }

    #[test]
    fn sparsity_bound_holds() {
        let c = ctx(8, 2, [1.0, 1.0], 5e-4);
        let op = FormulationOperator::build(FormulationKind::GlsDynamic, &c).unwrap();
        let bound = (2 * 2 + 1) * (2 * 2 + 1);
        for r in 0..op.matrix.n_rows {
            assert!(op.matrix.row(r).count() <= bound);
        }
    }

    #[test]
    fn identity_and_mass_solves() {
        // Mass matrix applied to the all-ones vector reproduces the
        // integrals of the basis functions; solving against that right-hand
        // side must return all ones (partition of unity).
        let c = ctx(6, 2, [0.0, 0.0], 0.0);
        let state = zero_state(&c);
        // Galerkin with a=0, kappa=0: matrix is c_r * mass.
        let sys = assemble(FormulationKind::Galerkin, &c, &state, None).unwrap();
        let ones = vec![1.0; sys.n_phi];
        let b = sys.matrix.matvec(&ones);
        let solver = LinearSolver::prepare(&sys.matrix, sys.structure).unwrap();
        let x = solver.solve(&sys.matrix, &b).unwrap();
        for v in &x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_gives_zero_rhs_and_zero_drive() {
        let c = ctx(6, 2, [1.0, 1.0], 5e-4);
        let op = FormulationOperator::build(FormulationKind::GlsDynamic, &c).unwrap();
        let state = zero_state(&c);
        let field = SmallScaleField::from_rest(
            c.space.num_elements(),
            c.grid.points_per_element(),
            c.tau_dynamic().unwrap(),
            &vec![0.0; c.total_points()],
        );
        let rhs = op.assemble_rhs(&c, &state, Some(&field)).unwrap();
        assert!(rhs.iter().all(|v| v.abs() < 1e-15));
        let phi_next = vec![0.0; c.space.num_functions()];
        let drive = op.residual_drive(&c, &state, &phi_next, None);
        assert!(drive.iter().all(|v| v.abs() < 1e-15));
        let prime = op
            .recover_small_scales(&c, &state, &phi_next, None, Some(&field))
            .unwrap();
        assert!(prime.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn galerkin_recovery_is_empty_zero_field() {
        let c = ctx(5, 2, [1.0, 0.0], 1e-3);
        let op = FormulationOperator::build(FormulationKind::Galerkin, &c).unwrap();
        let state = zero_state(&c);
        let phi_next: Vec<f64> = (0..c.space.num_functions()).map(|i| i as f64).collect();
        let prime = op
            .recover_small_scales(&c, &state, &phi_next, None, None)
            .unwrap();
        assert_eq!(prime.len(), c.total_points());
        assert!(prime.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn static_recovery_matches_minus_tau_times_drive() {
        let c = ctx(6, 2, [1.0, 1.0], 5e-4);
        let op = FormulationOperator::build(FormulationKind::SupgStatic, &c).unwrap();
        let n = c.space.num_functions();
        let phi: Vec<f64> = (0..n).map(|i| ((i % 7) as f64) * 0.1).collect();
        let state = StepState::new(0.0, phi.clone(), vec![0.0; n]);
        let phi_next = phi;
        let tau = c.tau_stat().unwrap();
        let drive = op.residual_drive(&c, &state, &phi_next, None);
        let prime = op
            .recover_small_scales(&c, &state, &phi_next, None, None)
            .unwrap();
        for (p, r) in prime.iter().zip(&drive) {
            assert!((p + tau * r).abs() < 1e-14);
        }
    }

    #[test]
    fn inconsistent_variant_drops_diffusive_drive() {
        // On the same state the consistent and inconsistent recoveries
        // differ pointwise by exactly tau_eff * kappa * Lap(phi_alpha).
        let c = ctx(8, 2, [1.0, 1.0], 5e-3);
        let n = c.space.num_functions();
        let phi: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * (i % 8) as f64 / 8.0).sin())
            .collect();
        let state = StepState::new(0.0, phi.clone(), vec![0.0; n]);
        let phi_next: Vec<f64> = phi.iter().map(|v| v * 1.1).collect();
        let field = SmallScaleField::from_rest(
            c.space.num_elements(),
            c.grid.points_per_element(),
            c.tau_dynamic().unwrap(),
            &vec![0.0; c.total_points()],
        );
        let cons = FormulationOperator::build(FormulationKind::SupgDynamicConsistent, &c).unwrap();
        let incons =
            FormulationOperator::build(FormulationKind::SupgDynamicInconsistent, &c).unwrap();
        let p_cons = cons
            .recover_small_scales(&c, &state, &phi_next, None, Some(&field))
            .unwrap();
        let p_incons = incons
            .recover_small_scales(&c, &state, &phi_next, None, Some(&field))
            .unwrap();
        let tau_eff = c.tau_eff().unwrap();
        let n_q = c.grid.points_per_element();
        let af = c.alpha.alpha_f;
        let mut max_lap = 0.0f64;
        for e in 0..c.space.num_elements() {
            let conn = c.space.connectivity(e);
            for q in 0..n_q {
                let t = c.grid.tables(q);
                let lap_n = eval_point(t, &conn, &state.phi).laplacian;
                let lap_next = eval_point(t, &conn, &phi_next).laplacian;
                let lap_alpha = (1.0 - af) * lap_n + af * lap_next;
                max_lap = max_lap.max(lap_alpha.abs());
                let idx = e * n_q + q;
                let expect = tau_eff * c.kappa * lap_alpha;
                assert!(
                    ((p_cons[idx] - p_incons[idx]) - expect).abs() <= 1e-13 * expect.abs().max(1.0),
                    "pointwise difference mismatch at {idx}"
                );
            }
        }
        assert!(max_lap > 1.0, "state must exercise a nonzero Laplacian");
    }

    #[test]
    fn constant_state_is_steady_for_all_kinds() {
        // A constant field is an exact steady solution: assembling a step
        // from it must return it unchanged with zero small scales.
        for kind in FormulationKind::ALL {
            let c = ctx(5, 2, [1.0, 1.0], 5e-4);
            let n = c.space.num_functions();
            let phi = vec![3.2; n];
            let state = StepState::new(0.0, phi.clone(), vec![0.0; n]);
            let field = if kind.is_dynamic() {
                Some(SmallScaleField::from_rest(
                    c.space.num_elements(),
                    c.grid.points_per_element(),
                    c.tau_dynamic().unwrap(),
                    &vec![0.0; c.total_points()],
                ))
            } else {
                None
            };
            let sys = assemble(kind, &c, &state, field.as_ref()).unwrap();
            let x = solve(&sys).unwrap();
            for &v in &x[..sys.n_phi] {
                assert!((v - 3.2).abs() < 1e-11, "{kind}: constant not steady");
            }
            let op = FormulationOperator::build(kind, &c).unwrap();
            let prime = op
                .recover_small_scales(
                    &c,
                    &state,
                    &x[..sys.n_phi],
                    (sys.n_sigma > 0).then(|| &x[sys.n_phi..]),
                    field.as_ref(),
                )
                .unwrap();
            for v in &prime {
                assert!(v.abs() < 1e-12, "{kind}: small scales not zero");
            }
        }
    }

    #[test]
    fn consistent_initial_rate_has_small_weak_residual() {
        for kind in [
            FormulationKind::Galerkin,
            FormulationKind::SupgStatic,
            FormulationKind::GlsStatic,
            FormulationKind::GlsDynamic,
        ] {
            let c = ctx(8, 2, [1.0, 1.0], 5e-4);
            let n = c.space.num_functions();
            let phi0: Vec<f64> = (0..n)
                .map(|i| {
                    let x = (i % 8) as f64 / 8.0;
                    let y = (i / 8) as f64 / 8.0;
                    (std::f64::consts::TAU * x).sin() * (std::f64::consts::TAU * y).cos()
                })
                .collect();
            let rate = initial_rate(kind, &c, &phi0).unwrap();
            let res = initial_weak_residual(kind, &c, &phi0, &rate).unwrap();
            let norm: f64 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-10, "{kind}: t=0 residual {norm}");
        }
    }
}
