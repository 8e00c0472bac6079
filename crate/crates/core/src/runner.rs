//! Run orchestration: projection of the initial condition, consistent rate
//! initialization, the step loop with one factorization per run, and the
//! per-step energy ledger.

use crate::assembly::{self, FormulationOperator};
use crate::config::RunConfig;
use crate::energy::{self, EnergyScope, LedgerRow, ScaleHistory};
use crate::error::{Error, Result};
use crate::formulation::FormulationKind;
use crate::linsolve::LinearSolver;
use crate::problem::ProblemContext;
use crate::small_scales::SmallScaleField;
use crate::spline::{self, SplineSpace2D};
use crate::stabilization::default_c_inv;
use crate::stabilization::RSwitch;
use crate::time_integration::{advance, StepState};
use serde::Serialize;

/// Derived stabilization values recorded in the run metadata (reference
/// element; the mesh is uniform so they hold everywhere).
#[derive(Debug, Clone, Serialize)]
pub struct TauSummary {
    pub tau_static: Option<f64>,
    pub tau_dynamic: Option<f64>,
    pub tau_effective: Option<f64>,
    pub tau_time: f64,
    pub c_inv: f64,
    pub metric_diag: [f64; 2],
}

/// Initial-state record.
#[derive(Debug, Clone, Serialize)]
pub struct InitialRecord {
    pub e_large: f64,
    pub e_small: f64,
    pub e_total: f64,
    pub mass: f64,
    /// Quadrature L2 distance between the projected field and the requested
    /// initial condition.
    pub projection_residual: f64,
}

/// Field snapshot at one requested time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phi: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    /// Per-element small-scale dissipation (total-energy scope); absent at
    /// t = 0 where no step has been taken.
    pub local_dissipation: Option<Vec<f64>>,
    pub local_dissipation_large: Option<Vec<f64>>,
    /// Small-scale point values (and rates for dynamic scales).
    pub small_scale_value: Option<Vec<f64>>,
    pub small_scale_rate: Option<Vec<f64>>,
}

/// Everything a completed run produced.
pub struct RunResult {
    pub config: RunConfig,
    pub dt: f64,
    pub n_steps: usize,
    pub initial: InitialRecord,
    pub taus: TauSummary,
    pub ledger: Vec<LedgerRow>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: StepState,
}

/// Builds the problem context a config describes.
pub fn build_context(config: &RunConfig) -> Result<ProblemContext> {
    config.validate()?;
    let space = SplineSpace2D::new(config.degree, config.mesh[0], config.mesh[1], [1.0, 1.0])?;
    let dt = config.resolve_dt()?;
    ProblemContext::new(
        space,
        config.velocity,
        config.kappa,
        config.forcing,
        config.alpha.resolve()?,
        dt,
        config.c_inv.unwrap_or_else(|| default_c_inv(config.degree)),
        RSwitch::from_int(config.r_switch)?,
        config.boundary,
    )
}

/// Pointwise residual of a state at its own time level. Seeds the dynamic
/// small scales at t = 0 and reconstructs slaved scales at snapshot times.
fn pointwise_residual(
    kind: FormulationKind,
    ctx: &ProblemContext,
    phi0: &[f64],
    phi_dot0: &[f64],
) -> Vec<f64> {
    let n_q = ctx.grid.points_per_element();
    let mut out = vec![0.0; ctx.total_points()];
    let with_diff = kind.residual_includes_diffusion();
    for e in 0..ctx.space.num_elements() {
        let conn = ctx.space.connectivity(e);
        for q in 0..n_q {
            let t = ctx.grid.tables(q);
            let f0 = crate::assembly::eval_point(t, &conn, phi0);
            let r0 = crate::assembly::eval_point(t, &conn, phi_dot0).value;
            let adv = ctx.velocity[0] * f0.grad[0] + ctx.velocity[1] * f0.grad[1];
            let diff = if with_diff { ctx.kappa * f0.laplacian } else { 0.0 };
            out[e * n_q + q] = r0 + adv - diff - ctx.forcing;
        }
    }
    out
}

fn tau_summary(ctx: &ProblemContext) -> TauSummary {
    let g = ctx.grid.metric_tensor();
    TauSummary {
        tau_static: ctx.tau_stat().ok(),
        tau_dynamic: ctx.tau_dynamic().ok(),
        tau_effective: ctx.tau_eff().ok(),
        tau_time: ctx.tau_time(),
        c_inv: ctx.c_inv,
        metric_diag: [g[0][0], g[1][1]],
    }
}

/// Executes a full run. Deterministic for a given config: assembly and all
/// reductions run in a fixed sequential order.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    let kind = config.formulation;
    let ctx = build_context(config)?;
    let dt = ctx.dt;
    let n_steps = config.num_steps()?;

    // Initial condition and consistent rates.
    let ic = config.initial_condition;
    let phi0 = spline::project_l2(&ctx.space, &ctx.grid, |x, y| ic.value(x, y))?;
    let projection_residual =
        spline::projection_residual(&ctx.space, &ctx.grid, &phi0, |x, y| ic.value(x, y));
    let phi_dot0 = match config.rate_init {
        crate::config::RateInit::Consistent => assembly::initial_rate(kind, &ctx, &phi0)?,
        crate::config::RateInit::Zero => vec![0.0; phi0.len()],
    };

    let mut field = if kind.is_dynamic() {
        let drive0 = pointwise_residual(kind, &ctx, &phi0, &phi_dot0);
        Some(SmallScaleField::from_rest(
            ctx.space.num_elements(),
            ctx.grid.points_per_element(),
            ctx.tau_dynamic()?,
            &drive0,
        ))
    } else {
        None
    };

    let mut state = StepState::new(0.0, phi0, phi_dot0);
    let (e_large, e_small, e_total, mass) =
        energy::initial_energies(&ctx, kind, &state, field.as_ref())?;
    let initial = InitialRecord {
        e_large,
        e_small,
        e_total,
        mass,
        projection_residual,
    };

    let op = FormulationOperator::build(kind, &ctx)?;
    let solver = LinearSolver::prepare(&op.matrix, op.structure)?;
    let cond = if kind.is_dynamic() {
        Some(ctx.condensation()?)
    } else {
        None
    };

    let mut snapshots = Vec::new();
    let wants_snapshot = |t: f64| {
        config
            .snapshot_times
            .iter()
            .any(|&ts| (ts - t).abs() < 0.5 * dt)
    };
    if wants_snapshot(0.0) {
        snapshots.push(Snapshot {
            step: 0,
            t: 0.0,
            phi: state.phi.clone(),
            sigma: None,
            local_dissipation: None,
            local_dissipation_large: None,
            small_scale_value: field.as_ref().map(|f| f.value.clone()),
            small_scale_rate: field.as_ref().map(|f| f.rate.clone()),
        });
    }

    let mut ledger = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let rhs = op
            .assemble_rhs(&ctx, &state, field.as_ref())
            .map_err(|e| step_error(step + 1, e))?;
        let solution = solver
            .solve(&op.matrix, &rhs)
            .map_err(|e| step_error(step + 1, e))?;
        let (phi_next, sigma_next) = if op.n_sigma > 0 {
            (
                solution[..op.n_phi].to_vec(),
                Some(solution[op.n_phi..].to_vec()),
            )
        } else {
            (solution, None)
        };

        let mut next = advance(&ctx.alpha, dt, &state, |_| Ok((phi_next, sigma_next)))?;
        next.t = (step + 1) as f64 * dt; // avoid accumulation drift

        // Small-scale commit with the converged drive, then the ledger.
        let field_before = field.clone();
        if let (Some(f), Some(c)) = (field.as_mut(), cond.as_ref()) {
            let drive = op.residual_drive(&ctx, &state, &next.phi, next.sigma.as_deref());
            f.commit_step(c, &ctx.alpha, dt, &drive)
                .map_err(|e| step_error(step + 1, e))?;
        }
        let scales = match (&field_before, &field) {
            (Some(before), Some(after)) => ScaleHistory::Dynamic { before, after },
            _ => {
                if kind.has_small_scales() {
                    ScaleHistory::Static
                } else {
                    ScaleHistory::None
                }
            }
        };
        let row = energy::ledger_step(&ctx, kind, step + 1, &state, &next, &scales)?;

        if wants_snapshot(next.t) {
            let local =
                energy::local_dissipation_field(&ctx, kind, &state, &next, &scales, EnergyScope::Total)?;
            let local_large = energy::local_dissipation_field(
                &ctx,
                kind,
                &state,
                &next,
                &scales,
                EnergyScope::LargeScale,
            )?;
            let (ss_value, ss_rate) = match &field {
                Some(f) => (Some(f.value.clone()), Some(f.rate.clone())),
                None if kind.has_small_scales() => {
                    // Slaved scales at the snapshot level, from the residual.
                    let tau = ctx.tau_stat()?;
                    let drive = pointwise_residual(kind, &ctx, &next.phi, &next.phi_dot);
                    (Some(drive.iter().map(|r| -tau * r).collect()), None)
                }
                None => (None, None),
            };
            snapshots.push(Snapshot {
                step: step + 1,
                t: next.t,
                phi: next.phi.clone(),
                sigma: next.sigma.clone(),
                local_dissipation: Some(local),
                local_dissipation_large: Some(local_large),
                small_scale_value: ss_value,
                small_scale_rate: ss_rate,
            });
        }

        ledger.push(row);
        state = next;
    }

    Ok(RunResult {
        config: config.clone(),
        dt,
        n_steps,
        initial,
        taus: tau_summary(&ctx),
        ledger,
        snapshots,
        final_state: state,
    })
}

fn step_error(step: usize, e: Error) -> Error {
    match e {
        Error::SolveFailure { residual, tolerance } => Error::StepSolveFailure {
            step,
            residual,
            tolerance,
        },
        other => other,
    }
}
