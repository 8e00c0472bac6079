//! The acceptance property suite.
//!
//! Each criterion is an executable check with its tolerance pinned in code.
//! The suite backs both the `verify` CLI subcommand and the acceptance
//! integration tests; the assembly oracle in [`oracle`] is an independent
//! implementation path (explicit piecewise-polynomial basis, dense
//! assembly, 6-point quadrature) kept free of the production evaluation
//! and scatter code.

use crate::config::{AlphaSpec, RunConfig};
use crate::energy::LedgerRow;
use crate::formulation::FormulationKind;
use crate::runner::{self, RunResult};
use crate::small_scales::condensation_coefficients;
use crate::spline::{project_l2, projection_residual, SplineSpace2D};
use crate::stabilization::{self, RSwitch, StabilizationParams};
use crate::time_integration::AlphaParams;

/// Outcome of one acceptance criterion.
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn report(id: usize, name: &'static str, passed: bool, detail: String) -> CriterionReport {
    CriterionReport {
        id,
        name,
        passed,
        detail,
    }
}

/// Deterministic 64-bit mixer for the randomized algebra checks.
struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

fn paper_config(kind: FormulationKind, mesh: usize, alpha_f: f64) -> RunConfig {
    let mut cfg = RunConfig::preset(mesh, kind);
    cfg.alpha = AlphaSpec::EnergyDecaying { alpha_f };
    cfg.snapshot_times.clear();
    cfg
}

fn paper_run(kind: FormulationKind, mesh: usize, alpha_f: f64) -> RunResult {
    runner::run(&paper_config(kind, mesh, alpha_f)).expect("paper preset run")
}

/// 1. Discrete energy identity for the correct-energy formulations.
pub fn criterion_01_energy_identity() -> CriterionReport {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for kind in [FormulationKind::GlsDynamic, FormulationKind::DynamicOrthogonal] {
        let res = paper_run(kind, 32, 0.5);
        let bound = 1e-10 * res.initial.e_total;
        let max_r = res
            .ledger
            .iter()
            .map(|r| r.balance_residual.abs())
            .fold(0.0, f64::max);
        worst = worst.max(max_r / res.initial.e_total);
        detail.push_str(&format!(
            "{kind}: max|r| = {max_r:.3e} (bound {bound:.3e}); "
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    detail.push_str(&format!("runtime {elapsed:.1} s"));
    report(
        1,
        "discrete energy identity (glsd, do, 32x32, crank-nicolson)",
        worst <= 1e-10 && elapsed < 60.0,
        detail,
    )
}

/// 2. Monotone energy decay, plus extra dissipation for alpha_f > 1/2.
pub fn criterion_02_monotone_decay() -> CriterionReport {
    let mut passed = true;
    let mut detail = String::new();
    for kind in [FormulationKind::GlsDynamic, FormulationKind::DynamicOrthogonal] {
        let half = paper_run(kind, 32, 0.5);
        let heavy = paper_run(kind, 32, 0.75);
        let tol = 1e-12 * half.initial.e_total;
        for res in [&half, &heavy] {
            let mut prev = res.initial.e_total;
            for row in &res.ledger {
                if row.e_total > prev + tol {
                    passed = false;
                }
                prev = row.e_total;
            }
        }
        let e_half = half.ledger.last().unwrap().e_total;
        let e_heavy = heavy.ledger.last().unwrap().e_total;
        if !(e_heavy < e_half) {
            passed = false;
        }
        detail.push_str(&format!(
            "{kind}: E_T(1/2) = {e_half:.6e}, E_T(3/4) = {e_heavy:.6e}; "
        ));
    }
    report(
        2,
        "monotone decay with stronger dissipation for alpha_f = 3/4",
        passed,
        detail,
    )
}

/// 3. Orthogonality of the multiplier-enforced small-scales.
pub fn criterion_03_do_orthogonality() -> CriterionReport {
    let res = paper_run(FormulationKind::DynamicOrthogonal, 32, 0.5);
    let cfg = paper_config(FormulationKind::DynamicOrthogonal, 32, 0.5);
    let kappa = cfg.kappa;
    let mut max_orth: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut max_constraint: f64 = 0.0;
    let mut prime_scale: f64 = 0.0;
    for row in &res.ledger {
        max_orth = max_orth.max(row.orthogonality.abs());
        scale = scale.max((row.lap_norm_sq * row.prime_norm_sq).sqrt());
        max_constraint = max_constraint.max(row.constraint_residual_max);
        prime_scale = prime_scale.max(row.prime_norm_sq.sqrt());
    }
    let bound = 1e-10 * kappa * scale;
    let constraint_bound = 1e-10 * kappa * prime_scale;
    let passed = max_orth <= bound && max_constraint <= constraint_bound;
    report(
        3,
        "orthogonality term and per-function constraint vanish for do",
        passed,
        format!(
            "max|(k Lap phi, phi')| = {max_orth:.3e} (bound {bound:.3e}); max per-function residual = {max_constraint:.3e} (bound {constraint_bound:.3e})"
        ),
    )
}

/// 4. The classical static form creates energy: negative dissipation shows
///    up globally and locally, in both energy scopes.
///
/// The global undershoot needs the undamped rate mode of the Crank-Nicolson
/// family to be excited, so this run starts from a zero discrete rate (the
/// common generalized-alpha default). The slaved small scales feed on that
/// transient and their temporal term flips the sign of the global
/// dissipation; the local sign-indefiniteness is present even with a
/// consistent start. For contrast, the correct-energy form is run with the
/// same zero start and must keep dissipating (its identity has no rate-mode
/// dependence), which is checked here as well.
pub fn criterion_04_supgs_pathology() -> CriterionReport {
    let mut cfg = paper_config(FormulationKind::SupgStatic, 32, 0.5);
    cfg.snapshot_times = vec![1.0];
    cfg.rate_init = crate::config::RateInit::Zero;
    let res = runner::run(&cfg).expect("supgs run");
    let negative_steps = res
        .ledger
        .iter()
        .filter(|r| r.ss_dissipation < 0.0)
        .count();
    let snap = res
        .snapshots
        .iter()
        .find(|s| (s.t - 1.0).abs() < 1e-9)
        .expect("snapshot at t=1");
    let local = snap.local_dissipation.as_ref().unwrap();
    let (lmin, lmax) = local
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let large = snap.local_dissipation_large.as_ref().unwrap();
    let large_min = large.iter().cloned().fold(f64::MAX, f64::min);

    let mut contrast = paper_config(FormulationKind::GlsDynamic, 32, 0.5);
    contrast.rate_init = crate::config::RateInit::Zero;
    let res_gls = runner::run(&contrast).expect("glsd contrast run");
    let gls_min = res_gls
        .ledger
        .iter()
        .map(|r| r.ss_dissipation.min(r.local_diss_min))
        .fold(f64::MAX, f64::min);

    let passed =
        negative_steps >= 1 && lmin < 0.0 && lmax > 0.0 && large_min < 0.0 && gls_min >= -1e-12;
    report(
        4,
        "supgs creates energy under a rate transient; glsd does not",
        passed,
        format!(
            "{negative_steps} steps with negative global dissipation; local field range [{lmin:.3e}, {lmax:.3e}]; large-scale local min {large_min:.3e}; glsd min under the same transient {gls_min:.3e}"
        ),
    )
}

/// 5. The correct-energy formulations dissipate everywhere.
pub fn criterion_05_local_positivity() -> CriterionReport {
    let mut passed = true;
    let mut detail = String::new();
    for kind in [FormulationKind::GlsDynamic, FormulationKind::DynamicOrthogonal] {
        let res = paper_run(kind, 32, 0.5);
        let min = res
            .ledger
            .iter()
            .map(|r| r.local_diss_min)
            .fold(f64::MAX, f64::min);
        if min < -1e-12 {
            passed = false;
        }
        detail.push_str(&format!("{kind}: min over steps and elements = {min:.3e}; "));
    }
    report(
        5,
        "glsd/do local small-scale dissipation nonnegative",
        passed,
        detail,
    )
}

/// 6. Conservation of the resolved (plus modeled, for dynamic forms) mass.
pub fn criterion_06_mass_conservation() -> CriterionReport {
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for kind in FormulationKind::ALL {
        let res = paper_run(kind, 32, 0.5);
        let m0 = res.initial.mass;
        let drift = res
            .ledger
            .iter()
            .map(|r| (r.mass - m0).abs())
            .fold(0.0, f64::max)
            / m0.abs();
        worst = worst.max(drift);
        if drift > 1e-10 {
            passed = false;
        }
    }
    report(
        6,
        "mass conservation across all nine formulations",
        passed,
        format!("worst relative drift {worst:.3e} (bound 1e-10)"),
    )
}

/// 7. Energy conservation of the skew-symmetric limit.
pub fn criterion_07_galerkin_conservation() -> CriterionReport {
    let mut cfg = paper_config(FormulationKind::Galerkin, 32, 0.5);
    cfg.kappa = 0.0;
    let res = runner::run(&cfg).expect("galerkin run");
    let e0 = res.initial.e_total;
    let e_end = res.ledger.last().unwrap().e_total;
    let drift = (e_end - e0).abs() / e0;
    report(
        7,
        "galerkin energy conservation (kappa = 0, crank-nicolson)",
        drift <= 1e-10,
        format!("|E_N - E_0|/E_0 = {drift:.3e} (bound 1e-10)"),
    )
}

/// 8. Linear bases eliminate the weighting differences: the static forms
///    coincide matrix-entrywise and produce identical runs.
pub fn criterion_08_linear_basis_coincidence() -> CriterionReport {
    let kinds = [
        FormulationKind::SupgStatic,
        FormulationKind::VmsStatic,
        FormulationKind::GlsStatic,
    ];
    let mut max_diff: f64 = 0.0;
    let mut ops = Vec::new();
    for kind in kinds {
        let mut cfg = paper_config(kind, 8, 0.5);
        cfg.degree = 1;
        let ctx = runner::build_context(&cfg).expect("context");
        ops.push(
            crate::assembly::FormulationOperator::build(kind, &ctx)
                .expect("operator")
                .matrix,
        );
    }
    let n = ops[0].n_rows;
    for r in 0..n {
        for c in 0..n {
            let a = ops[0].get(r, c);
            max_diff = max_diff
                .max((a - ops[1].get(r, c)).abs())
                .max((a - ops[2].get(r, c)).abs());
        }
    }

    let ledger_text = |kind| {
        let mut cfg = paper_config(kind, 8, 0.5);
        cfg.degree = 1;
        runner::run(&cfg)
            .expect("degree-1 run")
            .ledger
            .iter()
            .map(|r| r.to_csv())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let base = ledger_text(kinds[0]);
    let identical = kinds[1..].iter().all(|&k| ledger_text(k) == base);
    report(
        8,
        "degree-1 static supg/vms/gls coincide (matrices and ledgers)",
        max_diff <= 1e-14 && identical,
        format!("max entry difference {max_diff:.3e}; ledgers identical: {identical}"),
    )
}

/// 9. Assembly against the independent dense oracle.
pub fn criterion_09_assembly_oracle() -> CriterionReport {
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for kind in FormulationKind::ALL {
        let cfg = paper_config(kind, 4, 0.5);
        let ctx = runner::build_context(&cfg).expect("context");
        let op = crate::assembly::FormulationOperator::build(kind, &ctx).expect("operator");
        let dense = oracle::dense_matrix(kind, &cfg);
        let n = dense.len();
        assert_eq!(n, op.matrix.n_rows, "{kind}: size mismatch");
        let mut max_diff: f64 = 0.0;
        for (r, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                max_diff = max_diff.max((v - op.matrix.get(r, c)).abs());
            }
        }
        worst = worst.max(max_diff);
        detail.push_str(&format!("{kind}: {max_diff:.2e}; "));
    }
    report(
        9,
        "assembled matrices match the dense 6-point oracle (4x4 mesh)",
        worst <= 1e-12,
        format!("worst entry deviation {worst:.3e}; {detail}"),
    )
}

/// 10. Condensed small-scale update against the direct two-unknown solve.
pub fn criterion_10_condensation() -> CriterionReport {
    let mut rng = SplitMix64(0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let alpha = AlphaParams::new(
            rng.in_range(0.5, 1.0),
            rng.in_range(0.3, 1.0),
            rng.in_range(0.3, 1.0),
        )
        .unwrap();
        let dt = rng.in_range(1e-4, 1.0);
        let tau = rng.in_range(1e-4, 10.0);
        let (v0, r0, r) = (
            rng.in_range(-2.0, 2.0),
            rng.in_range(-2.0, 2.0),
            rng.in_range(-2.0, 2.0),
        );
        let cond = condensation_coefficients(&alpha, dt, tau, true).unwrap();

        // Direct solve of the two generalized-alpha relations.
        let (af, am, g) = (alpha.alpha_f, alpha.alpha_m, alpha.gamma);
        let a = [[af / tau, am], [1.0, -g * dt]];
        let b = [
            -r - (1.0 - am) * r0 - (1.0 - af) / tau * v0,
            v0 + dt * (1.0 - g) * r0,
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let v1 = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
        let rd1 = (a[0][0] * b[1] - b[0] * a[1][0]) / det;

        let rate_next = cond.next_rate[0] * v0 + cond.next_rate[1] * r0 + cond.slope_next_rate * r;
        let value_next = v0 + dt * ((1.0 - g) * r0 + g * rate_next);
        worst = worst
            .max((value_next - v1).abs() / v1.abs().max(1.0))
            .max((rate_next - rd1).abs() / rd1.abs().max(1.0));
    }

    // Constant drive relaxes to the algebraic limit.
    let alpha = AlphaParams::crank_nicolson();
    let (dt, tau, r) = (0.01, 0.37, 1.9);
    let cond = condensation_coefficients(&alpha, dt, tau, true).unwrap();
    let (mut v, mut rd) = (0.0, -r);
    for _ in 0..10_000 {
        let rn = cond.next_rate[0] * v + cond.next_rate[1] * rd + cond.slope_next_rate * r;
        v += dt * ((1.0 - alpha.gamma) * rd + alpha.gamma * rn);
        rd = rn;
    }
    let steady_err = (v + tau * r).abs() / (tau * r).abs();
    report(
        10,
        "condensation maps match the direct generalized-alpha solve",
        worst <= 1e-13 && steady_err <= 1e-10,
        format!("worst relative deviation {worst:.3e} over 100 draws; steady-state error {steady_err:.3e}"),
    )
}

/// 11. Stabilization algebra: the r = 1 equivalence and the temporal value.
pub fn criterion_11_tau_algebra() -> CriterionReport {
    let mut rng = SplitMix64(0xabcdef);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let h = rng.in_range(1e-3, 0.5);
        let g = (2.0 / h).powi(2);
        let metric = [[g, 0.0], [0.0, g]];
        let params = StabilizationParams {
            velocity: [rng.in_range(0.01, 10.0), rng.in_range(-10.0, 10.0)],
            kappa: rng.in_range(1e-6, 1.0),
            c_inv: 36.0,
            alpha: AlphaParams::crank_nicolson(),
            dt: rng.in_range(1e-4, 10.0),
            r_switch: RSwitch::R1,
        };
        let ts = stabilization::tau_static(&params, &metric).unwrap();
        let td = stabilization::tau_dyn(&params, &metric).unwrap();
        let tt = stabilization::tau_time(&params);
        let eff = 1.0 / (1.0 / tt + 1.0 / td);
        worst = worst.max((eff - ts).abs() / ts.abs());
    }

    let params = StabilizationParams {
        velocity: [0.0, 0.0],
        kappa: 0.0,
        c_inv: 36.0,
        alpha: AlphaParams::crank_nicolson(),
        dt: 0.125,
        r_switch: RSwitch::R2,
    };
    let (_, _, t2) = stabilization::tau_components(&params, &[[1.0, 0.0], [0.0, 1.0]]);
    let cn_err = (t2 - 4.0 / (0.125 * 0.125)).abs() / t2;
    report(
        11,
        "tau algebra: r=1 effective equivalence and crank-nicolson value",
        worst <= 1e-14 && cn_err <= 1e-14,
        format!("worst r=1 identity deviation {worst:.3e}; temporal value error {cn_err:.3e}"),
    )
}

/// Distance between total-energy curves on the shared time grid (the
/// coarser run's steps).
fn sup_distance(coarse: &[LedgerRow], fine: &[LedgerRow], ratio: usize) -> f64 {
    coarse
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let fine_idx = ratio * (k + 1) - 1;
            (row.e_total - fine[fine_idx].e_total).abs()
        })
        .fold(0.0, f64::max)
}

/// 12. Mesh-family convergence ordering of the energy curves.
pub fn criterion_12_mesh_convergence() -> CriterionReport {
    let mut passed = true;
    let mut detail = String::new();
    for kind in [
        FormulationKind::SupgStatic,
        FormulationKind::GlsDynamic,
        FormulationKind::DynamicOrthogonal,
    ] {
        let r16 = paper_run(kind, 16, 0.5);
        let r32 = paper_run(kind, 32, 0.5);
        let r64 = paper_run(kind, 64, 0.5);
        let r128 = paper_run(kind, 128, 0.5);
        let d_16_32 = sup_distance(&r16.ledger, &r32.ledger, 2);
        let d_32_64 = sup_distance(&r32.ledger, &r64.ledger, 2);
        let d_64_128 = sup_distance(&r64.ledger, &r128.ledger, 2);
        if !(d_32_64 < d_16_32) {
            passed = false;
        }
        detail.push_str(&format!(
            "{kind}: d(16,32) = {d_16_32:.3e}, d(32,64) = {d_32_64:.3e}, d(64,128 ref) = {d_64_128:.3e}; "
        ));
    }
    report(
        12,
        "energy curves converge through the mesh family",
        passed,
        detail,
    )
}

/// 13. Exact representability of the block initial profile.
pub fn criterion_13_ic_exactness() -> CriterionReport {
    let ic = crate::initial_condition::BlockIc::default();
    let mut worst: f64 = 0.0;
    for m in [16usize, 32, 64] {
        let space = SplineSpace2D::new(2, m, m, [1.0, 1.0]).unwrap();
        let grid = crate::quadrature::QuadratureGrid::new(&space);
        let coeffs = project_l2(&space, &grid, |x, y| ic.value(x, y)).unwrap();
        let r = projection_residual(&space, &grid, &coeffs, |x, y| ic.value(x, y));
        worst = worst.max(r);
    }
    report(
        13,
        "block profile projects exactly on all three meshes",
        worst <= 1e-12,
        format!("worst L2 residual {worst:.3e} (bound 1e-12)"),
    )
}

/// Runs the full suite in order.
pub fn run_all() -> Vec<CriterionReport> {
    vec![
        criterion_01_energy_identity(),
        criterion_02_monotone_decay(),
        criterion_03_do_orthogonality(),
        criterion_04_supgs_pathology(),
        criterion_05_local_positivity(),
        criterion_06_mass_conservation(),
        criterion_07_galerkin_conservation(),
        criterion_08_linear_basis_coincidence(),
        criterion_09_assembly_oracle(),
        criterion_10_condensation(),
        criterion_11_tau_algebra(),
        criterion_12_mesh_convergence(),
        criterion_13_ic_exactness(),
    ]
}

/// Independent dense assembly: explicit cardinal-B-spline polynomials and a
/// 6-point tensor Gauss rule, dense scatter over all function pairs.
pub mod oracle {
    use super::*;

    const GAUSS6_NODES: [f64; 6] = [
        -0.932469514203152028,
        -0.661209386466264514,
        -0.238619186083196909,
        0.238619186083196909,
        0.661209386466264514,
        0.932469514203152028,
    ];
    const GAUSS6_WEIGHTS: [f64; 6] = [
        0.171324492379170345,
        0.360761573048138608,
        0.467913934572691047,
        0.467913934572691047,
        0.360761573048138608,
        0.171324492379170345,
    ];

    /// Cardinal B-spline of degree `p` on `[0, p+1]`: value and the first
    /// two derivatives with respect to the argument.
    fn cardinal(p: usize, u: f64) -> (f64, f64, f64) {
        match p {
            1 => {
                if (0.0..1.0).contains(&u) {
                    (u, 1.0, 0.0)
                } else if (1.0..2.0).contains(&u) {
                    (2.0 - u, -1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            2 => {
                if (0.0..1.0).contains(&u) {
                    (0.5 * u * u, u, 1.0)
                } else if (1.0..2.0).contains(&u) {
                    (-u * u + 3.0 * u - 1.5, -2.0 * u + 3.0, -2.0)
                } else if (2.0..3.0).contains(&u) {
                    (0.5 * (3.0 - u) * (3.0 - u), u - 3.0, 1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            _ => unreachable!("degrees 1 and 2 only"),
        }
    }

    /// Periodic basis function `i` of `m` uniform elements of size `h`,
    /// evaluated at physical `x`: value and physical derivatives.
    fn basis_1d(p: usize, m: usize, h: f64, i: usize, x: f64) -> (f64, f64, f64) {
        let u = (x / h - i as f64).rem_euclid(m as f64);
        if u >= (p + 1) as f64 {
            return (0.0, 0.0, 0.0);
        }
        let (b, db, ddb) = cardinal(p, u);
        (b, db / h, ddb / (h * h))
    }

    struct Eval2D {
        value: f64,
        grad: [f64; 2],
        lap: f64,
    }

    fn basis_2d(p: usize, m: usize, h: f64, g: usize, x: f64, y: f64) -> Eval2D {
        let (ix, iy) = (g % m, g / m);
        let (bx, dbx, ddbx) = basis_1d(p, m, h, ix, x);
        let (by, dby, ddby) = basis_1d(p, m, h, iy, y);
        Eval2D {
            value: bx * by,
            grad: [dbx * by, bx * dby],
            lap: ddbx * by + bx * ddby,
        }
    }

    /// Dense matrix of the alpha-folded step system of `kind` for the
    /// square-mesh config, assembled from the weak-form definitions.
    pub fn dense_matrix(kind: FormulationKind, cfg: &RunConfig) -> Vec<Vec<f64>> {
        assert_eq!(cfg.mesh[0], cfg.mesh[1], "oracle covers square meshes");
        let m = cfg.mesh[0];
        let p = cfg.degree;
        let h = 1.0 / m as f64;
        let n = m * m;
        let alpha = cfg.alpha.resolve().unwrap();
        let dt = cfg.resolve_dt().unwrap();
        let a = cfg.velocity;
        let kappa = cfg.kappa;
        let c_r = alpha.alpha_m / (alpha.gamma * dt);

        // Stabilization values straight from the definitions.
        let g_metric = (2.0 / h) * (2.0 / h);
        let tau_conv_m2 = (a[0] * a[0] + a[1] * a[1]) * g_metric;
        let c_inv = cfg
            .c_inv
            .unwrap_or_else(|| crate::stabilization::default_c_inv(p));
        let tau_diff_m2 = c_inv * kappa * kappa * 2.0 * g_metric * g_metric;
        let tau_time = alpha.alpha_f * alpha.gamma * dt / alpha.alpha_m;
        let tau_time_m2 = 1.0 / (tau_time * tau_time);
        let tau_stat = (tau_conv_m2 + tau_diff_m2 + tau_time_m2).powf(-0.5);
        let tau_dyn = (tau_conv_m2 + tau_diff_m2).powf(-0.5);
        let tau_eff = 1.0 / (1.0 / tau_time + 1.0 / tau_dyn);

        let c_w = kind.weighting_laplacian_coefficient();
        let with_diff = kind.residual_includes_diffusion();
        let blocks = if kind.has_multiplier() { 2 } else { 1 };
        let size = blocks * n;
        let mut mat = vec![vec![0.0; size]; size];

        for ey in 0..m {
            for ex in 0..m {
                for (qy, &eta) in GAUSS6_NODES.iter().enumerate() {
                    for (qx, &xi) in GAUSS6_NODES.iter().enumerate() {
                        let x = (ex as f64 + 0.5 * (xi + 1.0)) * h;
                        let y = (ey as f64 + 0.5 * (eta + 1.0)) * h;
                        let w = GAUSS6_WEIGHTS[qx] * GAUSS6_WEIGHTS[qy] * h * h / 4.0;
                        let evals: Vec<Eval2D> =
                            (0..n).map(|g| basis_2d(p, m, h, g, x, y)).collect();
                        for (i, ei) in evals.iter().enumerate() {
                            if ei.value == 0.0 && ei.grad == [0.0, 0.0] && ei.lap == 0.0 {
                                continue;
                            }
                            let adv_i = a[0] * ei.grad[0] + a[1] * ei.grad[1];
                            let weight_i = adv_i + c_w * kappa * ei.lap;
                            for (j, ej) in evals.iter().enumerate() {
                                let adv_j = a[0] * ej.grad[0] + a[1] * ej.grad[1];
                                let resid_j = c_r * ej.value
                                    + alpha.alpha_f
                                        * (adv_j - if with_diff { kappa * ej.lap } else { 0.0 });
                                let mut k = ei.value * (c_r * ej.value + alpha.alpha_f * adv_j)
                                    + alpha.alpha_f
                                        * kappa
                                        * (ei.grad[0] * ej.grad[0] + ei.grad[1] * ej.grad[1]);
                                if kind.has_small_scales() {
                                    if kind.is_dynamic() {
                                        k += tau_eff * weight_i * resid_j
                                            - tau_eff / tau_time * ei.value * resid_j;
                                    } else {
                                        k += tau_stat * weight_i * resid_j;
                                    }
                                }
                                mat[i][j] += w * k;
                                if kind.has_multiplier() {
                                    mat[i][n + j] += w
                                        * (tau_eff / tau_time * ei.value * kappa * ej.lap
                                            - tau_eff * weight_i * kappa * ej.lap);
                                    mat[n + i][j] -= w * tau_eff * kappa * ei.lap * resid_j;
                                    mat[n + i][n + j] +=
                                        w * tau_eff * kappa * ei.lap * kappa * ej.lap;
                                }
                            }
                        }
                    }
                }
            }
        }
        mat
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn oracle_basis_partition_of_unity() {
            for p in [1usize, 2] {
                let (m, h) = (5, 0.2);
                for k in 0..40 {
                    let x = 0.999 * k as f64 / 40.0;
                    let sum: f64 = (0..m).map(|i| basis_1d(p, m, h, i, x).0).sum();
                    assert!((sum - 1.0).abs() < 1e-13, "p={p}, x={x}: sum={sum}");
                }
            }
        }

        #[test]
        fn oracle_matches_production_evaluation() {
            let space = SplineSpace2D::new(2, 6, 6, [1.0, 1.0]).unwrap();
            let (x, y) = (0.37, 0.81);
            let (element, evals) = space.eval_at(x, y);
            let conn = space.connectivity(element);
            for (a, &g) in conn.iter().enumerate() {
                let o = basis_2d(2, 6, 1.0 / 6.0, g, x, y);
                assert!((o.value - evals[a].value).abs() < 1e-13);
                assert!((o.grad[0] - evals[a].grad[0]).abs() < 1e-10);
                assert!((o.lap - evals[a].laplacian).abs() < 1e-8);
            }
        }
    }
}
