//! Artifact emission: ledger CSV, legacy VTK field snapshots, minimal SVG
//! line plots and the resolved-run metadata.

use crate::error::Result;
use crate::runner::{RunResult, Snapshot};
use crate::spline::SplineSpace2D;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Samples per element per axis in VTK output; resolves the quadratic
/// variation of the basis.
pub const VTK_SAMPLES_PER_ELEMENT: usize = 4;

/// Samples the spline field on an `(nx+1) x (ny+1)` uniform point grid
/// covering the closed domain (the last column/row wraps periodically).
pub fn sample_field(space: &SplineSpace2D, coeffs: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let lx = space.x.length;
    let ly = space.y.length;
    let mut out = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = ly * j as f64 / ny as f64;
        for i in 0..=nx {
            let x = lx * i as f64 / nx as f64;
            out.push(space.field_value(coeffs, x, y));
        }
    }
    out
}

/// Grid position of the sampled-field maximum.
pub fn peak_location(space: &SplineSpace2D, coeffs: &[f64], nx: usize, ny: usize) -> (f64, f64) {
    let samples = sample_field(space, coeffs, nx, ny);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &v) in samples.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    let i = best.0 % (nx + 1);
    let j = best.0 / (nx + 1);
    (
        space.x.length * i as f64 / nx as f64,
        space.y.length * j as f64 / ny as f64,
    )
}

pub fn write_ledger_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut text = String::from(crate::energy::LedgerRow::CSV_HEADER);
    text.push('\n');
    for row in &result.ledger {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Legacy ASCII VTK structured-points file: the spline field as point data
/// on the sample grid plus the per-element local dissipation replicated
/// over each element's sample cells.
pub fn write_vtk(space: &SplineSpace2D, snapshot: &Snapshot, path: &Path) -> Result<()> {
    let (m_x, m_y) = space.element_dims();
    let nx = VTK_SAMPLES_PER_ELEMENT * m_x;
    let ny = VTK_SAMPLES_PER_ELEMENT * m_y;
    let values = sample_field(space, &snapshot.phi, nx, ny);

    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "scalar transport field at t={}", snapshot.t);
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", nx + 1, ny + 1);
    s.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(
        s,
        "SPACING {:.12} {:.12} 1",
        space.x.length / nx as f64,
        space.y.length / ny as f64
    );
    let _ = writeln!(s, "POINT_DATA {}", (nx + 1) * (ny + 1));
    s.push_str("SCALARS phi double 1\nLOOKUP_TABLE default\n");
    for v in &values {
        let _ = writeln!(s, "{v:.12e}");
    }
    if let Some(local) = &snapshot.local_dissipation {
        let _ = writeln!(s, "CELL_DATA {}", nx * ny);
        s.push_str("SCALARS small_scale_dissipation double 1\nLOOKUP_TABLE default\n");
        let k = VTK_SAMPLES_PER_ELEMENT;
        for cy in 0..ny {
            for cx in 0..nx {
                let e = (cx / k) + m_x * (cy / k);
                let _ = writeln!(s, "{:.12e}", local[e]);
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// One data series of an SVG line plot.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal self-contained SVG line plot: axes, ticks, labeled polylines.
pub fn write_svg_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    path: &Path,
) -> Result<()> {
    const W: f64 = 800.0;
    const H: f64 = 500.0;
    const ML: f64 = 80.0;
    const MR: f64 = 160.0;
    const MT: f64 = 40.0;
    const MB: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 = 0.0;
        x1 = 1.0;
    }
    if !y0.is_finite() || y1 <= y0 {
        y0 -= 0.5;
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        title
    );
    // Axes.
    let _ = writeln!(
        s,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        s,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let fy = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/><text x=\"{0}\" y=\"{3}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{4:.3}</text>",
            sx(fx),
            H - MB,
            H - MB + 5.0,
            H - MB + 20.0,
            fx
        );
        let _ = writeln!(
            s,
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/><text x=\"{3}\" y=\"{4}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{5:.4e}</text>",
            sy(fy),
            ML - 5.0,
            ML,
            ML - 8.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        (ML + W - MR) / 2.0,
        H - 15.0,
        x_label
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        y_label
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for &(x, y) in &ser.points {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            pts.trim_end(),
            color
        );
        let ly = MT + 20.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/><text x=\"{4}\" y=\"{5}\" font-family=\"sans-serif\" font-size=\"12\">{6}</text>",
            W - MR + 10.0,
            ly,
            W - MR + 35.0,
            color,
            W - MR + 40.0,
            ly + 4.0,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    fs::write(path, s)?;
    Ok(())
}

/// Per-point small-scale dump: element, point, value, rate.
pub fn write_small_scale_csv(snapshot: &Snapshot, points_per_element: usize, path: &Path) -> Result<()> {
    let mut s = String::from("element,point,phi_prime,phi_prime_rate\n");
    if let Some(values) = &snapshot.small_scale_value {
        for (idx, v) in values.iter().enumerate() {
            let rate = snapshot
                .small_scale_rate
                .as_ref()
                .map(|r| r[idx])
                .unwrap_or(0.0);
            let _ = writeln!(
                s,
                "{},{},{:.17e},{:.17e}",
                idx / points_per_element,
                idx % points_per_element,
                v,
                rate
            );
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes every artifact of a run into `dir`: `ledger.csv`, `meta.json`,
/// `energy.svg`, `dissipation.svg`, one `field_<t>.vtk` per snapshot and
/// optional small-scale dumps.
pub fn emit_outputs(result: &RunResult, space: &SplineSpace2D, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_ledger_csv(result, &dir.join("ledger.csv"))?;

    let meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": result.config,
        "dt": result.dt,
        "n_steps": result.n_steps,
        "taus": result.taus,
        "initial": result.initial,
    });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let t0 = 0.0;
    let energy_series = vec![
        Series {
            label: "E_total",
            points: std::iter::once((t0, result.initial.e_total))
                .chain(result.ledger.iter().map(|r| (r.t, r.e_total)))
                .collect(),
        },
        Series {
            label: "E_large",
            points: std::iter::once((t0, result.initial.e_large))
                .chain(result.ledger.iter().map(|r| (r.t, r.e_large)))
                .collect(),
        },
    ];
    write_svg_plot(
        &format!("energy evolution ({})", result.config.formulation),
        "t",
        "energy",
        &energy_series,
        &dir.join("energy.svg"),
    )?;

    let diss_series = vec![Series {
        label: "small-scale dissipation",
        points: result.ledger.iter().map(|r| (r.t, r.ss_dissipation)).collect(),
    }];
    write_svg_plot(
        &format!("small-scale dissipation ({})", result.config.formulation),
        "t",
        "dissipation",
        &diss_series,
        &dir.join("dissipation.svg"),
    )?;

    let ppe = VTK_SAMPLES_PER_ELEMENT; // reused below for dumps
    let _ = ppe;
    for snap in &result.snapshots {
        write_vtk(space, snap, &dir.join(format!("field_{}.vtk", snap.t)))?;
        if result.config.dump_small_scales && snap.small_scale_value.is_some() {
            let points_per_element = snap
                .small_scale_value
                .as_ref()
                .map(|v| v.len() / space.num_elements())
                .unwrap_or(0);
            write_small_scale_csv(
                snap,
                points_per_element,
                &dir.join(format!("small_scales_{}.csv", snap.t)),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::formulation::FormulationKind;
    use crate::runner::run;

    #[test]
    fn artifacts_written_and_vtk_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset(8, FormulationKind::GlsDynamic);
        cfg.end_time = 0.125;
        cfg.snapshot_times = vec![0.0, 0.125];
        cfg.dump_small_scales = true;
        let res = run(&cfg).unwrap();
        let ctx = crate::runner::build_context(&cfg).unwrap();
        emit_outputs(&res, &ctx.space, dir.path()).unwrap();

        let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
        let rows: Vec<&str> = ledger.trim().lines().collect();
        assert_eq!(rows.len() - 1, res.n_steps, "one row per step plus header");
        assert!(rows[0].starts_with("step,t,e_large"));

        let vtk = std::fs::read_to_string(dir.path().join("field_0.125.vtk")).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(vtk.contains("DATASET STRUCTURED_POINTS"));
        let nx = 4 * 8 + 1;
        assert!(vtk.contains(&format!("DIMENSIONS {nx} {nx} 1")));
        assert!(vtk.contains(&format!("POINT_DATA {}", nx * nx)));
        assert!(vtk.contains(&format!("CELL_DATA {}", (nx - 1) * (nx - 1))));
        // Point count matches the declaration.
        let data_lines = vtk
            .lines()
            .skip_while(|l| !l.starts_with("LOOKUP_TABLE"))
            .skip(1)
            .take_while(|l| !l.starts_with("CELL_DATA"))
            .count();
        assert_eq!(data_lines, nx * nx);

        assert!(dir.path().join("energy.svg").exists());
        assert!(dir.path().join("dissipation.svg").exists());
        assert!(dir.path().join("meta.json").exists());
        assert!(dir.path().join("small_scales_0.125.csv").exists());

        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["dt"].as_f64().unwrap(), 0.5 / 8.0 / 1.0);
        assert!(meta["taus"]["tau_dynamic"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn determinism_byte_identical_ledger() {
        let mut cfg = RunConfig::preset(8, FormulationKind::SupgStatic);
        cfg.end_time = 0.25;
        cfg.snapshot_times.clear();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        let to_text = |r: &crate::runner::RunResult| {
            r.ledger.iter().map(|row| row.to_csv()).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(to_text(&a), to_text(&b));
    }

    #[test]
    fn peak_tracking_on_known_field() {
        // The block profile has a flat plateau; the sampled argmax must land
        // inside it (within one element of its edge).
        let space = crate::spline::SplineSpace2D::new(2, 16, 16, [1.0, 1.0]).unwrap();
        let grid = crate::quadrature::QuadratureGrid::new(&space);
        let ic = crate::initial_condition::BlockIc::default();
        let coeffs = crate::spline::project_l2(&space, &grid, |x, y| ic.value(x, y)).unwrap();
        let (px, py) = peak_location(&space, &coeffs, 64, 64);
        let reach = ic.l0() + 1.0 / 16.0;
        assert!((px - 0.5).abs() <= reach && (py - 0.5).abs() <= reach);
    }
}
