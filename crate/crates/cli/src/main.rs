//! Command-line driver: single runs, the mesh-family sweep and the
//! acceptance property suite.

use clap::{Args, Parser, Subcommand};
use condiff_core::config::RunConfig;
use condiff_core::output::{self, Series};
use condiff_core::runner::{build_context, run, RunResult};
use condiff_core::{Error, FormulationKind};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "condiff",
    version,
    about = "Stabilized convection-diffusion solver laboratory with discrete energy diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run from a JSON config file or a named preset.
    Run(RunArgs),
    /// Run the mesh family (16/32/64 plus the 128 reference) for one or
    /// more formulations and emit combined energy plots.
    Sweep(SweepArgs),
    /// Run the full acceptance property suite and print one line per
    /// criterion.
    Verify,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file (alternative to --preset).
    config: Option<PathBuf>,
    /// Named preset: paper-16, paper-32, paper-64 or paper-128.
    #[arg(long)]
    preset: Option<String>,
    /// Formulation: galerkin | supgs | vmss | glss | vmsd | supgd |
    /// supgd-inconsistent | glsd | do.
    #[arg(long)]
    formulation: Option<String>,
    /// Diffusivity override.
    #[arg(long)]
    kappa: Option<f64>,
    /// CFL override (clears an explicit dt).
    #[arg(long)]
    cfl: Option<f64>,
    /// Energy-decaying family member: alpha_m = gamma = 1/2 with this
    /// alpha_f.
    #[arg(long)]
    alpha_f: Option<f64>,
    /// Output directory (defaults to out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Preset family; only `paper` is defined.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// Comma-separated formulation list.
    #[arg(long, default_value = "supgs,glsd,do")]
    formulations: String,
    /// Output directory.
    #[arg(long, default_value = "out/sweep")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify => return cmd_verify(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::SolveFailure { .. }) | Some(Error::StepSolveFailure { .. }) => EXIT_SOLVER,
        Some(Error::InvalidConfig(_)) | Some(Error::Json(_)) => EXIT_VALIDATION,
        _ => 1,
    }
}

fn resolve_config(args: &RunArgs) -> anyhow::Result<(RunConfig, String)> {
    let (mut cfg, name) = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            let cfg = RunConfig::from_json(&text)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            (cfg, stem)
        }
        (None, Some(preset)) => {
            let formulation = args
                .formulation
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("--preset requires --formulation".into()))?;
            let kind = FormulationKind::parse(formulation)?;
            let cfg = RunConfig::preset_by_name(preset, kind)?;
            (cfg, format!("{preset}-{kind}"))
        }
        _ => {
            return Err(
                Error::InvalidConfig("give exactly one of <config.json> or --preset".into())
                    .into(),
            )
        }
    };
    if let Some(f) = &args.formulation {
        cfg.formulation = FormulationKind::parse(f)?;
    }
    if let Some(k) = args.kappa {
        cfg.kappa = k;
    }
    if let Some(c) = args.cfl {
        cfg.cfl = Some(c);
        cfg.dt = None;
    }
    if let Some(af) = args.alpha_f {
        cfg.alpha = condiff_core::AlphaSpec::EnergyDecaying { alpha_f: af };
    }
    cfg.validate()?;
    Ok((cfg, name))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let (cfg, name) = resolve_config(&args)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&name));
    let result = run(&cfg)?;
    let ctx = build_context(&cfg)?;
    output::emit_outputs(&result, &ctx.space, &out_dir)?;
    let last = result.ledger.last().expect("at least one step");
    println!(
        "{}: {} steps, dt = {:.6e}, E_0 = {:.6e}, E_T = {:.6e}, mass drift = {:.3e}",
        cfg.formulation,
        result.n_steps,
        result.dt,
        result.initial.e_total,
        last.e_total,
        (last.mass - result.initial.mass).abs() / result.initial.mass.abs().max(1e-300),
    );
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

fn energy_points(result: &RunResult) -> Vec<(f64, f64)> {
    std::iter::once((0.0, result.initial.e_total))
        .chain(result.ledger.iter().map(|r| (r.t, r.e_total)))
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    if args.preset != "paper" {
        return Err(Error::InvalidConfig(format!(
            "unknown sweep preset '{}' (only 'paper' is defined)",
            args.preset
        ))
        .into());
    }
    let kinds: Vec<FormulationKind> = args
        .formulations
        .split(',')
        .map(|s| FormulationKind::parse(s.trim()))
        .collect::<Result<_, _>>()?;
    let meshes = [16usize, 32, 64, 128];
    std::fs::create_dir_all(&args.out)?;
    let mut summary = serde_json::Map::new();

    for kind in kinds {
        let mut results: Vec<(usize, RunResult)> = Vec::new();
        for &m in &meshes {
            let mut cfg = RunConfig::preset(m, kind);
            cfg.snapshot_times.clear();
            let result = run(&cfg)?;
            let ctx = build_context(&cfg)?;
            let dir = args.out.join(format!("{kind}-{m}"));
            output::emit_outputs(&result, &ctx.space, &dir)?;
            results.push((m, result));
        }

        let labels = ["16x16", "32x32", "64x64", "128x128 (reference)"];
        let series: Vec<Series> = results
            .iter()
            .zip(labels)
            .map(|((_, r), label)| Series {
                label,
                points: energy_points(r),
            })
            .collect();
        output::write_svg_plot(
            &format!("total energy, mesh family ({kind})"),
            "t",
            "energy",
            &series,
            &args.out.join(format!("sweep_energy_{kind}.svg")),
        )?;

        // Sup distances between consecutive members on the shared step grid.
        let mut dists = serde_json::Map::new();
        for w in results.windows(2) {
            let (mc, coarse) = &w[0];
            let (mf, fine) = &w[1];
            let ratio = mf / mc;
            let d = coarse
                .ledger
                .iter()
                .enumerate()
                .map(|(k, row)| (row.e_total - fine.ledger[ratio * (k + 1) - 1].e_total).abs())
                .fold(0.0f64, f64::max);
            dists.insert(format!("d({mc},{mf})"), serde_json::json!(d));
            println!("{kind}: sup |E_{mc} - E_{mf}| = {d:.6e}");
        }
        summary.insert(kind.to_string(), serde_json::Value::Object(dists));
    }
    std::fs::write(
        args.out.join("sweep.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary))?,
    )?;
    println!("sweep artifacts written to {}", args.out.display());
    Ok(())
}

fn cmd_verify() -> ExitCode {
    let reports = condiff_core::verify::run_all();
    let mut all_passed = true;
    for r in &reports {
        println!("{}", r.line());
        all_passed &= r.passed;
    }
    if all_passed {
        println!("all {} criteria passed", reports.len());
        ExitCode::SUCCESS
    } else {
        let failed = reports.iter().filter(|r| !r.passed).count();
        eprintln!("{failed} of {} criteria failed", reports.len());
        ExitCode::FAILURE
    }
}
