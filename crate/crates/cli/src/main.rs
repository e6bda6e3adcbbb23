use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctfusion::factors::LossKind;
use ctfusion::gp::GpModel;
use ctfusion::graph::FusionMode;
use ctfusion::metrics::{compare, RegressionThreshold};
use ctfusion::pipeline::{run, write_artifacts, RunConfig};
use ctfusion::sim::{export::export_streams, simulate};
use ctfusion::Error;

#[derive(Parser)]
#[command(name = "ctfusion", version, about = "Continuous-time GNSS/IMU factor-graph experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, run the estimator and write trajectories and metrics.
    Run(RunArgs),
    /// Compare two metrics.json files; exits with 4 on regression.
    Compare(CompareArgs),
    /// Simulate a scenario and dump its measurement streams as CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long, value_enum)]
    fusion: Option<Fusion>,
    #[arg(long, value_enum)]
    gp: Option<Gp>,
    #[arg(long, value_enum)]
    loss: Option<Loss>,
    /// Smoother lag in seconds.
    #[arg(long)]
    lag: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: ScenarioArgs,
}

#[derive(Args)]
struct CompareArgs {
    baseline: PathBuf,
    candidate: PathBuf,
    /// Relative increase tolerated before a metric counts as regressed.
    #[arg(long, default_value_t = RegressionThreshold::default().relative)]
    relative: f64,
    #[arg(long, default_value_t = RegressionThreshold::default().absolute)]
    absolute: f64,
    /// Also write the delta table as comparison.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Loose,
    Tight,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gp {
    Wnoa,
    Wnoj,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    None,
    Cauchy,
    Huber,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Scenario(_) | Error::Schema(_) => 2,
        Error::SolverDiverged { .. } => 3,
        _ => 1,
    }
}

fn load(args: &ScenarioArgs) -> ctfusion::Result<RunConfig> {
    let mut cfg = match &args.scenario {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> ctfusion::Result<u8> {
    let mut cfg = load(&args.common)?;
    let s = &mut cfg.settings;
    if let Some(f) = args.fusion {
        s.fusion = match f {
            Fusion::Loose => FusionMode::Loose,
            Fusion::Tight => FusionMode::Tight,
        };
    }
    if let Some(g) = args.gp {
        s.gp.model = match g {
            Gp::Wnoa => GpModel::Wnoa,
            Gp::Wnoj => GpModel::Wnoj,
        };
    }
    if let Some(l) = args.loss {
        s.loss = match l {
            Loss::None => LossKind::None,
            Loss::Cauchy => LossKind::Cauchy,
            Loss::Huber => LossKind::Huber,
        };
    }
    if let Some(lag) = args.lag {
        s.solver.lag_seconds = lag;
    }
    cfg.validate()?;
    let (_, out) = run(&cfg)?;
    write_artifacts(&out, &args.common.out)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let r = &out.report;
    println!("scenario      {}", r.scenario);
    println!("epochs        {}", r.epochs);
    println!("rmse_2d_m     {:.4}", r.rmse_2d_m);
    println!("rmse_3d_m     {:.4}", r.rmse_3d_m);
    println!("max_2d_err_m  {:.4}", r.max_2d_err_m);
    println!("yaw_err_deg   {:.4}", r.mean_yaw_err_deg);
    println!("smoothness_s  {:.4}", r.smoothness_s);
    println!(
        "routing       synchronized {} interpolated {} dropped {} cached {}",
        r.routing.synchronized, r.routing.interpolated, r.routing.dropped, r.routing.cached
    );
    println!("wrote         {}", args.common.out.display());
    Ok(0)
}

fn cmd_synth(args: &SynthArgs) -> ctfusion::Result<u8> {
    let cfg = load(&args.common)?;
    let sim = simulate(&cfg.scenario)?;
    export_streams(&sim, &args.common.out)?;
    std::fs::write(args.common.out.join("scenario.toml"), cfg.to_toml_string()?)?;
    println!("wrote {}", args.common.out.display());
    Ok(0)
}

fn read_json(path: &Path) -> ctfusion::Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: &CompareArgs) -> ctfusion::Result<u8> {
    let threshold = RegressionThreshold { relative: args.relative, absolute: args.absolute };
    let cmp = compare(&read_json(&args.baseline)?, &read_json(&args.candidate)?, threshold)?;
    println!("{:<26} {:>14} {:>14} {:>14}", "metric", "baseline", "candidate", "delta");
    for (key, m) in &cmp.metrics {
        let flag = if m.regression { "  REGRESSION" } else { "" };
        println!("{key:<26} {:>14.6} {:>14.6} {:>+14.6}{flag}", m.baseline, m.candidate, m.delta);
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&cmp).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("comparison.json"), text + "\n")?;
    }
    Ok(if cmp.regressed() { 4 } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
