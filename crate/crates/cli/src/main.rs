use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use leo_control::config::Overrides;
use leo_control::pipeline::{run_pipeline, Stage};
use leo_control::placement::PlacementMethod;
use leo_control::protocol::Protocol;
use leo_control::PipelineError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Subcommand {
    Gen,
    Snapshot,
    Place,
    Assign,
    Simulate,
    Report,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Seamless,
    Legacy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Cnpa,
    Exhaustive,
    Random,
    Single,
}

/// Controller placement, handover prediction and handover simulation for
/// LEO constellations.
#[derive(Debug, Parser)]
#[command(name = "leoctl", version)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Hysteresis ratio in (0, 1].
    #[arg(long)]
    delta: Option<f64>,
    /// Number of controllers.
    #[arg(long)]
    k: Option<usize>,
    /// Representative snapshots used during placement.
    #[arg(long)]
    clusters: Option<usize>,
    /// Also dump the simulation event trace as JSON lines.
    #[arg(long)]
    trace: bool,
}

impl Cli {
    fn stage(&self) -> Stage {
        match self.subcommand {
            Subcommand::Gen => Stage::Gen,
            Subcommand::Snapshot => Stage::Snapshot,
            Subcommand::Place => Stage::Place,
            Subcommand::Assign => Stage::Assign,
            Subcommand::Simulate => Stage::Simulate,
            Subcommand::Report => Stage::Report,
            Subcommand::All => Stage::All,
        }
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            output_dir: self.out.clone(),
            protocol: self.protocol.map(|p| match p {
                ProtocolArg::Seamless => Protocol::Seamless,
                ProtocolArg::Legacy => Protocol::Legacy,
            }),
            method: self.method.map(|m| match m {
                MethodArg::Cnpa => PlacementMethod::Cnpa,
                MethodArg::Exhaustive => PlacementMethod::Exhaustive,
                MethodArg::Random => PlacementMethod::Random,
                MethodArg::Single => PlacementMethod::Single,
            }),
            delta: self.delta,
            k: self.k,
            clusters: self.clusters,
            record_trace: self.trace.then_some(true),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_pipeline(&cli.config, cli.stage(), &cli.overrides()) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("outputs written to {}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            match &err {
                PipelineError::Config(e) => eprintln!("error in stage `config`: {e}"),
                PipelineError::Stage { .. } => eprintln!("error: {err}"),
            }
            ExitCode::FAILURE
        }
    }
}
