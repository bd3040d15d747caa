//! `fcdata`: operator CLI wiring the corpus pipeline stages into
//! subcommands. Stage boundaries are files: every command reads explicit
//! inputs, writes new artifacts, and never mutates an input corpus in place.
//!
//! Exit codes: 0 success, 1 validation failure, 2 backend failure. Errors go
//! to stderr as one structured JSON line; human-readable summaries also go
//! to stderr so report files stay machine-clean.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use fcdata_core::gateway::GatewayError;
use fcdata_core::semantics::SemanticsError;

#[derive(Parser)]
#[command(name = "fcdata", version, about = "Function-calling dataset pipeline")]
struct Cli {
    /// Pipeline config file (TOML); FCDATA_CONFIG works too. Defaults apply
    /// when omitted.
    #[arg(long, global = true, env = "FCDATA_CONFIG")]
    config: Option<PathBuf>,
    /// Override the clustering seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error | warn | info | debug | trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dedup a batch of online queries against the buffer and itself.
    Ingest(commands::IngestArgs),
    /// Generate reference calls, triage by consistency, merge agreements.
    Construct(commands::ConstructArgs),
    /// K-means over query embeddings.
    Cluster(commands::ClusterArgs),
    /// Detect blind-spot (tool, parameter, cluster) loci.
    Detect(commands::DetectArgs),
    /// Repair blind spots by multi-round counterfactual generation.
    Augment(commands::AugmentArgs),
    /// Merge augmentation reports into a corpus with near-duplicate dedup.
    Assemble(commands::AssembleArgs),
    /// Score raw model outputs against references (reward breakdowns).
    Score(commands::ScoreArgs),
    /// Confusion-matrix tool-selection F1 over prediction/reference files.
    Evaluate(commands::EvaluateArgs),
    /// Emit supervised training records under prompt isolation.
    ExportSft(commands::ExportSftArgs),
    /// Sweep the (tau_g, tau_b) grid and count blind spots per cell.
    Grid(commands::GridArgs),
}

fn classify_exit_code(error: &anyhow::Error) -> i32 {
    for cause in error.chain() {
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            match e {
                GatewayError::BackendUnavailable { .. }
                | GatewayError::AuthMissing(_)
                | GatewayError::Status { .. }
                | GatewayError::BadResponse(_) => return 2,
                _ => return 1,
            }
        }
        if matches!(cause.downcast_ref::<SemanticsError>(), Some(SemanticsError::BackendUnavailable(_))) {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<fcdata_core::constructor::ConstructorError>() {
            if matches!(
                e,
                fcdata_core::constructor::ConstructorError::Backend(_)
                    | fcdata_core::constructor::ConstructorError::UnparseableResponse(_)
            ) {
                return 2;
            }
        }
        if commands::is_backend_exhaustion(cause) {
            return 2;
        }
    }
    1
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();

    let config = match commands::load_config(cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => exit_with(&e),
    };

    let result = match cli.command {
        Command::Ingest(args) => commands::cmd_ingest(&config, args),
        Command::Construct(args) => commands::cmd_construct(&config, args),
        Command::Cluster(args) => commands::cmd_cluster(&config, args),
        Command::Detect(args) => commands::cmd_detect(&config, args),
        Command::Augment(args) => commands::cmd_augment(&config, args),
        Command::Assemble(args) => commands::cmd_assemble(&config, args),
        Command::Score(args) => commands::cmd_score(&config, args),
        Command::Evaluate(args) => commands::cmd_evaluate(&config, args),
        Command::ExportSft(args) => commands::cmd_export_sft(&config, args),
        Command::Grid(args) => commands::cmd_grid(&config, args),
    };

    if let Err(e) = result {
        exit_with(&e);
    }
}

fn exit_with(error: &anyhow::Error) -> ! {
    let code = classify_exit_code(error);
    let payload = serde_json::json!({
        "error": if code == 2 { "backend_failure" } else { "validation_failure" },
        "message": format!("{error:#}"),
    });
    eprintln!("{payload}");
    std::process::exit(code);
}
