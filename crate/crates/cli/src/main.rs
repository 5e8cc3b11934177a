use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use jmap_cli::config::parse_assignment;
use jmap_cli::{exit_code, Arm, ConfigError, ModalityChoice, PipelineConfig, Stage, Workspace};

/// Jacobian-map dementia classification: phantoms, registration, Jacobian
/// maps, a 3D CNN and Grad-CAM region rankings.
///
/// Outputs go to <output_dir>/<data-id>/ (data stages) and
/// <output_dir>/<data-id>/runs/<run-id>/ (training onward). Completed stages
/// are skipped unless --force is given.
///
/// Exit codes: 0 success, 2 configuration error, 3 stage failure,
/// 4 invariant violation. The thread count can be capped with JMAP_THREADS.
#[derive(Parser, Debug)]
#[command(name = "jmap", version)]
struct Cli {
    /// JSON configuration file: a flat object of keys shown by `show-config`.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a configuration key; VALUE is parsed as JSON and falls back
    /// to a plain string. Repeatable; applied after every other option.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,

    /// Root directory for all outputs [config: output_dir].
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Model input for single-arm stages: registered image or Jacobian map [config: mode].
    #[arg(long, global = true, value_enum)]
    mode: Option<Arm>,

    /// Imaging modality; fused stacks MRI and CT as two channels [config: modality].
    #[arg(long, global = true, value_enum)]
    modality: Option<ModalityChoice>,

    /// Seed for folds, initialization, shuffling and SMOTE [config: seed].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Bending-energy weight of the deformable registration [config: alpha].
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Histogram bins of the mutual-information metric [config: bins].
    #[arg(long, global = true)]
    bins: Option<usize>,

    /// Number of cross-validation folds [config: folds].
    #[arg(long, global = true)]
    folds: Option<usize>,

    /// Training epoch cap per fold [config: max_epochs].
    #[arg(long, global = true)]
    max_epochs: Option<usize>,

    /// Recompute stages even when they are marked complete.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the template and the subject manifest (synthetic phantoms unless data_root is set).
    Phantom,
    /// Intensity normalization and brain masking.
    Preprocess,
    /// Affine then B-spline registration of every subject to the template.
    Register,
    /// Jacobian determinant maps of the registration fields.
    Jacobian,
    /// Cross-validation folds and SMOTE balancing of each training split.
    Balance,
    /// Train one network per fold with early stopping.
    Train,
    /// Validation metrics of every fold's best checkpoint.
    Evaluate,
    /// Grad-CAM heatmaps of every validation subject.
    Explain,
    /// Rank atlas regions by mean heatmap value, per subject and per class.
    RankRegions,
    /// Heatmap overlays on the registered images (PPM/PGM).
    Render,
    /// Summary tables of every evaluated arm.
    Report,
    /// Every stage in order.
    Pipeline {
        /// Run both arms (registered image and Jacobian map) on the same
        /// folds and seeds.
        #[arg(long)]
        ablate: bool,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn overrides(cli: &Cli) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut push = |k: &str, v: serde_json::Value| out.push((k.to_string(), v.to_string()));
    if let Some(v) = &cli.output_dir {
        push("output_dir", v.to_string_lossy().into());
    }
    if let Some(v) = cli.mode {
        push("mode", v.name().into());
    }
    if let Some(v) = cli.modality {
        push("modality", serde_json::to_value(v).expect("enum serializes"));
    }
    if let Some(v) = cli.seed {
        push("seed", v.into());
    }
    if let Some(v) = cli.alpha {
        push("alpha", v.into());
    }
    if let Some(v) = cli.bins {
        push("bins", v.into());
    }
    if let Some(v) = cli.folds {
        push("folds", v.into());
    }
    if let Some(v) = cli.max_epochs {
        push("max_epochs", v.into());
    }
    out.extend(cli.set.iter().cloned());
    out
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("JMAP_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError(format!("JMAP_THREADS must be a positive integer, got `{raw}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    jmap_cli::tune_allocator();
    init_threads()?;
    let config = PipelineConfig::load(cli.config.as_deref(), &overrides(&cli))?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let mode = config.mode;
    let ws = Workspace::open(config, cli.force)?;
    let single = |stage: Stage| ws.run(stage, Some(mode));
    match cli.command {
        Command::Phantom => ws.run(Stage::Phantom, None)?,
        Command::Preprocess => ws.run(Stage::Preprocess, None)?,
        Command::Register => ws.run(Stage::Register, None)?,
        Command::Jacobian => ws.run(Stage::Jacobian, None)?,
        Command::Balance => single(Stage::Balance)?,
        Command::Train => single(Stage::Train)?,
        Command::Evaluate => single(Stage::Evaluate)?,
        Command::Explain => single(Stage::Explain)?,
        Command::RankRegions => single(Stage::RankRegions)?,
        Command::Render => single(Stage::Render)?,
        Command::Report => ws.run(Stage::Report, None)?,
        Command::Pipeline { ablate } => {
            let arms = if ablate { Arm::ALL.to_vec() } else { vec![mode] };
            ws.pipeline(&arms)?;
            let table = ws.stage_dir(Stage::Report, None).join("table2.md");
            print!("{}", std::fs::read_to_string(&table)?);
        }
        Command::ShowConfig => unreachable!(),
    }
    println!("{}", ws.run_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
