use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cwmtsne::metrics::Indices;
use cwmtsne_cli::config::Column;
use cwmtsne_cli::pipeline::compare_label_columns;
use cwmtsne_cli::{run_stages, CliError, CliResult, EmbedMode, PipelineConfig, RunOutput, Stages};

#[derive(Parser)]
#[command(name = "cwmtsne", version, about = "t-SNE embedding followed by cluster-weighted model selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: standardize, embed, sweep, metrics.
    Pipeline(RunArgs),
    /// Standardize and embed only.
    Embed(RunArgs),
    /// Sweep G and covariance models on the data as loaded (no embedding).
    Sweep(RunArgs),
    /// Fit a single (G, model) cell on the data as loaded.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        g: usize,
        #[arg(long)]
        model: String,
    },
    /// Compare two label columns of a CSV file.
    Metrics {
        input: PathBuf,
        /// Predicted label column (index or header name).
        #[arg(long)]
        pred: Column,
        /// Reference label column (index or header name).
        #[arg(long)]
        truth: Column,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the output directory (otherwise $CWMTSNE_OUTPUT_DIR or ./cwmtsne-out).
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the input data file.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> CliResult<PipelineConfig> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(data) = &self.data {
            cfg.data.path = data.clone();
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Pipeline(args) => summarize(&run_stages(&args.load()?, Stages::FULL)?),
        Command::Embed(args) => summarize(&run_stages(
            &args.load()?,
            Stages {
                embed: EmbedMode::Always,
                sweep: false,
            },
        )?),
        Command::Sweep(args) => summarize(&run_stages(
            &args.load()?,
            Stages {
                embed: EmbedMode::Never,
                sweep: true,
            },
        )?),
        Command::Fit { run, g, model } => {
            let mut cfg = run.load()?;
            cfg.cwm.g_min = g;
            cfg.cwm.g_max = g;
            cfg.cwm.models = vec![model];
            summarize(&run_stages(
                &cfg,
                Stages {
                    embed: EmbedMode::Never,
                    sweep: true,
                },
            )?)
        }
        Command::Metrics { input, pred, truth } => {
            let (idx, acc) = compare_label_columns(&input, &pred, &truth)?;
            for (name, v) in Indices::NAMES.iter().zip(idx.values()) {
                println!("{name}\t{}", v.map_or("undefined".to_string(), |v| format!("{v:.6}")));
            }
            println!("accuracy\t{acc:.6}");
            Ok(())
        }
    }
}

fn summarize(out: &RunOutput) -> CliResult<()> {
    let r = &out.report;
    println!("{} rows, {} features", r.data.n_rows, r.data.feature_names.len());
    if let Some(e) = &r.embedding {
        if let Some(kl) = e.final_kl {
            println!("embedding: {} iterations, final KL {kl:.4}", e.iterations.unwrap_or(0));
        }
    }
    if let Some(s) = &r.sweep {
        println!("sweep: {} cells, {} not estimated", s.cells, s.not_estimated);
        for b in &s.best {
            let ari = b.ha.map_or(String::new(), |v| format!(", ARI {v:.3}"));
            println!("  {:<5} G={} {}{ari}", b.criterion, b.g, b.model);
        }
    }
    if !r.warnings.is_empty() {
        println!("{} warnings (see report.toml)", r.warnings.len());
    }
    println!("output: {}", out.output_dir.display());
    Ok::<(), CliError>(())
}
