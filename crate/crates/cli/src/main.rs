use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maxmargin_cli::experiment::{self, Trained};
use maxmargin_cli::{bounds, guide, plot, CliError, ExperimentConfig};

/// Learn max-margin nearest-neighbor decoders and compare them with baselines.
#[derive(Parser, Debug)]
#[command(name = "maxmargin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, env = "MAXMARGIN_OUT")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train only: config echo, learned matrices and trace.
    Train(RunArgs),
    /// Train, then estimate error rates over the test SNR grid and plot them.
    Sweep(RunArgs),
    /// Render a results CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "error probability")]
        title: String,
    },
    /// Tabulate generalization and optimization bounds.
    Bounds(RunArgs),
    /// Recommend a training SNR from a dB grid (defaults to the test grid).
    SnrGuide {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid: Option<Vec<f64>>,
    },
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("maxmargin-out"));
    Ok((cfg, dir))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn describe(trained: &Trained) -> String {
    let trace = trained.trace();
    let last = trace.points.last();
    let scale = match trained {
        Trained::Additive { gamma, .. } => format!("gamma={gamma}"),
        Trained::Nonlinear { sigma_w, .. } => format!("sigma_w={sigma_w}"),
    };
    match last {
        Some(p) => format!(
            "{scale} t={} objective={} hinge={} regularizer={}",
            p.t, p.objective, p.hinge, p.regularizer
        ),
        None => scale,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, dir) = load(&args)?;
            let trained = experiment::train(&cfg)?;
            experiment::write_training_artifacts(&cfg, &trained, &dir)?;
            println!("{}", describe(&trained));
            println!("wrote {}", dir.display());
        }
        Command::Sweep(args) => {
            let (cfg, dir) = load(&args)?;
            let outcome = experiment::run_experiment(&cfg, &dir)?;
            println!("{}", describe(&outcome.trained));
            for r in &outcome.results {
                println!("{:>8} {:<14} {:.6} ± {:.6}", r.snr_db, r.decoder, r.p_hat, r.std_err);
            }
            println!("wrote {}", dir.display());
        }
        Command::Plot { input, out, title } => {
            let rows = plot::read_results(&input)?;
            write(&out, &plot::render_svg(&rows, &title)?)?;
        }
        Command::Bounds(args) => {
            let (cfg, dir) = load(&args)?;
            let text = bounds::to_csv(&bounds::bounds_report(&cfg)?)?;
            print!("{text}");
            write(&dir.join("bounds.csv"), &text)?;
        }
        Command::SnrGuide { run, grid } => {
            let (cfg, dir) = load(&run)?;
            let g = guide::snr_guide(&cfg, grid.as_deref())?;
            let text = guide::to_csv(&g);
            print!("{text}");
            write(&dir.join("snr_guide.csv"), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
