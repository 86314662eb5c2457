use std::path::PathBuf;
use std::process::ExitCode;

use chla::commands::{self, Cell, CommandError, Subset};
use chla::config::ExperimentConfig;
use chla::models::ModelKind;
use chla::spectra::Variant;
use clap::{Args, Parser, Subcommand};

/// Chlorophyll-a estimation from hyperspectral reflectance.
#[derive(Parser, Debug)]
#[command(name = "chla", version)]
struct Cli {
    /// TOML experiment configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic campaign: spectra.csv and references.csv.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Number of reference samples.
        #[arg(long)]
        n: Option<usize>,
        /// Noise standard deviation in reflectance percent.
        #[arg(long)]
        noise_sd: Option<f64>,
    },
    /// Turn spectra.csv and references.csv into one dataset per resolution and variant.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        matrix: MatrixArgs,
    },
    /// Grid-search a model on the training split of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// rf, svr (svm) or ann.
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        /// Model file to write; the CV trace goes next to it as <name>.cv.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cv: CvArgs,
    },
    /// Score a model and append the row to a results file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "results.csv")]
        results: PathBuf,
        /// train, test or all.
        #[arg(long, default_value = "test", value_parser = parse_subset)]
        subset: Subset,
    },
    /// Write per-resolution tables and the estimated-vs-measured scatter plot.
    Report {
        #[arg(long, default_value = "results.csv")]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scatter plot cell as model:resolution:variant, e.g. ann:4:raw.
        #[arg(long, value_parser = parse_cell)]
        scatter: Option<Cell>,
    },
    /// Run the whole matrix: simulate, preprocess, train, evaluate and report.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        cv: CvArgs,
        /// Models to fit, comma separated.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
}

#[derive(Args, Debug)]
struct MatrixArgs {
    /// Band widths in nm, comma separated.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<f64>>,
    /// raw and/or der, comma separated.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model '{s}' (rf, svr, ann)"))
}

fn parse_subset(s: &str) -> Result<Subset, String> {
    Subset::parse(s).ok_or_else(|| format!("unknown subset '{s}' (train, test, all)"))
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [model, res, variant] = parts[..] else {
        return Err("expected model:resolution:variant".into());
    };
    Ok(Cell {
        model: parse_kind(model)?,
        resolution_nm: res
            .trim_end_matches("nm")
            .parse()
            .map_err(|_| format!("invalid resolution '{res}'"))?,
        variant: Variant::parse(variant).ok_or_else(|| format!("unknown variant '{variant}'"))?,
    })
}

impl MatrixArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(r) = &self.resolutions {
            cfg.preprocess.resolutions = r.clone();
        }
        if let Some(v) = &self.variants {
            cfg.preprocess.variants = v.clone();
        }
    }
}

impl CvArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(k) = self.folds {
            cfg.cv.k = Some(k);
        }
        if let Some(r) = self.repetitions {
            cfg.cv.repetitions = Some(r);
        }
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Simulate { out, n, noise_sd } => {
            if let Some(n) = n {
                cfg.simulate.n = n;
            }
            if let Some(sd) = noise_sd {
                cfg.simulate.noise_sd = sd;
            }
            let s = commands::cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} spectra to {} and {} references to {}",
                s.n_spectra,
                s.spectra.display(),
                s.n_references,
                s.references.display()
            );
        }
        Command::Preprocess { input, out, matrix } => {
            matrix.apply(&mut cfg);
            cfg.validate()?;
            let s = commands::cmd_preprocess(&cfg, &input, &out)?;
            println!(
                "paired {} of {} references ({} of {} spectra kept)",
                s.stats.paired, s.stats.references, s.stats.spectra_kept, s.stats.spectra_in
            );
            for f in &s.files {
                println!("{}", f.display());
            }
        }
        Command::Train {
            dataset,
            model,
            out,
            cv,
        } => {
            cv.apply(&mut cfg);
            cfg.validate()?;
            let s = commands::cmd_train(&cfg, model, &dataset, &out)?;
            println!(
                "best {} (cv rmse {:.4}, {} fits); model {}, trace {}",
                s.best,
                s.best_cv_rmse,
                s.cv_fits,
                s.model.display(),
                s.trace.display()
            );
        }
        Command::Evaluate {
            model,
            dataset,
            results,
            subset,
        } => {
            let r = commands::cmd_evaluate(&model, &dataset, &results, subset)?;
            println!(
                "{} {} nm {} {}: r2 {:.4} rmse {:.4} mae {:.4} n {}",
                r.model, r.resolution_nm, r.variant, r.subset, r.r2, r.rmse, r.mae, r.n
            );
        }
        Command::Report {
            results,
            out,
            scatter,
        } => {
            let s = commands::cmd_report(&results, &out, scatter)?;
            println!(
                "wrote {} tables and {}",
                s.tables.len(),
                s.markdown.display()
            );
        }
        Command::Run {
            out,
            matrix,
            cv,
            models,
        } => {
            matrix.apply(&mut cfg);
            cv.apply(&mut cfg);
            if let Some(m) = models {
                cfg.models = m;
            }
            let s = commands::cmd_run(&cfg, &out)?;
            for r in &s.rows {
                println!(
                    "{} {} nm {}: r2 {:.4} rmse {:.4} mae {:.4}",
                    r.model, r.resolution_nm, r.variant, r.r2, r.rmse, r.mae
                );
            }
            println!("report in {}", s.report.markdown.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chla: {}: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
