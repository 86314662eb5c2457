//! The command layer behind the `chla` binary. Every command reads and
//! writes files only; the binary adds argument parsing and exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::config::{ConfigError, ExperimentConfig};
use crate::io::{
    self, dataset_file_name, format_resolution, IoError, ModelFile, PredictionRow, ResultRow,
    SplitSpec, TuningSummary,
};
use crate::metrics::{self, MetricsError};
use crate::models::{ModelError, ModelKind};
use crate::pipeline::{preprocess_campaign, PipelineError, PreprocessStats};
use crate::preprocess::{self, LabeledSample, PreprocessError, WaterStatus};
use crate::spectra::Variant;
use crate::synthgen;
use crate::tuning::{self, TuneError};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Contract(String),
}

impl CommandError {
    pub fn category(&self) -> &'static str {
        match self {
            CommandError::Usage(_) => "usage error",
            CommandError::Config(_) => "config error",
            CommandError::Io(IoError::Io { .. }) => "io error",
            CommandError::Io(_) => "input error",
            CommandError::Contract(_) => "contract error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 2,
            CommandError::Config(_) => 3,
            CommandError::Io(IoError::Io { .. }) => 4,
            CommandError::Io(_) => 5,
            CommandError::Contract(_) => 6,
        }
    }
}

macro_rules! contract_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CommandError {
            fn from(e: $t) -> Self {
                CommandError::Contract(e.to_string())
            }
        }
    )*};
}
contract_from!(
    PreprocessError,
    ModelError,
    TuneError,
    PipelineError,
    MetricsError
);

pub type Result<T> = std::result::Result<T, CommandError>;

fn io_error(path: &Path, source: std::io::Error) -> CommandError {
    CommandError::Io(IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub spectra: PathBuf,
    pub references: PathBuf,
    pub n_spectra: usize,
    pub n_references: usize,
}

/// Writes `spectra.csv` and `references.csv` for a synthetic campaign.
pub fn cmd_simulate(cfg: &ExperimentConfig, output_dir: &Path) -> Result<SimulateSummary> {
    if cfg.simulate.n == 0 {
        return Err(CommandError::Usage(
            "simulate needs at least one reference sample (n >= 1)".into(),
        ));
    }
    cfg.validate()?;
    let campaign = synthgen::generate_campaign(&cfg.campaign());
    let spectra = output_dir.join(io::SPECTRA_FILE);
    let references = output_dir.join(io::REFERENCES_FILE);
    io::write_spectra(&spectra, &campaign.spectra)?;
    io::write_references(&references, &campaign.references)?;
    info!(
        "simulated {} spectra and {} references into {}",
        campaign.spectra.len(),
        campaign.references.len(),
        output_dir.display()
    );
    Ok(SimulateSummary {
        spectra,
        references,
        n_spectra: campaign.spectra.len(),
        n_references: campaign.references.len(),
    })
}

// -------------------------------------------------------------- preprocess

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub files: Vec<PathBuf>,
    pub stats: PreprocessStats,
}

/// Reads `spectra.csv` and `references.csv` from `input_dir` and writes one
/// dataset file per (resolution, variant) into `output_dir`.
pub fn cmd_preprocess(
    cfg: &ExperimentConfig,
    input_dir: &Path,
    output_dir: &Path,
) -> Result<PreprocessSummary> {
    let pcfg = cfg.preprocess_config()?;
    let spectra = io::read_spectra(&input_dir.join(io::SPECTRA_FILE))?;
    let refs = io::read_references(&input_dir.join(io::REFERENCES_FILE))?;
    if refs.is_empty() {
        warn!("reference file has no samples; writing empty datasets");
    }
    let (cells, stats) = preprocess_campaign(&spectra, &refs, &pcfg)?;
    info!(
        "kept {} of {} spectra in {} windows; paired {} of {} references",
        stats.spectra_kept, stats.spectra_in, stats.windows, stats.paired, stats.references
    );
    let mut files = Vec::with_capacity(cells.len());
    for cell in &cells {
        let path = output_dir.join(dataset_file_name(cell.resolution_nm, cell.variant));
        io::write_dataset(&path, cell)?;
        files.push(path);
    }
    Ok(PreprocessSummary { files, stats })
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub trace: PathBuf,
    pub best: String,
    pub best_cv_rmse: f64,
    pub cv_fits: usize,
}

/// Path of the CV trace written next to a model file: `model.json` gets
/// `model.cv.csv`.
pub fn trace_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("cv.csv")
}

/// Splits the dataset, grid-searches `kind` on the training part, and writes
/// the refit model plus its CV trace.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    dataset_file: &Path,
    model_out: &Path,
) -> Result<TrainSummary> {
    let ds = io::read_dataset(dataset_file)?;
    preprocess::check_dataset(&ds.samples)?;
    let plan = cfg.cv_plan()?;
    let split = SplitSpec {
        ratio: cfg.split_ratio(),
        seed: cfg.split_seed(),
    };
    let parts = preprocess::split(&ds.samples, split.ratio, split.seed)?;
    let grid = cfg.grid(kind, ds.positions.len());
    info!(
        "training {} on {} ({} samples, {} features, {} grid points)",
        kind,
        dataset_file.display(),
        parts.train.len(),
        ds.positions.len(),
        grid.len()
    );
    let started = Instant::now();
    let (tune, model) = tuning::grid_search(&parts.train, &grid, &plan)?;
    info!(
        "selected {} (cv rmse {:.4}) in {:.1?}",
        tune.best_params.describe(),
        tune.mean_rmse_per_point[tune.best],
        started.elapsed()
    );

    let trace = trace_path(model_out);
    if let Some(dir) = trace.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let file = fs::File::create(&trace).map_err(|e| io_error(&trace, e))?;
    tune.write_trace(std::io::BufWriter::new(file))
        .map_err(|e| io_error(&trace, e))?;

    let file = ModelFile {
        format: io::MODEL_FORMAT.into(),
        version: io::MODEL_VERSION,
        kind,
        resolution_nm: ds.resolution_nm,
        variant: ds.variant,
        feature_positions: ds.positions.clone(),
        split,
        seed: cfg.seed,
        n_train: parts.train.len(),
        tuning: TuningSummary {
            plan,
            points: tune.points.iter().map(|p| p.describe()).collect(),
            mean_rmse_per_point: tune.mean_rmse_per_point.clone(),
            best: tune.best,
            cv_fits: tune.cv_fits,
        },
        model,
    };
    io::write_model(model_out, &file)?;
    Ok(TrainSummary {
        model: model_out.to_path_buf(),
        trace,
        best: tune.best_params.describe(),
        best_cv_rmse: tune.mean_rmse_per_point[tune.best],
        cv_fits: tune.cv_fits,
    })
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
    /// Every sample in the dataset file, regardless of the split.
    All,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "test",
            Subset::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Subset::Train),
            "test" => Some(Subset::Test),
            "all" => Some(Subset::All),
            _ => None,
        }
    }
}

/// Scores a model on one subset of a dataset and appends one row to
/// `results_file` (and per-sample rows to the sibling `predictions.csv`).
/// The train/test subsets repeat the split recorded in the model file.
pub fn cmd_evaluate(
    model_file: &Path,
    dataset_file: &Path,
    results_file: &Path,
    subset: Subset,
) -> Result<ResultRow> {
    let m = io::read_model(model_file)?;
    let ds = io::read_dataset(dataset_file)?;
    preprocess::check_dataset(&ds.samples)?;
    if let Some(s) = ds.samples.first() {
        if s.features.len() != m.model.n_features() {
            return Err(ModelError::FeatureMismatch {
                expected: m.model.n_features(),
                got: s.features.len(),
            }
            .into());
        }
    }
    if ds.resolution_nm != m.resolution_nm || ds.variant != m.variant {
        warn!(
            "model was trained on {} nm {} but the dataset is {} nm {}",
            format_resolution(m.resolution_nm),
            m.variant,
            format_resolution(ds.resolution_nm),
            ds.variant
        );
    }

    let samples: Vec<LabeledSample> = match subset {
        Subset::All => ds.samples.clone(),
        Subset::Train | Subset::Test => {
            let parts = preprocess::split(&ds.samples, m.split.ratio, m.split.seed)?;
            if parts.train.len() != m.n_train {
                return Err(CommandError::Contract(format!(
                    "dataset yields {} training samples but the model was trained on {}; use --subset all for foreign data",
                    parts.train.len(),
                    m.n_train
                )));
            }
            if subset == Subset::Train {
                parts.train
            } else {
                parts.test
            }
        }
    };
    if samples.is_empty() {
        return Err(CommandError::Contract(format!(
            "no samples in the {} subset",
            subset.as_str()
        )));
    }
    let y: Vec<f64> = samples.iter().map(|s| s.chl_a).collect();
    let pred = m
        .model
        .predict_many(samples.iter().map(|s| s.features.as_slice()))?;
    let (r2, rmse, mae) = match metrics::evaluate(&y, &pred) {
        Ok(x) => (x.r2, x.rmse, x.mae),
        Err(MetricsError::UndefinedR2 { rmse, mae }) => {
            warn!("reference values are constant; r2 is undefined");
            (f64::NAN, rmse, mae)
        }
        Err(e) => return Err(e.into()),
    };
    let row = ResultRow {
        model: m.kind,
        resolution_nm: m.resolution_nm,
        variant: m.variant,
        seed: m.seed,
        subset: subset.as_str().into(),
        n: samples.len(),
        r2,
        rmse,
        mae,
    };
    let predictions: Vec<PredictionRow> = samples
        .iter()
        .zip(&pred)
        .map(|(s, p)| PredictionRow {
            model: m.kind,
            resolution_nm: m.resolution_nm,
            variant: m.variant,
            seed: m.seed,
            subset: subset.as_str().into(),
            sample_id: s.sample_id,
            water_body: s.water_body.clone(),
            status: s.status,
            measured: s.chl_a,
            estimated: *p,
        })
        .collect();
    io::append_results(results_file, std::slice::from_ref(&row), &predictions)?;
    info!(
        "{} {} nm {} on {}: r2 {:.4}, rmse {:.4}, mae {:.4} (n = {})",
        m.kind,
        format_resolution(m.resolution_nm),
        m.variant,
        subset.as_str(),
        r2,
        rmse,
        mae,
        samples.len()
    );
    Ok(row)
}

// ------------------------------------------------------------------ report

/// Identifies one cell of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub model: ModelKind,
    pub resolution_nm: f64,
    pub variant: Variant,
}

/// The cell shown in the scatter plot unless another is requested.
pub const DEFAULT_SCATTER_CELL: Cell = Cell {
    model: ModelKind::Ann,
    resolution_nm: 4.0,
    variant: Variant::Raw,
};

const TABLE_RESOLUTIONS: [f64; 4] = [4.0, 8.0, 12.0, 20.0];
const TABLE_HEADER: &str = "model,variant,r2_percent,rmse,mae";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub tables: Vec<PathBuf>,
    pub markdown: PathBuf,
    pub scatter_csv: PathBuf,
    pub scatter_svg: PathBuf,
    pub scatter_cell: Option<Cell>,
}

fn cell_key(model: ModelKind, res: f64, variant: Variant) -> (u64, ModelKind, Variant) {
    (res.to_bits(), model, variant)
}

/// Writes `table_<res>nm.csv` per resolution (always 4, 8, 12 and 20 nm,
/// plus any other resolution present), `report.md`, `scatter.csv` and
/// `scatter.svg`. Only test-subset rows are tabulated; when a cell has
/// several rows the last one wins.
pub fn cmd_report(
    results_file: &Path,
    output_dir: &Path,
    scatter: Option<Cell>,
) -> Result<ReportSummary> {
    let rows = io::read_results(results_file)?;
    let mut latest: BTreeMap<(u64, ModelKind, Variant), ResultRow> = BTreeMap::new();
    for r in rows
        .into_iter()
        .filter(|r| r.subset == Subset::Test.as_str())
    {
        latest.insert(cell_key(r.model, r.resolution_nm, r.variant), r);
    }
    let mut resolutions: Vec<f64> = TABLE_RESOLUTIONS.to_vec();
    for r in latest.values() {
        if !resolutions.contains(&r.resolution_nm) {
            resolutions.push(r.resolution_nm);
        }
    }
    resolutions.sort_by(f64::total_cmp);

    fs::create_dir_all(output_dir).map_err(|e| io_error(output_dir, e))?;
    let mut tables = Vec::new();
    let mut md = String::from("# Results\n");
    for &res in &resolutions {
        let mut csv = format!("{TABLE_HEADER}\n");
        let _ = write!(
            md,
            "\n## {} nm spectral resolution\n\n| Model | Variant | R² (%) | RMSE (µg/L) | MAE (µg/L) |\n|---|---|---|---|---|\n",
            format_resolution(res)
        );
        for kind in ModelKind::ALL {
            for variant in [Variant::Raw, Variant::Derivative] {
                if let Some(r) = latest.get(&cell_key(kind, res, variant)) {
                    let _ = writeln!(
                        csv,
                        "{},{},{:.1},{:.2},{:.2}",
                        kind.label(),
                        variant.tag(),
                        100.0 * r.r2,
                        r.rmse,
                        r.mae
                    );
                    let _ = writeln!(
                        md,
                        "| {} | {} | {:.1} | {:.2} | {:.2} |",
                        kind.label(),
                        variant.tag(),
                        100.0 * r.r2,
                        r.rmse,
                        r.mae
                    );
                }
            }
        }
        let path = output_dir.join(format!("table_{}nm.csv", format_resolution(res)));
        fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
        tables.push(path);
    }
    let markdown = output_dir.join("report.md");
    fs::write(&markdown, md).map_err(|e| io_error(&markdown, e))?;

    let chosen = scatter
        .filter(|c| latest.contains_key(&cell_key(c.model, c.resolution_nm, c.variant)))
        .or_else(|| {
            let d = DEFAULT_SCATTER_CELL;
            latest
                .contains_key(&cell_key(d.model, d.resolution_nm, d.variant))
                .then_some(d)
        })
        .or_else(|| {
            latest
                .values()
                .filter(|r| r.r2.is_finite())
                .max_by(|a, b| a.r2.total_cmp(&b.r2))
                .map(|r| Cell {
                    model: r.model,
                    resolution_nm: r.resolution_nm,
                    variant: r.variant,
                })
        });
    if scatter.is_some() && chosen != scatter {
        warn!("requested scatter cell has no test results; showing another cell");
    }

    let points: Vec<PredictionRow> = match chosen {
        None => Vec::new(),
        Some(c) => {
            let seed = latest[&cell_key(c.model, c.resolution_nm, c.variant)].seed;
            let all = io::read_predictions(&io::predictions_path(results_file))?;
            let mut by_sample: BTreeMap<usize, PredictionRow> = BTreeMap::new();
            for p in all.into_iter().filter(|p| {
                p.model == c.model
                    && p.resolution_nm == c.resolution_nm
                    && p.variant == c.variant
                    && p.seed == seed
                    && p.subset == Subset::Test.as_str()
            }) {
                by_sample.insert(p.sample_id, p);
            }
            by_sample.into_values().collect()
        }
    };

    let scatter_csv = output_dir.join("scatter.csv");
    let mut csv = String::from("sample_id,water_body,status,measured,estimated\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.sample_id,
            io::csv_text(&p.water_body),
            p.status,
            p.measured,
            p.estimated
        );
    }
    fs::write(&scatter_csv, csv).map_err(|e| io_error(&scatter_csv, e))?;
    let scatter_svg = output_dir.join("scatter.svg");
    fs::write(&scatter_svg, scatter_svg_text(&points, chosen))
        .map_err(|e| io_error(&scatter_svg, e))?;

    Ok(ReportSummary {
        tables,
        markdown,
        scatter_csv,
        scatter_svg,
        scatter_cell: chosen,
    })
}

const NATURAL_COLOR: &str = "#2ca02c";
const ARTIFICIAL_COLOR: &str = "#1f77b4";

/// Estimated vs. measured concentration with a 1:1 line; natural and
/// artificial water bodies are separate `<g>` series.
fn scatter_svg_text(points: &[PredictionRow], cell: Option<Cell>) -> String {
    const SIZE: f64 = 560.0;
    const MARGIN: f64 = 70.0;
    let plot = SIZE - 2.0 * MARGIN;
    let top = points
        .iter()
        .flat_map(|p| [p.measured, p.estimated])
        .fold(1.0_f64, f64::max);
    let axis_max = (top / 50.0).ceil().max(1.0) * 50.0;
    let sx = |v: f64| MARGIN + plot * (v / axis_max).clamp(0.0, 1.0);
    let sy = |v: f64| SIZE - MARGIN - plot * (v / axis_max).clamp(0.0, 1.0);

    let title = match cell {
        Some(c) => format!(
            "{} {} nm {}",
            c.model.label(),
            format_resolution(c.resolution_nm),
            c.variant.tag()
        ),
        None => "no results".to_string(),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{title}</text>"#,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = axis_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#,
            sx(v),
            SIZE - MARGIN + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#,
            MARGIN - 8.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 4"/>"#,
        sx(0.0),
        sy(0.0),
        sx(axis_max),
        sy(axis_max)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">measured chlorophyll-a (µg/L)</text>"#,
        SIZE / 2.0,
        SIZE - 25.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">estimated chlorophyll-a (µg/L)</text>"#,
        SIZE / 2.0
    );
    for (status, color) in [
        (WaterStatus::Natural, NATURAL_COLOR),
        (WaterStatus::Artificial, ARTIFICIAL_COLOR),
    ] {
        let _ = writeln!(
            s,
            r#"<g id="{}" class="series" fill="{color}" fill-opacity="0.7">"#,
            status.as_str()
        );
        for p in points.iter().filter(|p| p.status == status) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
                sx(p.measured),
                sy(p.estimated)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let legend_y = MARGIN + 16.0;
    for (i, (label, color)) in [
        ("natural waters", NATURAL_COLOR),
        ("artificial ponds", ARTIFICIAL_COLOR),
    ]
    .iter()
    .enumerate()
    {
        let y = legend_y + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            MARGIN + 14.0,
            y,
            MARGIN + 24.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

// --------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub results: PathBuf,
    pub report: ReportSummary,
    pub rows: Vec<ResultRow>,
    pub stats: PreprocessStats,
}

/// The whole experiment matrix in `work_dir`: `data/` (simulated campaign),
/// `datasets/`, `models/` (model files and CV traces), `results.csv`,
/// `predictions.csv` and `report/`.
pub fn cmd_run(cfg: &ExperimentConfig, work_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let kinds = cfg.model_kinds()?;
    let data = work_dir.join("data");
    let datasets = work_dir.join("datasets");
    let models = work_dir.join("models");
    let results = work_dir.join("results.csv");

    cmd_simulate(cfg, &data)?;
    let pre = cmd_preprocess(cfg, &data, &datasets)?;
    let mut rows = Vec::new();
    for file in &pre.files {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("dataset_"))
            .unwrap_or("cell")
            .to_string();
        for &kind in &kinds {
            let model = models.join(format!("{}_{stem}.json", kind.tag()));
            cmd_train(cfg, kind, file, &model)?;
            rows.push(cmd_evaluate(&model, file, &results, Subset::Test)?);
        }
    }
    let report = cmd_report(&results, &work_dir.join("report"), None)?;
    Ok(RunSummary {
        results,
        report,
        rows,
        stats: pre.stats,
    })
}
