//! Flat CSV files exchanged between commands, and the model file.
//!
//! See `docs/formats.md` for the byte-level layout of every file.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::models::{ModelKind, TrainedModel};
use crate::pipeline::DatasetCell;
use crate::preprocess::{LabeledSample, ReferenceSample, WaterStatus};
use crate::spectra::{RawSpectrum, Variant, WavelengthGrid, BAND_ANCHOR_NM};
use crate::tuning::CvPlan;

pub const SPECTRA_FILE: &str = "spectra.csv";
pub const REFERENCES_FILE: &str = "references.csv";
pub const MODEL_FORMAT: &str = "chla-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    let raw = record.get(i).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {name} '{raw}'")))
}

fn finite(path: &Path, line: u64, record: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, line, record, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("non-finite {name}")))
    }
}

type NumberedRecord = (u64, csv::StringRecord);

/// Iterates over data records after the header, with 1-based line numbers.
fn records(
    path: &Path,
    rdr: &mut csv::Reader<BufReader<File>>,
) -> Result<Option<(csv::StringRecord, Vec<NumberedRecord>)>> {
    let mut all = rdr.records();
    let header = match all.next() {
        None => return Ok(None),
        Some(r) => r.map_err(|e| csv_err(path, e))?,
    };
    let mut rows = Vec::new();
    for r in all {
        let r = r.map_err(|e| csv_err(path, e))?;
        let line = r.position().map(|p| p.line()).unwrap_or(0);
        if r.len() == 1 && r.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push((line, r));
    }
    Ok(Some((header, rows)))
}

fn expect_columns(path: &Path, line: u64, record: &csv::StringRecord, n: usize) -> Result<()> {
    if record.len() == n {
        Ok(())
    } else {
        Err(parse_err(
            path,
            line,
            format!("expected {n} columns, found {}", record.len()),
        ))
    }
}

/// Renders a resolution the way file names and tables show it: `4`, `2.5`.
pub fn format_resolution(res: f64) -> String {
    format!("{res}")
}

pub fn dataset_file_name(resolution_nm: f64, variant: Variant) -> String {
    format!(
        "dataset_{}nm_{}.csv",
        format_resolution(resolution_nm),
        variant.tag()
    )
}

// ---------------------------------------------------------------- spectra

pub fn write_spectra(path: &Path, spectra: &[RawSpectrum]) -> Result<()> {
    let mut out = create(path)?;
    let w = io_err(path);
    let grid = spectra
        .first()
        .map(|s| s.wavelengths().to_vec())
        .unwrap_or_default();
    let mut line = String::from("timestamp");
    for wl in &grid {
        line.push_str(&format!(",wl_{wl:.2}"));
    }
    writeln!(out, "{line}").map_err(io_err(path))?;
    for s in spectra {
        if s.wavelengths() != grid.as_slice() {
            return Err(format_err(
                path,
                "all spectra must share one wavelength grid",
            ));
        }
        line.clear();
        line.push_str(&s.timestamp().to_string());
        for r in s.reflectance() {
            line.push_str(&format!(",{r:.4}"));
        }
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(w)
}

pub fn read_spectra(path: &Path) -> Result<Vec<RawSpectrum>> {
    let mut rdr = reader(path)?;
    let Some((header, rows)) = records(path, &mut rdr)? else {
        return Err(parse_err(path, 1, "missing header"));
    };
    if header.get(0).map(str::trim) != Some("timestamp") || header.len() < 2 {
        return Err(parse_err(path, 1, "header must be 'timestamp,wl_<nm>,...'"));
    }
    let wavelengths = header
        .iter()
        .skip(1)
        .map(|h| {
            h.trim()
                .strip_prefix("wl_")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| parse_err(path, 1, format!("invalid wavelength column '{h}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid =
        Arc::new(WavelengthGrid::new(wavelengths).map_err(|e| parse_err(path, 1, e.to_string()))?);
    rows.into_iter()
        .map(|(line, r)| {
            expect_columns(path, line, &r, header.len())?;
            let t: i64 = field(path, line, &r, 0, "timestamp")?;
            let values = (1..r.len())
                .map(|i| finite(path, line, &r, i, "reflectance"))
                .collect::<Result<Vec<_>>>()?;
            RawSpectrum::new(t, grid.clone(), values)
                .map_err(|e| parse_err(path, line, e.to_string()))
        })
        .collect()
}

// ------------------------------------------------------------- references

const REFERENCE_HEADER: [&str; 4] = ["timestamp", "chl_a_ug_l", "water_body", "status"];

pub fn write_references(path: &Path, refs: &[ReferenceSample]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", REFERENCE_HEADER.join(",")).map_err(io_err(path))?;
    for r in refs {
        writeln!(
            out,
            "{},{},{},{}",
            r.timestamp,
            r.chl_a,
            csv_text(&r.water_body),
            r.status
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// An empty file, or one with only the header, yields no references.
pub fn read_references(path: &Path) -> Result<Vec<ReferenceSample>> {
    let mut rdr = reader(path)?;
    let Some((header, rows)) = records(path, &mut rdr)? else {
        return Ok(Vec::new());
    };
    if header.iter().map(str::trim).ne(REFERENCE_HEADER) {
        return Err(parse_err(
            path,
            1,
            format!("header must be '{}'", REFERENCE_HEADER.join(",")),
        ));
    }
    rows.into_iter()
        .map(|(line, r)| {
            expect_columns(path, line, &r, 4)?;
            let t: i64 = field(path, line, &r, 0, "timestamp")?;
            let chl = finite(path, line, &r, 1, "chl_a_ug_l")?;
            let status = WaterStatus::parse(r[3].trim())
                .ok_or_else(|| parse_err(path, line, format!("invalid status '{}'", &r[3])))?;
            ReferenceSample::new(t, chl, r[2].trim(), status)
                .map_err(|e| parse_err(path, line, e.to_string()))
        })
        .collect()
}

pub(crate) fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------- datasets

/// A dataset file's contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub resolution_nm: f64,
    pub variant: Variant,
    pub positions: Vec<f64>,
    pub samples: Vec<LabeledSample>,
}

impl From<DatasetCell> for Dataset {
    fn from(c: DatasetCell) -> Self {
        Self {
            resolution_nm: c.resolution_nm,
            variant: c.variant,
            positions: c.positions,
            samples: c.samples,
        }
    }
}

/// Writes a dataset; an empty dataset still gets its full header. Feature
/// values use the shortest representation that reads back to the same
/// `f64`.
pub fn write_dataset(path: &Path, cell: &DatasetCell) -> Result<()> {
    let mut out = create(path)?;
    let mut line = String::from("sample_id,water_body,status,chl_a_ug_l");
    for pos in &cell.positions {
        line.push_str(&format!(",b_{pos:.2}"));
    }
    writeln!(out, "{line}").map_err(io_err(path))?;
    for s in &cell.samples {
        line = format!(
            "{},{},{},{}",
            s.sample_id,
            csv_text(&s.water_body),
            s.status,
            s.chl_a
        );
        for v in &s.features {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a dataset file. Resolution and variant come from the band columns
/// (raw bands are labeled by center, derivative bands by the boundary
/// between neighbors); a single-band file falls back to the
/// `dataset_<res>nm_<raw|der>.csv` file name.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let Some((header, rows)) = records(path, &mut rdr)? else {
        return Err(parse_err(path, 1, "missing header"));
    };
    let fixed = ["sample_id", "water_body", "status", "chl_a_ug_l"];
    if header.len() < 5 || header.iter().take(4).map(str::trim).ne(fixed) {
        return Err(parse_err(
            path,
            1,
            "header must be 'sample_id,water_body,status,chl_a_ug_l,b_<nm>,...'",
        ));
    }
    let positions = header
        .iter()
        .skip(4)
        .map(|h| {
            h.trim()
                .strip_prefix("b_")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| parse_err(path, 1, format!("invalid band column '{h}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (resolution_nm, variant) = infer_cell(path, &positions)?;

    let samples = rows
        .into_iter()
        .map(|(line, r)| {
            expect_columns(path, line, &r, header.len())?;
            let chl_a = finite(path, line, &r, 3, "chl_a_ug_l")?;
            let status = WaterStatus::parse(r[2].trim())
                .ok_or_else(|| parse_err(path, line, format!("invalid status '{}'", &r[2])))?;
            Ok(LabeledSample {
                sample_id: field(path, line, &r, 0, "sample_id")?,
                features: (4..r.len())
                    .map(|i| finite(path, line, &r, i, "band value"))
                    .collect::<Result<Vec<_>>>()?,
                chl_a,
                water_body: r[1].trim().to_string(),
                status,
                resolution_nm,
                variant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        resolution_nm,
        variant,
        positions,
        samples,
    })
}

fn infer_cell(path: &Path, positions: &[f64]) -> Result<(f64, Variant)> {
    if positions.len() >= 2 {
        let res = positions[1] - positions[0];
        let offset = (positions[0] - BAND_ANCHOR_NM) / res;
        let res = (res * 100.0).round() / 100.0;
        if (offset - 0.5).abs() < 1e-6 {
            return Ok((res, Variant::Raw));
        }
        if (offset - 1.0).abs() < 1e-6 {
            return Ok((res, Variant::Derivative));
        }
        return Err(parse_err(
            path,
            1,
            "band columns do not match a band layout",
        ));
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.strip_prefix("dataset_")
        .and_then(|s| s.strip_suffix(".csv"))
        .and_then(|s| s.split_once("nm_"))
        .and_then(|(res, var)| Some((res.parse().ok()?, Variant::parse(var)?)))
        .ok_or_else(|| {
            format_err(
                path,
                "cannot tell resolution and variant from a single band; name the file dataset_<res>nm_<raw|der>.csv",
            )
        })
}

// ------------------------------------------------------------------ models

/// How the training subset was drawn from the dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: f64,
    pub seed: u64,
}

/// Grid-search summary stored alongside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub plan: CvPlan,
    pub points: Vec<String>,
    pub mean_rmse_per_point: Vec<f64>,
    pub best: usize,
    pub cv_fits: usize,
}

/// The serialized form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub resolution_nm: f64,
    pub variant: Variant,
    pub feature_positions: Vec<f64>,
    pub split: SplitSpec,
    pub seed: u64,
    pub n_train: usize,
    pub tuning: TuningSummary,
    pub model: TrainedModel,
}

pub fn write_model(path: &Path, m: &ModelFile) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, m).map_err(|e| format_err(path, e.to_string()))?;
    writeln!(out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let file = File::open(path).map_err(io_err(path))?;
    let m: ModelFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| parse_err(path, e.line() as u64, e.to_string()))?;
    if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
        return Err(format_err(
            path,
            format!(
                "unsupported model file '{}' version {} (expected '{MODEL_FORMAT}' version {MODEL_VERSION})",
                m.format, m.version
            ),
        ));
    }
    Ok(m)
}

// ----------------------------------------------------------------- results

pub const RESULTS_HEADER: &str = "model,resolution_nm,variant,seed,subset,n,r2,rmse,mae";
pub const PREDICTIONS_HEADER: &str =
    "model,resolution_nm,variant,seed,subset,sample_id,water_body,status,measured,estimated";

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: ModelKind,
    pub resolution_nm: f64,
    pub variant: Variant,
    pub seed: u64,
    pub subset: String,
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl ResultRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.model.tag(),
            format_resolution(self.resolution_nm),
            self.variant.tag(),
            self.seed,
            self.subset,
            self.n,
            self.r2,
            self.rmse,
            self.mae
        )
    }
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub model: ModelKind,
    pub resolution_nm: f64,
    pub variant: Variant,
    pub seed: u64,
    pub subset: String,
    pub sample_id: usize,
    pub water_body: String,
    pub status: WaterStatus,
    pub measured: f64,
    pub estimated: f64,
}

/// Holds `<file>.lock` for the lifetime of the value. Creation fails if the
/// lock already exists, so concurrent writers fail fast instead of
/// interleaving rows.
#[derive(Debug)]
pub struct FileLock {
    path: PathBuf,
}

impl FileLock {
    pub fn acquire(target: &Path) -> Result<Self> {
        let mut name = target.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(format_err(
                target,
                format!(
                    "locked by another process (remove {} if stale)",
                    path.display()
                ),
            )),
            Err(source) => Err(IoError::Io { path, source }),
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn append_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let fresh = match fs::metadata(path) {
        Ok(m) => m.len() == 0,
        Err(_) => true,
    };
    if !fresh {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        if text.lines().next() != Some(header) {
            return Err(parse_err(path, 1, format!("header must be '{header}'")));
        }
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    if fresh {
        writeln!(out, "{header}").map_err(io_err(path))?;
    }
    for l in lines {
        writeln!(out, "{l}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Appends to `results.csv` and its sibling `predictions.csv` under one lock.
pub fn append_results(
    results: &Path,
    rows: &[ResultRow],
    predictions: &[PredictionRow],
) -> Result<()> {
    let _lock = FileLock::acquire(results)?;
    let lines: Vec<String> = rows.iter().map(ResultRow::to_line).collect();
    append_lines(results, RESULTS_HEADER, &lines)?;
    let lines: Vec<String> = predictions
        .iter()
        .map(|p| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                p.model.tag(),
                format_resolution(p.resolution_nm),
                p.variant.tag(),
                p.seed,
                p.subset,
                p.sample_id,
                csv_text(&p.water_body),
                p.status,
                p.measured,
                p.estimated
            )
        })
        .collect();
    append_lines(&predictions_path(results), PREDICTIONS_HEADER, &lines)
}

pub fn predictions_path(results: &Path) -> PathBuf {
    results.with_file_name("predictions.csv")
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &str) -> Result<()> {
    if header.iter().map(str::trim).ne(expected.split(',')) {
        return Err(parse_err(path, 1, format!("header must be '{expected}'")));
    }
    Ok(())
}

fn kind_field(path: &Path, line: u64, r: &csv::StringRecord) -> Result<ModelKind> {
    ModelKind::parse(r[0].trim())
        .ok_or_else(|| parse_err(path, line, format!("invalid model '{}'", &r[0])))
}

fn variant_field(path: &Path, line: u64, r: &csv::StringRecord) -> Result<Variant> {
    Variant::parse(r[2].trim())
        .ok_or_else(|| parse_err(path, line, format!("invalid variant '{}'", &r[2])))
}

/// Missing or empty file yields no rows.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = reader(path)?;
    let Some((header, rows)) = records(path, &mut rdr)? else {
        return Ok(Vec::new());
    };
    check_header(path, &header, RESULTS_HEADER)?;
    rows.into_iter()
        .map(|(line, r)| {
            expect_columns(path, line, &r, 9)?;
            Ok(ResultRow {
                model: kind_field(path, line, &r)?,
                resolution_nm: finite(path, line, &r, 1, "resolution_nm")?,
                variant: variant_field(path, line, &r)?,
                seed: field(path, line, &r, 3, "seed")?,
                subset: r[4].trim().to_string(),
                n: field(path, line, &r, 5, "n")?,
                r2: field(path, line, &r, 6, "r2")?,
                rmse: field(path, line, &r, 7, "rmse")?,
                mae: field(path, line, &r, 8, "mae")?,
            })
        })
        .collect()
}

/// Missing or empty file yields no rows.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = reader(path)?;
    let Some((header, rows)) = records(path, &mut rdr)? else {
        return Ok(Vec::new());
    };
    check_header(path, &header, PREDICTIONS_HEADER)?;
    rows.into_iter()
        .map(|(line, r)| {
            expect_columns(path, line, &r, 10)?;
            Ok(PredictionRow {
                model: kind_field(path, line, &r)?,
                resolution_nm: finite(path, line, &r, 1, "resolution_nm")?,
                variant: variant_field(path, line, &r)?,
                seed: field(path, line, &r, 3, "seed")?,
                subset: r[4].trim().to_string(),
                sample_id: field(path, line, &r, 5, "sample_id")?,
                water_body: r[6].trim().to_string(),
                status: WaterStatus::parse(r[7].trim())
                    .ok_or_else(|| parse_err(path, line, format!("invalid status '{}'", &r[7])))?,
                measured: finite(path, line, &r, 8, "measured")?,
                estimated: finite(path, line, &r, 9, "estimated")?,
            })
        })
        .collect()
}
