//! On-disk formats: dataset and history CSVs, model, surface and metric JSON.
//! Floats are written in shortest round-trip form, so re-reading a file gives
//! back the exact in-memory values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use switchid_core::bilevel::IterationRecord;
use switchid_core::{
    Dataset, ModeBook, ModeDynamics, MonomialBasis, Provenance, Sample, SurfaceSet, SwitchingSystemModel,
};

use crate::config::IdentifyConfig;
use crate::error::{CliError, Result};

/// `# key: value` lines written above every CSV header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvMeta(pub Vec<(String, String)>);

impl CsvMeta {
    pub fn new(config_sha256: &str, seed: u64) -> Self {
        CsvMeta(vec![
            ("config_sha256".into(), config_sha256.into()),
            ("seed".into(), seed.to_string()),
        ])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, meta: &CsvMeta, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| CliError::io(path, e);
    for (k, v) in &meta.0 {
        writeln!(out, "# {k}: {v}").map_err(io)?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| CliError::format(path, e);
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_meta(text: &str) -> CsvMeta {
    CsvMeta(
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| l.trim_start_matches('#').trim().split_once(':'))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect(),
    )
}

pub fn dataset_header(n: usize) -> Vec<String> {
    (1..=n)
        .map(|k| format!("z_{k}"))
        .chain((1..=n).map(|k| format!("zdot_{k}")))
        .chain(std::iter::once("true_mode".to_string()))
        .collect()
}

pub fn write_dataset(path: &Path, dataset: &Dataset, meta: &CsvMeta) -> Result<()> {
    let rows: Vec<Vec<String>> = dataset
        .samples()
        .iter()
        .map(|s| {
            s.z.iter()
                .chain(&s.zdot)
                .map(|v| v.to_string())
                .chain(std::iter::once(s.true_mode.map_or(0, |j| j + 1).to_string()))
                .collect()
        })
        .collect();
    write_csv(path, meta, &dataset_header(dataset.n()), &rows)
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, CsvMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let meta = read_meta(&text);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header.len().is_multiple_of(2) {
        return Err(CliError::format(path, format!("unexpected header {header:?}")));
    }
    let n = (header.len() - 1) / 2;
    if header != dataset_header(n) {
        return Err(CliError::format(
            path,
            format!("header {header:?} does not match {:?}", dataset_header(n)),
        ));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::format(path, e))?;
        let bad = |col: usize, what: &str| CliError::format(path, format!("data row {}, column {}: {what}", row + 1, header[col]));
        let mut values = Vec::with_capacity(2 * n);
        for col in 0..2 * n {
            let v: f64 = record[col].trim().parse().map_err(|_| bad(col, "not a number"))?;
            values.push(v);
        }
        let mode: usize = record[2 * n].trim().parse().map_err(|_| bad(2 * n, "not a non-negative integer"))?;
        let zdot = values.split_off(n);
        samples.push(Sample::new(values, zdot, mode.checked_sub(1)));
    }
    let provenance = Provenance {
        seed: meta.get("seed").and_then(|s| s.parse().ok()),
        generator: meta.get("generator").unwrap_or("external").to_string(),
    };
    let dataset = Dataset::new(samples, provenance).map_err(|e| CliError::format(path, e))?;
    Ok((dataset, meta))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const HISTORY_COLUMNS: [&str; 7] = [
    "iteration",
    "cost",
    "mismatch_prev",
    "mismatch_truth",
    "tightness_ratio",
    "assign_seconds",
    "fit_seconds",
];

pub fn write_history(path: &Path, history: &[IterationRecord], meta: &CsvMeta) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.cost.to_string(),
                opt(r.mismatch_prev),
                opt(r.mismatch_truth),
                opt(r.tightness_ratio),
                r.assign_seconds.to_string(),
                r.fit_seconds.to_string(),
            ]
        })
        .collect();
    let header: Vec<String> = HISTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_csv(path, meta, &header, &rows)
}

/// One row per grid point: time, true state, identified state, error norm.
pub fn write_rollout(
    path: &Path,
    times: &[f64],
    true_states: &[Vec<f64>],
    identified_states: &[Vec<f64>],
    errors: &[f64],
    meta: &CsvMeta,
) -> Result<()> {
    let n = true_states.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=n).map(|k| format!("true_z_{k}")))
        .chain((1..=n).map(|k| format!("identified_z_{k}")))
        .chain(std::iter::once("error_norm".to_string()))
        .collect();
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(i, t)| {
            std::iter::once(t.to_string())
                .chain(true_states[i].iter().map(f64::to_string))
                .chain(identified_states[i].iter().map(f64::to_string))
                .chain(std::iter::once(errors[i].to_string()))
                .collect()
        })
        .collect();
    write_csv(path, meta, &header, &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::format(path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e))
}

pub const MODEL_FORMAT: &str = "switchid-model";
pub const SURFACES_FORMAT: &str = "switchid-surfaces";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub degree: usize,
    pub num_modes: usize,
    /// Coefficient matrices, one row per state coordinate.
    pub modes: Vec<Vec<Vec<f64>>>,
    pub relaxation: String,
    pub stop: String,
    pub iterations: usize,
    pub final_cost: f64,
    pub identify: IdentifyConfig,
}

impl ModelFile {
    pub fn to_model(&self) -> Result<SwitchingSystemModel> {
        if self.format != MODEL_FORMAT {
            return Err(CliError::Config(format!("not a model file (format {:?})", self.format)));
        }
        let basis = MonomialBasis::new(self.n, self.degree)?;
        let modes = self
            .modes
            .iter()
            .map(|rows| ModeDynamics::from_rows(rows))
            .collect::<switchid_core::Result<Vec<_>>>()?;
        if modes.len() != self.num_modes {
            return Err(CliError::Config(format!(
                "model declares {} modes but lists {}",
                self.num_modes,
                modes.len()
            )));
        }
        Ok(SwitchingSystemModel::new(basis, modes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalFile {
    /// Open lower end.
    pub lo: f64,
    /// Closed upper end.
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacesFile {
    pub format: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub degree: usize,
    pub modebook: Vec<Vec<i8>>,
    /// Surface coefficients scaled so the largest magnitude is 1.
    pub coefficients: Vec<Vec<f64>>,
    pub certificate_t: f64,
    pub certificate_per_surface: Vec<f64>,
    pub admissible_epsilon: Option<IntervalFile>,
    pub epsilon: f64,
    pub beta: f64,
    pub eta: f64,
    pub total_slack: f64,
    pub l1_norms: Vec<f64>,
    pub objective: f64,
}

impl SurfacesFile {
    pub fn to_parts(&self) -> Result<(SurfaceSet, ModeBook)> {
        if self.format != SURFACES_FORMAT {
            return Err(CliError::Config(format!("not a surfaces file (format {:?})", self.format)));
        }
        let basis = MonomialBasis::new(self.n, self.degree)?;
        Ok((
            SurfaceSet::new(basis, self.coefficients.clone())?,
            ModeBook::new(self.modebook.clone())?,
        ))
    }
}
