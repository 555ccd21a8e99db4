//! File-backed store for uploaded datasets and benchmark runs.
//!
//! ```text
//! <root>/datasets/<dataset_id>/manifest.json
//!                             /data.<ext>        uploaded bytes, verbatim
//!                             /series.json       parsed CGM series (CGM kinds)
//!                             /summary.json      CgmSummary (CGM kinds)
//! <root>/runs/<run_id>/manifest.json
//!                     /report.json
//!                     /report.csv
//!                     /models/<model>.json      trained on the first seed's split
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use glucotwin_core::eval::{run_benchmark, split, BenchmarkConfig, EvalError, EvalReport, SplitSpec};
use glucotwin_core::ingest::{
    load_tabular, parse_cgm_csv, parse_cgm_xml, summarize, CgmSeries, IngestError, TabularDataset,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const SERIES_FILE: &str = "series.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{what} {id:?} not found")]
    NotFound { what: &'static str, id: String },
    #[error("dataset {id:?} is {actual}, expected {expected}")]
    WrongKind {
        id: String,
        expected: &'static str,
        actual: DatasetKind,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("workspace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("workspace JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WorkspaceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "tabular")]
    Tabular,
    #[serde(rename = "cgm-xml")]
    CgmXml,
    #[serde(rename = "cgm-csv")]
    CgmCsv,
}

impl DatasetKind {
    pub fn is_cgm(self) -> bool {
        !matches!(self, DatasetKind::Tabular)
    }

    fn extension(self) -> &'static str {
        match self {
            DatasetKind::Tabular | DatasetKind::CgmCsv => "csv",
            DatasetKind::CgmXml => "xml",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Tabular => "tabular",
            DatasetKind::CgmXml => "cgm-xml",
            DatasetKind::CgmCsv => "cgm-csv",
        })
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tabular" => Ok(DatasetKind::Tabular),
            "cgm-xml" => Ok(DatasetKind::CgmXml),
            "cgm-csv" => Ok(DatasetKind::CgmCsv),
            other => Err(format!("unknown dataset kind {other:?} (expected tabular, cgm-xml or cgm-csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub kind: DatasetKind,
    /// Lowercase hex SHA-256 of the uploaded bytes.
    pub content_sha256: String,
    pub size_bytes: u64,
    pub source_name: Option<String>,
    pub created_at: String,
    pub data_file: String,
    /// Tabular: rows. CGM: readings kept after validation.
    pub records: usize,
    /// CGM readings dropped as implausible.
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub report_json: String,
    pub report_csv: String,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_id: String,
    pub config: BenchmarkConfig,
    pub seeds: Vec<u64>,
    pub status: RunStatus,
    pub created_at: String,
    pub finished_at: Option<String>,
    pub error: Option<String>,
    pub outputs: Option<RunOutputs>,
}

pub struct Workspace {
    root: PathBuf,
    // serialises id allocation
    index: Mutex<()>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl Workspace {
    /// Opens (creating if needed) a workspace rooted at `root`. Existing
    /// datasets and runs are picked up as-is.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("datasets"))?;
        std::fs::create_dir_all(root.join("runs"))?;
        Ok(Self {
            root,
            index: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    /// Claims the next free `<prefix>-NNNNNN` directory under `parent`.
    fn allocate(&self, parent: &str, prefix: &str) -> Result<(String, PathBuf)> {
        let _guard = self.index.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.root.join(parent);
        let mut next = 1u64;
        for entry in std::fs::read_dir(&dir)? {
            let name = entry?.file_name();
            if let Some(n) = name
                .to_str()
                .and_then(|s| s.strip_prefix(prefix))
                .and_then(|s| s.strip_prefix('-'))
                .and_then(|s| s.parse::<u64>().ok())
            {
                next = next.max(n + 1);
            }
        }
        loop {
            let id = format!("{prefix}-{next:06}");
            let path = dir.join(&id);
            match std::fs::create_dir(&path) {
                Ok(()) => return Ok((id, path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Parses and stores an upload. Nothing is written when parsing fails.
    pub fn add_dataset(
        &self,
        kind: DatasetKind,
        bytes: &[u8],
        source_name: Option<&str>,
    ) -> Result<DatasetManifest> {
        let (records, rejected, series) = match kind {
            DatasetKind::Tabular => (load_tabular(bytes)?.n_rows(), 0, None),
            DatasetKind::CgmXml | DatasetKind::CgmCsv => {
                let parsed = if kind == DatasetKind::CgmXml {
                    parse_cgm_xml(bytes)?
                } else {
                    let patient = source_name
                        .and_then(|n| Path::new(n).file_stem())
                        .and_then(|s| s.to_str())
                        .unwrap_or("patient");
                    parse_cgm_csv(bytes, patient)?
                };
                let n = parsed.series.iter().map(CgmSeries::len).sum();
                (n, parsed.rejected, Some(parsed.series))
            }
        };
        let summary = series.as_deref().map(summarize).transpose()?;

        let (id, dir) = self.allocate("datasets", "ds")?;
        let data_file = format!("data.{}", kind.extension());
        write_atomic(&dir.join(&data_file), bytes)?;
        if let (Some(series), Some(summary)) = (&series, &summary) {
            write_json(&dir.join(SERIES_FILE), series)?;
            write_json(&dir.join(SUMMARY_FILE), summary)?;
        }
        let manifest = DatasetManifest {
            dataset_id: id,
            kind,
            content_sha256: content_hash(bytes),
            size_bytes: bytes.len() as u64,
            source_name: source_name.map(str::to_string),
            created_at: now(),
            data_file,
            records,
            rejected,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }

    pub fn dataset(&self, id: &str) -> Result<DatasetManifest> {
        let path = self.dataset_dir(id).join(MANIFEST_FILE);
        if !valid_id(id) || !path.is_file() {
            return Err(WorkspaceError::NotFound {
                what: "dataset",
                id: id.to_string(),
            });
        }
        read_json(&path)
    }

    pub fn datasets(&self) -> Result<Vec<DatasetManifest>> {
        let mut ids: Vec<String> = std::fs::read_dir(self.root.join("datasets"))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids.iter().filter_map(|id| self.dataset(id).ok()).collect())
    }

    pub fn load_tabular(&self, id: &str) -> Result<TabularDataset> {
        let m = self.dataset(id)?;
        if m.kind != DatasetKind::Tabular {
            return Err(WorkspaceError::WrongKind {
                id: id.to_string(),
                expected: "tabular",
                actual: m.kind,
            });
        }
        Ok(load_tabular(&std::fs::read(self.dataset_dir(id).join(&m.data_file))?)?)
    }

    fn cgm_file(&self, id: &str, file: &str) -> Result<PathBuf> {
        let m = self.dataset(id)?;
        if !m.kind.is_cgm() {
            return Err(WorkspaceError::WrongKind {
                id: id.to_string(),
                expected: "a CGM dataset",
                actual: m.kind,
            });
        }
        Ok(self.dataset_dir(id).join(file))
    }

    pub fn load_cgm(&self, id: &str) -> Result<Vec<CgmSeries>> {
        read_json(&self.cgm_file(id, SERIES_FILE)?)
    }

    /// The persisted summary, byte for byte.
    pub fn cgm_summary_bytes(&self, id: &str) -> Result<Vec<u8>> {
        Ok(std::fs::read(self.cgm_file(id, SUMMARY_FILE)?)?)
    }

    /// Runs the benchmark synchronously and persists the report plus one
    /// serialized model per configured model (trained on the first seed's
    /// training split).
    pub fn train(&self, dataset_id: &str, config: &BenchmarkConfig, seeds: &[u64]) -> Result<RunManifest> {
        if seeds.is_empty() {
            return Err(EvalError::NoSeeds.into());
        }
        let ds = self.load_tabular(dataset_id)?;
        let (run_id, dir) = self.allocate("runs", "run")?;
        let mut manifest = RunManifest {
            run_id,
            dataset_id: dataset_id.to_string(),
            config: config.clone(),
            seeds: seeds.to_vec(),
            status: RunStatus::Running,
            created_at: now(),
            finished_at: None,
            error: None,
            outputs: None,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;

        match Self::execute(&dir, &ds, config, seeds) {
            Ok(outputs) => {
                manifest.status = RunStatus::Finished;
                manifest.outputs = Some(outputs);
                manifest.finished_at = Some(now());
                write_json(&dir.join(MANIFEST_FILE), &manifest)?;
                Ok(manifest)
            }
            Err(e) => {
                manifest.status = RunStatus::Failed;
                manifest.error = Some(e.to_string());
                manifest.finished_at = Some(now());
                write_json(&dir.join(MANIFEST_FILE), &manifest)?;
                Err(e)
            }
        }
    }

    fn execute(dir: &Path, ds: &TabularDataset, config: &BenchmarkConfig, seeds: &[u64]) -> Result<RunOutputs> {
        let report: EvalReport = run_benchmark(ds, config, seeds)?;
        write_atomic(&dir.join(REPORT_JSON_FILE), report.to_json().as_bytes())?;
        write_atomic(&dir.join(REPORT_CSV_FILE), report.to_csv().as_bytes())?;

        let models_dir = dir.join("models");
        std::fs::create_dir_all(&models_dir)?;
        let (train, _) = split(
            ds,
            &SplitSpec {
                train_fraction: config.train_fraction,
                seed: seeds[0],
            },
        )?;
        let mut models = Vec::with_capacity(config.models.len());
        for m in &config.models {
            let trained = m.train(&train, seeds[0])?;
            let rel = format!("models/{}.json", m.name());
            write_atomic(&dir.join(&rel), trained.to_json().as_bytes())?;
            models.push(rel);
        }
        Ok(RunOutputs {
            report_json: REPORT_JSON_FILE.to_string(),
            report_csv: REPORT_CSV_FILE.to_string(),
            models,
        })
    }

    pub fn run(&self, id: &str) -> Result<RunManifest> {
        let path = self.run_dir(id).join(MANIFEST_FILE);
        if !valid_id(id) || !path.is_file() {
            return Err(WorkspaceError::NotFound {
                what: "run",
                id: id.to_string(),
            });
        }
        read_json(&path)
    }

    /// The persisted report of a finished run, byte for byte.
    pub fn report_bytes(&self, run_id: &str, file: &str) -> Result<Vec<u8>> {
        let m = self.run(run_id)?;
        if m.status != RunStatus::Finished {
            return Err(WorkspaceError::NotFound {
                what: "finished run",
                id: run_id.to_string(),
            });
        }
        Ok(std::fs::read(self.run_dir(run_id).join(file))?)
    }

    pub fn model_path(&self, run_id: &str, model: &str) -> Result<PathBuf> {
        let path = self.run_dir(run_id).join("models").join(format!("{model}.json"));
        if !valid_id(run_id) || !model.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') || !path.is_file() {
            return Err(WorkspaceError::NotFound {
                what: "model",
                id: format!("{run_id}/{model}"),
            });
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_is_lowercase_hex() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn ids_are_sequential_and_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let a = ws.add_dataset(DatasetKind::Tabular, glucotwin_core::BENCHMARK_CSV.as_bytes(), None).unwrap();
        let b = ws.add_dataset(DatasetKind::Tabular, glucotwin_core::BENCHMARK_CSV.as_bytes(), None).unwrap();
        assert_eq!(a.dataset_id, "ds-000001");
        assert_eq!(b.dataset_id, "ds-000002");
        assert_eq!(a.content_sha256, b.content_sha256);
        drop(ws);
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.dataset("ds-000002").unwrap(), b);
        let c = ws.add_dataset(DatasetKind::Tabular, glucotwin_core::BENCHMARK_CSV.as_bytes(), None).unwrap();
        assert_eq!(c.dataset_id, "ds-000003");
        assert_eq!(ws.datasets().unwrap().len(), 3);
    }

    #[test]
    fn failed_parse_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(ws.add_dataset(DatasetKind::CgmXml, b"<patient id=\"1\"></glucose_level>", None).is_err());
        assert!(ws.datasets().unwrap().is_empty());
    }

    #[test]
    fn path_traversal_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(matches!(ws.dataset("../runs"), Err(WorkspaceError::NotFound { .. })));
        assert!(matches!(ws.run(".."), Err(WorkspaceError::NotFound { .. })));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let m = ws.add_dataset(DatasetKind::Tabular, glucotwin_core::BENCHMARK_CSV.as_bytes(), None).unwrap();
        assert!(matches!(ws.load_cgm(&m.dataset_id), Err(WorkspaceError::WrongKind { .. })));
    }
}
