use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{prop3_storage_bound, RateProfile};
use crate::block::NodeId;

use super::config::SimConfig;
use super::metrics::Metrics;
use super::sweep::SweepResult;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json error in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// Provenance written next to every export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub code_version: String,
}

impl Manifest {
    pub fn new(config: &SimConfig) -> Manifest {
        Manifest {
            config: config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MetricsDocument {
    manifest: Manifest,
    metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageRow {
    pub slot: u32,
    pub node: NodeId,
    pub s_bits: u64,
    pub h_bits: u64,
    pub total_bits: u64,
    pub prop3_bound: u128,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRow {
    pub slot: u32,
    pub node: NodeId,
    pub construct_bits: u64,
    pub consensus_bits: u64,
    pub msgs_tx: u64,
    pub msgs_rx: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub value: u64,
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: usize,
    pub fraction: f64,
    pub slot: u32,
    pub failure_prob: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExportError> {
    let csv_err = |source| ExportError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(io_err(path))?));
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExportError> {
    let csv_err = |source| ExportError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path).map_err(io_err(path))?));
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

pub fn storage_rows(metrics: &Metrics, rates: &RateProfile) -> Vec<StorageRow> {
    metrics
        .records
        .iter()
        .map(|r| {
            let bound = prop3_storage_bound(u64::from(r.slot) + 1, rates, r.node)
                .map(|b| b.floor().to_integer())
                .unwrap_or(0);
            let total = r.storage_bits();
            StorageRow {
                slot: r.slot,
                node: r.node,
                s_bits: r.s_bits,
                h_bits: r.h_bits,
                total_bits: total,
                prop3_bound: bound,
                ok: u128::from(total) <= bound,
            }
        })
        .collect()
}

pub fn comm_rows(metrics: &Metrics) -> Vec<CommRow> {
    metrics
        .records
        .iter()
        .map(|r| CommRow {
            slot: r.slot,
            node: r.node,
            construct_bits: r.construct_bits,
            consensus_bits: r.consensus_bits,
            msgs_tx: r.msgs_tx,
            msgs_rx: r.msgs_rx,
        })
        .collect()
}

/// Empirical CDF over the given per-node values.
pub fn cdf(mut values: Vec<u64>) -> Vec<CdfRow> {
    values.sort_unstable();
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| CdfRow { value: v, cumulative: (i + 1) as f64 / n })
        .collect()
}

/// Writes per-node storage and communication series, CDF tables over the
/// final slot, and a JSON document with a manifest. Returns written paths.
pub fn export_metrics(
    metrics: &Metrics,
    config: &SimConfig,
    rates: &RateProfile,
    dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if matches!(format, Format::Csv | Format::Both) {
        let p = dir.join("storage.csv");
        write_csv(&p, storage_rows(metrics, rates))?;
        written.push(p);
        let p = dir.join("comm.csv");
        write_csv(&p, comm_rows(metrics))?;
        written.push(p);
        let last = metrics.final_records();
        let p = dir.join("cdf_storage.csv");
        write_csv(&p, cdf(last.iter().map(|r| r.storage_bits()).collect()))?;
        written.push(p);
        let p = dir.join("cdf_comm.csv");
        write_csv(&p, cdf(last.iter().map(|r| r.communication_bits()).collect()))?;
        written.push(p);
    }
    if matches!(format, Format::Json | Format::Both) {
        let p = dir.join("metrics.json");
        let doc = MetricsDocument { manifest: Manifest::new(config), metrics: metrics.clone() };
        let f = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
        serde_json::to_writer(f, &doc).map_err(|source| ExportError::Json { path: p.clone(), source })?;
        written.push(p);
    }
    let p = dir.join("config.toml");
    fs::write(&p, config.to_config_text()).map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}

pub fn import_metrics_json(path: &Path) -> Result<(Manifest, Metrics), ExportError> {
    let f = BufReader::new(File::open(path).map_err(io_err(path))?);
    let doc: MetricsDocument =
        serde_json::from_reader(f).map_err(|source| ExportError::Json { path: path.to_path_buf(), source })?;
    Ok((doc.manifest, doc.metrics))
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for p in &result.points {
        for (slot, &f) in p.curve.iter().enumerate() {
            rows.push(SweepRow { gamma: p.gamma, fraction: p.fraction, slot: slot as u32, failure_prob: f });
        }
    }
    rows
}

pub fn export_sweep(result: &SweepResult, config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("sweep.csv");
    write_csv(&p, sweep_rows(result))?;
    let j = dir.join("sweep.json");
    let doc = serde_json::json!({ "manifest": Manifest::new(config), "sweep": result });
    fs::write(&j, serde_json::to_vec(&doc).expect("serializable")).map_err(io_err(&j))?;
    let c = dir.join("config.toml");
    fs::write(&c, config.to_config_text()).map_err(io_err(&c))?;
    Ok(vec![p, j, c])
}
