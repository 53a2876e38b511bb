//! Artifact writers. Every file is written to a temporary sibling and renamed
//! into place.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RunLog;

pub const STEP_CSV_HEADER: &str = "t,cost,cum_regret,state_norm,policy_id,est_error,lambda_min_v,optimistic";

/// One row of the per-step CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub cost: f64,
    pub cum_regret: f64,
    pub state_norm: f64,
    pub policy_id: usize,
    pub est_error: Option<f64>,
    pub lambda_min_v: Option<f64>,
    pub optimistic: Option<bool>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::NumericalFailure(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// The per-step trace of a run as CSV bytes.
pub fn step_csv(log: &RunLog) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &log.records {
        w.serialize(StepRow {
            t: r.t,
            cost: r.cost,
            cum_regret: r.cum_regret,
            state_norm: r.state_norm,
            policy_id: r.policy_id,
            est_error: r.est_error,
            lambda_min_v: r.lambda_min_v,
            optimistic: r.optimistic,
        })
        .map_err(|e| Error::NumericalFailure(format!("csv: {e}")))?;
    }
    if log.records.is_empty() {
        w.write_record(STEP_CSV_HEADER.split(','))
            .map_err(|e| Error::NumericalFailure(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::NumericalFailure(format!("csv: {e}")))
}

/// Reads a per-step CSV written by [`step_csv`].
pub fn read_step_csv(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let header = r
        .headers()
        .map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != STEP_CSV_HEADER {
        return Err(Error::Config {
            path: path.display().to_string(),
            message: format!("unexpected header '{header}'"),
        });
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}
