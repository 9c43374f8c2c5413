//! Plot-ready tables written as comma-separated files, plus readers so
//! every exported file can be loaded back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ccm::MatchPair;
use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::harness::analysis::{loss_histograms, loss_separation, mismatch_rates};
use crate::trainer::{ModelId, RunLog};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// One matched pair of one epoch, flattened for tabular export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingRow {
    pub epoch: usize,
    /// Model whose matching this is (the consumer for cross-model rows).
    pub model: String,
    /// `cross-modal`, or `cross-model-V` / `cross-model-I`.
    pub kind: String,
    pub p: usize,
    pub q: usize,
    pub round: u32,
    pub cost: f64,
}

pub fn matching_rows(log: &RunLog) -> Vec<MatchingRow> {
    let mut rows = Vec::new();
    let mut push = |epoch: usize, model: ModelId, kind: String, pairs: &[MatchPair]| {
        rows.extend(pairs.iter().map(|p| MatchingRow {
            epoch,
            model: format!("{model:?}"),
            kind: kind.clone(),
            p: p.p,
            q: p.q,
            round: p.round,
            cost: p.cost,
        }));
    };
    for e in &log.epochs {
        for m in &e.models {
            if let Some(mt) = &m.cross_modal {
                push(e.epoch, m.model, "cross-modal".into(), &mt.pairs);
            }
            if let Some(per) = &m.cross_model {
                for md in Modality::ALL {
                    push(
                        e.epoch,
                        m.model,
                        format!("cross-model-{}", md.tag()),
                        &per.get(md).pairs,
                    );
                }
            }
        }
    }
    rows
}

/// Write `histograms.csv`, `separation.csv`, `mismatch.csv` and
/// `matchings.csv` under `dir`. Diagnostics that the log cannot support
/// (for example mismatch rates of a run without matchings) are skipped
/// with a warning. Returns the files written.
pub fn export_run(
    log: &RunLog,
    dataset: &Dataset,
    dir: &Path,
    bins: usize,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let hist = dir.join("histograms.csv");
    write_csv(&hist, &loss_histograms(log, dataset, bins)?)?;
    written.push(hist);
    let sep = dir.join("separation.csv");
    write_csv(&sep, &loss_separation(log, dataset)?)?;
    written.push(sep);
    match mismatch_rates(log, dataset) {
        Ok(rows) => {
            let p = dir.join("mismatch.csv");
            write_csv(&p, &rows)?;
            written.push(p);
        }
        Err(Error::MissingDiagnostics(why)) => log::warn!("mismatch rates skipped: {why}"),
        Err(e) => return Err(e),
    }
    let matchings = matching_rows(log);
    if !matchings.is_empty() {
        let p = dir.join("matchings.csv");
        write_csv(&p, &matchings)?;
        written.push(p);
    }
    Ok(written)
}
