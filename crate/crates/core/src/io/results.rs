//! Sweep results as CSV, one row per (mapper, calibration subset, test depth).

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::evaluation::{ErrorRecord, SweepResult};

pub const COLUMNS: [&str; 8] = [
    "mapper",
    "k",
    "calib_subset",
    "test_depth_m",
    "n_targets",
    "mean_error_deg",
    "std_error_deg",
    "status",
];

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("no records to export")]
    EmptySweep,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn row(record: &ErrorRecord) -> [String; 8] {
    let subset = record
        .calibration_depths
        .iter()
        .map(|d| d.meters().to_string())
        .collect::<Vec<_>>()
        .join(";");
    let (n, mean, std, status) = match record.stats() {
        Some(s) => (
            s.errors.len().to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            "ok",
        ),
        None => (String::new(), String::new(), String::new(), "failed"),
    };
    [
        record.mapper.to_string(),
        record.k().to_string(),
        subset,
        record.test_depth.meters().to_string(),
        n,
        mean,
        std,
        status.to_string(),
    ]
}

/// Writes the header and one row per record, in the sweep's (sorted) order.
pub fn write_results_csv<W: Write>(sweep: &SweepResult, out: W) -> Result<(), ResultsError> {
    if sweep.records.is_empty() {
        return Err(ResultsError::EmptySweep);
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(COLUMNS)?;
    for record in &sweep.records {
        writer.write_record(row(record))?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_results_csv(sweep: &SweepResult, path: &Path) -> Result<(), ResultsError> {
    let file = File::create(path).map_err(|source| ResultsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_results_csv(sweep, io::BufWriter::new(file))
}
