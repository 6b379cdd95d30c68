//! Result rows and their CSV files.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{HarnessError, Result};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const VALUES_FILE: &str = "values.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const ERRORS_FILE: &str = "errors.csv";

const SUMMARY_HEADER: [&str; 10] = [
    "experiment_id",
    "dataset",
    "valuator",
    "seed",
    "noise_kind",
    "noise_rate",
    "task",
    "metric_name",
    "metric_value",
    "runtime_s",
];
const VALUES_HEADER: [&str; 6] = [
    "experiment_id",
    "valuator",
    "seed",
    "point_index",
    "value",
    "is_noisy",
];
const CURVES_HEADER: [&str; 6] = [
    "experiment_id",
    "valuator",
    "seed",
    "direction",
    "k",
    "performance",
];
const ERRORS_HEADER: [&str; 5] = ["experiment_id", "valuator", "seed", "task", "message"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub dataset: String,
    pub valuator: String,
    pub seed: u64,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub task: String,
    pub metric_name: String,
    pub metric_value: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ValueRow {
    pub experiment_id: String,
    pub valuator: String,
    pub seed: u64,
    pub point_index: usize,
    pub value: f64,
    pub is_noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CurveRow {
    pub experiment_id: String,
    pub valuator: String,
    pub seed: u64,
    pub direction: String,
    pub k: usize,
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ErrorRow {
    pub experiment_id: String,
    pub valuator: String,
    pub seed: u64,
    pub task: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub summary: Vec<SummaryRow>,
    pub values: Vec<ValueRow>,
    pub curves: Vec<CurveRow>,
    pub errors: Vec<ErrorRow>,
    /// Non-fatal messages from the valuators (not written to disk).
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Orders rows by valuator, seed and then task, point or grid position.
    pub fn sort(&mut self) {
        self.summary
            .sort_by(|a, b| (&a.valuator, a.seed, &a.task).cmp(&(&b.valuator, b.seed, &b.task)));
        self.values.sort_by(|a, b| {
            (&a.valuator, a.seed, a.point_index).cmp(&(&b.valuator, b.seed, b.point_index))
        });
        self.curves.sort_by(|a, b| {
            (&a.valuator, a.seed, &a.direction, a.k).cmp(&(&b.valuator, b.seed, &b.direction, b.k))
        });
        self.errors
            .sort_by(|a, b| (&a.valuator, a.seed, &a.task).cmp(&(&b.valuator, b.seed, &b.task)));
    }
}

/// Reals with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `summary.csv`, `values.csv`, `curves.csv` and `errors.csv` into
/// `dir`, creating it if needed. Rows are written in sorted order.
pub fn write_csv(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut report = report.clone();
    report.sort();
    let paths: Vec<PathBuf> = [SUMMARY_FILE, VALUES_FILE, CURVES_FILE, ERRORS_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_rows(
        &paths[0],
        SUMMARY_HEADER,
        report.summary.iter().map(|r| {
            [
                r.experiment_id.clone(),
                r.dataset.clone(),
                r.valuator.clone(),
                r.seed.to_string(),
                r.noise_kind.clone(),
                fmt_real(r.noise_rate),
                r.task.clone(),
                r.metric_name.clone(),
                fmt_real(r.metric_value),
                fmt_real(r.runtime_s),
            ]
        }),
    )?;
    write_rows(
        &paths[1],
        VALUES_HEADER,
        report.values.iter().map(|r| {
            [
                r.experiment_id.clone(),
                r.valuator.clone(),
                r.seed.to_string(),
                r.point_index.to_string(),
                fmt_real(r.value),
                r.is_noisy.to_string(),
            ]
        }),
    )?;
    write_rows(
        &paths[2],
        CURVES_HEADER,
        report.curves.iter().map(|r| {
            [
                r.experiment_id.clone(),
                r.valuator.clone(),
                r.seed.to_string(),
                r.direction.clone(),
                r.k.to_string(),
                fmt_real(r.performance),
            ]
        }),
    )?;
    write_rows(
        &paths[3],
        ERRORS_HEADER,
        report.errors.iter().map(|r| {
            [
                r.experiment_id.clone(),
                r.valuator.clone(),
                r.seed.to_string(),
                r.task.clone(),
                r.message.clone(),
            ]
        }),
    )?;
    Ok(paths)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// Reads the files written by [`write_csv`]; missing curve or error files
/// are treated as empty.
pub fn read_report(dir: impl AsRef<Path>) -> Result<EvalReport> {
    let dir = dir.as_ref();
    let optional = |name: &str| dir.join(name).exists();
    Ok(EvalReport {
        summary: read_rows(&dir.join(SUMMARY_FILE))?,
        values: if optional(VALUES_FILE) {
            read_rows(&dir.join(VALUES_FILE))?
        } else {
            Vec::new()
        },
        curves: if optional(CURVES_FILE) {
            read_rows(&dir.join(CURVES_FILE))?
        } else {
            Vec::new()
        },
        errors: if optional(ERRORS_FILE) {
            read_rows(&dir.join(ERRORS_FILE))?
        } else {
            Vec::new()
        },
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            123456789.012_345_67,
            f64::MIN_POSITIVE,
            0.0,
        ] {
            assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_real(0.5), "5.0000000000000000e-1");
    }
}
