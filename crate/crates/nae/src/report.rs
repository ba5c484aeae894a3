//! Restoration reports as CSV with a JSON mirror carrying the same fields.

use std::path::Path;

use nae_core::eval::RestorationMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{write_file, Error, Result};

/// Flag for rows whose training diverged; their refined-error fields are
/// empty.
pub const DIVERGED: &str = "diverged";
/// Flag for rows trained with overlapping sampling ranges (alpha > 0.5).
pub const OVERLAP: &str = "overlap";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub mean_err_before: f64,
    pub mean_err_after: Option<f64>,
    pub improvement_ratio: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub n_points: usize,
    /// `;`-separated markers, empty when nothing notable happened.
    pub flag: String,
}

impl ReportRow {
    pub fn from_metrics(beta: Option<f64>, alpha: Option<f64>, m: &RestorationMetrics) -> Self {
        Self {
            beta,
            alpha,
            mean_err_before: m.mean_err_before,
            mean_err_after: Some(m.mean_err_after),
            improvement_ratio: m.improvement_ratio,
            p50: Some(m.p50),
            p90: Some(m.p90),
            n_points: m.n_points,
            flag: String::new(),
        }
    }

    /// A row for a run that produced no usable model.
    pub fn diverged(beta: Option<f64>, alpha: Option<f64>, before: f64, n_points: usize) -> Self {
        Self {
            beta,
            alpha,
            mean_err_before: before,
            mean_err_after: None,
            improvement_ratio: None,
            p50: None,
            p90: None,
            n_points,
            flag: DIVERGED.into(),
        }
    }

    pub fn add_flag(&mut self, flag: &str) {
        if !self.flag.is_empty() {
            self.flag.push(';');
        }
        self.flag.push_str(flag);
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flag.split(';').any(|f| f == flag)
    }
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "beta",
        "alpha",
        "mean_err_before",
        "mean_err_after",
        "improvement_ratio",
        "p50",
        "p90",
        "n_points",
        "flag",
    ])
    .and_then(|_| rows.iter().try_for_each(|r| w.serialize(r)))
    .map_err(|e| Error::Usage(format!("cannot format report: {e}")))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Usage(format!("cannot format report: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Usage(format!("malformed report: {e}")))
}

pub fn to_json(rows: &[ReportRow]) -> String {
    let mut out = serde_json::to_string_pretty(rows).expect("report rows serialize");
    out.push('\n');
    out
}

/// Writes `<stem>.csv` and `<stem>.json` beside each other.
pub fn write(csv_path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_file(csv_path, to_csv(rows)?.as_bytes())?;
    write_file(&csv_path.with_extension("json"), to_json(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nae_core::eval::MatchMode;

    fn row() -> ReportRow {
        let m =
            RestorationMetrics::from_errors(&[2.0, 4.0], &[1.0, 2.0], MatchMode::Indexed).unwrap();
        ReportRow::from_metrics(Some(0.4), Some(0.4), &m)
    }

    #[test]
    fn csv_header_and_round_trip() {
        let mut rows = vec![row(), ReportRow::diverged(Some(0.8), None, 3.0, 10)];
        rows[0].add_flag(OVERLAP);
        let text = to_csv(&rows).unwrap();
        assert!(text.starts_with(
            "beta,alpha,mean_err_before,mean_err_after,improvement_ratio,p50,p90,n_points,flag\n"
        ));
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with(",,,,,10,diverged"));
        assert_eq!(from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn json_mirrors_csv_fields() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&[row()])).unwrap();
        let keys: Vec<&str> = v[0]
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        let header = to_csv(&[]).unwrap();
        let mut cols: Vec<&str> = header.trim().split(',').collect();
        let mut keys = keys;
        cols.sort_unstable();
        keys.sort_unstable();
        assert_eq!(keys, cols);
    }

    #[test]
    fn flags_accumulate() {
        let mut r = row();
        assert!(!r.has_flag(DIVERGED));
        r.add_flag(OVERLAP);
        r.add_flag(DIVERGED);
        assert_eq!(r.flag, "overlap;diverged");
        assert!(r.has_flag(DIVERGED));
    }
}
