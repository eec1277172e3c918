//! Per-iteration metrics and timings as CSV.
//!
//! `metrics.csv` has the fixed header
//! `k,regression_loss,classification_loss,suboptimality,mean_u_hat`.
//! Row `k` describes iteration `k`: the fit losses of that iteration and the
//! suboptimality (under `ν`) of the policy it produced. Columns that do not
//! apply are left empty: suboptimality without an exact oracle, `mean_u_hat`
//! for the baselines, the regression loss for DPI. Wall-clock timings live in
//! `timings.csv` (`k,phase,seconds`) so that metrics stay byte-identical
//! across worker widths.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str = "k,regression_loss,classification_loss,suboptimality,mean_u_hat";
pub const TIMINGS_HEADER: &str = "k,phase,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub regression_loss: Option<f64>,
    pub classification_loss: Option<f64>,
    pub suboptimality: Option<f64>,
    pub mean_u_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub k: usize,
    pub phase: String,
    pub seconds: f64,
}

fn to_csv<T: Serialize>(header: &str, rows: &[T]) -> Result<String> {
    // An explicit header keeps empty files well-formed.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8");
    Ok(format!("{header}\n{body}"))
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    to_csv(METRICS_HEADER, rows)
}

pub fn timings_csv(rows: &[TimingRow]) -> Result<String> {
    to_csv(TIMINGS_HEADER, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_metrics_file() {
        let rows = vec![
            MetricsRow {
                k: 0,
                regression_loss: Some(0.5),
                classification_loss: Some(0.0),
                suboptimality: Some(1.25),
                mean_u_hat: Some(3.0),
            },
            MetricsRow { k: 1, regression_loss: None, classification_loss: Some(0.125), suboptimality: None, mean_u_hat: None },
        ];
        let text = metrics_csv(&rows).unwrap();
        assert_eq!(
            text,
            "k,regression_loss,classification_loss,suboptimality,mean_u_hat\n0,0.5,0.0,1.25,3.0\n1,,0.125,,\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        assert_eq!(metrics_csv(&[]).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn timings_file() {
        let text = timings_csv(&[TimingRow { k: 2, phase: "search".into(), seconds: 0.25 }]).unwrap();
        assert_eq!(text, "k,phase,seconds\n2,search,0.25\n");
    }
}
