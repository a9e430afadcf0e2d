use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_data, CliResult};

pub const CSV_HEADER: [&str; 8] = [
    "scorer",
    "ood_set",
    "tnr_at_tpr95",
    "auroc",
    "aupr",
    "delta",
    "temperature",
    "eps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scorer: String,
    pub ood_set: String,
    pub tnr_at_tpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub delta: f64,
    pub temperature: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub temperature: f64,
    pub eps: f64,
    pub objective: Option<f64>,
    pub validation_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub setting: String,
    pub seed: u64,
    pub tuning: Tuning,
    pub ensemble_columns: Vec<String>,
    pub ensemble_alpha: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl Report {
    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| crate::error::CliError::Data(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.scorer.clone(),
                r.ood_set.clone(),
                fmt17(r.tnr_at_tpr95),
                fmt17(r.auroc),
                fmt17(r.aupr),
                fmt17(r.delta),
                fmt17(r.temperature),
                fmt17(r.eps),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::error::CliError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| io_data(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("serializable report");
        let jp = dir.join("report.json");
        fs::write(&jp, json).map_err(|e| io_data(&jp, e))?;
        let cp = dir.join("report.csv");
        fs::write(&cp, self.to_csv()?).map_err(|e| io_data(&cp, e))?;
        Ok(())
    }

    pub fn row(&self, scorer: &str, ood_set: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.scorer == scorer && r.ood_set == ood_set)
    }
}

/// Checks a parsed report.csv: header, column count, parseable numbers,
/// metrics in `[0, 1]` and finite thresholds.
pub fn validate_csv(text: &str) -> Result<usize, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| -> Result<f64, String> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| format!("column {}: {e}", CSV_HEADER[i]))
        };
        for (i, name) in CSV_HEADER.iter().enumerate().skip(2) {
            let v = num(i)?;
            if i < 5 && !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
            if !v.is_finite() {
                return Err(format!("{name} not finite"));
            }
        }
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, 0.95] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }
}
