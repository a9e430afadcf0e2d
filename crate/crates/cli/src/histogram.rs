//! Equal-width histograms of per-population scores for plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{io_data, CliError, CliResult};
use crate::report::fmt17;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning the pooled min and max.
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

/// Reads a `population,score` CSV into per-population score lists.
pub fn read_scores(path: &Path) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_data(path, e))?;
    let header = rdr.headers().map_err(|e| io_data(path, e))?.clone();
    if header.len() != 2 || &header[0] != "population" || &header[1] != "score" {
        return Err(CliError::Data(format!(
            "{}: expected header \"population,score\"",
            path.display()
        )));
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_data(path, e))?;
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| CliError::Data(format!("{} row {}: {e}", path.display(), line + 1)))?;
        if !v.is_finite() {
            return Err(CliError::Data(format!(
                "{} row {}: non-finite score",
                path.display(),
                line + 1
            )));
        }
        out.entry(rec[0].to_string()).or_default().push(v);
    }
    Ok(out)
}

pub fn histogram(scores: &BTreeMap<String, Vec<f64>>, bins: usize) -> CliResult<Histogram> {
    if bins < 1 {
        return Err(CliError::Config("bins must be at least 1".into()));
    }
    let all = scores.values().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if scores.values().any(Vec::is_empty) || !lo.is_finite() {
        return Err(CliError::Data(
            "every population needs at least one score".into(),
        ));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let counts = scores
        .iter()
        .map(|(name, vals)| {
            let mut c = vec![0; bins];
            for &v in vals {
                let b = if width > 0.0 {
                    (((v - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                c[b] += 1;
            }
            (name.clone(), c)
        })
        .collect();
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("population,bin,lower,upper,count\n");
        for (name, counts) in &self.counts {
            for (b, c) in counts.iter().enumerate() {
                s.push_str(&format!(
                    "{name},{b},{},{},{c}\n",
                    fmt17(self.edges[b]),
                    fmt17(self.edges[b + 1])
                ));
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_data(parent, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| io_data(path, e))
    }
}
