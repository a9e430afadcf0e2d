//! One-dimensional comparison of the Fisher-Rao score against Mahalanobis.
//!
//! The Fisher-Rao score of a point `x` is `ρ((x, σ₁), (μ′, σ′))`, the distance
//! from the point (modeled with the in-distribution deviation) to the Gaussian
//! fitted on a separate pseudo-OOD sample. Larger means more in-distribution.
//! The Mahalanobis score is `|x − μ₁| / σ₁`, smaller meaning in-distribution.

use std::fs;
use std::path::Path;

use igeood::datastore::{gen_toy1d, ToySpec};
use igeood::eval::{auroc, Orientation};
use igeood::geometry::{fr_gauss_1d, Gauss1D};
use igeood::stats::SIGMA_FLOOR;
use serde::{Deserialize, Serialize};

use crate::error::{io_data, CliError, CliResult};
use crate::histogram::histogram;

/// Mixed into the seed of the pseudo-OOD draw.
const PSEUDO_OOD_SEED: u64 = 0x5eed_0001;
pub const OOD_SETS: [&str; 2] = ["ood_a", "ood_b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub score: String,
    pub ood_set: String,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub spec: ToySpec,
    pub rows: Vec<ToyRow>,
}

impl ToyReport {
    pub fn auroc(&self, score: &str, ood_set: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.score == score && r.ood_set == ood_set)
            .map(|r| r.auroc)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt().max(SIGMA_FLOOR))
}

/// In- and out-scores of one (score, OOD set) pair.
pub struct ScorePair {
    pub score: &'static str,
    pub ood_set: &'static str,
    pub orientation: Orientation,
    pub ins: Vec<f64>,
    pub outs: Vec<f64>,
}

pub fn toy_scores(spec: &ToySpec) -> CliResult<Vec<ScorePair>> {
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if spec.n < 2 {
        return Err(CliError::Config(
            "toy needs n >= 2 samples per population".into(),
        ));
    }
    let sets = gen_toy1d::<f64>(spec)?;
    let pseudo = gen_toy1d::<f64>(&ToySpec {
        seed: spec.seed ^ PSEUDO_OOD_SEED,
        ..spec.clone()
    })?;
    let (mu1, s1) = mean_std(&sets.in_dist);
    let maha = |v: &[f64]| v.iter().map(|x| (x - mu1).abs() / s1).collect::<Vec<f64>>();
    let fr = |v: &[f64], (m, s): (f64, f64)| -> CliResult<Vec<f64>> {
        let target = Gauss1D::new(m, s)?;
        v.iter()
            .map(|&x| Ok(fr_gauss_1d(Gauss1D::new(x, s1)?, target)?))
            .collect()
    };

    let mut pairs = Vec::new();
    for (name, outs, reference) in [
        (OOD_SETS[0], &sets.ood_a, &pseudo.ood_a),
        (OOD_SETS[1], &sets.ood_b, &pseudo.ood_b),
    ] {
        let r = mean_std(reference);
        pairs.push(ScorePair {
            score: "fisher_rao",
            ood_set: name,
            orientation: Orientation::HigherIsIn,
            ins: fr(&sets.in_dist, r)?,
            outs: fr(outs, r)?,
        });
        pairs.push(ScorePair {
            score: "mahalanobis",
            ood_set: name,
            orientation: Orientation::LowerIsIn,
            ins: maha(&sets.in_dist),
            outs: maha(outs),
        });
    }
    Ok(pairs)
}

pub fn run_toy(spec: &ToySpec, out: Option<&Path>, bins: usize) -> CliResult<ToyReport> {
    let pairs = toy_scores(spec)?;
    let rows = pairs
        .iter()
        .map(|p| {
            Ok(ToyRow {
                score: p.score.into(),
                ood_set: p.ood_set.into(),
                auroc: auroc(&p.ins, &p.outs, p.orientation)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = ToyReport {
        spec: spec.clone(),
        rows,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_data(dir, e))?;
        for p in &pairs {
            let pops = [
                ("in".to_string(), p.ins.clone()),
                (p.ood_set.to_string(), p.outs.clone()),
            ]
            .into_iter()
            .collect();
            histogram(&pops, bins)?
                .write(&dir.join(format!("hist_{}_{}.csv", p.score, p.ood_set)))?;
        }
        let path = dir.join("toy_report.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&report).expect("serializable"),
        )
        .map_err(|e| io_data(&path, e))?;
    }
    Ok(report)
}
