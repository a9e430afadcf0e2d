//! Threshold calibration, binary detectors and detection metrics.
//!
//! Every metric takes `(scores, orientation)` and normalizes internally so
//! that higher means in-distribution. In-distribution is the positive class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Minimum number of in-distribution scores for threshold calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

pub const DEFAULT_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsIn,
    LowerIsIn,
}

impl Orientation {
    /// Maps a raw score to the higher-is-in convention. Self-inverse.
    pub fn normalize<S: Scalar>(self, s: S) -> S {
        match self {
            Orientation::HigherIsIn => s,
            Orientation::LowerIsIn => -s,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherIsIn => Orientation::LowerIsIn,
            Orientation::LowerIsIn => Orientation::HigherIsIn,
        }
    }
}

fn normalized<S: Scalar>(scores: &[S], orientation: Orientation) -> Result<Vec<S>> {
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    Ok(scores.iter().map(|&s| orientation.normalize(s)).collect())
}

fn require_non_empty<S>(in_scores: &[S], out_scores: &[S]) -> Result<()> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need non-empty score sets, got {} in / {} out",
            in_scores.len(),
            out_scores.len()
        )));
    }
    Ok(())
}

fn desc<S: Scalar>(a: &S, b: &S) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

/// Largest threshold (in raw units) that keeps at least `target_tpr` of the
/// in-distribution scores on the in side.
pub fn calibrate_threshold<S: Scalar>(
    in_scores: &[S],
    orientation: Orientation,
    target_tpr: f64,
) -> Result<S> {
    if in_scores.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Calibration(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} in-distribution scores, got {}",
            in_scores.len()
        )));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Calibration(format!(
            "target TPR must lie in (0, 1], got {target_tpr}"
        )));
    }
    let mut s = normalized(in_scores, orientation)?;
    s.sort_by(desc);
    let n = s.len();
    let keep = ((target_tpr * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(orientation.normalize(s[keep.min(n) - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    In = 0,
    Out = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig<S> {
    pub delta: S,
    pub temperature: S,
    pub eps: S,
    pub orientation: Orientation,
}

/// Flags out-of-distribution when the normalized score is at or below the
/// normalized threshold.
pub fn detect<S: Scalar>(score: S, cfg: &DetectorConfig<S>) -> Flag {
    if cfg.orientation.normalize(score) <= cfg.orientation.normalize(cfg.delta) {
        Flag::Out
    } else {
        Flag::In
    }
}

/// Fraction of OOD scores flagged out at the threshold calibrated on the
/// in-distribution scores.
pub fn tnr_at_tpr<S: Scalar>(
    in_scores: &[S],
    out_scores: &[S],
    orientation: Orientation,
    tpr: f64,
) -> Result<S> {
    require_non_empty(in_scores, out_scores)?;
    let delta = calibrate_threshold(in_scores, orientation, tpr)?;
    Ok(tnr_at_threshold(out_scores, orientation, delta))
}

fn tnr_at_threshold<S: Scalar>(out_scores: &[S], orientation: Orientation, delta: S) -> S {
    let cfg = DetectorConfig {
        delta,
        temperature: S::one(),
        eps: S::zero(),
        orientation,
    };
    let flagged = out_scores
        .iter()
        .filter(|&&s| detect(s, &cfg) == Flag::Out)
        .count();
    S::lit(flagged as f64 / out_scores.len() as f64)
}

/// Groups the pooled normalized scores by value in descending order and
/// returns `(in_count, out_count)` per distinct value.
fn tie_groups<S: Scalar>(in_n: &[S], out_n: &[S]) -> Vec<(usize, usize)> {
    let mut pooled: Vec<(S, bool)> = in_n
        .iter()
        .map(|&s| (s, true))
        .chain(out_n.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| desc(&a.0, &b.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<S> = None;
    for (v, is_in) in pooled {
        if last != Some(v) {
            groups.push((0, 0));
            last = Some(v);
        }
        let g = groups.last_mut().expect("pushed above");
        if is_in {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// `P(in > out) + ½ P(in = out)` via the rank statistic.
pub fn auroc<S: Scalar>(in_scores: &[S], out_scores: &[S], orientation: Orientation) -> Result<S> {
    require_non_empty(in_scores, out_scores)?;
    let a = normalized(in_scores, orientation)?;
    let b = normalized(out_scores, orientation)?;
    let groups = tie_groups(&a, &b);
    // walk from the lowest value upwards, counting OOD scores strictly below
    let mut out_below = 0usize;
    let mut wins = 0.0_f64;
    for &(gi, go) in groups.iter().rev() {
        wins += gi as f64 * out_below as f64 + 0.5 * gi as f64 * go as f64;
        out_below += go;
    }
    Ok(S::lit(wins / (a.len() as f64 * b.len() as f64)))
}

/// Step-wise area under the precision-recall curve with in-distribution as
/// positives: `Σ (Rₜ − Rₜ₋₁) Pₜ` over distinct thresholds in descending
/// order, starting from recall 0 with precision 1.
pub fn aupr<S: Scalar>(in_scores: &[S], out_scores: &[S], orientation: Orientation) -> Result<S> {
    require_non_empty(in_scores, out_scores)?;
    let a = normalized(in_scores, orientation)?;
    let b = normalized(out_scores, orientation)?;
    let n_in = a.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (gi, go) in tie_groups(&a, &b) {
        tp += gi;
        fp += go;
        let recall = tp as f64 / n_in;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(S::lit(area))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<S> {
    pub tnr_at_tpr95: S,
    pub auroc: S,
    pub aupr: S,
    /// Threshold in the score's raw units.
    pub delta: S,
    pub n_in: usize,
    pub n_out: usize,
}

pub fn evaluate<S: Scalar>(
    in_scores: &[S],
    out_scores: &[S],
    orientation: Orientation,
) -> Result<EvalReport<S>> {
    require_non_empty(in_scores, out_scores)?;
    let delta = calibrate_threshold(in_scores, orientation, DEFAULT_TPR)?;
    Ok(EvalReport {
        tnr_at_tpr95: tnr_at_threshold(out_scores, orientation, delta),
        auroc: auroc(in_scores, out_scores, orientation)?,
        aupr: aupr(in_scores, out_scores, orientation)?,
        delta,
        n_in: in_scores.len(),
        n_out: out_scores.len(),
    })
}

pub fn default_temperatures() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
}

/// 21 equally spaced values in `[0, 0.002]`.
pub fn default_epsilons() -> Vec<f64> {
    (0..21).map(|i| 0.002 * i as f64 / 20.0).collect()
}

/// Hyperparameter grid searched exhaustively for the best validation
/// TNR at TPR-95%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            temperatures: default_temperatures(),
            epsilons: default_epsilons(),
        }
    }
}

impl TuneGrid {
    pub fn single(temperature: f64, eps: f64) -> Self {
        Self {
            temperatures: vec![temperature],
            epsilons: vec![eps],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.epsilons.is_empty() {
            return Err(Error::Config("tuning grid must be non-empty".into()));
        }
        if let Some(t) = self
            .temperatures
            .iter()
            .find(|&&t| !(t > 0.0) || !t.is_finite())
        {
            return Err(Error::Config(format!(
                "grid temperature must be positive, got {t}"
            )));
        }
        if let Some(e) = self
            .epsilons
            .iter()
            .find(|&&e| !(e >= 0.0) || !e.is_finite())
        {
            return Err(Error::Config(format!(
                "grid epsilon must be non-negative, got {e}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub temperature: f64,
    pub eps: f64,
    pub objective: f64,
}

impl GridChoice {
    fn beats(&self, other: &GridChoice) -> bool {
        match self.objective.partial_cmp(&other.objective) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Less) => false,
            _ => (self.eps, self.temperature) < (other.eps, other.temperature),
        }
    }
}

/// Evaluates `objective(T, ε)` on every cell and returns the maximizer.
/// Ties go to the smaller ε, then the smaller T. NaN objectives never win.
pub fn grid_search<F>(grid: &TuneGrid, mut objective: F) -> Result<GridChoice>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    grid.validate()?;
    let mut best: Option<GridChoice> = None;
    for &temperature in &grid.temperatures {
        for &eps in &grid.epsilons {
            let value = objective(temperature, eps)?;
            let cell = GridChoice {
                temperature,
                eps,
                objective: if value.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    value
                },
            };
            if best.as_ref().is_none_or(|b| cell.beats(b)) {
                best = Some(cell);
            }
        }
    }
    Ok(best.expect("grid validated non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_to_twenty() -> Vec<f64> {
        (1..=20).map(|i| i as f64).collect()
    }

    #[test]
    fn calibrate_examples() {
        let s = one_to_twenty();
        assert_eq!(
            calibrate_threshold(&s, Orientation::HigherIsIn, 0.95).unwrap(),
            2.0
        );
        assert_eq!(
            calibrate_threshold(&[3.5; 25], Orientation::HigherIsIn, 0.95).unwrap(),
            3.5
        );
        assert_eq!(
            calibrate_threshold(&s, Orientation::HigherIsIn, 1.0).unwrap(),
            1.0
        );
        // lower-is-in keeps the 19 smallest
        assert_eq!(
            calibrate_threshold(&s, Orientation::LowerIsIn, 0.95).unwrap(),
            19.0
        );
        assert!(matches!(
            calibrate_threshold(&s[..19], Orientation::HigherIsIn, 0.95),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn detector_boundary_and_orientation() {
        let cfg = DetectorConfig {
            delta: 2.0,
            temperature: 1.0,
            eps: 0.0,
            orientation: Orientation::HigherIsIn,
        };
        assert_eq!(detect(2.0, &cfg), Flag::Out);
        assert_eq!(detect(100.0, &cfg), Flag::In);
        let low = DetectorConfig {
            orientation: Orientation::LowerIsIn,
            ..cfg
        };
        assert_eq!(detect(-100.0, &low), Flag::In);
        assert_eq!(detect(2.0, &low), Flag::Out);
        assert_eq!(Flag::Out as u8, 1);
    }

    #[test]
    fn tnr_examples() {
        let s = one_to_twenty();
        let sep: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        assert_eq!(
            tnr_at_tpr(&s, &sep, Orientation::HigherIsIn, 0.95).unwrap(),
            1.0
        );
        let same = tnr_at_tpr(&s, &s, Orientation::HigherIsIn, 0.95).unwrap();
        assert!(same <= 0.05 + 1.0 / 20.0 + 1e-12);
        assert_eq!(
            tnr_at_tpr(&s, &[0.0; 20], Orientation::HigherIsIn, 0.95).unwrap(),
            1.0
        );
        assert!(tnr_at_tpr(&s, &[], Orientation::HigherIsIn, 0.95).is_err());
    }

    #[test]
    fn auroc_examples() {
        let h = Orientation::HigherIsIn;
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0], h).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 4.0, 4.0], &[1.0, 4.0, 4.0], h).unwrap(), 0.5);
        assert_eq!(auroc(&[2.0, 0.0], &[1.0, -1.0], h).unwrap(), 0.75);
        assert_eq!(
            auroc(&[2.0, 0.0], &[1.0, -1.0], Orientation::LowerIsIn).unwrap(),
            0.25
        );
        assert!(auroc::<f64>(&[], &[1.0], h).is_err());
    }

    #[test]
    fn aupr_examples() {
        let h = Orientation::HigherIsIn;
        assert_eq!(aupr(&[2.0, 3.0], &[0.0, 1.0], h).unwrap(), 1.0);
        // thresholds 2 → (R ½, P 1), 1 → (R ½, P ½), 0 → (R 1, P ⅔)
        assert_relative_eq!(
            aupr(&[2.0, 0.0], &[1.0, -1.0], h).unwrap(),
            5.0 / 6.0,
            max_relative = 1e-15
        );
        assert!(aupr::<f64>(&[1.0], &[], h).is_err());
    }

    #[test]
    fn evaluate_report_is_consistent() {
        let s = one_to_twenty();
        let r = evaluate(&s, &[0.0; 20], Orientation::HigherIsIn).unwrap();
        assert_eq!(r.delta, 2.0);
        assert_eq!(r.tnr_at_tpr95, 1.0);
        assert_eq!(r.auroc, 1.0);
        assert_eq!((r.n_in, r.n_out), (20, 20));
    }

    #[test]
    fn grid_examples() {
        let one = TuneGrid::single(3.0, 0.001);
        let c = grid_search(&one, |_, _| Ok(0.2)).unwrap();
        assert_eq!((c.temperature, c.eps), (3.0, 0.001));

        let g = TuneGrid {
            temperatures: vec![1.0, 10.0, 100.0],
            epsilons: vec![0.0],
        };
        let c = grid_search(&g, |t, _| Ok(t.ln())).unwrap();
        assert_eq!(c.temperature, 100.0);

        let table = [[0.1, 0.5, 0.2], [0.3, 0.9, 0.4], [0.9, 0.0, 0.6]];
        let g = TuneGrid {
            temperatures: vec![1.0, 2.0, 3.0],
            epsilons: vec![0.0, 0.001, 0.002],
        };
        let c = grid_search(&g, |t, e| {
            Ok(table[t as usize - 1][(e * 1000.0).round() as usize])
        })
        .unwrap();
        // 0.9 appears at (T=2, ε=0.001) and (T=3, ε=0); smaller ε wins
        assert_eq!((c.temperature, c.eps), (3.0, 0.0));

        let empty = TuneGrid {
            temperatures: vec![],
            epsilons: vec![0.0],
        };
        assert!(matches!(
            grid_search(&empty, |_, _| Ok(0.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_grid_shape() {
        let g = TuneGrid::default();
        assert_eq!(g.epsilons.len(), 21);
        assert_eq!(g.epsilons[20], 0.002);
        assert_eq!(g.temperatures.first(), Some(&1.0));
        assert_eq!(g.temperatures.last(), Some(&1000.0));
    }
}
