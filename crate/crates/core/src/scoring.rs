//! Per-sample confidence scores and the logistic-regression feature ensemble.

use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::eval::Orientation;
use crate::geometry::{
    argmax, fr_gauss_diag_raw, fr_simplex, kl_simplex, logsumexp, softmax_unchecked, TiedCovariance,
};
use crate::stats::{CentroidSet, FeatureStats, OodStats};
use crate::Scalar;

/// How per-class centroid distances are reduced to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Fr0,
    Kl0,
    FrLayer,
    FrLayerOod,
    Msp,
    Odin,
    Energy,
    MahalanobisLayer,
}

impl ScorerKind {
    pub fn is_layerwise(self) -> bool {
        matches!(
            self,
            ScorerKind::FrLayer | ScorerKind::FrLayerOod | ScorerKind::MahalanobisLayer
        )
    }
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub layer_index: Option<usize>,
}

impl ScorerSpec {
    pub fn new(kind: ScorerKind) -> Self {
        Self {
            kind,
            temperature: 1.0,
            aggregation: Aggregation::Sum,
            layer_index: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_aggregation(mut self, a: Aggregation) -> Self {
        self.aggregation = a;
        self
    }

    pub fn with_layer(mut self, l: usize) -> Self {
        self.layer_index = Some(l);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "scorer temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.kind.is_layerwise() != self.layer_index.is_some() {
            return Err(Error::Config(format!(
                "layer_index must be set exactly for layer-wise scorers ({:?})",
                self.kind
            )));
        }
        Ok(())
    }

    /// Which direction of the score indicates in-distribution.
    pub fn orientation(&self) -> Orientation {
        match self.kind {
            ScorerKind::Fr0 | ScorerKind::Kl0 => match self.aggregation {
                Aggregation::Sum => Orientation::HigherIsIn,
                Aggregation::Min => Orientation::LowerIsIn,
            },
            ScorerKind::FrLayer | ScorerKind::Energy => Orientation::LowerIsIn,
            ScorerKind::FrLayerOod
            | ScorerKind::Msp
            | ScorerKind::Odin
            | ScorerKind::MahalanobisLayer => Orientation::HigherIsIn,
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let agg = match self.aggregation {
            Aggregation::Sum => "sum",
            Aggregation::Min => "min",
        };
        let t = self.temperature;
        match self.kind {
            ScorerKind::Fr0 => write!(f, "fr0_{agg}_T{t}"),
            ScorerKind::Kl0 => write!(f, "kl0_{agg}_T{t}"),
            ScorerKind::Msp => write!(f, "msp"),
            ScorerKind::Odin => write!(f, "odin_T{t}"),
            ScorerKind::Energy => write!(f, "energy_T{t}"),
            ScorerKind::FrLayer => write!(f, "fr_layer_{}", self.layer_index.unwrap_or(0)),
            ScorerKind::FrLayerOod => write!(f, "fr_layer_ood_{}", self.layer_index.unwrap_or(0)),
            ScorerKind::MahalanobisLayer => {
                write!(f, "mahalanobis_{}", self.layer_index.unwrap_or(0))
            }
        }
    }
}

/// Centroid softmaxes cached at one temperature.
#[derive(Debug, Clone)]
pub struct CentroidScorer<S> {
    probs: Vec<Vec<S>>,
    temperature: S,
}

impl<S: Scalar> CentroidScorer<S> {
    pub fn new(centroids: &CentroidSet<S>, temperature: S) -> Result<Self> {
        if !(temperature > S::zero()) || !temperature.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            probs: centroids.probabilities(temperature),
            temperature,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn temperature(&self) -> S {
        self.temperature
    }

    pub fn centroid_probabilities(&self) -> &[Vec<S>] {
        &self.probs
    }

    fn test_probs(&self, logits: &[S]) -> Result<Vec<S>> {
        check_len("logits", self.probs.len(), logits.len())?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        Ok(softmax_unchecked(logits, self.temperature))
    }

    /// Fisher-Rao distance from the test softmax to every centroid.
    pub fn fr_distances(&self, logits: &[S]) -> Result<Vec<S>> {
        let p = self.test_probs(logits)?;
        Ok(self.probs.iter().map(|q| fr_simplex(&p, q)).collect())
    }

    /// `KL(test ‖ centroid)` for every centroid.
    pub fn kl_divergences(&self, logits: &[S]) -> Result<Vec<S>> {
        let p = self.test_probs(logits)?;
        Ok(self.probs.iter().map(|q| kl_simplex(&p, q)).collect())
    }

    pub fn fr0(&self, logits: &[S], aggregation: Aggregation) -> Result<S> {
        Ok(aggregate(&self.fr_distances(logits)?, aggregation))
    }

    pub fn kl0(&self, logits: &[S], aggregation: Aggregation) -> Result<S> {
        Ok(aggregate(&self.kl_divergences(logits)?, aggregation))
    }

    /// Nearest centroid; ties go to the lowest class index.
    pub fn classify(&self, logits: &[S]) -> Result<usize> {
        let d = self.fr_distances(logits)?;
        let mut best = 0;
        for (i, &v) in d.iter().enumerate().skip(1) {
            if v < d[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

pub(crate) fn aggregate<S: Scalar>(d: &[S], aggregation: Aggregation) -> S {
    match aggregation {
        Aggregation::Sum => d.iter().copied().sum(),
        Aggregation::Min => d.iter().copied().fold(S::infinity(), S::min),
    }
}

/// Fisher-Rao logits score: sum (or min) of distances to the class centroids.
pub fn score_fr0<S: Scalar>(
    logits: &[S],
    centroids: &CentroidSet<S>,
    temperature: S,
    aggregation: Aggregation,
) -> Result<S> {
    CentroidScorer::new(centroids, temperature)?.fr0(logits, aggregation)
}

/// KL-divergence analog of [`score_fr0`].
pub fn score_kl0<S: Scalar>(
    logits: &[S],
    centroids: &CentroidSet<S>,
    temperature: S,
    aggregation: Aggregation,
) -> Result<S> {
    CentroidScorer::new(centroids, temperature)?.kl0(logits, aggregation)
}

pub fn classify_fr<S: Scalar>(
    logits: &[S],
    centroids: &CentroidSet<S>,
    temperature: S,
) -> Result<usize> {
    CentroidScorer::new(centroids, temperature)?.classify(logits)
}

/// Distance from `(feature, σ)` to the closest class Gaussian `(μ_y, σ)`.
pub fn score_fr_layer<S: Scalar>(
    feature: &[S],
    stats: &FeatureStats<S>,
    layer: usize,
) -> Result<S> {
    let ls = stats.layer(layer)?;
    check_len("feature", ls.tied_sigma.len(), feature.len())?;
    Ok(ls
        .class_means
        .rows()
        .into_iter()
        .map(|mu| {
            let mu = mu.to_vec();
            fr_gauss_diag_raw(feature, &ls.tied_sigma, &mu, &ls.tied_sigma)
        })
        .fold(S::infinity(), S::min))
}

/// Distance from `(feature, σ)` to the OOD reference Gaussian `(μ′, σ′)`.
pub fn score_fr_layer_ood<S: Scalar>(
    feature: &[S],
    stats: &FeatureStats<S>,
    ood: &OodStats<S>,
    layer: usize,
) -> Result<S> {
    let ls = stats.layer(layer)?;
    let os = ood.layer(layer)?;
    check_len("feature", ls.tied_sigma.len(), feature.len())?;
    check_len("OOD reference", ls.tied_sigma.len(), os.mu_prime.len())?;
    Ok(fr_gauss_diag_raw(
        feature,
        &ls.tied_sigma,
        &os.mu_prime,
        &os.sigma_prime,
    ))
}

/// MSP, ODIN (temperature-scaled MSP without input perturbation) or
/// free energy `−T log Σ exp(z/T)`.
pub fn score_baseline<S: Scalar>(logits: &[S], kind: ScorerKind, temperature: S) -> Result<S> {
    if !(temperature > S::zero()) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) || logits.is_empty() {
        return Err(Error::InvalidInput(
            "logits must be finite and non-empty".into(),
        ));
    }
    match kind {
        ScorerKind::Msp => {
            let p = softmax_unchecked(logits, S::one());
            Ok(p[argmax(&p)])
        }
        ScorerKind::Odin => {
            let p = softmax_unchecked(logits, temperature);
            Ok(p[argmax(&p)])
        }
        ScorerKind::Energy => Ok(-logsumexp(logits, temperature)),
        other => Err(Error::Config(format!("{other:?} is not a logits baseline"))),
    }
}

/// `max_y −(f−μ_y)ᵀ Σ⁺ (f−μ_y)`.
pub fn score_mahalanobis_layer<S: Scalar>(
    feature: &[S],
    class_means: ArrayView2<S>,
    cov: &TiedCovariance<S>,
) -> Result<S> {
    check_len("class mean width", cov.dim(), class_means.ncols())?;
    let mut best = S::neg_infinity();
    for mu in class_means.rows() {
        let d = cov.squared_distance(feature, &mu.to_vec())?;
        best = best.max(-d);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreColumn<S> {
    pub name: String,
    pub orientation: Orientation,
    pub values: Vec<S>,
}

/// Named per-sample score vectors of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable<S> {
    n: usize,
    columns: Vec<ScoreColumn<S>>,
}

impl<S: Scalar> ScoreTable<S> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            columns: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        orientation: Orientation,
        values: Vec<S>,
    ) -> Result<()> {
        check_len("score column", self.n, values.len())?;
        self.columns.push(ScoreColumn {
            name: name.into(),
            orientation,
            values,
        });
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[ScoreColumn<S>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ScoreColumn<S>> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn row(&self, i: usize) -> Vec<S> {
        self.columns.iter().map(|c| c.values[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub max_iter: usize,
    pub l2: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            l2: 1e-4,
        }
    }
}

/// Linear weights over score columns plus an intercept, in the columns'
/// original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights<S> {
    pub columns: Vec<String>,
    pub alpha: Vec<S>,
    pub intercept: S,
    pub fitted_iterations: usize,
}

/// Logistic regression of `in_distribution` on the table's columns.
///
/// Columns are standardized internally; constant columns get weight zero.
/// Plain gradient ascent on the L2-penalized mean log-likelihood with step
/// `1/L`, where `L` bounds the Hessian of the standardized problem.
pub fn fit_alpha<S: Scalar>(
    table: &ScoreTable<S>,
    in_distribution: &[bool],
    cfg: &EnsembleConfig,
) -> Result<EnsembleWeights<S>> {
    let n = table.n_samples();
    check_len("labels", n, in_distribution.len())?;
    let positives = in_distribution.iter().filter(|&&b| b).count();
    if positives == 0 || positives == n {
        return Err(Error::Fit(
            "ensemble fit needs both in- and out-of-distribution samples".into(),
        ));
    }
    let cols = table.columns();
    if cols.iter().any(|c| c.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::Fit("score columns contain non-finite values".into()));
    }
    let p = cols.len();
    let nf = S::lit(n as f64);
    let means: Vec<S> = cols
        .iter()
        .map(|c| c.values.iter().copied().sum::<S>() / nf)
        .collect();
    let stds: Vec<S> = cols
        .iter()
        .zip(&means)
        .map(|(c, &m)| (c.values.iter().map(|&v| (v - m) * (v - m)).sum::<S>() / nf).sqrt())
        .collect();
    let z: Vec<Vec<S>> = cols
        .iter()
        .zip(means.iter().zip(&stds))
        .map(|(c, (&m, &s))| {
            if s > S::zero() {
                c.values.iter().map(|&v| (v - m) / s).collect()
            } else {
                vec![S::zero(); n]
            }
        })
        .collect();
    let y: Vec<S> = in_distribution
        .iter()
        .map(|&b| if b { S::one() } else { S::zero() })
        .collect();

    let l2 = S::lit(cfg.l2);
    let lipschitz = S::lit(0.25 * (p.max(1) as f64)) + l2;
    let step = S::one() / lipschitz;
    let mut w = vec![S::zero(); p];
    let mut b = S::zero();
    let mut iterations = 0;
    let mut gw = vec![S::zero(); p];
    for _ in 0..cfg.max_iter {
        gw.iter_mut().for_each(|g| *g = S::zero());
        let mut gb = S::zero();
        for i in 0..n {
            let eta = b + (0..p).map(|j| w[j] * z[j][i]).sum::<S>();
            let r = y[i] - sigmoid(eta);
            gb += r;
            for j in 0..p {
                gw[j] += r * z[j][i];
            }
        }
        gb /= nf;
        for j in 0..p {
            gw[j] = gw[j] / nf - l2 * w[j];
        }
        let norm = gb * gb + gw.iter().map(|&g| g * g).sum::<S>();
        if norm.sqrt() < S::lit(1e-12) {
            break;
        }
        b += step * gb;
        for j in 0..p {
            w[j] += step * gw[j];
        }
        iterations += 1;
    }

    let mut intercept = b;
    let alpha: Vec<S> = (0..p)
        .map(|j| {
            if stds[j] > S::zero() {
                let a = w[j] / stds[j];
                intercept -= a * means[j];
                a
            } else {
                S::zero()
            }
        })
        .collect();
    if alpha.iter().any(|a| !a.is_finite()) || !intercept.is_finite() {
        return Err(Error::Fit("ensemble weights diverged".into()));
    }
    Ok(EnsembleWeights {
        columns: table.names(),
        alpha,
        intercept,
        fitted_iterations: iterations,
    })
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `intercept + Σ αᵢ xᵢ`; higher means more in-distribution.
pub fn score_ensemble<S: Scalar>(row: &[S], weights: &EnsembleWeights<S>) -> Result<S> {
    check_len("ensemble row", weights.alpha.len(), row.len())?;
    Ok(weights.intercept
        + row
            .iter()
            .zip(&weights.alpha)
            .map(|(&x, &a)| x * a)
            .sum::<S>())
}

/// Probability of in-distribution under the fitted logistic model.
pub fn ensemble_probability<S: Scalar>(row: &[S], weights: &EnsembleWeights<S>) -> Result<S> {
    Ok(sigmoid(score_ensemble(row, weights)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{FitDistance, LayerStats, OodLayerStats};
    use approx::assert_relative_eq;
    use ndarray::array;
    use std::f64::consts::{E, SQRT_2};

    fn two_class_centroids() -> CentroidSet<f64> {
        let l = 9.0_f64.ln();
        CentroidSet::from_centroids(array![[l, 0.0], [0.0, l]], FitDistance::FisherRao).unwrap()
    }

    #[test]
    fn fr0_examples() {
        let c = two_class_centroids();
        let x = [9.0_f64.ln(), 0.0];
        let sum = score_fr0(&x, &c, 1.0, Aggregation::Sum).unwrap();
        // acos near 1 amplifies rounding of the identical pair to ~1e-8
        assert_relative_eq!(sum, 2.0 * 0.6_f64.acos(), epsilon = 1e-7);
        assert_relative_eq!(sum, 1.85459, epsilon = 1e-5);
        let min = score_fr0(&x, &c, 1.0, Aggregation::Min).unwrap();
        assert!(min.abs() < 1e-7);
        let d = CentroidScorer::new(&c, 1.0)
            .unwrap()
            .fr_distances(&[0.0, 0.0])
            .unwrap();
        assert_relative_eq!(d[0], d[1], max_relative = 1e-15);
        assert!(matches!(
            score_fr0(&[0.0, 1.0, 2.0], &c, 1.0, Aggregation::Sum),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn classify_examples() {
        let c = two_class_centroids();
        assert_eq!(classify_fr(&[0.0, 9.0_f64.ln()], &c, 1.0).unwrap(), 1);
        assert_eq!(classify_fr(&[9.0_f64.ln(), 0.0], &c, 1.0).unwrap(), 0);
        assert_eq!(classify_fr(&[0.0, 0.0], &c, 1.0).unwrap(), 0);
        assert!(classify_fr(&[0.0], &c, 1.0).is_err());
    }

    fn one_d_stats() -> FeatureStats<f64> {
        FeatureStats {
            layers: vec![LayerStats {
                class_means: array![[1.0], [11.0]],
                tied_sigma: vec![1.0],
            }],
        }
    }

    #[test]
    fn fr_layer_examples() {
        let s = one_d_stats();
        assert_eq!(score_fr_layer(&[11.0], &s, 0).unwrap(), 0.0);
        let expected = crate::geometry::fr_gauss_pair(0.0, 1.0, 1.0, 1.0);
        assert_relative_eq!(score_fr_layer(&[0.0], &s, 0).unwrap(), expected);
        // equal-sigma closed form: 2√2 asinh(|Δμ| / (2√2 σ))
        assert_relative_eq!(
            expected,
            2.0 * SQRT_2 * (1.0 / (2.0 * SQRT_2)).asinh(),
            max_relative = 1e-14
        );
        assert!(score_fr_layer(&[0.0, 1.0], &s, 0).is_err());
        assert!(score_fr_layer(&[0.0], &s, 1).is_err());
    }

    #[test]
    fn fr_layer_ood_examples() {
        let s = FeatureStats {
            layers: vec![LayerStats {
                class_means: array![[5.0]],
                tied_sigma: vec![1.0],
            }],
        };
        let ood = OodStats {
            layers: vec![OodLayerStats {
                mu_prime: vec![0.0],
                sigma_prime: vec![E],
            }],
        };
        assert_relative_eq!(
            score_fr_layer_ood(&[0.0], &s, &ood, 0).unwrap(),
            SQRT_2,
            max_relative = 1e-12
        );

        let same = OodStats {
            layers: vec![OodLayerStats {
                mu_prime: vec![2.0],
                sigma_prime: vec![1.0],
            }],
        };
        assert_eq!(score_fr_layer_ood(&[2.0], &s, &same, 0).unwrap(), 0.0);
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(
            score_baseline(&[0.0, 0.0], ScorerKind::Msp, 1.0).unwrap(),
            0.5
        );
        assert_relative_eq!(
            score_baseline(&[0.0, 0.0], ScorerKind::Energy, 1.0).unwrap(),
            -2.0_f64.ln(),
            max_relative = 1e-14
        );
        let z = [1.3, -0.2, 4.0];
        assert_eq!(
            score_baseline(&z, ScorerKind::Odin, 1.0).unwrap(),
            score_baseline(&z, ScorerKind::Msp, 1.0).unwrap()
        );
        assert!(matches!(
            score_baseline(&z, ScorerKind::Odin, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(score_baseline(&z, ScorerKind::Fr0, 1.0).is_err());
    }

    #[test]
    fn mahalanobis_layer_examples() {
        let cov = TiedCovariance::<f64>::identity(2).unwrap();
        let means = array![[0.0, 0.0], [10.0, 0.0]];
        assert_eq!(
            score_mahalanobis_layer(&[10.0, 0.0], means.view(), &cov).unwrap(),
            0.0
        );
        assert_relative_eq!(
            score_mahalanobis_layer(&[1.0, 0.0], means.view(), &cov).unwrap(),
            -1.0
        );
        let more = array![[0.0, 0.0], [10.0, 0.0], [100.0, 100.0]];
        assert!(
            score_mahalanobis_layer(&[1.0, 0.0], more.view(), &cov).unwrap()
                >= score_mahalanobis_layer(&[1.0, 0.0], means.view(), &cov).unwrap()
        );
    }

    fn table(cols: &[(&str, Vec<f64>)]) -> ScoreTable<f64> {
        let mut t = ScoreTable::new(cols[0].1.len());
        for (name, v) in cols {
            t.push(*name, Orientation::HigherIsIn, v.clone()).unwrap();
        }
        t
    }

    #[test]
    fn fit_alpha_separable_column() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let labels: Vec<bool> = x.iter().map(|&v| v > 4.9).collect();
        let t = table(&[("x", x.clone())]);
        let w = fit_alpha(&t, &labels, &EnsembleConfig::default()).unwrap();
        assert!(w.fitted_iterations <= 100);
        for (i, &v) in x.iter().enumerate() {
            let p = ensemble_probability(&[v], &w).unwrap();
            assert_eq!(p > 0.5, labels[i], "sample {i}");
        }
    }

    #[test]
    fn fit_alpha_constant_and_sign_symmetry() {
        let a = vec![0.3, 1.2, -0.5, 2.2, 0.1, 1.7, -1.0, 0.9];
        let b = vec![1.0, 0.0, 1.0, 3.0, -1.0, 2.0, 0.5, 0.0];
        let labels = vec![false, true, false, true, false, true, false, true];
        let t = table(&[("a", a.clone()), ("b", b.clone()), ("c", vec![4.0; 8])]);
        let w = fit_alpha(&t, &labels, &EnsembleConfig::default()).unwrap();
        assert!(w.alpha[2].abs() < 1e-6);

        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let t2 = table(&[("a", neg), ("b", b), ("c", vec![4.0; 8])]);
        let w2 = fit_alpha(&t2, &labels, &EnsembleConfig::default()).unwrap();
        assert_relative_eq!(w2.alpha[0], -w.alpha[0], epsilon = 1e-6);
        assert_relative_eq!(w2.alpha[1], w.alpha[1], epsilon = 1e-6);
        assert_relative_eq!(w2.intercept, w.intercept, epsilon = 1e-6);
    }

    #[test]
    fn fit_alpha_requires_both_labels() {
        let t = table(&[("a", vec![1.0, 2.0])]);
        assert!(matches!(
            fit_alpha(&t, &[true, true], &EnsembleConfig::default()),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn ensemble_examples() {
        let w = EnsembleWeights {
            columns: vec!["fr0".into(), "l1".into(), "l2".into()],
            alpha: vec![1.0, 0.0, 0.0],
            intercept: 0.0,
            fitted_iterations: 0,
        };
        assert_eq!(score_ensemble(&[3.5, 7.0, -2.0], &w).unwrap(), 3.5);
        let zero = EnsembleWeights {
            alpha: vec![0.0; 3],
            intercept: 0.25,
            ..w.clone()
        };
        assert_eq!(score_ensemble(&[3.5, 7.0, -2.0], &zero).unwrap(), 0.25);
        let two = EnsembleWeights {
            columns: vec!["a".into(), "b".into()],
            alpha: vec![2.0, -1.0],
            intercept: 0.0,
            fitted_iterations: 0,
        };
        assert_eq!(score_ensemble(&[1.0, 2.0], &two).unwrap(), 0.0);
        assert!(score_ensemble(&[1.0], &two).is_err());
    }

    #[test]
    fn spec_validation_and_orientation() {
        assert!(ScorerSpec::new(ScorerKind::FrLayer).validate().is_err());
        assert!(ScorerSpec::new(ScorerKind::FrLayer)
            .with_layer(0)
            .validate()
            .is_ok());
        assert!(ScorerSpec::new(ScorerKind::Fr0)
            .with_layer(0)
            .validate()
            .is_err());
        assert!(ScorerSpec::new(ScorerKind::Odin)
            .with_temperature(0.0)
            .validate()
            .is_err());
        assert_eq!(
            ScorerSpec::new(ScorerKind::Fr0).orientation(),
            Orientation::HigherIsIn
        );
        assert_eq!(
            ScorerSpec::new(ScorerKind::Energy).orientation(),
            Orientation::LowerIsIn
        );
        assert_eq!(
            ScorerSpec::new(ScorerKind::FrLayer)
                .with_layer(1)
                .to_string(),
            "fr_layer_1"
        );
    }

    #[test]
    fn score_table_rejects_ragged_columns() {
        let mut t = ScoreTable::<f64>::new(3);
        assert!(t
            .push("a", Orientation::HigherIsIn, vec![1.0, 2.0])
            .is_err());
        t.push("a", Orientation::HigherIsIn, vec![1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(t.row(1), vec![2.0]);
    }
}
