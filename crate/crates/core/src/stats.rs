//! Offline fitting of the statistics the scorers consume.
//!
//! Logit-space class centroids are found by gradient descent on the mean
//! Fisher-Rao (or KL) distance between each training sample's softmax and the
//! centroid's softmax. Layer features get class-conditional means and a tied
//! diagonal standard deviation; OOD validation features get an unconditional
//! mean and standard deviation.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{fr_simplex, kl_simplex, pseudo_inverse, softmax_unchecked, TiedCovariance};
use crate::Scalar;

/// Lower bound applied to every fitted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

fn check_finite<'a, S: Scalar>(it: impl IntoIterator<Item = &'a S>, what: &str) -> Result<()> {
    if it.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} contains non-finite values"
        )));
    }
    Ok(())
}

/// Training logits (N×C) with class labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLogits<S> {
    logits: Array2<S>,
    labels: Vec<usize>,
}

impl<S: Scalar> LabeledLogits<S> {
    pub fn new(logits: Array2<S>, labels: Vec<usize>) -> Result<Self> {
        let (n, c) = logits.dim();
        if n == 0 {
            return Err(Error::InvalidInput("no samples".into()));
        }
        if c < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        check_len("labels", n, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        check_finite(logits.iter(), "logits")?;
        Ok(Self { logits, labels })
    }

    pub fn logits(&self) -> &Array2<S> {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-layer feature matrices (each N×kℓ) sharing one label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures<S> {
    layers: Vec<Array2<S>>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl<S: Scalar> LabeledFeatures<S> {
    pub fn new(layers: Vec<Array2<S>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("no samples".into()));
        }
        for layer in &layers {
            check_len("layer rows", labels.len(), layer.nrows())?;
            check_finite(layer.iter(), "layer features")?;
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            layers,
            labels,
            n_classes,
        })
    }

    pub fn layers(&self) -> &[Array2<S>] {
        &self.layers
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

fn class_members(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    if let Some(empty) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::Fit(format!("class {empty} has no samples")));
    }
    Ok(members)
}

/// Dissimilarity minimized when fitting centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDistance {
    FisherRao,
    Kl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentroidFitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` runs full-batch descent; `Some(b)` shuffles each class with the
    /// seed and steps once per batch of `b` samples.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub temperature: f64,
    pub distance: FitDistance,
    /// Factor applied to a class's learning rate after an accepted epoch;
    /// rejected epochs are rolled back and halve it. `1.0` keeps it fixed
    /// until the first rejection.
    pub lr_growth: f64,
}

impl Default for CentroidFitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: None,
            seed: 0,
            temperature: 1.0,
            distance: FitDistance::FisherRao,
            lr_growth: 1.1,
        }
    }
}

impl CentroidFitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lr_growth >= 1.0) || !self.lr_growth.is_finite() {
            return Err(Error::Config(format!(
                "lr_growth must be at least 1, got {}",
                self.lr_growth
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One logit-space centroid per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet<S> {
    pub centroids: Array2<S>,
    pub fit_distance: FitDistance,
    pub initial_loss: S,
    pub final_loss: S,
    /// Objective after each epoch, averaged over classes.
    pub loss_history: Vec<S>,
}

impl<S: Scalar> CentroidSet<S> {
    /// Wraps hand-specified centroids (C×C).
    pub fn from_centroids(centroids: Array2<S>, fit_distance: FitDistance) -> Result<Self> {
        let (r, c) = centroids.dim();
        check_len("centroid columns", r, c)?;
        if r < 2 {
            return Err(Error::InvalidInput("need at least 2 centroids".into()));
        }
        check_finite(centroids.iter(), "centroids")?;
        Ok(Self {
            centroids,
            fit_distance,
            initial_loss: S::nan(),
            final_loss: S::nan(),
            loss_history: Vec::new(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.nrows()
    }

    /// Softmax of every centroid at temperature `t`.
    pub fn probabilities(&self, t: S) -> Vec<Vec<S>> {
        self.centroids
            .rows()
            .into_iter()
            .map(|row| softmax_unchecked(&row.to_vec(), t))
            .collect()
    }
}

/// Value and logit-gradient of one sample's distance to a centroid.
///
/// `p` is the sample's softmax, `q` the centroid's; the gradient is with
/// respect to the centroid logits at unit temperature.
pub(crate) fn distance_and_grad<S: Scalar>(
    distance: FitDistance,
    p: &[S],
    q: &[S],
    grad: &mut [S],
) -> S {
    match distance {
        FitDistance::FisherRao => {
            let b: S = p.iter().zip(q).map(|(&a, &c)| (a * c).sqrt()).sum();
            let b = b.max(-S::one()).min(S::one());
            let d = S::lit(2.0) * b.acos();
            let one_minus = S::one() - b * b;
            if one_minus <= S::zero() {
                grad.iter_mut().for_each(|g| *g = S::zero());
            } else {
                let factor = -S::one() / one_minus.sqrt();
                for ((g, &pj), &qj) in grad.iter_mut().zip(p).zip(q) {
                    *g = factor * ((pj * qj).sqrt() - qj * b);
                }
            }
            d
        }
        FitDistance::Kl => {
            for ((g, &pj), &qj) in grad.iter_mut().zip(p).zip(q) {
                *g = qj - pj;
            }
            kl_simplex(p, q)
        }
    }
}

fn mean_distance<S: Scalar>(distance: FitDistance, probs: &[Vec<S>], q: &[S]) -> S {
    let total: S = probs
        .iter()
        .map(|p| match distance {
            FitDistance::FisherRao => fr_simplex(p, q),
            FitDistance::Kl => kl_simplex(p, q),
        })
        .sum();
    total / S::lit(probs.len() as f64)
}

struct ClassState<S> {
    probs: Vec<Vec<S>>,
    mu: Vec<S>,
    lr: S,
    loss: S,
}

/// Fits one centroid per class by monitored gradient descent.
///
/// Centroids start at the rows of the identity matrix. After each epoch the
/// class objective is recomputed; an epoch that increases it is rolled back
/// and that class's step size halved.
pub fn fit_centroids<S: Scalar>(
    data: &LabeledLogits<S>,
    cfg: &CentroidFitConfig,
) -> Result<CentroidSet<S>> {
    cfg.validate()?;
    let c = data.n_classes();
    let members = class_members(data.labels(), c)?;
    let t = S::lit(cfg.temperature);
    let inv_t = S::one() / t;
    let growth = S::lit(cfg.lr_growth);

    let mut states: Vec<ClassState<S>> = members
        .iter()
        .enumerate()
        .map(|(y, idx)| {
            let probs: Vec<Vec<S>> = idx
                .iter()
                .map(|&i| softmax_unchecked(&data.logits().row(i).to_vec(), t))
                .collect();
            let mut mu = vec![S::zero(); c];
            mu[y] = S::one();
            let loss = mean_distance(cfg.distance, &probs, &softmax_unchecked(&mu, t));
            ClassState {
                probs,
                mu,
                lr: S::lit(cfg.learning_rate),
                loss,
            }
        })
        .collect();

    let class_mean = |states: &[ClassState<S>]| {
        states.iter().map(|s| s.loss).sum::<S>() / S::lit(states.len() as f64)
    };
    let initial_loss = class_mean(&states);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![S::zero(); c];
    let mut acc = vec![S::zero(); c];

    for epoch in 0..cfg.epochs {
        for (y, state) in states.iter_mut().enumerate() {
            let snapshot = state.mu.clone();
            let mut order: Vec<usize> = (0..state.probs.len()).collect();
            let batch = match cfg.batch_size {
                Some(b) => {
                    order.shuffle(&mut rng);
                    b
                }
                None => order.len(),
            };
            for chunk in order.chunks(batch) {
                let q = softmax_unchecked(&state.mu, t);
                acc.iter_mut().for_each(|a| *a = S::zero());
                for &i in chunk {
                    distance_and_grad(cfg.distance, &state.probs[i], &q, &mut grad);
                    for (a, &g) in acc.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                let scale = state.lr * inv_t / S::lit(chunk.len() as f64);
                for (m, &a) in state.mu.iter_mut().zip(&acc) {
                    *m -= scale * a;
                }
                if state.mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Fit(format!(
                        "non-finite gradient for class {y} at epoch {epoch}"
                    )));
                }
            }
            let loss = mean_distance(cfg.distance, &state.probs, &softmax_unchecked(&state.mu, t));
            if loss > state.loss {
                state.mu = snapshot;
                state.lr /= S::lit(2.0);
            } else {
                state.loss = loss;
                state.lr *= growth;
            }
        }
        history.push(class_mean(&states));
    }

    let mut centroids = Array2::zeros((c, c));
    for (y, state) in states.iter().enumerate() {
        for (j, &v) in state.mu.iter().enumerate() {
            centroids[[y, j]] = v;
        }
    }
    Ok(CentroidSet {
        centroids,
        fit_distance: cfg.distance,
        initial_loss,
        final_loss: class_mean(&states),
        loss_history: history,
    })
}

/// Mean distance between each class's samples and its centroid, averaged
/// over classes. Recomputed from scratch, independent of the fitting loop.
pub fn centroid_objective<S: Scalar>(
    data: &LabeledLogits<S>,
    centroids: &CentroidSet<S>,
    temperature: S,
) -> Result<S> {
    let c = data.n_classes();
    check_len("centroid count", c, centroids.n_classes())?;
    let members = class_members(data.labels(), c)?;
    let q = centroids.probabilities(temperature);
    let mut total = S::zero();
    for (y, idx) in members.iter().enumerate() {
        let probs: Vec<Vec<S>> = idx
            .iter()
            .map(|&i| softmax_unchecked(&data.logits().row(i).to_vec(), temperature))
            .collect();
        total += mean_distance(centroids.fit_distance, &probs, &q[y]);
    }
    Ok(total / S::lit(c as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats<S> {
    /// C×k class means.
    pub class_means: Array2<S>,
    /// Pooled within-class standard deviation per coordinate.
    pub tied_sigma: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats<S> {
    pub layers: Vec<LayerStats<S>>,
}

impl<S: Scalar> FeatureStats<S> {
    pub fn layer(&self, l: usize) -> Result<&LayerStats<S>> {
        self.layers.get(l).ok_or(Error::Shape {
            what: "layer index",
            expected: self.layers.len(),
            actual: l,
        })
    }
}

fn class_means<S: Scalar>(layer: ArrayView2<S>, members: &[Vec<usize>]) -> Array2<S> {
    let k = layer.ncols();
    let mut means = Array2::zeros((members.len(), k));
    for (y, idx) in members.iter().enumerate() {
        let mut row = means.row_mut(y);
        for &i in idx {
            row += &layer.row(i);
        }
        row /= S::lit(idx.len() as f64);
    }
    means
}

/// Class means and tied diagonal standard deviation per layer.
pub fn fit_gaussian_stats<S: Scalar>(data: &LabeledFeatures<S>) -> Result<FeatureStats<S>> {
    let members = class_members(data.labels(), data.n_classes())?;
    let n = S::lit(data.labels().len() as f64);
    let floor = S::lit(SIGMA_FLOOR);
    let layers = data
        .layers()
        .iter()
        .map(|layer| {
            let means = class_means(layer.view(), &members);
            let mut ss = vec![S::zero(); layer.ncols()];
            for (i, &y) in data.labels().iter().enumerate() {
                for ((acc, &f), &m) in ss.iter_mut().zip(layer.row(i)).zip(means.row(y)) {
                    let d = f - m;
                    *acc += d * d;
                }
            }
            let tied_sigma = ss.into_iter().map(|s| (s / n).sqrt().max(floor)).collect();
            LayerStats {
                class_means: means,
                tied_sigma,
            }
        })
        .collect();
    Ok(FeatureStats { layers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodLayerStats<S> {
    pub mu_prime: Vec<S>,
    pub sigma_prime: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodStats<S> {
    pub layers: Vec<OodLayerStats<S>>,
}

impl<S: Scalar> OodStats<S> {
    pub fn layer(&self, l: usize) -> Result<&OodLayerStats<S>> {
        self.layers.get(l).ok_or(Error::Shape {
            what: "layer index",
            expected: self.layers.len(),
            actual: l,
        })
    }
}

/// Population mean and standard deviation of validation OOD features.
pub fn fit_ood_stats<S: Scalar>(ood_features: &[Array2<S>]) -> Result<OodStats<S>> {
    let floor = S::lit(SIGMA_FLOOR);
    let layers = ood_features
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let m = layer.nrows();
            if m < 2 {
                return Err(Error::Fit(format!(
                    "layer {l}: need at least 2 OOD samples, got {m}"
                )));
            }
            check_finite(layer.iter(), "OOD features")?;
            let mu = layer.mean_axis(Axis(0)).expect("non-empty layer").to_vec();
            let mf = S::lit(m as f64);
            let sigma = (0..layer.ncols())
                .map(|j| {
                    let ss: S = layer
                        .column(j)
                        .iter()
                        .map(|&v| (v - mu[j]) * (v - mu[j]))
                        .sum();
                    (ss / mf).sqrt().max(floor)
                })
                .collect();
            Ok(OodLayerStats {
                mu_prime: mu,
                sigma_prime: sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OodStats { layers })
}

/// Mean over the spatial axes of an F×W×H activation tensor.
pub fn avg_pool_spatial<S: Scalar>(tensor: ArrayView3<S>) -> Result<Vec<S>> {
    let (_, w, h) = tensor.dim();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!(
            "spatial dimensions must be non-empty, got {w}x{h}"
        )));
    }
    let area = S::lit((w * h) as f64);
    Ok(tensor
        .outer_iter()
        .map(|plane| plane.iter().copied().sum::<S>() / area)
        .collect())
}

/// Pooled within-class covariance `(1/N) Σ (f−μ_y)(f−μ_y)ᵀ` with its
/// pseudo-inverse, as used by the Mahalanobis baseline.
pub fn fit_tied_covariance<S: Scalar>(
    layer: ArrayView2<S>,
    labels: &[usize],
    class_means: ArrayView2<S>,
) -> Result<TiedCovariance<S>> {
    check_len("labels", layer.nrows(), labels.len())?;
    check_len("class mean width", layer.ncols(), class_means.ncols())?;
    if labels.is_empty() {
        return Err(Error::Fit("no samples for covariance".into()));
    }
    let k = layer.ncols();
    let mut cov = Array2::<S>::zeros((k, k));
    for (i, &y) in labels.iter().enumerate() {
        if y >= class_means.nrows() {
            return Err(Error::InvalidInput(format!("label {y} has no class mean")));
        }
        let d: Vec<S> = layer
            .row(i)
            .iter()
            .zip(class_means.row(y))
            .map(|(&a, &b)| a - b)
            .collect();
        for a in 0..k {
            for b in a..k {
                cov[[a, b]] += d[a] * d[b];
            }
        }
    }
    let n = S::lit(labels.len() as f64);
    for a in 0..k {
        for b in a..k {
            let v = cov[[a, b]] / n;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    TiedCovariance::new(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub condition_number_full: f64,
    pub condition_number_diag: f64,
    pub diag_dominant_row_fraction: f64,
}

fn inf_norm<S: Scalar>(m: ArrayView2<S>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs().to_f64_lossy()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn empirical_covariance<S: Scalar>(features: ArrayView2<S>) -> Array2<S> {
    let n = S::lit(features.nrows() as f64);
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = &features - &mean.view().insert_axis(Axis(0));
    let mut cov = centered.t().dot(&centered);
    cov.mapv_inplace(|v| v / n);
    cov
}

/// Condition numbers `‖Σ⁺‖∞·‖Σ‖∞` of the full and diagonal covariance, and
/// the fraction of diagonally dominant rows.
pub fn covariance_diagnostics<S: Scalar>(features: ArrayView2<S>) -> Result<CovarianceReport> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "covariance diagnostics need at least 2 samples, got {n}"
        )));
    }
    check_finite(features.iter(), "features")?;
    let cov = empirical_covariance(features);
    let pinv = pseudo_inverse(cov.view());
    let full = inf_norm(pinv.view()) * inf_norm(cov.view());

    let diag: Vec<f64> = cov.diag().iter().map(|v| v.to_f64_lossy()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let cutoff = crate::geometry::PINV_RCOND * dmax;
    let inv_max = diag
        .iter()
        .filter(|&&d| d > cutoff && d > 0.0)
        .map(|d| 1.0 / d)
        .fold(0.0, f64::max);
    let diag_cond = inv_max * dmax;

    let dominant = cov
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, row)| diag_dominant(*i, *row))
        .count();
    Ok(CovarianceReport {
        condition_number_full: full,
        condition_number_diag: diag_cond,
        diag_dominant_row_fraction: dominant as f64 / cov.nrows() as f64,
    })
}

fn diag_dominant<S: Scalar>(i: usize, row: ArrayView1<S>) -> bool {
    let off: S = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| v.abs())
        .sum();
    row[i].abs() >= off
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array3};

    fn logits(rows: &[&[f64]], labels: &[usize]) -> LabeledLogits<f64> {
        let c = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LabeledLogits::new(
            Array2::from_shape_vec((rows.len(), c), flat).unwrap(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn single_sample_centroid_converges() {
        for s in [[2.0, -1.0, 0.5], [-3.0, 0.0, 4.0], [0.1, 0.2, 0.3]] {
            let mut rows: Vec<&[f64]> = vec![&s];
            let other0 = [0.0, 0.0, 0.0];
            let other1 = [1.0, 1.0, 0.0];
            rows.push(&other0);
            rows.push(&other1);
            let data = logits(&rows, &[0, 1, 2]);
            let set = fit_centroids(&data, &CentroidFitConfig::default()).unwrap();
            let q = softmax_unchecked(&set.centroids.row(0).to_vec(), 1.0);
            let p = softmax_unchecked(&s, 1.0);
            assert!(fr_simplex(&p, &q) < 1e-3, "distance {}", fr_simplex(&p, &q));
        }
    }

    #[test]
    fn symmetric_pair_centroid_lies_on_geodesic() {
        // every point between the two samples is a minimizer
        let a: f64 = 0.8;
        let la = (a / (1.0 - a)).ln();
        let data = logits(&[&[la, 0.0], &[0.0, la], &[0.0, 1.0]], &[0, 0, 1]);
        let set = fit_centroids(&data, &CentroidFitConfig::default()).unwrap();
        let q = softmax_unchecked(&set.centroids.row(0).to_vec(), 1.0);
        assert!(q[0] >= 1.0 - a && q[0] <= a, "{q:?}");
        let half = fr_simplex(&[a, 1.0 - a], &[1.0 - a, a]) / 2.0;
        let probs = [vec![a, 1.0 - a], vec![1.0 - a, a]];
        assert!((mean_distance(FitDistance::FisherRao, &probs, &q) - half).abs() < 1e-9);
    }

    #[test]
    fn symmetric_triple_centroid_is_uniform() {
        let a: f64 = 0.8;
        let la = (a / (1.0 - a)).ln();
        let data = logits(
            &[&[la, 0.0], &[0.0, la], &[0.0, 0.0], &[0.0, 1.0]],
            &[0, 0, 0, 1],
        );
        let set = fit_centroids(&data, &CentroidFitConfig::default()).unwrap();
        let q = softmax_unchecked(&set.centroids.row(0).to_vec(), 1.0);
        assert!((q[0] - 0.5).abs() < 1e-3, "{q:?}");
    }

    #[test]
    fn descent_is_monotone_and_reproducible() {
        let data = logits(
            &[
                &[3.0, 0.0, -1.0],
                &[2.0, 1.0, 0.0],
                &[0.0, 2.5, 0.3],
                &[-1.0, 3.0, 1.0],
                &[0.0, 0.0, 2.0],
                &[1.0, -2.0, 3.0],
            ],
            &[0, 0, 1, 1, 2, 2],
        );
        for batch_size in [None, Some(1)] {
            let cfg = CentroidFitConfig {
                batch_size,
                seed: 7,
                ..Default::default()
            };
            let a = fit_centroids(&data, &cfg).unwrap();
            let b = fit_centroids(&data, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.final_loss <= a.initial_loss);
            assert!(a.loss_history.windows(2).all(|w| w[1] <= w[0]));
            let oracle = centroid_objective(&data, &a, 1.0).unwrap();
            assert_relative_eq!(oracle, a.final_loss, max_relative = 1e-12);
        }
    }

    #[test]
    fn kl_centroid_fit_decreases_objective() {
        let data = logits(
            &[&[2.0, 0.0], &[1.5, 0.2], &[0.0, 1.0], &[-1.0, 2.0]],
            &[0, 0, 1, 1],
        );
        let cfg = CentroidFitConfig {
            distance: FitDistance::Kl,
            ..Default::default()
        };
        let set = fit_centroids(&data, &cfg).unwrap();
        assert_eq!(set.fit_distance, FitDistance::Kl);
        assert!(set.final_loss < set.initial_loss);
    }

    #[test]
    fn empty_class_is_reported() {
        let data = logits(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], &[0, 1]);
        match fit_centroids(&data, &CentroidFitConfig::default()) {
            Err(Error::Fit(msg)) => assert!(msg.contains("class 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_epochs_keeps_identity() {
        let data = logits(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        let cfg = CentroidFitConfig {
            epochs: 0,
            ..Default::default()
        };
        let set = fit_centroids(&data, &cfg).unwrap();
        assert_eq!(set.centroids, Array2::<f64>::eye(2));
        assert_eq!(set.final_loss, set.initial_loss);
    }

    #[test]
    fn gaussian_stats_example() {
        let layer = array![[0.0], [2.0], [10.0], [12.0]];
        let data = LabeledFeatures::new(vec![layer], vec![0, 0, 1, 1], 2).unwrap();
        let stats = fit_gaussian_stats(&data).unwrap();
        assert_eq!(stats.layers[0].class_means, array![[1.0], [11.0]]);
        assert_relative_eq!(stats.layers[0].tied_sigma[0], 1.0);
    }

    #[test]
    fn gaussian_stats_degenerate_and_duplicated() {
        let layer = array![[3.0, 1.0], [3.0, 1.0], [3.0, 1.0]];
        let data = LabeledFeatures::new(vec![layer], vec![0, 1, 1], 2).unwrap();
        let stats = fit_gaussian_stats(&data).unwrap();
        assert_eq!(stats.layers[0].tied_sigma, vec![SIGMA_FLOOR, SIGMA_FLOOR]);

        let layer = array![[0.0, 5.0], [2.0, 1.0], [7.0, -1.0], [10.0, 3.0]];
        let labels = vec![0, 0, 1, 1];
        let once = fit_gaussian_stats(
            &LabeledFeatures::new(vec![layer.clone()], labels.clone(), 2).unwrap(),
        )
        .unwrap();
        let doubled = ndarray::concatenate(Axis(0), &[layer.view(), layer.view()]).unwrap();
        let twice_labels = [labels.clone(), labels].concat();
        let twice =
            fit_gaussian_stats(&LabeledFeatures::new(vec![doubled], twice_labels, 2).unwrap())
                .unwrap();
        assert_eq!(once.layers[0].class_means, twice.layers[0].class_means);
        for (a, b) in once.layers[0]
            .tied_sigma
            .iter()
            .zip(&twice.layers[0].tied_sigma)
        {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn gaussian_stats_empty_class() {
        let data = LabeledFeatures::new(vec![array![[1.0], [2.0]]], vec![0, 0], 2).unwrap();
        assert!(matches!(fit_gaussian_stats(&data), Err(Error::Fit(_))));
    }

    #[test]
    fn ood_stats_examples() {
        let stats = fit_ood_stats(&[array![[0.0], [2.0]]]).unwrap();
        assert_eq!(stats.layers[0].mu_prime, vec![1.0]);
        assert_eq!(stats.layers[0].sigma_prime, vec![1.0]);

        let flat = fit_ood_stats(&[array![[4.0], [4.0], [4.0]]]).unwrap();
        assert_eq!(flat.layers[0].sigma_prime, vec![SIGMA_FLOOR]);

        let a = fit_ood_stats(&[array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]]]).unwrap();
        let b = fit_ood_stats(&[array![[0.5, 0.0], [1.0, 2.0], [3.0, -1.0]]]).unwrap();
        for (x, y) in a.layers[0].sigma_prime.iter().zip(&b.layers[0].sigma_prime) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
        assert!(matches!(
            fit_ood_stats(&[array![[1.0]]]),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn avg_pool_examples() {
        let t = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_spatial(t.view()).unwrap(), vec![2.5]);
        let t = Array3::from_shape_vec((3, 1, 1), vec![1.0, -2.0, 5.0]).unwrap();
        assert_eq!(avg_pool_spatial(t.view()).unwrap(), vec![1.0, -2.0, 5.0]);
        let t = Array3::from_elem((2, 3, 4), 0.75);
        assert_eq!(avg_pool_spatial(t.view()).unwrap(), vec![0.75, 0.75]);
        let t = Array3::<f64>::zeros((2, 0, 3));
        assert!(avg_pool_spatial(t.view()).is_err());
    }

    #[test]
    fn covariance_diagnostics_examples() {
        let ident = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let r = covariance_diagnostics(ident.view()).unwrap();
        assert_relative_eq!(r.condition_number_full, 1.0, max_relative = 1e-10);
        assert_eq!(r.diag_dominant_row_fraction, 1.0);

        let scaled = array![[10.0, 1.0], [10.0, -1.0], [-10.0, 1.0], [-10.0, -1.0]];
        let r = covariance_diagnostics(scaled.view()).unwrap();
        assert_relative_eq!(r.condition_number_full, 100.0, max_relative = 1e-10);
        assert_relative_eq!(r.condition_number_diag, 100.0, max_relative = 1e-10);

        let dup = array![
            [1.0, 1.0, 0.0],
            [2.0, 2.0, 1.0],
            [-1.0, -1.0, 3.0],
            [0.5, 0.5, -2.0]
        ];
        let r = covariance_diagnostics(dup.view()).unwrap();
        assert!(r.condition_number_full.is_finite());

        assert!(covariance_diagnostics(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn tied_covariance_matches_pooled_definition() {
        let layer = array![[0.0, 1.0], [2.0, 3.0], [10.0, 0.0], [12.0, 4.0]];
        let labels = [0, 0, 1, 1];
        let means = array![[1.0, 2.0], [11.0, 2.0]];
        let cov = fit_tied_covariance(layer.view(), &labels, means.view()).unwrap();
        assert_relative_eq!(cov.matrix()[[0, 0]], 1.0);
        assert_relative_eq!(cov.matrix()[[1, 1]], 2.5);
        assert_relative_eq!(cov.matrix()[[0, 1]], 1.5);
    }
}
