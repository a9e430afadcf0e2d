//! Small fully-connected classifier with smooth activations.
//!
//! It stands in for the pre-trained network: it produces logits and hidden
//! features, and its input gradients drive the score-increasing input
//! perturbation and FGSM adversarial generation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{logsumexp, softmax_unchecked};
use crate::scoring::{Aggregation, CentroidScorer};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                // ln(1 + e^z) without overflow
                z.max(S::zero()) + (-z.abs()).exp().ln_1p()
            }
        }
    }

    fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::one() - t * t
            }
            Activation::Softplus => S::one() / (S::one() + (-z).exp()),
        }
    }
}

/// Weights are stored output-major: layer `l` maps `sizes[l]` inputs to
/// `sizes[l+1]` outputs through an `sizes[l+1] × sizes[l]` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<S> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Vec<S>>,
    pub activation: Activation,
}

impl<S: Scalar> MlpParams<S> {
    pub fn new(
        layer_sizes: Vec<usize>,
        weights: Vec<Array2<S>>,
        biases: Vec<Vec<S>>,
        activation: Activation,
    ) -> Result<Self> {
        let p = Self {
            layer_sizes,
            weights,
            biases,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes must have at least 2 positive entries, got {:?}",
                self.layer_sizes
            )));
        }
        let n = self.layer_sizes.len() - 1;
        check_len("weight matrices", n, self.weights.len())?;
        check_len("bias vectors", n, self.biases.len())?;
        for l in 0..n {
            check_len(
                "weight rows",
                self.layer_sizes[l + 1],
                self.weights[l].nrows(),
            )?;
            check_len(
                "weight columns",
                self.layer_sizes[l],
                self.weights[l].ncols(),
            )?;
            check_len("bias length", self.layer_sizes[l + 1], self.biases[l].len())?;
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(())
    }

    /// Seeded initialization: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in.max(1) as f64).sqrt())
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                S::lit(normal.sample(&mut rng))
            }));
            biases.push(vec![S::zero(); fan_out]);
        }
        Self::new(layer_sizes.to_vec(), weights, biases, activation)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let weights = layer_sizes
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_sizes
            .windows(2)
            .map(|p| vec![S::zero(); p[1]])
            .collect();
        Self::new(layer_sizes.to_vec(), weights, biases, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_hidden(&self) -> usize {
        self.layer_sizes.len() - 2
    }
}

/// Logits plus the post-activation output of every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<S> {
    pub logits: Vec<S>,
    pub hidden: Vec<Vec<S>>,
}

struct Trace<S> {
    /// `inputs[l]` is the input to layer `l` (the sample itself for `l = 0`).
    inputs: Vec<Vec<S>>,
    /// Pre-activations of every layer; the last one is the logits.
    pre: Vec<Vec<S>>,
}

fn affine<S: Scalar>(w: &Array2<S>, b: &[S], x: &[S]) -> Vec<S> {
    w.rows()
        .into_iter()
        .zip(b)
        .map(|(row, &bias)| bias + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<S>())
        .collect()
}

fn trace<S: Scalar>(params: &MlpParams<S>, x: &[S]) -> Result<Trace<S>> {
    check_len("input", params.input_dim(), x.len())?;
    let n = params.weights.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut a = x.to_vec();
    for l in 0..n {
        let z = affine(&params.weights[l], &params.biases[l], &a);
        inputs.push(a);
        a = if l + 1 < n {
            z.iter().map(|&v| params.activation.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    Ok(Trace { inputs, pre })
}

pub fn forward<S: Scalar>(params: &MlpParams<S>, x: &[S]) -> Result<Forward<S>> {
    let mut t = trace(params, x)?;
    let logits = t.pre.pop().expect("at least one layer");
    let hidden = t.inputs.into_iter().skip(1).collect();
    Ok(Forward { logits, hidden })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Vec<S>>,
}

/// Backpropagates `dlogits` and returns parameter and input gradients.
fn backward<S: Scalar>(
    params: &MlpParams<S>,
    t: &Trace<S>,
    dlogits: Vec<S>,
    want_params: bool,
) -> (Option<MlpGradients<S>>, Vec<S>) {
    let n = params.weights.len();
    let mut gw = Vec::new();
    let mut gb = Vec::new();
    let mut delta = dlogits;
    let mut dx = Vec::new();
    for l in (0..n).rev() {
        let w = &params.weights[l];
        if want_params {
            let input = &t.inputs[l];
            gw.push(Array2::from_shape_fn(w.dim(), |(i, j)| delta[i] * input[j]));
            gb.push(delta.clone());
        }
        let mut back = vec![S::zero(); w.ncols()];
        for (i, row) in w.rows().into_iter().enumerate() {
            for (b, &wij) in back.iter_mut().zip(row) {
                *b += wij * delta[i];
            }
        }
        if l > 0 {
            for (b, &z) in back.iter_mut().zip(&t.pre[l - 1]) {
                *b *= params.activation.derivative(z);
            }
            delta = back;
        } else {
            dx = back;
        }
    }
    let grads = want_params.then(|| {
        gw.reverse();
        gb.reverse();
        MlpGradients {
            weights: gw,
            biases: gb,
        }
    });
    (grads, dx)
}

fn check_label<S: Scalar>(params: &MlpParams<S>, y: usize) -> Result<()> {
    if y >= params.n_classes() {
        return Err(Error::Domain(format!(
            "label {y} out of range for {} classes",
            params.n_classes()
        )));
    }
    Ok(())
}

fn ce_from_logits<S: Scalar>(z: &[S], y: usize) -> (S, Vec<S>) {
    let loss = logsumexp(z, S::one()) - z[y];
    let mut dz = softmax_unchecked(z, S::one());
    dz[y] -= S::one();
    (loss, dz)
}

pub fn cross_entropy<S: Scalar>(params: &MlpParams<S>, x: &[S], y: usize) -> Result<S> {
    check_label(params, y)?;
    let f = forward(params, x)?;
    Ok(logsumexp(&f.logits, S::one()) - f.logits[y])
}

/// Cross-entropy of one sample and its gradient with respect to every
/// parameter.
pub fn loss_and_gradients<S: Scalar>(
    params: &MlpParams<S>,
    x: &[S],
    y: usize,
) -> Result<(S, MlpGradients<S>)> {
    check_label(params, y)?;
    let t = trace(params, x)?;
    let (loss, dz) = ce_from_logits(t.pre.last().expect("layer"), y);
    let (g, _) = backward(params, &t, dz, true);
    Ok((loss, g.expect("requested")))
}

/// Gradient of the cross-entropy with respect to the input.
pub fn grad_input_loss<S: Scalar>(params: &MlpParams<S>, x: &[S], y: usize) -> Result<Vec<S>> {
    check_label(params, y)?;
    let t = trace(params, x)?;
    let (_, dz) = ce_from_logits(t.pre.last().expect("layer"), y);
    Ok(backward(params, &t, dz, false).1)
}

/// Fisher-Rao logits score and its gradient with respect to the logits.
pub fn fr0_logit_gradient<S: Scalar>(
    logits: &[S],
    scorer: &CentroidScorer<S>,
    aggregation: Aggregation,
) -> Result<(S, Vec<S>)> {
    let distances = scorer.fr_distances(logits)?;
    let t = scorer.temperature();
    let p = softmax_unchecked(logits, t);
    let probs = scorer.centroid_probabilities();
    let active: Vec<usize> = match aggregation {
        Aggregation::Sum => (0..probs.len()).collect(),
        Aggregation::Min => {
            let mut best = 0;
            for (i, &d) in distances.iter().enumerate() {
                if d < distances[best] {
                    best = i;
                }
            }
            vec![best]
        }
    };
    let mut grad = vec![S::zero(); logits.len()];
    for &y in &active {
        let q = &probs[y];
        let b: S = p.iter().zip(q).map(|(&a, &c)| (a * c).sqrt()).sum();
        let b = b.max(-S::one()).min(S::one());
        let one_minus = S::one() - b * b;
        if one_minus <= S::zero() {
            continue;
        }
        let factor = -S::one() / (one_minus.sqrt() * t);
        for ((g, &pj), &qj) in grad.iter_mut().zip(&p).zip(q) {
            *g += factor * ((pj * qj).sqrt() - pj * b);
        }
    }
    let score = crate::scoring::aggregate(&distances, aggregation);
    Ok((score, grad))
}

/// Gradient of the Fisher-Rao logits score with respect to the input.
pub fn grad_input_fr0<S: Scalar>(
    params: &MlpParams<S>,
    x: &[S],
    scorer: &CentroidScorer<S>,
    aggregation: Aggregation,
) -> Result<Vec<S>> {
    check_len("centroid count", params.n_classes(), scorer.n_classes())?;
    let t = trace(params, x)?;
    let (_, dz) = fr0_logit_gradient(t.pre.last().expect("layer"), scorer, aggregation)?;
    Ok(backward(params, &t, dz, false).1)
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// `x + ε · sign(grad)` with `sign(0) = 0`.
pub fn preprocess_input<S: Scalar>(x: &[S], eps: S, grad: &[S]) -> Result<Vec<S>> {
    if !(eps >= S::zero()) || !eps.is_finite() {
        return Err(Error::Domain(format!(
            "eps must be non-negative, got {eps}"
        )));
    }
    check_len("gradient", x.len(), grad.len())?;
    Ok(x.iter()
        .zip(grad)
        .map(|(&v, &g)| v + eps * sign(g))
        .collect())
}

/// Single-step FGSM: `x + ε · sign(∇ₓ CE(x, y))`. No clipping.
pub fn fgsm_generate<S: Scalar>(
    params: &MlpParams<S>,
    x: &[S],
    y: usize,
    eps_adv: S,
) -> Result<Vec<S>> {
    let g = grad_input_loss(params, x, y)?;
    preprocess_input(x, eps_adv, &g)
}

/// Feature vectors with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors<S> {
    pub x: Array2<S>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl<S: Scalar> LabeledVectors<S> {
    pub fn new(x: Array2<S>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        check_len("labels", x.nrows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("inputs must be finite".into()));
        }
        Ok(Self {
            x,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![16, 16],
            activation: Activation::Tanh,
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<S> {
    pub initial_loss: S,
    pub final_loss: S,
    pub epoch_losses: Vec<S>,
}

pub fn mean_cross_entropy<S: Scalar>(params: &MlpParams<S>, data: &LabeledVectors<S>) -> Result<S> {
    let mut total = S::zero();
    for (i, &y) in data.labels.iter().enumerate() {
        total += cross_entropy(params, &data.x.row(i).to_vec(), y)?;
    }
    Ok(total / S::lit(data.len() as f64))
}

/// Mini-batch gradient descent on cross-entropy with L2 weight decay.
/// Deterministic for a fixed seed; `epochs = 0` returns the initialization.
pub fn train<S: Scalar>(
    data: &LabeledVectors<S>,
    cfg: &TrainConfig,
) -> Result<(MlpParams<S>, TrainReport<S>)> {
    if data.is_empty() {
        return Err(Error::Fit("no training samples".into()));
    }
    let mut present = vec![false; data.n_classes];
    data.labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Fit(
            "training needs at least 2 classes present".into(),
        ));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || !(cfg.l2 >= 0.0) {
        return Err(Error::Config("invalid training configuration".into()));
    }
    let mut sizes = vec![data.x.ncols()];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(data.n_classes);
    let mut params = MlpParams::init(&sizes, cfg.activation, cfg.seed)?;
    let initial_loss = mean_cross_entropy(&params, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let lr = S::lit(cfg.learning_rate);
    let l2 = S::lit(cfg.l2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<MlpGradients<S>> = None;
            for &i in chunk {
                let (_, g) = loss_and_gradients(&params, &data.x.row(i).to_vec(), data.labels[i])?;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => {
                        for (aw, gw) in a.weights.iter_mut().zip(&g.weights) {
                            *aw += gw;
                        }
                        for (ab, gb) in a.biases.iter_mut().zip(&g.biases) {
                            ab.iter_mut().zip(gb).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
            }
            let acc = acc.expect("non-empty chunk");
            let scale = lr / S::lit(chunk.len() as f64);
            for (w, g) in params.weights.iter_mut().zip(&acc.weights) {
                w.zip_mut_with(g, |wv, &gv| *wv -= scale * gv + lr * l2 * *wv);
            }
            for (b, g) in params.biases.iter_mut().zip(&acc.biases) {
                b.iter_mut().zip(g).for_each(|(bv, &gv)| *bv -= scale * gv);
            }
        }
        let loss = mean_cross_entropy(&params, data)?;
        if !loss.is_finite() {
            return Err(Error::Fit("training diverged".into()));
        }
        epoch_losses.push(loss);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    Ok((
        params,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

pub fn predict<S: Scalar>(params: &MlpParams<S>, x: &[S]) -> Result<usize> {
    Ok(crate::geometry::argmax(&forward(params, x)?.logits))
}
