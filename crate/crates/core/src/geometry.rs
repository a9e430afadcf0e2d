//! Closed-form statistical distances.
//!
//! * Fisher-Rao distance between categorical distributions (the softmax
//!   simplex): `2 acos(Σ √(p q))`, the angle between the square-root
//!   embeddings on a sphere of radius 2.
//! * Fisher-Rao distance between univariate Gaussians and its diagonal
//!   multivariate extension.
//! * KL divergence between categorical distributions.
//! * Mahalanobis distance under a tied covariance with a pseudo-inverse.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::Scalar;

/// Probability floor applied to the second argument of the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Singular values below this fraction of the largest one are treated as zero
/// when forming the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

/// A point on the probability simplex with at least two categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<S> {
    p: Vec<S>,
}

impl<S: Scalar> ProbVector<S> {
    pub fn new(p: Vec<S>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 entries, got {}",
                p.len()
            )));
        }
        if p.iter()
            .any(|&v| !v.is_finite() || v < S::zero() || v > S::one())
        {
            return Err(Error::InvalidInput(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let total: S = p.iter().copied().sum();
        if (total - S::one()).abs() > S::sum_tolerance(p.len()) {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn as_slice(&self) -> &[S] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn into_vec(self) -> Vec<S> {
        self.p
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn validate_temperature<S: Scalar>(t: S) -> Result<()> {
    if !(t > S::zero()) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

/// Temperature-scaled softmax with max-subtraction.
pub fn softmax<S: Scalar>(logits: &[S], temperature: S) -> Result<ProbVector<S>> {
    validate_temperature(temperature)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("logits must be finite".into()));
    }
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    Ok(ProbVector {
        p: softmax_unchecked(logits, temperature),
    })
}

pub(crate) fn softmax_unchecked<S: Scalar>(logits: &[S], temperature: S) -> Vec<S> {
    let max = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| a.max(b));
    let mut out: Vec<S> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `T · log Σ exp(z / T)`, computed stably.
pub fn logsumexp<S: Scalar>(logits: &[S], temperature: S) -> S {
    let max = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| a.max(b));
    let s: S = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .sum();
    max + temperature * s.ln()
}

/// `Σ √(p q)`, clamped to `[-1, 1]`.
pub fn bhattacharyya<S: Scalar>(p: &[S], q: &[S]) -> S {
    let bc: S = p.iter().zip(q).map(|(&a, &b)| (a * b).sqrt()).sum();
    bc.max(-S::one()).min(S::one())
}

pub(crate) fn fr_simplex<S: Scalar>(p: &[S], q: &[S]) -> S {
    S::lit(2.0) * bhattacharyya(p, q).acos()
}

/// Fisher-Rao distance between two categorical distributions, in `[0, π]`.
pub fn fr_softmax<S: Scalar>(p: &ProbVector<S>, q: &ProbVector<S>) -> Result<S> {
    check_len("fr_softmax", p.len(), q.len())?;
    Ok(fr_simplex(p.as_slice(), q.as_slice()))
}

pub(crate) fn kl_simplex<S: Scalar>(p: &[S], q: &[S]) -> S {
    let floor = S::lit(KL_FLOOR);
    let kl: S = p
        .iter()
        .zip(q)
        .filter(|(&a, _)| a > S::zero())
        .map(|(&a, &b)| a * (a / b.max(floor)).ln())
        .sum();
    kl.max(S::zero())
}

/// `KL(p ‖ q)` with `0 · log 0 = 0` and `q` floored at [`KL_FLOOR`].
pub fn kl_softmax<S: Scalar>(p: &ProbVector<S>, q: &ProbVector<S>) -> Result<S> {
    check_len("kl_softmax", p.len(), q.len())?;
    Ok(kl_simplex(p.as_slice(), q.as_slice()))
}

/// Univariate Gaussian parameterized by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss1D<S> {
    pub mu: S,
    pub sigma: S,
}

impl<S: Scalar> Gauss1D<S> {
    pub fn new(mu: S, sigma: S) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mean must be finite, got {mu}"
            )));
        }
        if !(sigma > S::zero()) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "standard deviation must be positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }
}

/// Fisher-Rao distance in the `(μ, σ)` half-plane.
///
/// The textbook form is `√2 log((|a−b̄| + |a−b|) / (|a−b̄| − |a−b|))` with
/// `a = (μ₁/√2, σ₁)`, `b = (μ₂/√2, σ₂)` and `b̄` the reflection of `b`.
/// Since `|a−b̄|² − |a−b|² = 4σ₁σ₂` this equals `2√2 asinh(|a−b| / (2√(σ₁σ₂)))`,
/// which avoids the cancellation in the denominator for nearby points.
pub(crate) fn fr_gauss_pair<S: Scalar>(mu1: S, sigma1: S, mu2: S, sigma2: S) -> S {
    let dmu = mu1 - mu2;
    let dsigma = sigma1 - sigma2;
    if dmu == S::zero() && dsigma == S::zero() {
        return S::zero();
    }
    let chord = (dmu * dmu / S::lit(2.0) + dsigma * dsigma).sqrt();
    let s = chord / (S::lit(2.0) * (sigma1 * sigma2).sqrt());
    S::lit(2.0) * S::SQRT_2() * s.asinh()
}

pub fn fr_gauss_1d<S: Scalar>(a: Gauss1D<S>, b: Gauss1D<S>) -> Result<S> {
    let a = Gauss1D::new(a.mu, a.sigma)?;
    let b = Gauss1D::new(b.mu, b.sigma)?;
    Ok(fr_gauss_pair(a.mu, a.sigma, b.mu, b.sigma))
}

/// Gaussian with diagonal covariance, given by per-coordinate standard
/// deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag<S> {
    mu: Vec<S>,
    sigma: Vec<S>,
}

impl<S: Scalar> GaussianDiag<S> {
    pub fn new(mu: Vec<S>, sigma: Vec<S>) -> Result<Self> {
        check_len("GaussianDiag sigma", mu.len(), sigma.len())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("means must be finite".into()));
        }
        if sigma.iter().any(|&s| !(s > S::zero()) || !s.is_finite()) {
            return Err(Error::Domain("standard deviations must be positive".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &[S] {
        &self.mu
    }

    pub fn sigma(&self) -> &[S] {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub(crate) fn fr_gauss_diag_raw<S: Scalar>(mu1: &[S], sigma1: &[S], mu2: &[S], sigma2: &[S]) -> S {
    let sq: S = mu1
        .iter()
        .zip(sigma1)
        .zip(mu2.iter().zip(sigma2))
        .map(|((&m1, &s1), (&m2, &s2))| {
            let r = fr_gauss_pair(m1, s1, m2, s2);
            r * r
        })
        .sum();
    sq.sqrt()
}

/// `√(Σᵢ ρ(aᵢ, bᵢ)²)`.
pub fn fr_gauss_diag<S: Scalar>(a: &GaussianDiag<S>, b: &GaussianDiag<S>) -> Result<S> {
    check_len("fr_gauss_diag", a.dim(), b.dim())?;
    Ok(fr_gauss_diag_raw(&a.mu, &a.sigma, &b.mu, &b.sigma))
}

/// Symmetric positive semi-definite covariance plus its pseudo-inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedCovariance<S> {
    matrix: Array2<S>,
    pseudo_inverse: Array2<S>,
}

impl<S: Scalar> TiedCovariance<S> {
    pub fn new(matrix: Array2<S>) -> Result<Self> {
        let (r, c) = matrix.dim();
        check_len("covariance columns", r, c)?;
        if r == 0 {
            return Err(Error::InvalidInput("empty covariance matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariance must be finite".into()));
        }
        let scale = matrix.iter().fold(S::one(), |acc, v| acc.max(v.abs()));
        let tol = S::lit(1e-9).max(S::epsilon() * S::lit(16.0)) * scale;
        for i in 0..r {
            for j in (i + 1)..r {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let pseudo_inverse = pseudo_inverse(matrix.view());
        Ok(Self {
            matrix,
            pseudo_inverse,
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::new(Array2::eye(k))
    }

    pub fn matrix(&self) -> &Array2<S> {
        &self.matrix
    }

    pub fn pseudo_inverse(&self) -> &Array2<S> {
        &self.pseudo_inverse
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `(x−μ)ᵀ Σ⁺ (x−μ)`.
    pub fn squared_distance(&self, x: &[S], mu: &[S]) -> Result<S> {
        check_len("mahalanobis x", self.dim(), x.len())?;
        check_len("mahalanobis mu", self.dim(), mu.len())?;
        let diff: Vec<S> = x.iter().zip(mu).map(|(&a, &b)| a - b).collect();
        let mut acc = S::zero();
        for (i, row) in self.pseudo_inverse.rows().into_iter().enumerate() {
            let r: S = row.iter().zip(&diff).map(|(&w, &d)| w * d).sum();
            acc += diff[i] * r;
        }
        Ok(acc.max(S::zero()))
    }
}

/// Moore-Penrose pseudo-inverse through the SVD, computed in double
/// precision. Singular values below `PINV_RCOND · σ_max` are dropped.
pub fn pseudo_inverse<S: Scalar>(m: ArrayView2<S>) -> Array2<S> {
    let (r, c) = m.dim();
    let dm = DMatrix::<f64>::from_fn(r, c, |i, j| m[[i, j]].to_f64_lossy());
    let svd = dm.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = PINV_RCOND * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = Array2::<S>::zeros((c, r));
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..c {
            let v = vt[(k, i)] * inv;
            if v == 0.0 {
                continue;
            }
            for j in 0..r {
                out[[i, j]] += S::lit(v * u[(j, k)]);
            }
        }
    }
    out
}

/// `√((x−μ)ᵀ Σ⁺ (x−μ))`.
pub fn mahalanobis<S: Scalar>(x: &[S], mu: &[S], cov: &TiedCovariance<S>) -> Result<S> {
    Ok(cov.squared_distance(x, mu)?.sqrt())
}
