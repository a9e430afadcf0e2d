//! Fisher-Rao out-of-distribution detection.
//!
//! The crate works on dumped classifier logits and layer features. It fits
//! class centroids on the softmax simplex and diagonal Gaussian statistics per
//! layer, scores test samples with Fisher-Rao distances (plus the usual
//! baselines), and evaluates detectors with TNR at TPR-95%, AUROC and AUPR.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`). The `*64` aliases at
//! the crate root are what the command-line runner uses.

// `!(x > 0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datastore;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nnet;
pub mod scalar;
pub mod scoring;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use datastore::{DumpError, FeatureDump, FeatureDumpManifest};
pub use eval::{EvalReport, Orientation, TuneGrid};
pub use geometry::{Gauss1D, GaussianDiag, ProbVector, TiedCovariance};
pub use nnet::{Activation, MlpParams, TrainConfig};
pub use scoring::{Aggregation, EnsembleWeights, ScoreTable, ScorerKind, ScorerSpec};
pub use stats::{
    CentroidFitConfig, CentroidSet, FeatureStats, FitDistance, LabeledFeatures, LabeledLogits,
    OodStats,
};

pub type ProbVector64 = ProbVector<f64>;
pub type ProbVector32 = ProbVector<f32>;
pub type Gauss1D64 = Gauss1D<f64>;
pub type GaussianDiag64 = GaussianDiag<f64>;
pub type TiedCovariance64 = TiedCovariance<f64>;
pub type CentroidSet64 = CentroidSet<f64>;
pub type CentroidSet32 = CentroidSet<f32>;
pub type FeatureStats64 = FeatureStats<f64>;
pub type OodStats64 = OodStats<f64>;
pub type LabeledLogits64 = LabeledLogits<f64>;
pub type LabeledFeatures64 = LabeledFeatures<f64>;
pub type ScoreTable64 = ScoreTable<f64>;
pub type EnsembleWeights64 = EnsembleWeights<f64>;
pub type MlpParams64 = MlpParams<f64>;
pub type MlpParams32 = MlpParams<f32>;
pub type FeatureDump64 = FeatureDump<f64>;
pub type EvalReport64 = EvalReport<f64>;
