//! On-disk feature dumps, JSON artifact persistence and seeded synthetic data.
//!
//! A dump directory holds `manifest.json`, `logits.bin`, an optional
//! `labels.bin` (u32 little-endian) and one `layer_<i>.bin` per feature layer.
//! Arrays are row-major little-endian f32.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::nnet::LabeledVectors;
use crate::stats::{LabeledFeatures, LabeledLogits};
use crate::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOGITS_FILE: &str = "logits.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const FORMAT_VERSION: u64 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("{file}: i/o error: {message}")]
    Io { file: String, message: String },

    #[error("{file}: manifest parse error: {message}")]
    Parse { file: String, message: String },

    #[error("unsupported dump version {0} (expected {FORMAT_VERSION})")]
    Version(u64),

    #[error("unsupported dtype {0:?} (expected \"{DTYPE}\")")]
    Dtype(String),

    #[error("{file}: size mismatch, expected {expected} bytes, found {actual}")]
    SizeMismatch {
        file: String,
        expected: u64,
        actual: u64,
    },

    #[error("{file}: missing file")]
    MissingFile { file: String },

    #[error("labels.bin: label {label} at row {row} is out of range for {n_classes} classes")]
    LabelRange {
        row: usize,
        label: u64,
        n_classes: usize,
    },

    #[error("invalid manifest: {0}")]
    Schema(String),
}

impl DumpError {
    /// Stable short code per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            DumpError::Io { .. } => "io",
            DumpError::Parse { .. } => "parse",
            DumpError::Version(_) => "version",
            DumpError::Dtype(_) => "dtype",
            DumpError::SizeMismatch { .. } => "size_mismatch",
            DumpError::MissingFile { .. } => "missing_file",
            DumpError::LabelRange { .. } => "label_range",
            DumpError::Schema(_) => "schema",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub k: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDumpManifest {
    pub version: u64,
    pub n_samples: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerEntry>,
    pub logits_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    pub dtype: String,
}

fn valid_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name != MANIFEST_FILE
        && !name.contains(['/', '\\', '\0'])
}

impl FeatureDumpManifest {
    pub fn parse(text: &str) -> Result<Self, DumpError> {
        let m: Self = serde_json::from_str(text).map_err(|e| DumpError::Parse {
            file: MANIFEST_FILE.into(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DumpError> {
        if self.version != FORMAT_VERSION {
            return Err(DumpError::Version(self.version));
        }
        if self.dtype != DTYPE {
            return Err(DumpError::Dtype(self.dtype.clone()));
        }
        if self.n_classes < 2 {
            return Err(DumpError::Schema(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        let mut files = vec![self.logits_file.as_str()];
        files.extend(self.labels_file.as_deref());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.name.is_empty() {
                return Err(DumpError::Schema(format!("layer {i} has an empty name")));
            }
            if layer.k == 0 {
                return Err(DumpError::Schema(format!(
                    "layer {:?} has k = 0",
                    layer.name
                )));
            }
            if self.layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(DumpError::Schema(format!(
                    "duplicate layer name {:?}",
                    layer.name
                )));
            }
            files.push(&layer.file);
        }
        for (i, f) in files.iter().enumerate() {
            if !valid_file_name(f) {
                return Err(DumpError::Schema(format!("invalid file name {f:?}")));
            }
            if files[..i].contains(f) {
                return Err(DumpError::Schema(format!("file {f:?} referenced twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpLayer<S> {
    pub name: String,
    pub values: Array2<S>,
}

/// Logits, optional labels and named feature layers for one sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump<S> {
    pub logits: Array2<S>,
    pub labels: Option<Vec<usize>>,
    pub layers: Vec<DumpLayer<S>>,
}

impl<S: Scalar> FeatureDump<S> {
    pub fn n_samples(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn layer_values(&self) -> Vec<Array2<S>> {
        self.layers.iter().map(|l| l.values.clone()).collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .clone()
            .ok_or_else(|| Error::InvalidInput("dump has no labels".into()))
    }

    pub fn labeled_logits(&self) -> Result<LabeledLogits<S>> {
        LabeledLogits::new(self.logits.clone(), self.require_labels()?)
    }

    pub fn labeled_features(&self) -> Result<LabeledFeatures<S>> {
        LabeledFeatures::new(
            self.layer_values(),
            self.require_labels()?,
            self.n_classes(),
        )
    }

    /// Manifest describing this dump with the canonical file names.
    pub fn manifest(&self) -> FeatureDumpManifest {
        FeatureDumpManifest {
            version: FORMAT_VERSION,
            n_samples: self.n_samples(),
            n_classes: self.n_classes(),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| LayerEntry {
                    name: l.name.clone(),
                    k: l.values.ncols(),
                    file: format!("layer_{i}.bin"),
                })
                .collect(),
            logits_file: LOGITS_FILE.into(),
            labels_file: self.labels.as_ref().map(|_| LABELS_FILE.into()),
            dtype: DTYPE.into(),
        }
    }

    fn check(&self) -> Result<(), DumpError> {
        let n = self.n_samples();
        for l in &self.layers {
            if l.values.nrows() != n {
                return Err(DumpError::Schema(format!(
                    "layer {:?} has {} rows, logits have {n}",
                    l.name,
                    l.values.nrows()
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(DumpError::Schema(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
            if let Some((row, &y)) = labels
                .iter()
                .enumerate()
                .find(|(_, &y)| y >= self.n_classes())
            {
                return Err(DumpError::LabelRange {
                    row,
                    label: y as u64,
                    n_classes: self.n_classes(),
                });
            }
        }
        self.manifest().validate()
    }
}

fn io_err(path: &Path, e: io::Error) -> DumpError {
    let file = file_label(path);
    if e.kind() == io::ErrorKind::NotFound {
        DumpError::MissingFile { file }
    } else {
        DumpError::Io {
            file,
            message: e.to_string(),
        }
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn encode_f32<S: Scalar>(a: &Array2<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * 4);
    for v in a.iter() {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out
}

fn read_exact_size(path: &Path, expected: u64) -> Result<Vec<u8>, DumpError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(DumpError::SizeMismatch {
            file: file_label(path),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn decode_f32<S: Scalar>(path: &Path, rows: usize, cols: usize) -> Result<Array2<S>, DumpError> {
    let bytes = read_exact_size(path, (rows * cols * 4) as u64)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| S::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| DumpError::Schema(e.to_string()))
}

/// Writes `dump` into `dir` (created if needed) and returns its manifest.
pub fn save_dump<S: Scalar>(
    dump: &FeatureDump<S>,
    dir: &Path,
) -> Result<FeatureDumpManifest, DumpError> {
    dump.check()?;
    let manifest = dump.manifest();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<(), DumpError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    };
    write(&manifest.logits_file, &encode_f32(&dump.logits))?;
    if let (Some(labels), Some(file)) = (&dump.labels, &manifest.labels_file) {
        let mut bytes = Vec::with_capacity(labels.len() * 4);
        for &y in labels {
            bytes.extend_from_slice(&(y as u32).to_le_bytes());
        }
        write(file, &bytes)?;
    }
    for (layer, entry) in dump.layers.iter().zip(&manifest.layers) {
        write(&entry.file, &encode_f32(&layer.values))?;
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DumpError::Parse {
        file: MANIFEST_FILE.into(),
        message: e.to_string(),
    })?;
    write(MANIFEST_FILE, text.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<FeatureDumpManifest, DumpError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    FeatureDumpManifest::parse(&text)
}

pub fn load_dump<S: Scalar>(dir: &Path) -> Result<FeatureDump<S>, DumpError> {
    let m = load_manifest(dir)?;
    let n = m.n_samples;
    let logits = decode_f32(&dir.join(&m.logits_file), n, m.n_classes)?;
    let labels = match &m.labels_file {
        None => None,
        Some(file) => {
            let bytes = read_exact_size(&dir.join(file), (n * 4) as u64)?;
            let mut labels = Vec::with_capacity(n);
            for (row, c) in bytes.chunks_exact(4).enumerate() {
                let y = u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize;
                if y >= m.n_classes {
                    return Err(DumpError::LabelRange {
                        row,
                        label: y as u64,
                        n_classes: m.n_classes,
                    });
                }
                labels.push(y);
            }
            Some(labels)
        }
    };
    let layers = m
        .layers
        .iter()
        .map(|e| {
            Ok(DumpLayer {
                name: e.name.clone(),
                values: decode_f32(&dir.join(&e.file), n, e.k)?,
            })
        })
        .collect::<Result<_, DumpError>>()?;
    Ok(FeatureDump {
        logits,
        labels,
        layers,
    })
}

/// Writes any serializable artifact (centroids, statistics, weights) as JSON.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        DumpError::Parse {
            file: file_label(path),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn dump_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

/// One-dimensional in-distribution and two OOD populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            mu1: 0.0,
            sigma1: 1.0,
            mu2: 0.5,
            sigma_a: 1.0,
            sigma_b: 3.0,
            n: 5000,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.sigma1, self.mu2, self.sigma_a, self.sigma_b]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.sigma1 <= 0.0 || self.sigma_a <= 0.0 || self.sigma_b <= 0.0 {
            return Err(Error::Config(format!("invalid toy spec: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySets<S> {
    pub in_dist: Vec<S>,
    pub ood_a: Vec<S>,
    pub ood_b: Vec<S>,
}

fn draw<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, mu: f64, sigma: f64) -> Vec<S> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::lit(mu + sigma * z)
        })
        .collect()
}

pub fn gen_toy1d<S: Scalar>(spec: &ToySpec) -> Result<ToySets<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let in_dist = draw(&mut rng, spec.n, spec.mu1, spec.sigma1);
    let ood_a = draw(&mut rng, spec.n, spec.mu2, spec.sigma_a);
    let ood_b = draw(&mut rng, spec.n, spec.mu2, spec.sigma_b);
    Ok(ToySets {
        in_dist,
        ood_a,
        ood_b,
    })
}

/// Gaussian classes with diagonal covariances; `n` samples per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub d: usize,
    pub n_classes: usize,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    pub n: usize,
    pub seed: u64,
}

impl BlobSpec {
    /// Class means drawn from `N(0, separation²)` per coordinate, shared
    /// isotropic `std`.
    pub fn isotropic(
        d: usize,
        n_classes: usize,
        separation: f64,
        std: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, separation).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let means = (0..n_classes)
            .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let spec = Self {
            d,
            n_classes,
            means,
            stds: vec![vec![std; d]; n_classes],
            n,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same class geometry, different sample seed.
    pub fn with_seed(&self, seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.d == 0 {
            return Err(Error::Config("blob spec needs C >= 2 and d >= 1".into()));
        }
        let shapes_ok = self.means.len() == self.n_classes
            && self.stds.len() == self.n_classes
            && self.means.iter().all(|m| m.len() == self.d)
            && self.stds.iter().all(|s| s.len() == self.d);
        if !shapes_ok {
            return Err(Error::Config("blob means/stds do not match C × d".into()));
        }
        let values_ok = self.means.iter().flatten().all(|v| v.is_finite())
            && self
                .stds
                .iter()
                .flatten()
                .all(|&s| s.is_finite() && s > 0.0);
        if !values_ok {
            return Err(Error::Config(
                "blob means must be finite and stds positive".into(),
            ));
        }
        Ok(())
    }
}

/// Samples are grouped by class in label order.
pub fn gen_blobs<S: Scalar>(spec: &BlobSpec) -> Result<LabeledVectors<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.n * spec.n_classes;
    let mut x = Array2::zeros((total, spec.d));
    let mut labels = Vec::with_capacity(total);
    for c in 0..spec.n_classes {
        for i in 0..spec.n {
            let row = c * spec.n + i;
            for j in 0..spec.d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[row, j]] = S::lit(spec.means[c][j] + spec.stds[c][j] * z);
            }
            labels.push(c);
        }
    }
    LabeledVectors::new(x, labels, spec.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_dump() -> FeatureDump<f32> {
        FeatureDump {
            logits: array![[1.5, -2.0, 0.25], [0.0, 3.0, -1.0]],
            labels: Some(vec![2, 0]),
            layers: vec![DumpLayer {
                name: "h1".into(),
                values: array![[0.1, 0.2], [0.3, f32::MIN_POSITIVE]],
            }],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample_dump();
        save_dump(&d, dir.path()).unwrap();
        assert_eq!(load_dump::<f32>(dir.path()).unwrap(), d);
    }

    #[test]
    fn truncated_layer_names_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dump(&sample_dump(), dir.path()).unwrap();
        let p = dir.path().join("layer_0.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_dump::<f32>(dir.path()).unwrap_err();
        assert_eq!(
            err,
            DumpError::SizeMismatch {
                file: "layer_0.bin".into(),
                expected: 16,
                actual: 13
            }
        );
        assert!(err.to_string().contains("layer_0.bin"));
    }

    #[test]
    fn labels_optional() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = sample_dump();
        d.labels = None;
        let m = save_dump(&d, dir.path()).unwrap();
        assert!(m.labels_file.is_none());
        let loaded = load_dump::<f64>(dir.path()).unwrap();
        assert!(loaded.labels.is_none());
        assert!(loaded.labeled_logits().is_err());
    }

    #[test]
    fn missing_file_and_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        save_dump(&sample_dump(), dir.path()).unwrap();
        fs::write(dir.path().join(LABELS_FILE), 7u32.to_le_bytes().repeat(2)).unwrap();
        assert_eq!(
            load_dump::<f32>(dir.path()).unwrap_err().code(),
            "label_range"
        );
        fs::remove_file(dir.path().join(LOGITS_FILE)).unwrap();
        assert_eq!(
            load_dump::<f32>(dir.path()).unwrap_err().code(),
            "missing_file"
        );
    }

    #[test]
    fn manifest_rejections() {
        let good = sample_dump().manifest();
        let mut m = good.clone();
        m.version = 2;
        assert_eq!(m.validate().unwrap_err().code(), "version");
        let mut m = good.clone();
        m.dtype = "f64le".into();
        assert_eq!(m.validate().unwrap_err().code(), "dtype");
        let mut m = good.clone();
        m.layers[0].file = "../x".into();
        assert_eq!(m.validate().unwrap_err().code(), "schema");
        assert_eq!(FeatureDumpManifest::parse("{").unwrap_err().code(), "parse");
    }

    #[test]
    fn toy_determinism_and_empty() {
        let spec = ToySpec::default();
        assert_eq!(
            gen_toy1d::<f64>(&spec).unwrap(),
            gen_toy1d::<f64>(&spec).unwrap()
        );
        let empty = gen_toy1d::<f64>(&ToySpec {
            n: 0,
            ..spec.clone()
        })
        .unwrap();
        assert!(empty.in_dist.is_empty() && empty.ood_a.is_empty() && empty.ood_b.is_empty());
        assert!(gen_toy1d::<f64>(&ToySpec {
            sigma_b: 0.0,
            ..spec
        })
        .is_err());
    }

    #[test]
    fn blob_counts() {
        let spec = BlobSpec::isotropic(3, 4, 2.0, 1.0, 25, 5).unwrap();
        let b = gen_blobs::<f64>(&spec).unwrap();
        for c in 0..4 {
            assert_eq!(b.labels.iter().filter(|&&y| y == c).count(), 25);
        }
        assert_eq!(b, gen_blobs::<f64>(&spec).unwrap());
        let mut bad = spec.clone();
        bad.n_classes = 1;
        assert!(matches!(gen_blobs::<f64>(&bad), Err(Error::Config(_))));
    }
}
