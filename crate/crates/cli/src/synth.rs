//! Builds a self-contained synthetic experiment: Gaussian-blob data, a
//! trained network, feature dumps and one config per setting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use igeood::datastore::{gen_blobs, save_dump, save_json, BlobSpec, DumpLayer, FeatureDump};
use igeood::eval::TuneGrid;
use igeood::nnet::{forward, train, Activation, MlpParams, TrainConfig};
use igeood::stats::CentroidFitConfig;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Setting};
use crate::error::{io_data, CliError, CliResult};
use crate::pipeline::INPUT_LAYER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub d: usize,
    pub n_classes: usize,
    pub separation: f64,
    pub std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    /// Shift of the easy OOD set along every input coordinate.
    pub easy_shift: f64,
    /// Standard deviation of the broad validation OOD set.
    pub validation_std: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d: 8,
            n_classes: 4,
            separation: 2.0,
            std: 1.0,
            n_train: 150,
            n_test: 50,
            n_ood: 200,
            easy_shift: 4.0,
            validation_std: 3.0,
            hidden: vec![16, 16],
            epochs: 60,
            seed: 0,
        }
    }
}

/// `n` draws from `N(mean, std²·I)`. Sampled as two identical classes,
/// since blob specs need at least two.
fn gaussian_cloud(mean: Vec<f64>, std: f64, n: usize, seed: u64) -> CliResult<Array2<f64>> {
    let d = mean.len();
    let spec = BlobSpec {
        d,
        n_classes: 2,
        means: vec![mean; 2],
        stds: vec![vec![std; d]; 2],
        n: n.div_ceil(2),
        seed,
    };
    let v = gen_blobs::<f64>(&spec)?;
    Ok(v.x.slice(ndarray::s![..n, ..]).to_owned())
}

/// Runs the network over `x` and packages logits plus `input` and
/// `hidden_<i>` layers.
pub fn make_dump(
    model: &MlpParams<f64>,
    x: &Array2<f64>,
    labels: Option<Vec<usize>>,
) -> CliResult<FeatureDump<f32>> {
    let n = x.nrows();
    let mut logits = Array2::zeros((n, model.n_classes()));
    let mut hidden: Vec<Array2<f32>> = model.layer_sizes[1..model.layer_sizes.len() - 1]
        .iter()
        .map(|&k| Array2::zeros((n, k)))
        .collect();
    for i in 0..n {
        let f = forward(model, &x.row(i).to_vec())?;
        for (j, v) in f.logits.iter().enumerate() {
            logits[[i, j]] = *v as f32;
        }
        for (h, vals) in hidden.iter_mut().zip(&f.hidden) {
            for (j, v) in vals.iter().enumerate() {
                h[[i, j]] = *v as f32;
            }
        }
    }
    let mut layers = vec![DumpLayer {
        name: INPUT_LAYER.into(),
        values: x.mapv(|v| v as f32),
    }];
    for (i, h) in hidden.into_iter().enumerate() {
        layers.push(DumpLayer {
            name: format!("hidden_{}", i + 1),
            values: h,
        });
    }
    Ok(FeatureDump {
        logits,
        labels,
        layers,
    })
}

pub fn configs() -> Vec<(Setting, ExperimentConfig)> {
    let mut test_out = BTreeMap::new();
    test_out.insert("easy".to_string(), "ood_easy".into());
    test_out.insert("near".to_string(), "ood_near".into());
    [
        Setting::BlackBox,
        Setting::GreyBox,
        Setting::WhiteBox,
        Setting::WhiteBoxPlus,
    ]
    .into_iter()
    .map(|setting| {
        let tune = TuneGrid {
            temperatures: vec![1.0, 2.0, 5.0, 10.0, 100.0, 1000.0],
            epsilons: if setting == Setting::GreyBox {
                vec![0.0, 0.005, 0.01, 0.02, 0.05]
            } else {
                vec![0.0]
            },
        };
        let cfg = ExperimentConfig {
            setting,
            train: "train".into(),
            test_in: "test_in".into(),
            test_out: test_out.clone(),
            validation_in: Some("validation_in".into()),
            validation_out: Some("validation_out".into()),
            model: Some("model.json".into()),
            scorers: vec![],
            feature_layers: None,
            tune: Some(tune),
            centroids: CentroidFitConfig::default(),
            fgsm_eps: 0.05,
            seed: 0,
            out: None,
            base_dir: Default::default(),
        };
        (setting, cfg)
    })
    .collect()
}

pub fn synth(spec: &SynthSpec, dir: &Path) -> CliResult<()> {
    if spec.n_classes < 2 || spec.d == 0 {
        return Err(CliError::Config(
            "synth needs at least 2 classes and d >= 1".into(),
        ));
    }
    let blobs = BlobSpec::isotropic(
        spec.d,
        spec.n_classes,
        spec.separation,
        spec.std,
        spec.n_train,
        spec.seed,
    )?;
    // one extra class from the same prior; its first C means match `blobs`
    let unseen = BlobSpec::isotropic(
        spec.d,
        spec.n_classes + 1,
        spec.separation,
        spec.std,
        0,
        spec.seed,
    )?;
    let train_data = gen_blobs::<f64>(&blobs)?;
    let cfg = TrainConfig {
        hidden_sizes: spec.hidden.clone(),
        activation: Activation::Tanh,
        epochs: spec.epochs,
        seed: spec.seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(&train_data, &cfg)?;

    let test_in = gen_blobs::<f64>(&blobs.with_seed(spec.seed + 1, spec.n_test))?;
    let val_in = gen_blobs::<f64>(&blobs.with_seed(spec.seed + 2, spec.n_test))?;
    let near = gaussian_cloud(
        unseen.means[spec.n_classes].clone(),
        spec.std,
        spec.n_ood,
        spec.seed + 3,
    )?;
    let easy = gaussian_cloud(
        vec![spec.easy_shift; spec.d],
        spec.std,
        spec.n_ood,
        spec.seed + 4,
    )?;
    let val_out = gaussian_cloud(
        vec![0.0; spec.d],
        spec.validation_std,
        spec.n_ood,
        spec.seed + 5,
    )?;

    fs::create_dir_all(dir).map_err(|e| io_data(dir, e))?;
    let save = |name: &str, d: FeatureDump<f32>| -> CliResult<()> {
        save_dump(&d, &dir.join(name))?;
        Ok(())
    };
    save(
        "train",
        make_dump(&model, &train_data.x, Some(train_data.labels.clone()))?,
    )?;
    save(
        "test_in",
        make_dump(&model, &test_in.x, Some(test_in.labels.clone()))?,
    )?;
    save(
        "validation_in",
        make_dump(&model, &val_in.x, Some(val_in.labels.clone()))?,
    )?;
    save("ood_near", make_dump(&model, &near, None)?)?;
    save("ood_easy", make_dump(&model, &easy, None)?)?;
    save("validation_out", make_dump(&model, &val_out, None)?)?;
    save_json(&model, &dir.join("model.json"))?;
    for (setting, cfg) in configs() {
        let p = dir.join(format!("{}.json", setting.name()));
        fs::write(
            &p,
            serde_json::to_string_pretty(&cfg).expect("serializable"),
        )
        .map_err(|e| io_data(&p, e))?;
    }
    Ok(())
}
