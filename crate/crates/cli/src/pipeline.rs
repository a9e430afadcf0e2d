//! Fit, tune, score and evaluate one experiment setting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use igeood::datastore::{load_dump, load_json, DumpLayer, FeatureDump};
use igeood::eval::{evaluate, grid_search, tnr_at_tpr, Orientation, DEFAULT_TPR};
use igeood::nnet::{fgsm_generate, forward, grad_input_fr0, predict, preprocess_input, MlpParams};
use igeood::scoring::{
    fit_alpha, score_baseline, score_ensemble, score_fr_layer, score_fr_layer_ood,
    score_mahalanobis_layer, Aggregation, CentroidScorer, EnsembleConfig, EnsembleWeights,
    ScoreTable, ScorerKind, ScorerSpec,
};
use igeood::stats::{
    fit_centroids, fit_gaussian_stats, fit_ood_stats, fit_tied_covariance, CentroidSet,
    FeatureStats, LabeledFeatures, OodStats,
};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Setting};
use crate::error::{io_data, CliError, CliResult};
use crate::report::{fmt17, Report, ReportRow, Tuning};

pub const INPUT_LAYER: &str = "input";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

type Dump = FeatureDump<f64>;

struct Context {
    pool: rayon::ThreadPool,
    model: Option<MlpParams<f64>>,
    centroids: CentroidSet<f64>,
    /// Indices of the scored feature layers within every dump.
    layers: Vec<usize>,
    layer_names: Vec<String>,
    stats: FeatureStats<f64>,
}

impl Context {
    fn par_rows<T, F>(&self, n: usize, f: F) -> CliResult<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> igeood::Result<T> + Sync + Send,
    {
        self.pool
            .install(|| {
                (0..n)
                    .into_par_iter()
                    .map(&f)
                    .collect::<igeood::Result<Vec<T>>>()
            })
            .map_err(CliError::from)
    }

    fn features(&self, dump: &Dump, i: usize, l: usize) -> Vec<f64> {
        dump.layers[self.layers[l]].values.row(i).to_vec()
    }

    fn fr0_scores(&self, logits: &Array2<f64>, t: f64, agg: Aggregation) -> CliResult<Vec<f64>> {
        let scorer = CentroidScorer::new(&self.centroids, t)?;
        self.par_rows(logits.nrows(), |i| scorer.fr0(&logits.row(i).to_vec(), agg))
    }

    fn kl0_scores(&self, logits: &Array2<f64>, t: f64, agg: Aggregation) -> CliResult<Vec<f64>> {
        let scorer = CentroidScorer::new(&self.centroids, t)?;
        self.par_rows(logits.nrows(), |i| scorer.kl0(&logits.row(i).to_vec(), agg))
    }

    /// Logits after the score-increasing input perturbation. The model's
    /// logit shift `f(x̃) − f(x)` is added to the dumped logits, so `ε = 0`
    /// returns the dump unchanged.
    fn perturbed_logits(&self, dump: &Dump, t: f64, eps: f64) -> CliResult<Array2<f64>> {
        if eps == 0.0 {
            return Ok(dump.logits.clone());
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("input perturbation needs a model".into()))?;
        let input = input_layer(dump)?;
        let scorer = CentroidScorer::new(&self.centroids, t)?;
        let rows = self.par_rows(dump.n_samples(), |i| {
            let x = input.row(i).to_vec();
            let g = grad_input_fr0(model, &x, &scorer, Aggregation::Sum)?;
            let xt = preprocess_input(&x, eps, &g)?;
            let base = forward(model, &x)?.logits;
            let moved = forward(model, &xt)?.logits;
            Ok(dump
                .logits
                .row(i)
                .iter()
                .zip(base.iter().zip(&moved))
                .map(|(&z, (&b, &m))| z + (m - b))
                .collect::<Vec<f64>>())
        })?;
        let c = dump.n_classes();
        Ok(Array2::from_shape_vec((rows.len(), c), rows.concat()).expect("row widths"))
    }

    fn layer_scores(&self, dump: &Dump, l: usize) -> CliResult<Vec<f64>> {
        self.par_rows(dump.n_samples(), |i| {
            score_fr_layer(&self.features(dump, i, l), &self.stats, l)
        })
    }

    fn layer_ood_scores(&self, dump: &Dump, ood: &OodStats<f64>, l: usize) -> CliResult<Vec<f64>> {
        self.par_rows(dump.n_samples(), |i| {
            score_fr_layer_ood(&self.features(dump, i, l), &self.stats, ood, l)
        })
    }
}

fn input_layer(dump: &Dump) -> CliResult<&Array2<f64>> {
    dump.layer_index(INPUT_LAYER)
        .map(|i| &dump.layers[i].values)
        .ok_or_else(|| CliError::Config(format!("dump has no \"{INPUT_LAYER}\" layer")))
}

fn load(cfg: &ExperimentConfig, p: &Path) -> CliResult<Dump> {
    load_dump::<f64>(&cfg.resolve(p))
        .map_err(|e| CliError::Data(format!("{}: [{}] {e}", p.display(), e.code())))
}

fn check_compatible(reference: &Dump, other: &Dump, what: &str) -> CliResult<()> {
    if other.n_classes() != reference.n_classes() {
        return Err(CliError::Data(format!(
            "{what}: {} classes, training dump has {}",
            other.n_classes(),
            reference.n_classes()
        )));
    }
    for l in &reference.layers {
        let k = other
            .layers
            .iter()
            .find(|o| o.name == l.name)
            .map(|o| o.values.ncols());
        if k != Some(l.values.ncols()) {
            return Err(CliError::Data(format!(
                "{what}: layer {:?} missing or of different width",
                l.name
            )));
        }
    }
    Ok(())
}

/// Re-orders `other`'s layers to match `reference` by name.
fn align_layers(reference: &Dump, mut other: Dump) -> Dump {
    let mut layers = Vec::with_capacity(reference.layers.len());
    for l in &reference.layers {
        let i = other.layer_index(&l.name).expect("checked");
        layers.push(other.layers[i].clone());
    }
    other.layers = layers;
    other
}

/// FGSM samples from the validation inputs, passed through the model. Only
/// layers named `input` or `hidden_<i>` can be recomputed.
fn adversarial_dump(model: &MlpParams<f64>, source: &Dump, eps: f64) -> CliResult<Dump> {
    let input = input_layer(source)?;
    let mut sources = Vec::new();
    for l in &source.layers {
        let s = if l.name == INPUT_LAYER {
            Some(0)
        } else {
            l.name
                .strip_prefix("hidden_")
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|&i| i >= 1 && i <= model.n_hidden())
        };
        sources.push(s.ok_or_else(|| {
            CliError::Config(format!(
                "layer {:?} cannot be recomputed for adversarial validation",
                l.name
            ))
        })?);
    }
    let n = source.n_samples();
    let mut logits = Array2::zeros((n, source.n_classes()));
    let mut layers: Vec<DumpLayer<f64>> = source
        .layers
        .iter()
        .map(|l| DumpLayer {
            name: l.name.clone(),
            values: Array2::zeros(l.values.dim()),
        })
        .collect();
    for i in 0..n {
        let x = input.row(i).to_vec();
        let y = match &source.labels {
            Some(labels) => labels[i],
            None => predict(model, &x)?,
        };
        let adv = fgsm_generate(model, &x, y, eps)?;
        let f = forward(model, &adv)?;
        logits
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(&f.logits));
        for (layer, &s) in layers.iter_mut().zip(&sources) {
            let v = if s == 0 { &adv } else { &f.hidden[s - 1] };
            layer
                .values
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(v));
        }
    }
    Ok(FeatureDump {
        logits,
        labels: None,
        layers,
    })
}

fn default_columns() -> Vec<ScorerSpec> {
    let mut v = vec![
        ScorerSpec::new(ScorerKind::Msp),
        ScorerSpec::new(ScorerKind::Odin).with_temperature(1000.0),
        ScorerSpec::new(ScorerKind::Energy),
    ];
    for kind in [ScorerKind::Fr0, ScorerKind::Kl0] {
        for agg in [Aggregation::Sum, Aggregation::Min] {
            v.push(ScorerSpec::new(kind).with_aggregation(agg));
        }
    }
    v
}

struct Column {
    name: String,
    orientation: Orientation,
    temperature: f64,
    eps: f64,
    /// Scores per population: index 0 is the in-distribution test set.
    scores: Vec<Vec<f64>>,
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Report> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let threads = opts.threads.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let train = load(cfg, &cfg.train)?;
    if train.labels.is_none() {
        return Err(CliError::Data("training dump needs labels".into()));
    }
    let mut populations = vec![("in".to_string(), load(cfg, &cfg.test_in)?)];
    for (name, p) in &cfg.test_out {
        populations.push((name.clone(), load(cfg, p)?));
    }
    for (name, d) in &populations {
        check_compatible(&train, d, name)?;
    }
    let populations: Vec<(String, Dump)> = populations
        .into_iter()
        .map(|(n, d)| (n, align_layers(&train, d)))
        .collect();
    let val_in = match &cfg.validation_in {
        Some(p) => {
            let d = load(cfg, p)?;
            check_compatible(&train, &d, "validation_in")?;
            align_layers(&train, d)
        }
        None => train.clone(),
    };
    let model: Option<MlpParams<f64>> = match &cfg.model {
        Some(p) => {
            let m: MlpParams<f64> = load_json(&cfg.resolve(p)).map_err(CliError::from)?;
            m.validate()
                .map_err(|e| CliError::Data(format!("model: {e}")))?;
            if m.n_classes() != train.n_classes() {
                return Err(CliError::Data(
                    "model output width differs from the dump".into(),
                ));
            }
            Some(m)
        }
        None => None,
    };

    let layer_names: Vec<String> = match &cfg.feature_layers {
        Some(names) => names.clone(),
        None => train
            .layers
            .iter()
            .filter(|l| l.name != INPUT_LAYER)
            .map(|l| l.name.clone())
            .collect(),
    };
    let layers = layer_names
        .iter()
        .map(|n| {
            train
                .layer_index(n)
                .ok_or_else(|| CliError::Config(format!("unknown feature layer {n:?}")))
        })
        .collect::<CliResult<Vec<usize>>>()?;

    let mut centroid_cfg = cfg.centroids.clone();
    centroid_cfg.seed = seed;
    let centroids = fit_centroids(&train.labeled_logits()?, &centroid_cfg)?;
    let labels = train.labels.clone().expect("checked");
    let train_layers: Vec<Array2<f64>> = layers
        .iter()
        .map(|&i| train.layers[i].values.clone())
        .collect();
    let stats = fit_gaussian_stats(&LabeledFeatures::new(
        train_layers.clone(),
        labels.clone(),
        train.n_classes(),
    )?)?;

    let ctx = Context {
        pool,
        model,
        centroids,
        layers,
        layer_names,
        stats,
    };

    let (val_out, source) = match (&cfg.validation_out, &ctx.model) {
        (Some(p), _) => {
            let d = load(cfg, p)?;
            check_compatible(&train, &d, "validation_out")?;
            (Some(align_layers(&train, d)), "validation_out".to_string())
        }
        (None, Some(m)) if val_in.layer_index(INPUT_LAYER).is_some() => (
            Some(adversarial_dump(m, &val_in, cfg.fgsm_eps)?),
            format!("fgsm_eps_{}", cfg.fgsm_eps),
        ),
        _ => (None, "none".to_string()),
    };

    let mut grid = cfg.tune.clone().unwrap_or_default();
    if cfg.setting != Setting::GreyBox {
        grid.epsilons = vec![0.0];
    }
    let tuning = match &val_out {
        Some(vo) => {
            let choice = grid_search(&grid, |t, eps| {
                let si = ctx
                    .fr0_scores(
                        &ctx.perturbed_logits(&val_in, t, eps).map_err(to_core)?,
                        t,
                        Aggregation::Sum,
                    )
                    .map_err(to_core)?;
                let so = ctx
                    .fr0_scores(
                        &ctx.perturbed_logits(vo, t, eps).map_err(to_core)?,
                        t,
                        Aggregation::Sum,
                    )
                    .map_err(to_core)?;
                tnr_at_tpr(&si, &so, Orientation::HigherIsIn, DEFAULT_TPR)
            })?;
            Tuning {
                temperature: choice.temperature,
                eps: choice.eps,
                objective: Some(choice.objective),
                validation_source: source,
            }
        }
        None => Tuning {
            temperature: 1.0,
            eps: 0.0,
            objective: None,
            validation_source: source,
        },
    };
    let (t_star, eps_star) = (tuning.temperature, tuning.eps);

    let ood_stats = match (&val_out, cfg.setting) {
        (Some(vo), _) if cfg.validation_out.is_some() => {
            let feats: Vec<Array2<f64>> = ctx
                .layers
                .iter()
                .map(|&i| vo.layers[i].values.clone())
                .collect();
            Some(fit_ood_stats(&feats)?)
        }
        _ => None,
    };

    let mut columns: Vec<Column> = Vec::new();
    let headline = format!("igeood_{}", cfg.setting.name());
    let mut ensemble: Option<EnsembleWeights<f64>> = None;
    match cfg.setting {
        Setting::BlackBox | Setting::GreyBox => {
            let scores = populations
                .iter()
                .map(|(_, d)| {
                    let z = ctx.perturbed_logits(d, t_star, eps_star)?;
                    ctx.fr0_scores(&z, t_star, Aggregation::Sum)
                })
                .collect::<CliResult<Vec<_>>>()?;
            columns.push(Column {
                name: headline.clone(),
                orientation: Orientation::HigherIsIn,
                temperature: t_star,
                eps: eps_star,
                scores,
            });
        }
        Setting::WhiteBox | Setting::WhiteBoxPlus => {
            let vo = val_out.as_ref().ok_or_else(|| {
                CliError::Config(
                    "white_box needs OOD validation data: a validation_out dump, or a model with an input layer"
                        .into(),
                )
            })?;
            let with_ood = if cfg.setting == Setting::WhiteBoxPlus {
                Some(ood_stats.as_ref().expect("validated"))
            } else {
                None
            };
            let table_for = |d: &Dump| -> CliResult<ScoreTable<f64>> {
                let mut table = ScoreTable::new(d.n_samples());
                table.push(
                    format!("fr0_sum_T{t_star}"),
                    Orientation::HigherIsIn,
                    ctx.fr0_scores(&d.logits, t_star, Aggregation::Sum)?,
                )?;
                for l in 0..ctx.layers.len() {
                    table.push(
                        format!("fr_layer_{}", ctx.layer_names[l]),
                        Orientation::LowerIsIn,
                        ctx.layer_scores(d, l)?,
                    )?;
                }
                if let Some(os) = with_ood {
                    for l in 0..ctx.layers.len() {
                        table.push(
                            format!("fr_layer_ood_{}", ctx.layer_names[l]),
                            Orientation::HigherIsIn,
                            ctx.layer_ood_scores(d, os, l)?,
                        )?;
                    }
                }
                Ok(table)
            };
            let vi_table = table_for(&val_in)?;
            let vo_table = table_for(vo)?;
            let mut fit_table = ScoreTable::new(vi_table.n_samples() + vo_table.n_samples());
            for (a, b) in vi_table.columns().iter().zip(vo_table.columns()) {
                let mut values = a.values.clone();
                values.extend_from_slice(&b.values);
                fit_table.push(a.name.clone(), a.orientation, values)?;
            }
            let mut is_in = vec![true; vi_table.n_samples()];
            is_in.extend(std::iter::repeat_n(false, vo_table.n_samples()));
            let weights = fit_alpha(&fit_table, &is_in, &EnsembleConfig::default())?;
            let scores = populations
                .iter()
                .map(|(_, d)| {
                    let table = table_for(d)?;
                    (0..table.n_samples())
                        .map(|i| score_ensemble(&table.row(i), &weights).map_err(CliError::from))
                        .collect::<CliResult<Vec<f64>>>()
                })
                .collect::<CliResult<Vec<_>>>()?;
            columns.push(Column {
                name: headline.clone(),
                orientation: Orientation::HigherIsIn,
                temperature: t_star,
                eps: 0.0,
                scores,
            });
            ensemble = Some(weights);
        }
    }

    let mut specs = default_columns();
    for s in &cfg.scorers {
        if !specs.contains(s) {
            specs.push(s.clone());
        }
    }
    for spec in &specs {
        let name = if spec.kind.is_layerwise() {
            let l = spec.layer_index.unwrap_or(0);
            let layer = ctx
                .layer_names
                .get(l)
                .ok_or_else(|| CliError::Config(format!("{spec}: layer index {l} out of range")))?;
            let prefix = match spec.kind {
                ScorerKind::FrLayer => "fr_layer",
                ScorerKind::FrLayerOod => "fr_layer_ood",
                _ => "mahalanobis",
            };
            format!("{prefix}_{layer}")
        } else {
            spec.to_string()
        };
        if columns.iter().any(|c| c.name == name) {
            continue;
        }
        let scores = populations
            .iter()
            .map(|(_, d)| spec_scores(&ctx, spec, d, ood_stats.as_ref(), &train_layers, &labels))
            .collect::<CliResult<Vec<_>>>()?;
        columns.push(Column {
            name,
            orientation: spec.orientation(),
            temperature: spec.temperature,
            eps: 0.0,
            scores,
        });
    }

    let mut rows = Vec::new();
    for col in &columns {
        for (p, (ood_name, _)) in populations.iter().enumerate().skip(1) {
            let r = evaluate(&col.scores[0], &col.scores[p], col.orientation)
                .map_err(|e| CliError::Data(format!("{}: {e}", col.name)))?;
            rows.push(ReportRow {
                scorer: col.name.clone(),
                ood_set: ood_name.clone(),
                tnr_at_tpr95: r.tnr_at_tpr95,
                auroc: r.auroc,
                aupr: r.aupr,
                delta: r.delta,
                temperature: col.temperature,
                eps: col.eps,
            });
        }
    }

    let report = Report {
        setting: cfg.setting.name().to_string(),
        seed,
        tuning,
        ensemble_columns: ensemble
            .as_ref()
            .map(|w| w.columns.clone())
            .unwrap_or_default(),
        ensemble_alpha: ensemble
            .as_ref()
            .map(|w| w.alpha.clone())
            .unwrap_or_default(),
        rows,
    };

    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)));
    if let Some(dir) = out {
        report.write(&dir)?;
        write_scores(&dir.join("scores.csv"), &populations, &columns[0])?;
    }
    Ok(report)
}

fn to_core(e: CliError) -> igeood::Error {
    match e {
        CliError::Config(m) => igeood::Error::Config(m),
        CliError::Fit(m) => igeood::Error::Fit(m),
        CliError::Data(m) => igeood::Error::InvalidInput(m),
    }
}

fn spec_scores(
    ctx: &Context,
    spec: &ScorerSpec,
    d: &Dump,
    ood: Option<&OodStats<f64>>,
    train_layers: &[Array2<f64>],
    labels: &[usize],
) -> CliResult<Vec<f64>> {
    let t = spec.temperature;
    match spec.kind {
        ScorerKind::Fr0 => ctx.fr0_scores(&d.logits, t, spec.aggregation),
        ScorerKind::Kl0 => ctx.kl0_scores(&d.logits, t, spec.aggregation),
        ScorerKind::Msp | ScorerKind::Odin | ScorerKind::Energy => ctx
            .par_rows(d.n_samples(), |i| {
                score_baseline(&d.logits.row(i).to_vec(), spec.kind, t)
            }),
        ScorerKind::FrLayer => ctx.layer_scores(d, spec.layer_index.unwrap_or(0)),
        ScorerKind::FrLayerOod => {
            let os = ood
                .ok_or_else(|| CliError::Config(format!("{spec} needs an OOD validation dump")))?;
            ctx.layer_ood_scores(d, os, spec.layer_index.unwrap_or(0))
        }
        ScorerKind::MahalanobisLayer => {
            let l = spec.layer_index.unwrap_or(0);
            let means = &ctx.stats.layer(l)?.class_means;
            let cov = fit_tied_covariance(train_layers[l].view(), labels, means.view())?;
            ctx.par_rows(d.n_samples(), |i| {
                score_mahalanobis_layer(&ctx.features(d, i, l), means.view(), &cov)
            })
        }
    }
}

fn write_scores(path: &Path, populations: &[(String, Dump)], col: &Column) -> CliResult<()> {
    let mut text = String::from("population,score\n");
    for ((name, _), scores) in populations.iter().zip(&col.scores) {
        for &s in scores {
            text.push_str(name);
            text.push(',');
            text.push_str(&fmt17(s));
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| io_data(path, e))
}

/// Loads every population of `cfg` and returns sample counts by name.
pub fn population_sizes(cfg: &ExperimentConfig) -> CliResult<BTreeMap<String, usize>> {
    let mut m = BTreeMap::new();
    m.insert("in".to_string(), load(cfg, &cfg.test_in)?.n_samples());
    for (name, p) in &cfg.test_out {
        m.insert(name.clone(), load(cfg, p)?.n_samples());
    }
    Ok(m)
}
