use igeood::datastore::{gen_blobs, BlobSpec};
use igeood::nnet::{
    cross_entropy, fgsm_generate, forward, grad_input_fr0, grad_input_loss, loss_and_gradients,
    predict, train, Activation, LabeledVectors, MlpParams, TrainConfig,
};
use igeood::scoring::{score_fr0, Aggregation, CentroidScorer};
use igeood::stats::{CentroidSet, FitDistance};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Relative error with a 1e-3 floor on the scale. With two classes the summed
/// score is flat between the centroids, and there central differences of
/// arccos near 1 carry ~1e-8 of rounding noise against an exact zero.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_centroids(rng: &mut ChaCha8Rng, c: usize) -> CentroidSet<f64> {
    let m = Array2::from_shape_fn((c, c), |_| rng.random_range(-2.0..2.0));
    CentroidSet::from_centroids(m, FitDistance::FisherRao).unwrap()
}

#[test]
fn grad_input_fr0_matches_finite_differences() {
    for seed in 0..10 {
        for act in [Activation::Tanh, Activation::Softplus] {
            for agg in [Aggregation::Sum, Aggregation::Min] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = MlpParams::<f64>::init(&[2, 3, 2], act, seed).unwrap();
                let c = random_centroids(&mut rng, 2);
                let t = [1.0, 2.5][seed as usize % 2];
                let x = random_vec(&mut rng, 2, 2.0);
                let scorer = CentroidScorer::new(&c, t).unwrap();
                let g = grad_input_fr0(&p, &x, &scorer, agg).unwrap();
                let f = |x: &[f64]| score_fr0(&forward(&p, x).unwrap().logits, &c, t, agg).unwrap();
                for j in 0..x.len() {
                    let (mut up, mut dn) = (x.clone(), x.clone());
                    up[j] += H;
                    dn[j] -= H;
                    let fd = (f(&up) - f(&dn)) / (2.0 * H);
                    assert!(
                        rel_err(g[j], fd) < 1e-4,
                        "seed {seed} {act:?} {agg:?} j {j}: {} vs {fd}",
                        g[j]
                    );
                }
            }
        }
    }
}

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut p = MlpParams::<f64>::init(&[2, 3, 2], Activation::Tanh, seed).unwrap();
        for b in p.biases.iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = random_vec(&mut rng, 2, 2.0);
        let y = (seed % 2) as usize;
        let (_, g) = loss_and_gradients(&p, &x, y).unwrap();
        for l in 0..p.weights.len() {
            for idx in 0..p.weights[l].len() {
                let (r, c) = (idx / p.weights[l].ncols(), idx % p.weights[l].ncols());
                let mut up = p.clone();
                up.weights[l][[r, c]] += H;
                let mut dn = p.clone();
                dn.weights[l][[r, c]] -= H;
                let fd = (cross_entropy(&up, &x, y).unwrap() - cross_entropy(&dn, &x, y).unwrap())
                    / (2.0 * H);
                assert!(
                    rel_err(g.weights[l][[r, c]], fd) < 1e-4,
                    "seed {seed} w{l}[{r},{c}]"
                );
            }
            for i in 0..p.biases[l].len() {
                let mut up = p.clone();
                up.biases[l][i] += H;
                let mut dn = p.clone();
                dn.biases[l][i] -= H;
                let fd = (cross_entropy(&up, &x, y).unwrap() - cross_entropy(&dn, &x, y).unwrap())
                    / (2.0 * H);
                assert!(rel_err(g.biases[l][i], fd) < 1e-4, "seed {seed} b{l}[{i}]");
            }
        }
        let gx = grad_input_loss(&p, &x, y).unwrap();
        for j in 0..2 {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += H;
            dn[j] -= H;
            let fd = (cross_entropy(&p, &up, y).unwrap() - cross_entropy(&p, &dn, y).unwrap())
                / (2.0 * H);
            assert!(rel_err(gx[j], fd) < 1e-4);
        }
    }
}

#[test]
fn fgsm_sign_pattern_and_ascent() {
    let spec = BlobSpec::isotropic(4, 3, 2.0, 1.0, 100, 2).unwrap();
    let data = gen_blobs::<f64>(&spec).unwrap();
    let cfg = TrainConfig {
        hidden_sizes: vec![8],
        epochs: 10,
        ..TrainConfig::default()
    };
    let (p, _) = train(&data, &cfg).unwrap();
    let eps = 1e-3;
    let mut ascended = 0;
    for i in 0..data.len() {
        let x = data.x.row(i).to_vec();
        let y = data.labels[i];
        let adv = fgsm_generate(&p, &x, y, eps).unwrap();
        for j in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += H;
            dn[j] -= H;
            let fd = cross_entropy(&p, &up, y).unwrap() - cross_entropy(&p, &dn, y).unwrap();
            let step = adv[j] - x[j];
            if fd.abs() > 1e-9 {
                assert_eq!(step.signum(), fd.signum());
                assert!((step.abs() - eps).abs() < 1e-15);
            }
        }
        if cross_entropy(&p, &adv, y).unwrap() >= cross_entropy(&p, &x, y).unwrap() {
            ascended += 1;
        }
    }
    assert!(ascended as f64 >= 0.95 * data.len() as f64, "{ascended}");
}

#[test]
fn separable_blobs_train_to_high_accuracy() {
    let spec = BlobSpec {
        d: 2,
        n_classes: 2,
        means: vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
        stds: vec![vec![0.7, 0.7]; 2],
        n: 200,
        seed: 4,
    };
    let data = gen_blobs::<f64>(&spec).unwrap();
    let cfg = TrainConfig {
        hidden_sizes: vec![4],
        epochs: 200,
        ..TrainConfig::default()
    };
    let (p, report) = train(&data, &cfg).unwrap();
    assert!(report.final_loss <= report.initial_loss);
    let correct = (0..data.len())
        .filter(|&i| predict(&p, &data.x.row(i).to_vec()).unwrap() == data.labels[i])
        .count();
    assert!(correct as f64 >= 0.99 * data.len() as f64);

    let x = [0.4, -0.3];
    let doubled = [0.8, -0.6];
    assert_ne!(
        forward(&p, &x).unwrap().logits,
        forward(&p, &doubled).unwrap().logits
    );
}

#[test]
fn training_is_deterministic() {
    let spec = BlobSpec::isotropic(3, 3, 2.0, 1.0, 30, 9).unwrap();
    let data: LabeledVectors<f64> = gen_blobs(&spec).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    assert_eq!(train(&data, &cfg).unwrap().0, train(&data, &cfg).unwrap().0);
}

#[test]
fn forward_golden_vector() {
    let p = MlpParams::<f64>::init(&[4, 5, 3], Activation::Tanh, 7).unwrap();
    let f = forward(&p, &[0.5, -1.0, 2.0, 0.25]).unwrap();
    let bits: Vec<u64> = f.logits.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits, GOLDEN_LOGIT_BITS, "{:?}", f.logits);
    assert_eq!(f.hidden.len(), 1);
    assert_eq!(f.hidden[0].len(), 5);
}

// recorded from the first verified run:
// [0.18649642389860943, 0.23341417125815622, 0.23965046659706904]
const GOLDEN_LOGIT_BITS: [u64; 3] = [
    4595887262091941084,
    4597577652088145228,
    4597802338307061229,
];
