#![allow(dead_code)]

use std::path::PathBuf;

use pacvb_core::data::{LabelColumn, LabeledDataset};
use pacvb_core::measure::{Family, GaussianMeasure};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn pima() -> LabeledDataset {
    pacvb_core::data::load_csv(data_path("pima.csv"), &LabelColumn::Name("type".into()), "Yes").unwrap()
}

pub fn breast() -> LabeledDataset {
    pacvb_core::data::load_csv(data_path("breast.csv"), &LabelColumn::Name("class".into()), "malignant").unwrap()
}

/// Features uniform on `[-1, 1]`, labels uniform with both classes present.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> LabeledDataset {
    let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    labels[0] = 1.0;
    labels[1] = -1.0;
    LabeledDataset::new(features, labels, d).unwrap()
}

/// Means standard normal, unconstrained scale coordinates uniform on
/// `[-1.5, 0.5]`.
pub fn random_measure(rng: &mut ChaCha8Rng, family: Family, d: usize) -> GaussianMeasure {
    let mut p: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    p.extend((0..family.scale_len(d)).map(|_| rng.random_range(-1.5..0.5)));
    GaussianMeasure::from_unconstrained(family, d, &p).unwrap()
}

/// Lower Cholesky factor of a small dense row-major matrix.
pub fn cholesky(a: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = a[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            l[i * d + j] = if i == j { s.sqrt() } else { s / l[j * d + j] };
        }
    }
    l
}

pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Monte Carlo estimates of the expected 0-1, hinge and mixed-pair ranking
/// risks, drawing `θ = m + Lz` from the dense covariance.
pub fn mc_expected_risks(q: &GaussianMeasure, ds: &LabeledDataset, draws: usize, rng: &mut ChaCha8Rng) -> [McEstimate; 3] {
    let d = q.dim();
    let l = cholesky(&q.covariance_matrix(), d);
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| ds.label(i) > 0.0);
    let pairs = (pos.len() * neg.len()) as f64;
    let mut z = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut scores = vec![0.0; ds.n()];
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            theta[i] = q.mean()[i] + (0..=i).map(|k| l[i * d + k] * z[k]).sum::<f64>();
        }
        let (mut zero_one, mut hinge) = (0.0, 0.0);
        for (i, s) in scores.iter_mut().enumerate() {
            *s = ds.row(i).iter().zip(&theta).map(|(x, t)| x * t).sum();
            let margin = ds.label(i) * *s;
            if margin < 0.0 {
                zero_one += 1.0;
            }
            hinge += (1.0 - margin).max(0.0);
        }
        let misordered = pos
            .iter()
            .map(|&i| neg.iter().filter(|&&j| scores[i] < scores[j]).count())
            .sum::<usize>() as f64;
        let vals = [zero_one / ds.n() as f64, hinge / ds.n() as f64, misordered / pairs];
        for k in 0..3 {
            sum[k] += vals[k];
            sq[k] += vals[k] * vals[k];
        }
    }
    let n = draws as f64;
    std::array::from_fn(|k| {
        let mean = sum[k] / n;
        let var = (sq[k] / n - mean * mean).max(0.0) * n / (n - 1.0);
        McEstimate {
            mean,
            se: (var / n).sqrt(),
        }
    })
}
