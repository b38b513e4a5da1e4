use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::linalg::Vector;

/// One client's private samples `(a_t, b_t)`.
#[derive(Debug, Clone)]
pub struct DataShard {
    pub features: Vec<Vector>,
    pub labels: Vec<f64>,
}

impl DataShard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |a| a.len())
    }
}

pub(crate) fn normal_vector(rng: &mut ChaCha8Rng, n: usize, std_dev: f64) -> Vector {
    let dist = Normal::new(0.0, std_dev).expect("finite std dev");
    Vector::from_fn(n, |_| dist.sample(rng))
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) enum LabelModel {
    /// `b = aᵀw + 0.1·ε`
    Linear,
    /// `b ~ Bernoulli(σ(aᵀw))`
    Logistic,
}

/// Ground-truth weight norm; keeps logits of unit-norm features in a
/// moderate range so classes overlap.
const TRUTH_NORM: f64 = 3.0;

/// Draws one shard per client. Features are `N(μ_i, I)` rows normalised to
/// unit length, with `μ_i ~ N(0, I)` per client in non-iid mode and `μ_i = 0`
/// otherwise. All clients share one ground-truth weight vector.
pub(crate) fn generate_shards(
    rng: &mut ChaCha8Rng,
    n: usize,
    clients: usize,
    samples: usize,
    noniid: bool,
    model: LabelModel,
) -> Vec<DataShard> {
    let mut truth = normal_vector(rng, n, 1.0);
    let norm = truth.norm();
    if norm > 0.0 {
        truth = truth.scaled(TRUTH_NORM / norm);
    }
    (0..clients)
        .map(|_| {
            let mean = if noniid {
                normal_vector(rng, n, 1.0)
            } else {
                Vector::zeros(n)
            };
            let mut features = Vec::with_capacity(samples);
            let mut labels = Vec::with_capacity(samples);
            for _ in 0..samples {
                let mut a = &normal_vector(rng, n, 1.0) + &mean;
                let len = a.norm();
                if len > 0.0 {
                    a = a.scaled(1.0 / len);
                }
                let signal = a.dot(&truth);
                let b = match model {
                    LabelModel::Linear => signal + 0.1 * standard_normal(rng),
                    LabelModel::Logistic => {
                        let p = 1.0 / (1.0 + (-signal).exp());
                        if rng.random::<f64>() < p {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                features.push(a);
                labels.push(b);
            }
            DataShard { features, labels }
        })
        .collect()
}
