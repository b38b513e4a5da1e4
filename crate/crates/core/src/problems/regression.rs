use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{generate_shards, DataShard, LabelModel};
use super::{check_dim, ConsensusProblem, Objective};
use crate::error::{Error, Result};
use crate::linalg::{SymMat, Vector};

/// `f(x) = Σ_t (1/2d) (a_tᵀx − b_t)²`
#[derive(Debug, Clone)]
pub struct LinearRegressionAgent {
    pub shard: DataShard,
}

impl Objective for LinearRegressionAgent {
    fn dim(&self) -> usize {
        self.shard.dim()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let d = self.shard.len() as f64;
        Ok(self
            .shard
            .features
            .iter()
            .zip(&self.shard.labels)
            .map(|(a, b)| {
                let r = a.dot(x) - b;
                r * r
            })
            .sum::<f64>()
            / (2.0 * d))
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x)?;
        let d = self.shard.len() as f64;
        let mut g = Vector::zeros(self.dim());
        for (a, b) in self.shard.features.iter().zip(&self.shard.labels) {
            g.axpy((a.dot(x) - b) / d, a);
        }
        Ok(g)
    }

    fn hessian(&self, _x: &Vector) -> Result<Option<SymMat>> {
        Ok(Some(gram(&self.shard, |_| 1.0)))
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

/// `f(x) = (1/d) Σ_t [ln(1 + exp(a_tᵀx)) − b_t a_tᵀx] + (reg/2)‖x‖²`
#[derive(Debug, Clone)]
pub struct LogisticAgent {
    pub shard: DataShard,
    pub reg: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `(1/d) Σ_t w_t a_t a_tᵀ`
fn gram(shard: &DataShard, weight: impl Fn(usize) -> f64) -> SymMat {
    let n = shard.dim();
    let d = shard.len() as f64;
    let mut h = SymMat::zeros(n);
    for (t, a) in shard.features.iter().enumerate() {
        let w = weight(t) / d;
        h = h.rank_two_update(w, a, 0.0, a);
    }
    h
}

impl Objective for LogisticAgent {
    fn dim(&self) -> usize {
        self.shard.dim()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let d = self.shard.len() as f64;
        let loss: f64 = self
            .shard
            .features
            .iter()
            .zip(&self.shard.labels)
            .map(|(a, b)| {
                let t = a.dot(x);
                softplus(t) - b * t
            })
            .sum();
        Ok(loss / d + 0.5 * self.reg * x.norm_sq())
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x)?;
        let d = self.shard.len() as f64;
        let mut g = x.scaled(self.reg);
        for (a, b) in self.shard.features.iter().zip(&self.shard.labels) {
            g.axpy((sigmoid(a.dot(x)) - b) / d, a);
        }
        Ok(g)
    }

    fn hessian(&self, x: &Vector) -> Result<Option<SymMat>> {
        check_dim(self.dim(), x)?;
        let mut h = gram(&self.shard, |t| {
            let s = sigmoid(self.shard.features[t].dot(x));
            s * (1.0 - s)
        });
        h.add_diag(self.reg);
        Ok(Some(h))
    }
}

fn check_counts(n: usize, agents: usize, samples: usize) -> Result<()> {
    if n == 0 || agents == 0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "regression problems need n, N and samples_per_client >= 1".into(),
        ));
    }
    Ok(())
}

const SHARD_NOTE: &str =
    "features N(mu_i, I) rows normalised to unit length; non-iid mu_i ~ N(0, I) (local choice)";

pub fn make_linear_regression(
    n: usize,
    agents: usize,
    samples_per_client: usize,
    noniid: bool,
    seed: u64,
) -> Result<ConsensusProblem> {
    check_counts(n, agents, samples_per_client)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shards = generate_shards(&mut rng, n, agents, samples_per_client, noniid, LabelModel::Linear);
    let objectives = shards
        .into_iter()
        .map(|shard| Arc::new(LinearRegressionAgent { shard }) as Arc<dyn Objective>)
        .collect();
    let mut p = ConsensusProblem::new("linear-regression", n, objectives)?;
    p.notes.push(SHARD_NOTE.into());
    Ok(p)
}

/// Client features are always non-iid for the classification family.
pub fn make_logistic_regression(
    n: usize,
    agents: usize,
    samples_per_client: usize,
    reg: f64,
    seed: u64,
) -> Result<ConsensusProblem> {
    check_counts(n, agents, samples_per_client)?;
    if !(reg >= 0.0) {
        return Err(Error::InvalidArgument(format!("reg must be >= 0, got {reg}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shards = generate_shards(&mut rng, n, agents, samples_per_client, true, LabelModel::Logistic);
    let objectives = shards
        .into_iter()
        .map(|shard| Arc::new(LogisticAgent { shard, reg }) as Arc<dyn Objective>)
        .collect();
    let mut p = ConsensusProblem::new("logistic-regression", n, objectives)?;
    p.notes.push(SHARD_NOTE.into());
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::problems::data::normal_vector;
    use crate::problems::fd;

    #[test]
    fn single_sample_normal_equations() {
        let agent = LinearRegressionAgent {
            shard: DataShard {
                features: vec![vec![1.0, 0.0].into()],
                labels: vec![3.0],
            },
        };
        for other in [-2.0, 0.0, 7.5] {
            let g = agent.gradient(&vec![3.0, other].into()).unwrap();
            assert_eq!(g.norm_inf(), 0.0);
        }
    }

    #[test]
    fn linear_hessian_is_scaled_gram_and_psd() {
        let p = make_linear_regression(5, 3, 7, true, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = normal_vector(&mut rng, 5, 1.0);
        for a in &p.agents {
            let h = a.hessian(&x).unwrap().unwrap();
            let num = fd::hessian(a.as_ref(), &x);
            for i in 0..5 {
                fd::assert_close(&h.to_rows()[i].clone().into(), &num[i].clone().into(), 1e-6);
            }
            assert!(symmetric_eigenvalues(&h)[0] >= -1e-12);
        }
    }

    #[test]
    fn logistic_value_at_origin() {
        let agent = LogisticAgent {
            shard: DataShard {
                features: vec![vec![0.3, -1.0].into(), vec![2.0, 0.5].into()],
                labels: vec![0.0, 1.0],
            },
            reg: 0.001,
        };
        // each sample contributes ln 2 at x = 0
        assert!((agent.value(&Vector::zeros(2)).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_stable_for_large_margins() {
        let agent = LogisticAgent {
            shard: DataShard {
                features: vec![vec![1.0].into()],
                labels: vec![1.0],
            },
            reg: 0.0,
        };
        assert!(agent.value(&vec![800.0].into()).unwrap().is_finite());
        assert!(agent.value(&vec![-800.0].into()).unwrap().is_finite());
        assert!(agent.gradient(&vec![-800.0].into()).unwrap().is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let lin = make_linear_regression(6, 3, 10, true, 1).unwrap();
        let log = make_logistic_regression(6, 3, 10, 0.001, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = normal_vector(&mut rng, 6, 2.0);
            for a in lin.agents.iter().chain(&log.agents) {
                fd::assert_close(&a.gradient(&x).unwrap(), &fd::gradient(a.as_ref(), &x), 1e-5);
            }
        }
    }

    #[test]
    fn labels_are_binary_for_logistic() {
        let p = make_logistic_regression(4, 2, 30, 0.0, 2).unwrap();
        let dbg = format!("{:?}", p.agents[0]);
        assert!(dbg.contains("labels"));
        assert!(make_logistic_regression(4, 2, 30, -1.0, 2).is_err());
    }

    #[test]
    fn deterministic_generation() {
        let a = make_linear_regression(4, 2, 5, true, 42).unwrap();
        let b = make_linear_regression(4, 2, 5, true, 42).unwrap();
        let x: Vector = vec![0.1, 0.2, 0.3, 0.4].into();
        assert_eq!(
            a.total_value(&x).unwrap().to_bits(),
            b.total_value(&x).unwrap().to_bits()
        );
    }
}
