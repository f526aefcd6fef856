use std::sync::{Arc, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gibbs::{gibbs_topic_expectations, TopicExpectations};
use super::{Document, LdaConfig, ThetaMatrix};
use crate::energy::Potential;
use crate::error::{Error, Result};
use crate::stochastic::GradientSource;

/// `∂ log p / ∂θ_kw = (α−1)/θ_kw − 1 + (|S|/|S̃|) Σ_d (E[n_dkw]/θ_kw − E[n_dk·]/θ_k·)`.
pub fn gradient_from_expectations(
    theta: &ThetaMatrix,
    expectations: &[TopicExpectations],
    config: &LdaConfig,
    batch_len: usize,
) -> Vec<f64> {
    let (k, w) = (theta.topics(), theta.vocab());
    let scale = if batch_len == 0 {
        0.0
    } else {
        config.corpus_size as f64 / batch_len as f64
    };
    let mut per_topic = vec![0.0; k];
    let mut per_word = vec![0.0; k * w];
    for e in expectations {
        for t in 0..k {
            per_topic[t] += e.n_k[t];
            for (i, word) in e.words.iter().enumerate() {
                per_word[t * w + word] += e.get(t, i);
            }
        }
    }
    let sums = theta.row_sums();
    let mut g = Vec::with_capacity(k * w);
    for t in 0..k {
        for v in 0..w {
            let th = theta.get(t, v);
            g.push((config.alpha - 1.0) / th - 1.0 + scale * (per_word[t * w + v] / th - per_topic[t] / sums[t]));
        }
    }
    g
}

/// Gibbs-estimated `∇ log p(θ | x)` from one minibatch. Documents run in
/// parallel, each on a generator seeded from `rng` in batch order.
pub fn log_posterior_grad(
    theta: &ThetaMatrix,
    batch: &[Document],
    config: &LdaConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if theta.topics() != config.topics || theta.vocab() != config.vocab {
        return Err(Error::dimension("LDA theta", config.dim(), theta.as_slice().len()));
    }
    let docs: Vec<(&Document, u64)> = batch.iter().filter(|d| !d.is_empty()).map(|d| (d, rng.next_u64())).collect();
    let expectations = docs
        .par_iter()
        .map(|(doc, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(*seed);
            gibbs_topic_expectations(theta, doc, config.gamma, config.burn_in, config.sweeps, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gradient_from_expectations(theta, &expectations, config, batch.len()))
}

/// Minibatch gradient in potential convention, `∇Ũ = −∇ log p`.
pub fn lda_stochastic_grad(
    theta: &ThetaMatrix,
    batch: &[Document],
    config: &LdaConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    Ok(log_posterior_grad(theta, batch, config, rng)?.into_iter().map(|g| -g).collect())
}

/// Placeholder potential giving the sampler its dimension. The LDA energy
/// is never evaluated exactly, so value and gradient are NaN; samplers must
/// draw gradients from [`LdaGradient`].
#[derive(Clone, Copy, Debug)]
pub struct LdaPotential {
    dim: usize,
}

impl LdaPotential {
    pub fn new(config: &LdaConfig) -> Self {
        Self { dim: config.dim() }
    }
}

impl Potential for LdaPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _theta: &[f64]) -> f64 {
        f64::NAN
    }

    fn gradient(&self, _theta: &[f64]) -> Vec<f64> {
        vec![f64::NAN; self.dim]
    }
}

/// Streaming gradient source: each call uses the current minibatch, which
/// the driver swaps with [`LdaGradient::set_batch`] between steps.
#[derive(Debug)]
pub struct LdaGradient {
    config: LdaConfig,
    batch: RwLock<Arc<Vec<Document>>>,
}

impl LdaGradient {
    pub fn new(config: LdaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            batch: RwLock::new(Arc::new(Vec::new())),
        })
    }

    pub fn config(&self) -> &LdaConfig {
        &self.config
    }

    pub fn set_batch(&self, docs: Vec<Document>) {
        *self.batch.write().expect("batch lock poisoned") = Arc::new(docs);
    }
}

impl GradientSource for LdaGradient {
    fn dim(&self) -> usize {
        self.config.dim()
    }

    fn gradient(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let batch = self.batch.read().expect("batch lock poisoned").clone();
        let th = ThetaMatrix::from_slice(self.config.topics, self.config.vocab, theta)?;
        lda_stochastic_grad(&th, &batch, &self.config, rng)
    }
}
