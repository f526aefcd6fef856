//! Expanded-mean latent Dirichlet allocation: `β_kw = θ_kw / Σ_w θ_kw` with
//! independent `Gamma(α, 1)` priors on `θ_kw`, document proportions
//! marginalized, and topic assignments handled by per-document Gibbs sampling.

mod corpus;
mod gibbs;
mod gradient;
mod perplexity;

pub use corpus::{
    format_corpus, parse_corpus, read_corpus, read_vocabulary, write_corpus, write_vocabulary, Document,
    DocumentStream, SyntheticCorpus, SyntheticCorpusSpec,
};
pub use gibbs::{exact_topic_expectations, gibbs_conditional, gibbs_topic_expectations, TopicExpectations};
pub use gradient::{
    gradient_from_expectations, lda_stochastic_grad, log_posterior_grad, LdaGradient, LdaPotential,
};
pub use perplexity::{perplexity, Perplexity};

use crate::error::{Error, Result};
use crate::metric::MetricSpec;

/// Model and inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaConfig {
    /// Topic count `K`.
    pub topics: usize,
    /// Vocabulary size `W`.
    pub vocab: usize,
    /// Gamma shape of the `θ_kw` prior.
    pub alpha: f64,
    /// Symmetric Dirichlet parameter of the document proportions.
    pub gamma: f64,
    /// Documents per minibatch.
    pub batch_size: usize,
    /// Gibbs sweeps discarded per document.
    pub burn_in: usize,
    /// Gibbs sweeps averaged per document.
    pub sweeps: usize,
    /// Total corpus size `|S|` used to rescale minibatch sums.
    pub corpus_size: usize,
}

impl LdaConfig {
    /// `α = 0.01`, `γ = 0.1`, minibatches of 50 and 2 + 4 Gibbs sweeps.
    pub fn new(topics: usize, vocab: usize, corpus_size: usize) -> Self {
        Self {
            topics,
            vocab,
            alpha: 0.01,
            gamma: 0.1,
            batch_size: 50,
            burn_in: 2,
            sweeps: 4,
            corpus_size,
        }
    }

    /// Hyperparameters `(α, γ)` used for Riemannian and Euclidean samplers.
    pub fn default_hyperparameters(riemannian: bool) -> (f64, f64) {
        if riemannian {
            (1e-4, 0.01)
        } else {
            (0.01, 0.1)
        }
    }

    pub fn with_hyperparameters(mut self, alpha: f64, gamma: f64) -> Self {
        self.alpha = alpha;
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.vocab == 0 || self.batch_size == 0 {
            return Err(Error::Config("topics, vocab and batch_size must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "alpha ({}) and gamma ({}) must be positive",
                self.alpha, self.gamma
            )));
        }
        if self.sweeps == 0 {
            return Err(Error::Config("at least one averaged Gibbs sweep is needed".into()));
        }
        Ok(())
    }

    /// Length of the flattened `θ`.
    pub fn dim(&self) -> usize {
        self.topics * self.vocab
    }
}

/// Strictly positive `K × W` topic parameters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaMatrix {
    topics: usize,
    vocab: usize,
    values: Vec<f64>,
}

impl ThetaMatrix {
    pub fn new(topics: usize, vocab: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != topics * vocab {
            return Err(Error::dimension("theta matrix", topics * vocab, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "θ[{}, {}] = {} must be positive; reflect before evaluating",
                i / vocab,
                i % vocab,
                values[i]
            )));
        }
        Ok(Self { topics, vocab, values })
    }

    pub fn from_slice(topics: usize, vocab: usize, values: &[f64]) -> Result<Self> {
        Self::new(topics, vocab, values.to_vec())
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn get(&self, k: usize, w: usize) -> f64 {
        self.values[k * self.vocab + w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `θ_k· = Σ_w θ_kw`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks(self.vocab).map(|r| r.iter().sum()).collect()
    }

    /// Topic-word probabilities `β_kw = θ_kw / θ_k·`, row-major.
    pub fn beta(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.vocab) {
            let s: f64 = row.iter().sum();
            out.extend(row.iter().map(|v| v / s));
        }
        out
    }
}

/// `θ ← |θ|`, with exact zeros moved to `1e-10`.
pub fn reflect_positive(theta: &mut [f64]) {
    for t in theta {
        *t = t.abs();
        if *t == 0.0 {
            *t = crate::chain::REFLECTION_FLOOR;
        }
    }
}

/// Fisher metric `G(θ) = diag(θ)⁻¹` of the expanded-mean model.
pub fn riemannian_metric(config: &LdaConfig) -> MetricSpec {
    MetricSpec::FisherDiagonal { dim: config.dim() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_examples() {
        let mut t = vec![-0.5, 0.3, 0.0];
        reflect_positive(&mut t);
        assert_eq!(t, vec![0.5, 0.3, 1e-10]);
    }

    #[test]
    fn beta_rows_lie_on_the_simplex() {
        let th = ThetaMatrix::new(2, 3, vec![0.1, 2.0, 3.3, 1e-8, 5.0, 0.7]).unwrap();
        for row in th.beta().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_positive_theta_is_a_domain_error() {
        assert!(matches!(ThetaMatrix::new(1, 2, vec![1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(ThetaMatrix::new(1, 2, vec![1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fisher_metric_examples() {
        let m = riemannian_metric(&LdaConfig::new(1, 2, 1));
        let theta = [4.0, 9.0];
        let s = m.inverse_sqrt(&theta).unwrap();
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(m.inverse_sqrt_divergence(&theta).unwrap(), vec![0.25, 1.0 / 6.0]);
        assert_eq!(m.inverse_divergence(&theta).unwrap(), vec![1.0, 1.0]);
        let g = m.inverse(&theta).unwrap();
        for i in 0..2 {
            assert_eq!(s.get(i, i) * s.get(i, i), g.get(i, i));
        }
        assert!(matches!(m.inverse(&[1.0, -1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn config_validation() {
        assert!(LdaConfig::new(5, 100, 500).validate().is_ok());
        assert!(LdaConfig::new(0, 100, 500).validate().is_err());
        assert!(LdaConfig::new(5, 100, 500).with_hyperparameters(0.0, 0.1).validate().is_err());
    }
}
