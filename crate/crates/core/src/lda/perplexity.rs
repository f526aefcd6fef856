use rand::seq::SliceRandom;
use rand::RngCore;

use super::gibbs::gibbs_topic_expectations;
use super::{Document, LdaConfig, ThetaMatrix};
use crate::error::{Error, Result};

/// Document-completion perplexity over a held-out set.
#[derive(Clone, Debug, PartialEq)]
pub struct Perplexity {
    pub value: f64,
    pub evaluated_docs: usize,
    /// Documents too short to leave any token in the evaluated half.
    pub skipped_docs: usize,
    pub tokens: usize,
}

/// Each held-out document's tokens are shuffled and split in half. Topic
/// proportions `π̂_k = (γ + E[n_k]) / (Kγ + n)` are estimated from the first
/// half by Gibbs sampling; the second half is scored by
/// `p(w) = Σ_k π̂_k β_kw`. Returns `exp(−Σ log p / tokens)` pooled over
/// documents.
pub fn perplexity(
    theta: &ThetaMatrix,
    heldout: &[Document],
    config: &LdaConfig,
    rng: &mut dyn RngCore,
) -> Result<Perplexity> {
    if heldout.is_empty() {
        return Err(Error::Config("perplexity needs at least one held-out document".into()));
    }
    let k = theta.topics();
    let beta = theta.beta();
    let mut log_p = 0.0;
    let mut tokens = 0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for doc in heldout {
        let mut toks = doc.tokens();
        toks.shuffle(rng);
        let half = toks.len() / 2;
        let (observed, scored) = toks.split_at(half);
        if scored.is_empty() {
            skipped += 1;
            continue;
        }
        let counts = if observed.is_empty() {
            vec![0.0; k]
        } else {
            let obs = Document::from_tokens(doc.id, observed);
            gibbs_topic_expectations(theta, &obs, config.gamma, config.burn_in, config.sweeps, rng)?.n_k
        };
        let denom = k as f64 * config.gamma + observed.len() as f64;
        let pi: Vec<f64> = counts.iter().map(|n| (config.gamma + n) / denom).collect();
        for &w in scored {
            if w >= theta.vocab() {
                return Err(Error::Config(format!("word id {w} is outside the vocabulary of {}", theta.vocab())));
            }
            let p: f64 = (0..k).map(|t| pi[t] * beta[t * theta.vocab() + w]).sum();
            log_p += p.ln();
        }
        tokens += scored.len();
        evaluated += 1;
    }
    if tokens == 0 {
        return Err(Error::Config("no held-out document has tokens left to score".into()));
    }
    Ok(Perplexity {
        value: (-log_p / tokens as f64).exp(),
        evaluated_docs: evaluated,
        skipped_docs: skipped,
        tokens,
    })
}
