use rand::{Rng, RngCore};

use super::{Document, ThetaMatrix};
use crate::error::{Error, Result};

/// Enumeration is refused above this many assignment configurations.
const MAX_ENUMERATION: usize = 1 << 20;

/// Expected topic counts for one document.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicExpectations {
    pub topics: usize,
    /// Distinct word ids of the document, ascending.
    pub words: Vec<usize>,
    /// `E[n_dkw]`, `topics × words.len()` row-major.
    pub n_kw: Vec<f64>,
    /// `E[n_dk·]`.
    pub n_k: Vec<f64>,
}

impl TopicExpectations {
    pub fn get(&self, k: usize, word_index: usize) -> f64 {
        self.n_kw[k * self.words.len() + word_index]
    }
}

/// `p(z = k | ·) ∝ (γ + n_k) β_kw` for one token given leave-one-out counts.
pub fn gibbs_conditional(beta_column: &[f64], counts: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let mut p: Vec<f64> = beta_column.iter().zip(counts).map(|(b, n)| (gamma + n) * b).collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("topic conditional has normalizer {total}")));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

struct DocState {
    /// Token → index into the document's distinct words.
    tokens: Vec<usize>,
    assignment: Vec<usize>,
    n_k: Vec<f64>,
    n_kw: Vec<f64>,
    /// `β_kw` for each distinct word, `words × topics`.
    beta: Vec<f64>,
    topics: usize,
    words: usize,
}

impl DocState {
    fn new(theta: &ThetaMatrix, doc: &Document) -> Self {
        let k = theta.topics();
        let sums = theta.row_sums();
        let mut beta = Vec::with_capacity(doc.words.len() * k);
        for (w, _) in &doc.words {
            beta.extend((0..k).map(|t| theta.get(t, *w) / sums[t]));
        }
        let tokens = doc
            .words
            .iter()
            .enumerate()
            .flat_map(|(i, (_, c))| std::iter::repeat_n(i, *c as usize))
            .collect::<Vec<_>>();
        Self {
            assignment: vec![0; tokens.len()],
            tokens,
            n_k: vec![0.0; k],
            n_kw: vec![0.0; k * doc.words.len()],
            beta,
            topics: k,
            words: doc.words.len(),
        }
    }

    fn draw(&mut self, j: usize, gamma: f64, rng: &mut dyn RngCore) -> Result<()> {
        let wi = self.tokens[j];
        let column = &self.beta[wi * self.topics..(wi + 1) * self.topics];
        let p = gibbs_conditional(column, &self.n_k, gamma)?;
        let u: f64 = rng.random();
        let mut k = self.topics - 1;
        let mut acc = 0.0;
        for (t, pt) in p.iter().enumerate() {
            acc += pt;
            if u < acc {
                k = t;
                break;
            }
        }
        self.assignment[j] = k;
        self.n_k[k] += 1.0;
        self.n_kw[k * self.words + wi] += 1.0;
        Ok(())
    }

    fn remove(&mut self, j: usize) {
        let k = self.assignment[j];
        self.n_k[k] -= 1.0;
        self.n_kw[k * self.words + self.tokens[j]] -= 1.0;
    }

    fn sweep(&mut self, gamma: f64, rng: &mut dyn RngCore) -> Result<()> {
        for j in 0..self.tokens.len() {
            self.remove(j);
            self.draw(j, gamma, rng)?;
        }
        Ok(())
    }
}

/// Averages topic counts over `sweeps` Gibbs sweeps after `burn_in`
/// discarded ones. Assignments start from one sequential pass of the
/// conditional.
pub fn gibbs_topic_expectations(
    theta: &ThetaMatrix,
    doc: &Document,
    gamma: f64,
    burn_in: usize,
    sweeps: usize,
    rng: &mut dyn RngCore,
) -> Result<TopicExpectations> {
    if doc.is_empty() {
        return Err(Error::Config(format!("document {} has no words", doc.id)));
    }
    if sweeps == 0 {
        return Err(Error::Config("at least one averaged Gibbs sweep is needed".into()));
    }
    if let Some((w, _)) = doc.words.iter().find(|(w, _)| *w >= theta.vocab()) {
        return Err(Error::Config(format!("word id {w} is outside the vocabulary of {}", theta.vocab())));
    }
    let mut s = DocState::new(theta, doc);
    for j in 0..s.tokens.len() {
        s.draw(j, gamma, rng)?;
    }
    for _ in 0..burn_in {
        s.sweep(gamma, rng)?;
    }
    let mut n_k = vec![0.0; s.topics];
    let mut n_kw = vec![0.0; s.n_kw.len()];
    for _ in 0..sweeps {
        s.sweep(gamma, rng)?;
        n_k.iter_mut().zip(&s.n_k).for_each(|(a, b)| *a += b);
        n_kw.iter_mut().zip(&s.n_kw).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / sweeps as f64;
    Ok(TopicExpectations {
        topics: s.topics,
        words: doc.words.iter().map(|(w, _)| *w).collect(),
        n_kw: n_kw.into_iter().map(|v| v * scale).collect(),
        n_k: n_k.into_iter().map(|v| v * scale).collect(),
    })
}

/// Exact expectations by summing the collapsed joint
/// `Π_k Γ(γ + n_k)/Γ(γ) · Π_j β_{z_j x_j}` over every assignment.
pub fn exact_topic_expectations(theta: &ThetaMatrix, doc: &Document, gamma: f64) -> Result<TopicExpectations> {
    let s = DocState::new(theta, doc);
    let (k, n) = (s.topics, s.tokens.len());
    let configs = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(k).filter(|c| *c <= MAX_ENUMERATION));
    let configs = configs.ok_or_else(|| {
        Error::Config(format!("{k}^{n} topic assignments are too many to enumerate"))
    })?;
    let mut total = 0.0;
    let mut n_k = vec![0.0; k];
    let mut n_kw = vec![0.0; s.n_kw.len()];
    let mut z = vec![0usize; n];
    for c in 0..configs {
        let mut rest = c;
        for zj in z.iter_mut() {
            *zj = rest % k;
            rest /= k;
        }
        let mut counts = vec![0usize; k];
        let mut weight = 1.0;
        for (j, &zj) in z.iter().enumerate() {
            weight *= (gamma + counts[zj] as f64) * s.beta[s.tokens[j] * k + zj];
            counts[zj] += 1;
        }
        total += weight;
        for (j, &zj) in z.iter().enumerate() {
            n_k[zj] += weight;
            n_kw[zj * s.words + s.tokens[j]] += weight;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Numeric("collapsed joint vanishes for every assignment".into()));
    }
    Ok(TopicExpectations {
        topics: k,
        words: doc.words.iter().map(|(w, _)| *w).collect(),
        n_kw: n_kw.into_iter().map(|v| v / total).collect(),
        n_k: n_k.into_iter().map(|v| v / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta(k: usize, w: usize, v: &[f64]) -> ThetaMatrix {
        ThetaMatrix::new(k, w, v.to_vec()).unwrap()
    }

    #[test]
    fn single_topic_takes_every_token() {
        let th = theta(1, 3, &[1.0, 2.0, 3.0]);
        let doc = Document::new(0, vec![(0, 2), (2, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = gibbs_topic_expectations(&th, &doc, 0.1, 2, 4, &mut rng).unwrap();
        assert_eq!(e.n_kw, vec![2.0, 5.0]);
        assert_eq!(e.n_k, vec![7.0]);
    }

    #[test]
    fn one_word_conditional() {
        // rows sum to one, so β equals θ in the column of word 0
        let th = theta(2, 2, &[0.3, 0.7, 0.1, 0.9]);
        let p = gibbs_conditional(&[0.3, 0.1], &[0.0, 0.0], 0.5).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let doc = Document::new(0, vec![(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = gibbs_topic_expectations(&th, &doc, 0.5, 0, 10_000, &mut rng).unwrap();
        let sigma = (0.75 * 0.25 / 10_000.0f64).sqrt();
        assert!((e.n_k[0] - 0.75).abs() <= 3.0 * sigma, "{:?}", e.n_k);
    }

    #[test]
    fn two_word_expectations_match_enumeration() {
        let th = theta(2, 3, &[0.2, 1.5, 0.4, 1.1, 0.3, 0.9]);
        let doc = Document::new(0, vec![(0, 1), (1, 1)]);
        let exact = exact_topic_expectations(&th, &doc, 0.3).unwrap();
        let sweeps = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = gibbs_topic_expectations(&th, &doc, 0.3, 10, sweeps, &mut rng).unwrap();
        for i in 0..e.n_kw.len() {
            // indicator variance bounded by 1/4; Gibbs correlation is weak here
            let sigma = (0.25 / sweeps as f64).sqrt() * 2.0;
            assert!((e.n_kw[i] - exact.n_kw[i]).abs() <= 3.0 * sigma, "{i}: {} vs {}", e.n_kw[i], exact.n_kw[i]);
        }
        assert!((exact.n_k.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_normalizer_is_numeric_error() {
        assert!(matches!(gibbs_conditional(&[0.0, 0.0], &[0.0, 0.0], 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn enumeration_is_bounded() {
        let th = theta(5, 1, &[1.0; 5]);
        let doc = Document::new(0, vec![(0, 30)]);
        assert!(exact_topic_expectations(&th, &doc, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn conditional_normalizes(b in prop::collection::vec(1e-6f64..10.0, 1..8), g in 1e-3f64..5.0) {
            let counts: Vec<f64> = (0..b.len()).map(|i| i as f64).collect();
            let p = gibbs_conditional(&b, &counts, g).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn counts_stay_consistent(seed in 0u64..200, k in 1usize..5, words in prop::collection::vec((0usize..6, 1u32..4), 1..6)) {
            let th = ThetaMatrix::new(k, 6, (0..k * 6).map(|i| 0.1 + (i % 7) as f64).collect()).unwrap();
            let doc = Document::new(0, words);
            let mut s = DocState::new(&th, &doc);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in 0..s.tokens.len() {
                s.draw(j, 0.1, &mut rng).unwrap();
            }
            for _ in 0..3 {
                s.sweep(0.1, &mut rng).unwrap();
                for t in 0..k {
                    let row: f64 = s.n_kw[t * s.words..(t + 1) * s.words].iter().sum();
                    prop_assert_eq!(row, s.n_k[t]);
                }
                prop_assert_eq!(s.n_k.iter().sum::<f64>(), doc.len() as f64);
                prop_assert!(s.assignment.iter().all(|z| *z < k));
            }
        }
    }
}
