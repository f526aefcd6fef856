use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use super::{num, preset_list, preset_section, Outcome, RunBasics, Settings};
use crate::chain::{initial_state, Boundary};
use crate::error::{Error, Result};
use crate::lda::{
    perplexity, read_corpus, riemannian_metric, Document, LdaConfig, LdaGradient, LdaPotential, SyntheticCorpus,
    SyntheticCorpusSpec, ThetaMatrix,
};
use crate::presets::{build_sampler, PresetConfig, PresetKind};
use crate::stochastic::GradientSource;

const PRESETS: [PresetKind; 4] = [PresetKind::Sgld, PresetKind::Sghmc, PresetKind::Sgrld, PresetKind::Gsgrhmc];

/// `reduction` compares the first value with `tail_perplexity`.
const SUMMARY_HEADER: &str = "preset,chain,first_perplexity,final_perplexity,tail_perplexity,reduction\n";

/// Separates the minibatch-order stream from the sampler stream of a chain.
const BATCH_STREAM: u64 = 0x5eed << 32;

/// Name of a preset in LDA outputs and config sections.
fn lda_label(p: PresetKind) -> &'static str {
    match p {
        PresetKind::Gsgrhmc => "sgrhmc",
        other => other.as_str(),
    }
}

/// Defaults when a preset section sets no step size.
fn default_epsilon(p: PresetKind) -> f64 {
    match p {
        PresetKind::Sgld => 0.001,
        PresetKind::Sghmc => 0.003,
        PresetKind::Sgrld => 0.01,
        _ => 0.01,
    }
}

#[derive(Clone, Debug)]
enum CorpusSource {
    Synthetic { spec: SyntheticCorpusSpec, seed: u64 },
    Files { train: PathBuf, heldout: PathBuf },
}

/// One preset's run: model settings and sampler configuration.
#[derive(Clone, Debug)]
struct LdaPreset {
    kind: PresetKind,
    model: LdaConfig,
    sampler: PresetConfig,
}

/// Perplexity trajectory of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaChainResult {
    pub preset: &'static str,
    pub chain: usize,
    /// `(documents processed, perplexity)` after each logged batch.
    pub log: Vec<(usize, f64)>,
    pub runtime_s: f64,
    pub diverged_at: Option<usize>,
}

impl LdaChainResult {
    pub fn first(&self) -> Option<f64> {
        self.log.first().map(|x| x.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.log.last().map(|x| x.1)
    }

    /// Mean over the last tenth of the log (at least one entry): the level a
    /// chain settles at, less noisy than a single posterior sample.
    pub fn tail(&self) -> Option<f64> {
        if self.log.is_empty() {
            return None;
        }
        let n = (self.log.len() / 10).max(1);
        let tail = &self.log[self.log.len() - n..];
        Some(tail.iter().map(|x| x.1).sum::<f64>() / n as f64)
    }
}

/// Streams minibatches of a corpus through each preset and logs held-out
/// perplexity.
#[derive(Debug)]
pub struct LdaRun {
    basics: RunBasics,
    topics: usize,
    vocab: usize,
    batch_size: usize,
    eval_every: usize,
    corpus: CorpusSource,
    presets: Vec<LdaPreset>,
    init_shape: f64,
}

impl LdaRun {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let basics = RunBasics::read(s, 200)?;
        let topics = s.value("", "topics", 5usize)?;
        let batch_size = s.value("", "batch_size", 50usize)?;
        let eval_every = s.value("", "eval_every", 1usize)?;
        if eval_every == 0 {
            return Err(Error::Config("`eval_every` must be at least 1".into()));
        }
        let corpus = match s.optional::<String>("", "corpus")? {
            Some(train) => {
                let heldout = s
                    .optional::<String>("", "heldout")?
                    .ok_or_else(|| Error::Config("`corpus` needs a `heldout` document file".into()))?;
                CorpusSource::Files {
                    train: train.into(),
                    heldout: heldout.into(),
                }
            }
            None => {
                let d = SyntheticCorpusSpec::default();
                let spec = SyntheticCorpusSpec {
                    topics: s.value("", "true_topics", topics)?,
                    vocab: s.value("", "vocab", d.vocab)?,
                    train_docs: s.value("", "train_docs", d.train_docs)?,
                    heldout_docs: s.value("", "heldout_docs", d.heldout_docs)?,
                    doc_length: (
                        s.value("", "doc_length_min", d.doc_length.0)?,
                        s.value("", "doc_length_max", d.doc_length.1)?,
                    ),
                    doc_concentration: s.value("", "doc_concentration", d.doc_concentration)?,
                    topic_concentration: s.value("", "topic_concentration", d.topic_concentration)?,
                };
                CorpusSource::Synthetic {
                    spec,
                    seed: s.value("", "corpus_seed", basics.seed)?,
                }
            }
        };
        let vocab = match &corpus {
            CorpusSource::Synthetic { spec, .. } => spec.vocab,
            CorpusSource::Files { .. } => s
                .optional::<usize>("", "vocab")?
                .ok_or_else(|| Error::Config("`corpus` needs the vocabulary size `vocab`".into()))?,
        };
        let burn_in = s.value("", "gibbs_burn_in", 2usize)?;
        let sweeps = s.value("", "gibbs_sweeps", 4usize)?;
        let kinds = preset_list(s, &PRESETS, lda_label)?;
        let mut presets = Vec::new();
        for kind in kinds {
            let section = lda_label(kind);
            let riemannian = matches!(kind, PresetKind::Sgrld | PresetKind::Gsgrhmc);
            let (alpha, gamma) = LdaConfig::default_hyperparameters(riemannian);
            let mut model = LdaConfig::new(topics, vocab, 1).with_hyperparameters(
                s.value(section, "alpha", alpha)?,
                s.value(section, "gamma", gamma)?,
            );
            model.batch_size = batch_size;
            model.burn_in = burn_in;
            model.sweeps = sweeps;
            model.validate()?;
            let mut sampler = preset_section(s, section, kind, None, default_epsilon(kind), model.dim())?
                .with_boundary(Boundary::ReflectPositive);
            if riemannian {
                sampler = sampler.with_metric(riemannian_metric(&model));
            }
            presets.push(LdaPreset { kind, model, sampler });
        }
        Ok(LdaRun {
            basics,
            topics,
            vocab,
            batch_size,
            eval_every,
            corpus,
            presets,
            init_shape: s.value("", "init_shape", 1.0f64)?,
        })
    }

    /// Training and held-out documents. File corpora are parsed in full
    /// before any sampling, so malformed input aborts the run early.
    pub fn load_corpus(&self) -> Result<(Vec<Document>, Vec<Document>)> {
        match &self.corpus {
            CorpusSource::Synthetic { spec, seed } => {
                let c = SyntheticCorpus::generate(spec, *seed)?;
                Ok((c.train, c.heldout))
            }
            CorpusSource::Files { train, heldout } => Ok((read_corpus(train, self.vocab)?, read_corpus(heldout, self.vocab)?)),
        }
    }

    fn initial_theta(&self, seed: u64) -> Result<Vec<f64>> {
        let dist = Gamma::new(self.init_shape, 1.0)
            .map_err(|e| Error::Config(format!("init_shape = {}: {e}", self.init_shape)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..self.topics * self.vocab)
            .map(|_| dist.sample(&mut rng).max(crate::chain::REFLECTION_FLOOR))
            .collect())
    }

    /// Document order per epoch, identical for every preset of a chain.
    fn batches(&self, train: &[Document], seed: u64) -> Vec<Vec<Document>> {
        let mut order: Vec<usize> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let need = self.basics.steps * self.batch_size;
        while order.len() < need {
            let mut epoch: Vec<usize> = (0..train.len()).collect();
            epoch.shuffle(&mut rng);
            order.extend(epoch);
        }
        order
            .chunks(self.batch_size)
            .take(self.basics.steps)
            .map(|c| c.iter().map(|&i| train[i].clone()).collect())
            .collect()
    }

    fn run_chain(
        &self,
        preset: &LdaPreset,
        chain: usize,
        train: &[Document],
        heldout: &[Document],
    ) -> Result<LdaChainResult> {
        let seed = self.basics.chain_seed(chain);
        let mut model = preset.model.clone();
        model.corpus_size = train.len();
        let source = Arc::new(LdaGradient::new(model.clone())?);
        let grads: Arc<dyn GradientSource> = source.clone();
        let sampler = build_sampler(Arc::new(LdaPotential::new(&model)), &preset.sampler, Some(grads))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = initial_state(sampler.model(), &self.initial_theta(seed)?, &mut rng)?;
        let batches = self.batches(train, seed ^ BATCH_STREAM);
        let mut result = LdaChainResult {
            preset: lda_label(preset.kind),
            chain,
            log: Vec::new(),
            runtime_s: 0.0,
            diverged_at: None,
        };
        let start = Instant::now();
        for (t, batch) in batches.into_iter().enumerate() {
            source.set_batch(batch);
            match sampler.step(&z, t, &mut rng) {
                Ok(next) => z = next,
                Err(Error::NonFinite { .. } | Error::Domain(_) | Error::Numeric(_)) => {
                    result.diverged_at = Some(t + 1);
                    break;
                }
                Err(e) => return Err(e),
            }
            if (t + 1) % self.eval_every == 0 {
                let theta = ThetaMatrix::from_slice(self.topics, self.vocab, z.theta())?;
                // the same evaluation noise for every preset at a given step
                let mut eval_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
                let p = perplexity(&theta, heldout, &model, &mut eval_rng)?;
                result.log.push(((t + 1) * self.batch_size, p.value));
            }
        }
        result.runtime_s = start.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Every `(preset, chain)` run, in output order.
    pub fn sample(&self, train: &[Document], heldout: &[Document]) -> Result<Vec<LdaChainResult>> {
        let jobs: Vec<(usize, usize)> = (0..self.presets.len())
            .flat_map(|p| (0..self.basics.chains).map(move |c| (p, c)))
            .collect();
        jobs.par_iter()
            .map(|&(p, c)| self.run_chain(&self.presets[p], c, train, heldout))
            .collect()
    }

    pub fn execute(&self, out: &Path) -> Result<Outcome> {
        let (train, heldout) = self.load_corpus()?;
        let dir = out.join("perplexity");
        fs::create_dir_all(&dir)?;
        let header = "docs_processed,perplexity\n";
        let mut outcome = Outcome::default();
        if train.is_empty() {
            for p in &self.presets {
                for c in 0..self.basics.chains {
                    fs::write(dir.join(format!("{}_chain{c}.csv", lda_label(p.kind))), header)?;
                }
            }
            fs::write(out.join("lda_summary.csv"), SUMMARY_HEADER)?;
            outcome.summary.push("no training documents; nothing sampled".into());
            return Ok(outcome);
        }
        if heldout.is_empty() {
            return Err(Error::Config("perplexity needs at least one held-out document".into()));
        }
        let results = self.sample(&train, &heldout)?;
        let mut summary = String::from(SUMMARY_HEADER);
        let mut timings = String::from("preset,chain,runtime_s\n");
        for r in &results {
            let mut csv = String::from(header);
            for (docs, p) in &r.log {
                writeln!(csv, "{docs},{}", num(*p)).unwrap();
            }
            fs::write(dir.join(format!("{}_chain{}.csv", r.preset, r.chain)), csv)?;
            let first = r.first().unwrap_or(f64::NAN);
            let (last, tail) = (r.last().unwrap_or(f64::NAN), r.tail().unwrap_or(f64::NAN));
            let reduction = 1.0 - tail / first;
            writeln!(
                summary,
                "{},{},{},{},{},{}",
                r.preset,
                r.chain,
                num(first),
                num(last),
                num(tail),
                num(reduction)
            )
            .unwrap();
            writeln!(timings, "{},{},{:.3}", r.preset, r.chain, r.runtime_s).unwrap();
            outcome.summary.push(format!(
                "{:>7} chain {}: perplexity {:.2} -> {:.2} (last tenth {:.2}, {:.1}% lower)",
                r.preset,
                r.chain,
                first,
                last,
                tail,
                100.0 * reduction
            ));
            if let Some(step) = r.diverged_at {
                outcome
                    .divergences
                    .push(format!("{} chain {} diverged at batch {step}", r.preset, r.chain));
            }
        }
        fs::write(out.join("lda_summary.csv"), summary)?;
        fs::write(out.join("timings.csv"), timings)?;
        Ok(outcome)
    }
}

