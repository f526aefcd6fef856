use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::error::{Error, Result};

/// Bag of words with ids sorted ascending and positive counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: u64,
    pub words: Vec<(usize, u32)>,
}

impl Document {
    /// Merges repeated ids and drops zero counts.
    pub fn new(id: u64, mut words: Vec<(usize, u32)>) -> Self {
        words.sort_by_key(|(w, _)| *w);
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(words.len());
        for (w, c) in words {
            match merged.last_mut() {
                Some((lw, lc)) if *lw == w => *lc += c,
                _ if c > 0 => merged.push((w, c)),
                _ => {}
            }
        }
        Self { id, words: merged }
    }

    /// Token count.
    pub fn len(&self) -> usize {
        self.words.iter().map(|(_, c)| *c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Word id of every token, in id order.
    pub fn tokens(&self) -> Vec<usize> {
        self.words
            .iter()
            .flat_map(|(w, c)| std::iter::repeat_n(*w, *c as usize))
            .collect()
    }

    pub fn from_tokens(id: u64, tokens: &[usize]) -> Self {
        Self::new(id, tokens.iter().map(|w| (*w, 1)).collect())
    }
}

fn parse_line(line: &str, line_no: usize, vocab: usize) -> Result<Option<Document>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let err = |message: String| Error::Parse { line: line_no, message };
    let mut fields = line.split_whitespace();
    let id = fields
        .next()
        .unwrap()
        .parse::<u64>()
        .map_err(|e| err(format!("bad document id: {e}")))?;
    let mut words = Vec::new();
    for f in fields {
        let (w, c) = f
            .split_once(':')
            .ok_or_else(|| err(format!("expected word_id:count, got `{f}`")))?;
        let w: usize = w.parse().map_err(|e| err(format!("bad word id `{w}`: {e}")))?;
        let c: u32 = c.parse().map_err(|e| err(format!("bad count `{c}`: {e}")))?;
        if w >= vocab {
            return Err(err(format!("word id {w} is outside the vocabulary of {vocab}")));
        }
        if c == 0 {
            return Err(err(format!("word {w} has a zero count")));
        }
        words.push((w, c));
    }
    Ok(Some(Document::new(id, words)))
}

/// Minibatches of documents read lazily from `doc_id word_id:count …` lines.
pub struct DocumentStream<R> {
    reader: R,
    vocab: usize,
    batch_size: usize,
    line_no: usize,
    done: bool,
}

impl<R: BufRead> DocumentStream<R> {
    pub fn new(reader: R, vocab: usize, batch_size: usize) -> Self {
        Self {
            reader,
            vocab,
            batch_size: batch_size.max(1),
            line_no: 0,
            done: false,
        }
    }
}

impl DocumentStream<std::io::BufReader<std::fs::File>> {
    pub fn open(path: impl AsRef<Path>, vocab: usize, batch_size: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(Self::new(std::io::BufReader::new(file), vocab, batch_size))
    }
}

impl<R: BufRead> Iterator for DocumentStream<R> {
    type Item = Result<Vec<Document>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut batch = Vec::with_capacity(self.batch_size);
        let mut line = String::new();
        while batch.len() < self.batch_size {
            line.clear();
            match self.reader.read_line(&mut line) {
                Ok(0) => {
                    self.done = true;
                    break;
                }
                Ok(_) => {
                    self.line_no += 1;
                    match parse_line(&line, self.line_no, self.vocab) {
                        Ok(Some(doc)) => batch.push(doc),
                        Ok(None) => {}
                        Err(e) => {
                            self.done = true;
                            return Some(Err(e));
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        (!batch.is_empty()).then_some(Ok(batch))
    }
}

pub fn parse_corpus(text: &str, vocab: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(d) = parse_line(line, i + 1, vocab)? {
            docs.push(d);
        }
    }
    Ok(docs)
}

pub fn read_corpus(path: impl AsRef<Path>, vocab: usize) -> Result<Vec<Document>> {
    parse_corpus(&std::fs::read_to_string(path)?, vocab)
}

pub fn format_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        write!(out, "{}", d.id).unwrap();
        for (w, c) in &d.words {
            write!(out, " {w}:{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    std::fs::write(path, format_corpus(docs))?;
    Ok(())
}

/// Reads `word_id<TAB>token` lines into a token table indexed by id.
pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, token) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected word_id<TAB>token".into(),
        })?;
        let id: usize = id.trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad word id: {e}"),
        })?;
        entries.push((id, token.to_string()));
    }
    entries.sort();
    for (expected, (id, _)) in entries.iter().enumerate() {
        if *id != expected {
            return Err(Error::Config(format!("vocabulary ids must be 0..W without gaps; missing {expected}")));
        }
    }
    Ok(entries.into_iter().map(|(_, t)| t).collect())
}

pub fn write_vocabulary(path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        writeln!(out, "{i}\t{t}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Generator settings for a corpus drawn from the LDA model itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub topics: usize,
    pub vocab: usize,
    pub train_docs: usize,
    pub heldout_docs: usize,
    /// Inclusive range of tokens per document.
    pub doc_length: (usize, usize),
    /// Dirichlet parameter of document proportions.
    pub doc_concentration: f64,
    /// Dirichlet parameter of the true topics.
    pub topic_concentration: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            topics: 5,
            vocab: 100,
            train_docs: 500,
            heldout_docs: 100,
            doc_length: (40, 80),
            doc_concentration: 0.1,
            topic_concentration: 0.1,
        }
    }
}

/// Documents drawn from known topics `β*`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    /// `K × W` row-major true topic-word probabilities.
    pub beta: Vec<f64>,
    pub train: Vec<Document>,
    pub heldout: Vec<Document>,
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Result<Vec<f64>> {
    let g = Gamma::new(concentration, 1.0).map_err(|e| Error::Config(format!("bad concentration: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.into_iter().map(|x| x / total).collect());
        }
    }
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticCorpusSpec, seed: u64) -> Result<Self> {
        let (lo, hi) = spec.doc_length;
        if spec.topics == 0 || spec.vocab == 0 || lo == 0 || hi < lo {
            return Err(Error::Config("synthetic corpus needs topics, vocab and 1 ≤ min ≤ max length".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = Vec::with_capacity(spec.topics * spec.vocab);
        let mut word_dists = Vec::with_capacity(spec.topics);
        for _ in 0..spec.topics {
            let row = dirichlet(&mut rng, spec.vocab, spec.topic_concentration)?;
            word_dists.push(WeightedIndex::new(&row).map_err(|e| Error::Numeric(e.to_string()))?);
            beta.extend(row);
        }
        let mut docs = Vec::with_capacity(spec.train_docs + spec.heldout_docs);
        for id in 0..spec.train_docs + spec.heldout_docs {
            let pi = dirichlet(&mut rng, spec.topics, spec.doc_concentration)?;
            let topic = WeightedIndex::new(&pi).map_err(|e| Error::Numeric(e.to_string()))?;
            let len = rng.random_range(lo..=hi);
            let tokens: Vec<usize> = (0..len).map(|_| word_dists[topic.sample(&mut rng)].sample(&mut rng)).collect();
            docs.push(Document::from_tokens(id as u64, &tokens));
        }
        let heldout = docs.split_off(spec.train_docs);
        Ok(Self {
            beta,
            train: docs,
            heldout,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_line() {
        let docs = parse_corpus("0 3:2 7:1\n", 10).unwrap();
        assert_eq!(docs, vec![Document::new(0, vec![(3, 2), (7, 1)])]);
        assert_eq!(docs[0].len(), 3);
        assert_eq!(docs[0].tokens(), vec![3, 3, 7]);
    }

    #[test]
    fn empty_input_is_an_empty_stream() {
        assert!(parse_corpus("", 10).unwrap().is_empty());
        assert_eq!(DocumentStream::new(std::io::Cursor::new(""), 10, 5).count(), 0);
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = parse_corpus("0 1:1\n1 2-1\n", 10).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_corpus("0 1:1\n\n1 12:1\n", 10).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn stream_yields_fixed_size_batches() {
        let text: String = (0..7).map(|i| format!("{i} 0:1\n")).collect();
        let sizes: Vec<usize> = DocumentStream::new(std::io::Cursor::new(text), 1, 3)
            .map(|b| b.unwrap().len())
            .collect();
        assert_eq!(sizes, vec![3, 3, 1]);
    }

    #[test]
    fn repeated_words_merge() {
        let d = Document::new(1, vec![(5, 1), (2, 2), (5, 3)]);
        assert_eq!(d.words, vec![(2, 2), (5, 4)]);
    }

    #[test]
    fn synthetic_corpus_round_trips_through_files() {
        let spec = SyntheticCorpusSpec::default();
        let corpus = SyntheticCorpus::generate(&spec, 11).unwrap();
        assert_eq!(corpus.train.len(), 500);
        assert_eq!(corpus.beta.len(), 500);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        write_corpus(&path, &corpus.train).unwrap();
        let back = read_corpus(&path, spec.vocab).unwrap();
        assert_eq!(back, corpus.train);
        let again = dir.path().join("again.txt");
        write_corpus(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert_eq!(SyntheticCorpus::generate(&spec, 11).unwrap(), corpus);
    }

    #[test]
    fn vocabulary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let tokens: Vec<String> = ["apple", "pear", "fig"].iter().map(|s| s.to_string()).collect();
        write_vocabulary(&path, &tokens).unwrap();
        assert_eq!(read_vocabulary(&path).unwrap(), tokens);
        std::fs::write(&path, "0\ta\n2\tb\n").unwrap();
        assert!(read_vocabulary(&path).is_err());
    }
}
