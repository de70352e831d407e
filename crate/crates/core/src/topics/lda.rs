//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Result, TopicError};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids are assigned in order of first appearance.
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            doc_freq: Vec::new(),
            index: HashMap::new(),
        };
        for doc in docs {
            let mut seen = std::collections::HashSet::new();
            for tok in doc {
                let tok = tok.to_lowercase();
                let id = match vocab.index.get(&tok) {
                    Some(&id) => id,
                    None => {
                        let id = vocab.tokens.len();
                        vocab.index.insert(tok.clone(), id);
                        vocab.tokens.push(tok);
                        vocab.doc_freq.push(0);
                        id
                    }
                };
                if seen.insert(id) {
                    vocab.doc_freq[id] += 1;
                }
            }
        }
        vocab
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    /// Symmetric document-topic prior; `None` means 50/K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        LdaConfig {
            k,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

/// Collapsed Gibbs sampler state. Exposed so callers can drive sweeps one at
/// a time and inspect the count tables.
pub struct LdaSampler {
    k: usize,
    alpha: f64,
    beta: f64,
    vocab: Vocabulary,
    doc_ids: Vec<String>,
    words: Vec<Vec<u32>>,
    assignments: Vec<Vec<u16>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    dropped_docs: usize,
    sweeps: usize,
    weights: Vec<f64>,
}

impl LdaSampler {
    pub fn new(docs: &[Document], config: &LdaConfig) -> Result<Self> {
        if config.k < 2 {
            return Err(TopicError::TooFewTopics(config.k));
        }
        if config.k > u16::MAX as usize {
            return Err(TopicError::TooManyTopics(config.k));
        }
        let kept: Vec<&Document> = docs.iter().filter(|d| !d.tokens.is_empty()).collect();
        let dropped_docs = docs.len() - kept.len();
        let vocab = Vocabulary::build(kept.iter().map(|d| d.tokens.as_slice()));
        if vocab.is_empty() {
            return Err(TopicError::EmptyVocabulary);
        }
        let k = config.k;
        let v = vocab.len();
        let mut rng = rng_from(config.seed);
        let words: Vec<Vec<u32>> = kept
            .iter()
            .map(|d| {
                d.tokens
                    .iter()
                    .map(|t| vocab.id(&t.to_lowercase()).expect("token in vocabulary") as u32)
                    .collect()
            })
            .collect();
        let mut doc_topic = vec![0u32; kept.len() * k];
        let mut topic_word = vec![0u32; k * v];
        let mut topic_total = vec![0u32; k];
        let assignments: Vec<Vec<u16>> = words
            .iter()
            .enumerate()
            .map(|(d, ws)| {
                ws.iter()
                    .map(|&w| {
                        let z = rng.random_range(0..k);
                        doc_topic[d * k + z] += 1;
                        topic_word[z * v + w as usize] += 1;
                        topic_total[z] += 1;
                        z as u16
                    })
                    .collect()
            })
            .collect();
        Ok(LdaSampler {
            k,
            alpha: config.alpha(),
            beta: config.beta,
            vocab,
            doc_ids: kept.iter().map(|d| d.id.clone()).collect(),
            words,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            dropped_docs,
            sweeps: 0,
            weights: vec![0.0; k],
        })
    }

    /// One full pass resampling every token's topic.
    pub fn sweep(&mut self) {
        let k = self.k;
        let v = self.vocab.len();
        let vbeta = v as f64 * self.beta;
        for d in 0..self.words.len() {
            for n in 0..self.words[d].len() {
                let w = self.words[d][n] as usize;
                let old = self.assignments[d][n] as usize;
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.doc_topic[d * k + t] as f64 + self.alpha)
                        * (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_total[t] as f64 + vbeta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][n] = new as u16;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_total[new] += 1;
            }
        }
        self.sweeps += 1;
    }

    pub fn token_count(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    /// Totals of the document-topic and topic-word tables.
    pub fn table_totals(&self) -> (u64, u64, u64) {
        let sum = |xs: &[u32]| xs.iter().map(|&x| x as u64).sum::<u64>();
        (sum(&self.doc_topic), sum(&self.topic_word), sum(&self.topic_total))
    }

    pub fn assignments(&self) -> &[Vec<u16>] {
        &self.assignments
    }

    pub fn estimate(&self, seed: u64) -> TopicModel {
        let k = self.k;
        let v = self.vocab.len();
        let phi = (0..k)
            .map(|t| {
                let row: Vec<f64> = (0..v)
                    .map(|w| self.topic_word[t * v + w] as f64 + self.beta)
                    .collect();
                normalized(row)
            })
            .collect();
        let theta = (0..self.words.len())
            .map(|d| {
                let row: Vec<f64> = (0..k)
                    .map(|t| self.doc_topic[d * k + t] as f64 + self.alpha)
                    .collect();
                normalized(row)
            })
            .collect();
        TopicModel {
            k,
            alpha: self.alpha,
            beta: self.beta,
            seed,
            iterations: self.sweeps,
            dropped_docs: self.dropped_docs,
            vocab: self.vocab.clone(),
            doc_ids: self.doc_ids.clone(),
            phi,
            theta,
        }
    }
}

fn normalized(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Documents with no tokens, excluded from the fit.
    pub dropped_docs: usize,
    pub vocab: Vocabulary,
    /// Row `d` of `theta` belongs to `doc_ids[d]`.
    pub doc_ids: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl TopicModel {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut m: TopicModel = serde_json::from_str(text)?;
        m.vocab.reindex();
        Ok(m)
    }
}

/// Fit LDA with `config.iterations` full Gibbs sweeps.
pub fn fit_lda(docs: &[Document], config: &LdaConfig) -> Result<TopicModel> {
    let mut sampler = LdaSampler::new(docs, config)?;
    for _ in 0..config.iterations {
        sampler.sweep();
    }
    Ok(sampler.estimate(config.seed))
}
