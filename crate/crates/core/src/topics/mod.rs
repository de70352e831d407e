//! Narrative detection: tokenization, topic modeling and matching tweets to
//! an analyst-selected topic.

mod lda;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lda::{fit_lda, LdaConfig, LdaSampler, TopicModel, Vocabulary};
pub use tokenize::{tokenize, url_host, Tokenizer};

use crate::corpus::Corpus;

/// Default minimum document-topic probability for narrative membership.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("need at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("too many topics: {0}")]
    TooManyTopics(usize),
    #[error("vocabulary is empty after tokenization")]
    EmptyVocabulary,
    #[error("topic {topic} out of range for a {k}-topic model")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("match threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

pub type Result<T, E = TopicError> = std::result::Result<T, E>;

/// A tokenized tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

/// One document per tweet, optionally restricted to a language.
pub fn documents(corpus: &Corpus, lang: Option<&str>, tokenizer: &Tokenizer) -> Vec<Document> {
    corpus
        .tweets
        .iter()
        .filter(|t| lang.is_none_or(|l| t.lang == l))
        .map(|t| Document {
            id: t.tweet_id.clone(),
            tokens: tokenizer.tokenize(&t.text),
        })
        .collect()
}

/// The `n` most probable tokens of a topic, ties broken by token id.
pub fn top_words(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<(String, f64)>> {
    let row = model.phi.get(topic).ok_or(TopicError::TopicOutOfRange {
        topic,
        k: model.k,
    })?;
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    Ok(ids
        .into_iter()
        .take(n)
        .map(|id| (model.vocab.token(id).to_string(), row[id]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWord {
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_index: usize,
    pub top_words: Vec<TopicWord>,
}

/// Topic report: every topic with its top `n` words.
pub fn topic_report(model: &TopicModel, n: usize) -> Vec<TopicSummary> {
    (0..model.k)
        .map(|t| TopicSummary {
            topic_index: t,
            top_words: top_words(model, t, n)
                .expect("topic in range")
                .into_iter()
                .map(|(token, prob)| TopicWord { token, prob })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    /// `None` for hashtag-defined narratives and unions of several topics.
    pub topic_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_topics: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashtag: Option<String>,
    pub threshold: f64,
    pub language: String,
    pub tweet_ids: BTreeSet<String>,
    pub token_frequencies: BTreeMap<String, u64>,
}

impl Narrative {
    /// Union of narratives selected from the same run.
    pub fn union(parts: &[Narrative]) -> Option<Narrative> {
        let first = parts.first()?;
        if parts.len() == 1 {
            return Some(first.clone());
        }
        let mut out = Narrative {
            topic_index: None,
            merged_topics: parts.iter().filter_map(|p| p.topic_index).collect(),
            hashtag: None,
            threshold: first.threshold,
            language: first.language.clone(),
            tweet_ids: BTreeSet::new(),
            token_frequencies: BTreeMap::new(),
        };
        for p in parts {
            out.tweet_ids.extend(p.tweet_ids.iter().cloned());
            if p.language != out.language {
                out.language = "mul".into();
            }
        }
        Some(out)
    }

    /// Recount token frequencies over the member tweets.
    pub fn recount(&mut self, docs: &[Document]) {
        self.token_frequencies.clear();
        for d in docs.iter().filter(|d| self.tweet_ids.contains(&d.id)) {
            for t in &d.tokens {
                *self.token_frequencies.entry(t.clone()).or_default() += 1;
            }
        }
    }
}

/// Tweets whose document-topic probability for `topic` reaches `threshold`.
pub fn match_narrative(
    model: &TopicModel,
    docs: &[Document],
    topic: usize,
    threshold: f64,
    language: &str,
) -> Result<Narrative> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(TopicError::InvalidThreshold(threshold));
    }
    if topic >= model.k {
        return Err(TopicError::TopicOutOfRange { topic, k: model.k });
    }
    let tweet_ids = model
        .doc_ids
        .iter()
        .zip(&model.theta)
        .filter(|(_, row)| row[topic] >= threshold)
        .map(|(id, _)| id.clone())
        .collect();
    let mut n = Narrative {
        topic_index: Some(topic),
        merged_topics: Vec::new(),
        hashtag: None,
        threshold,
        language: language.to_string(),
        tweet_ids,
        token_frequencies: BTreeMap::new(),
    };
    n.recount(docs);
    Ok(n)
}

/// Narrative defined by a hashtag instead of a topic.
pub fn hashtag_narrative(corpus: &Corpus, hashtag: &str, tokenizer: &Tokenizer) -> Narrative {
    let tag = hashtag.trim_start_matches('#').to_lowercase();
    let matched: Vec<Document> = corpus
        .tweets
        .iter()
        .filter(|t| {
            t.hashtags.iter().any(|h| *h == tag)
                || t.text
                    .to_lowercase()
                    .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '#'))
                    .any(|w| w.strip_prefix('#') == Some(tag.as_str()))
        })
        .map(|t| Document {
            id: t.tweet_id.clone(),
            tokens: tokenizer.tokenize(&t.text),
        })
        .collect();
    let mut n = Narrative {
        topic_index: None,
        merged_topics: Vec::new(),
        hashtag: Some(tag),
        threshold: 1.0,
        language: "mul".into(),
        tweet_ids: matched.iter().map(|d| d.id.clone()).collect(),
        token_frequencies: BTreeMap::new(),
    };
    n.recount(&matched);
    n
}
