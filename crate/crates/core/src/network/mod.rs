//! The narrative retweet network, PageRank, degree-corrected stochastic
//! blockmodel communities and GraphML/DOT export.

mod export;
mod sbm;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{format_time, Corpus};
use crate::topics::Narrative;

pub use export::{write_dot, write_graphml, AttrValue, Attributes};
pub use sbm::{description_length, fit_sbm, BlockState, Partition, SbmConfig};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("attribute {attr} refers to unknown vertex {vertex}")]
    UnknownVertex { attr: String, vertex: String },
    #[error("partition covers {found} vertices, network has {expected}")]
    PartitionSize { expected: usize, found: usize },
    #[error("invalid block range {0}..={1}")]
    InvalidBlockRange(usize, usize),
    #[error("xml: {0}")]
    Xml(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexStats {
    /// Matched narrative tweets (originals and retweets) by this account.
    pub tweet_count: u64,
    /// Narrative retweets of this account by others.
    pub retweets_received: u64,
    pub follower_count: u64,
    /// Earliest matched tweet, Unix seconds.
    pub first_tweet: Option<i64>,
}

/// Directed count `c_ij`: how often `target` (j) retweeted `source` (i).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeNetwork {
    /// Sorted account ids; vertex `i` is `vertices[i]`.
    pub vertices: Vec<String>,
    pub stats: Vec<VertexStats>,
    /// Sorted by (source, target), counts > 0, no self-loops.
    pub edges: Vec<Edge>,
}

impl NarrativeNetwork {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, account: &str) -> Option<usize> {
        self.vertices.binary_search_by(|v| v.as_str().cmp(account)).ok()
    }

    pub fn total_count(&self) -> u64 {
        self.edges.iter().map(|e| e.count).sum()
    }

    /// Undirected collapse `A_ij = c_ij + c_ji` as per-vertex neighbor lists.
    pub fn undirected_adjacency(&self) -> Vec<Vec<(usize, u64)>> {
        let mut maps: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); self.len()];
        for e in &self.edges {
            *maps[e.source].entry(e.target).or_default() += e.count;
            *maps[e.target].entry(e.source).or_default() += e.count;
        }
        maps.into_iter().map(|m| m.into_iter().collect()).collect()
    }

    /// Induced subgraph on the `n` most active vertices, ranked by tweets
    /// plus retweets received (ties by account id).
    pub fn most_active(&self, n: usize) -> NarrativeNetwork {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let act = |i: usize| self.stats[i].tweet_count + self.stats[i].retweets_received;
            act(b).cmp(&act(a)).then_with(|| self.vertices[a].cmp(&self.vertices[b]))
        });
        order.truncate(n);
        order.sort_unstable();
        let remap: HashMap<usize, usize> = order.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        NarrativeNetwork {
            vertices: order.iter().map(|&i| self.vertices[i].clone()).collect(),
            stats: order.iter().map(|&i| self.stats[i].clone()).collect(),
            edges: self
                .edges
                .iter()
                .filter_map(|e| {
                    Some(Edge {
                        source: *remap.get(&e.source)?,
                        target: *remap.get(&e.target)?,
                        count: e.count,
                    })
                })
                .collect(),
        }
    }

    /// CSV: account_id, pagerank, tweet_count, retweets_received,
    /// follower_count, first_tweet.
    pub fn write_centrality_csv<W: Write>(&self, pagerank: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "account_id",
            "pagerank",
            "tweet_count",
            "retweets_received",
            "follower_count",
            "first_tweet",
        ])?;
        for (i, v) in self.vertices.iter().enumerate() {
            let s = &self.stats[i];
            w.write_record([
                v.clone(),
                pagerank[i].to_string(),
                s.tweet_count.to_string(),
                s.retweets_received.to_string(),
                s.follower_count.to_string(),
                s.first_tweet.map(format_time).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Retweet network of a narrative's matched tweets.
pub fn build_network(corpus: &Corpus, narrative: &Narrative) -> NarrativeNetwork {
    let index = corpus.tweet_index();
    let mut tweets: BTreeMap<&str, (u64, Option<i64>)> = BTreeMap::new();
    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for id in &narrative.tweet_ids {
        let Some(t) = index.get(id.as_str()) else {
            continue;
        };
        let entry = tweets.entry(t.account_id.as_str()).or_insert((0, None));
        entry.0 += 1;
        entry.1 = Some(entry.1.map_or(t.created_at, |f: i64| f.min(t.created_at)));
        if let Some(src) = t.retweet_of_account.as_deref().filter(|_| t.is_retweet) {
            if src != t.account_id {
                *counts.entry((src, t.account_id.as_str())).or_default() += 1;
            }
        }
    }
    let mut names: Vec<&str> = tweets.keys().copied().collect();
    names.extend(counts.keys().flat_map(|(a, b)| [*a, *b]));
    names.sort_unstable();
    names.dedup();
    let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut stats: Vec<VertexStats> = names
        .iter()
        .map(|n| {
            let (tweet_count, first_tweet) = tweets.get(n).copied().unwrap_or((0, None));
            VertexStats {
                tweet_count,
                retweets_received: 0,
                follower_count: corpus.accounts.get(*n).map_or(0, |a| a.follower_count),
                first_tweet,
            }
        })
        .collect();
    let mut edges: Vec<Edge> = counts
        .iter()
        .map(|(&(s, t), &c)| Edge {
            source: pos[s],
            target: pos[t],
            count: c,
        })
        .collect();
    edges.sort();
    for e in &edges {
        stats[e.source].retweets_received += e.count;
    }
    NarrativeNetwork {
        vertices: names.into_iter().map(str::to_string).collect(),
        stats,
        edges,
    }
}

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const MAX_PAGERANK_ITERATIONS: usize = 10_000;

/// PageRank on the endorsement direction: each retweet passes weight from
/// the retweeter to the retweeted account.
pub fn pagerank(net: &NarrativeNetwork, damping: f64, tol: f64) -> Vec<f64> {
    let n = net.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut out_weight = vec![0.0; n];
    for e in &net.edges {
        out_weight[e.target] += e.count as f64;
    }
    let mut x = vec![1.0 / nf; n];
    for _ in 0..MAX_PAGERANK_ITERATIONS {
        let dangling: f64 = (0..n).filter(|&i| out_weight[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let mut next = vec![base; n];
        for e in &net.edges {
            next[e.source] += damping * e.count as f64 / out_weight[e.target] * x[e.target];
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta <= tol {
            break;
        }
    }
    x
}
