//! Weak supervision: per-account behavioral profiles, the fourteen heuristic
//! labeling functions, and a label model that turns their votes into IO
//! probabilities.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Tweet};
use crate::topics::url_host;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("every labeling function abstained on every account")]
    AllAbstain,
    #[error("label threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("label matrix rows have {found} columns, expected {expected}")]
    Ragged { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = LabelError> = std::result::Result<T, E>;

/// Domains and account ids treated as external news sources.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NewsList {
    pub domains: HashSet<String>,
    pub accounts: HashSet<String>,
}

impl NewsList {
    /// Newline-delimited entries; entries containing a dot are domains,
    /// anything else is an account id. `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let mut list = NewsList::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.contains('.') {
                let d = line.to_lowercase();
                list.domains.insert(d.strip_prefix("www.").unwrap_or(&d).to_string());
            } else {
                list.accounts.insert(line.to_string());
            }
        }
        list
    }

    fn domain_matches(&self, host: &str) -> bool {
        self.domains
            .iter()
            .any(|d| host == d || host.ends_with(&format!(".{d}")))
    }

    pub fn interacts(&self, tweet: &Tweet) -> bool {
        tweet
            .retweet_of_account
            .as_ref()
            .is_some_and(|a| self.accounts.contains(a))
            || tweet.urls.iter().any(|u| {
                let host = url_host(&u.to_lowercase()).unwrap_or_else(|| u.to_lowercase());
                self.domain_matches(&host)
            })
    }
}

/// Account-level aggregates read by the labeling functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BehavioralProfile {
    pub profile_length: u64,
    pub num_external_news_interactions: u64,
    pub following_count: u64,
    pub avg_num_links: f64,
    pub num_langs_used: u64,
    pub num_faves: u64,
    pub und_fraction: f64,
    pub follower_count: u64,
    pub followers_following_ratio: f64,
    pub ratio_tweets_w_links_all_tweets: f64,
}

pub(crate) fn profile_for(
    account: &crate::corpus::AccountRecord,
    tweets: &[&Tweet],
    news: &NewsList,
) -> BehavioralProfile {
    let n = tweets.len() as f64;
    let frac = |count: usize| if tweets.is_empty() { 0.0 } else { count as f64 / n };
    let langs: HashSet<&str> = tweets.iter().map(|t| t.lang.as_str()).collect();
    BehavioralProfile {
        profile_length: account.profile_length,
        num_external_news_interactions: tweets.iter().filter(|t| news.interacts(t)).count() as u64,
        following_count: account.following_count,
        avg_num_links: if tweets.is_empty() {
            0.0
        } else {
            tweets.iter().map(|t| t.urls.len()).sum::<usize>() as f64 / n
        },
        num_langs_used: langs.len() as u64,
        num_faves: account.num_faves,
        und_fraction: frac(tweets.iter().filter(|t| t.lang == "und").count()),
        follower_count: account.follower_count,
        followers_following_ratio: account.follower_count as f64
            / account.following_count.max(1) as f64,
        ratio_tweets_w_links_all_tweets: frac(tweets.iter().filter(|t| !t.urls.is_empty()).count()),
    }
}

/// Profiles for every account in the corpus, keyed by account id.
pub fn compute_profiles(corpus: &Corpus, news: &NewsList) -> BTreeMap<String, BehavioralProfile> {
    let by_account = corpus.tweets_by_account();
    corpus
        .accounts
        .iter()
        .map(|(id, acct)| {
            let tweets = by_account.get(id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            (id.clone(), profile_for(acct, tweets, news))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vote {
    #[serde(rename = "IO")]
    Io,
    #[serde(rename = "REAL")]
    Real,
    #[serde(rename = "ABSTAIN")]
    Abstain,
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vote::Io => "IO",
            Vote::Real => "REAL",
            Vote::Abstain => "ABSTAIN",
        })
    }
}

pub struct LabelingFunction {
    pub name: &'static str,
    pub apply: fn(&BehavioralProfile) -> Vote,
}

fn io_if(cond: bool) -> Vote {
    if cond { Vote::Io } else { Vote::Abstain }
}

fn real_if(cond: bool) -> Vote {
    if cond { Vote::Real } else { Vote::Abstain }
}

/// The heuristics in their canonical column order.
pub const LABELING_FUNCTIONS: [LabelingFunction; 14] = [
    LabelingFunction { name: "profile_length", apply: |x| io_if(x.profile_length == 0) },
    LabelingFunction { name: "external_news_interactions", apply: |x| io_if(x.num_external_news_interactions > 5) },
    LabelingFunction { name: "num_following", apply: |x| io_if(x.following_count > 3000) },
    LabelingFunction { name: "num_links", apply: |x| io_if(x.avg_num_links > 1.0) },
    LabelingFunction { name: "many_langs", apply: |x| io_if(x.num_langs_used > 10) },
    LabelingFunction { name: "few_faves", apply: |x| io_if(x.num_faves < 20) },
    LabelingFunction { name: "too_many_faves", apply: |x| io_if(x.num_faves > 30000) },
    LabelingFunction { name: "many_und_tweets", apply: |x| io_if(x.und_fraction > 0.05) },
    LabelingFunction {
        name: "normal_people_ff_ratio",
        apply: |x| {
            real_if(x.follower_count < 500 && 0.75 < x.followers_following_ratio && x.followers_following_ratio < 4.0)
        },
    },
    LabelingFunction { name: "no_external_news_interactions", apply: |x| real_if(x.num_external_news_interactions < 2) },
    LabelingFunction {
        name: "few_tweets_w_links",
        apply: |x| real_if(0.05 < x.ratio_tweets_w_links_all_tweets && x.ratio_tweets_w_links_all_tweets < 0.15),
    },
    LabelingFunction { name: "normal_num_likes", apply: |x| real_if(500 < x.num_faves && x.num_faves < 10000) },
    LabelingFunction { name: "normal_profile_len", apply: |x| real_if(x.profile_length > 50) },
    LabelingFunction { name: "org_num_followers", apply: |x| real_if(x.follower_count > 60000) },
];

pub fn lf_names() -> Vec<String> {
    LABELING_FUNCTIONS.iter().map(|lf| lf.name.to_string()).collect()
}

pub fn apply_lfs(profile: &BehavioralProfile) -> [Vote; 14] {
    std::array::from_fn(|j| (LABELING_FUNCTIONS[j].apply)(profile))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub account_ids: Vec<String>,
    pub lf_names: Vec<String>,
    pub votes: Vec<Vec<Vote>>,
}

impl LabelMatrix {
    pub fn from_profiles(profiles: &BTreeMap<String, BehavioralProfile>) -> Self {
        LabelMatrix {
            account_ids: profiles.keys().cloned().collect(),
            lf_names: lf_names(),
            votes: profiles.values().map(|p| apply_lfs(p).to_vec()).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let m = self.lf_names.len();
        match self.votes.iter().find(|r| r.len() != m) {
            Some(r) => Err(LabelError::Ragged {
                expected: m,
                found: r.len(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelMethod {
    Vote,
    #[default]
    Em,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabels {
    pub account_ids: Vec<String>,
    pub io_probability: Vec<f64>,
    pub threshold: f64,
    pub labels: Vec<bool>,
    pub method: LabelMethod,
    pub lf_names: Vec<String>,
    /// Learned per-LF accuracy (EM); empirical agreement with the vote
    /// probabilities for the vote method.
    pub lf_accuracies: Vec<f64>,
    pub class_prior: f64,
    pub iterations: usize,
}

pub const EM_MAX_ITERATIONS: usize = 100;
pub const EM_TOLERANCE: f64 = 1e-6;
const EM_INIT_ACCURACY: f64 = 0.7;
const EM_INIT_PRIOR: f64 = 0.3;
const PROB_FLOOR: f64 = 1e-6;

/// Aggregate votes into IO probabilities, labeled at the default 0.7 cut.
pub fn fit_label_model(matrix: &LabelMatrix, method: LabelMethod) -> Result<WeakLabels> {
    matrix.check()?;
    let any_vote = matrix.votes.iter().flatten().any(|v| *v != Vote::Abstain);
    if !any_vote {
        return Err(LabelError::AllAbstain);
    }
    let (io_probability, lf_accuracies, class_prior, iterations) = match method {
        LabelMethod::Vote => {
            let p: Vec<f64> = matrix.votes.iter().map(|row| vote_probability(row)).collect();
            let acc = empirical_accuracies(&matrix.votes, &p, matrix.lf_names.len());
            let prior = p.iter().sum::<f64>() / p.len().max(1) as f64;
            (p, acc, prior, 0)
        }
        LabelMethod::Em => em(&matrix.votes, matrix.lf_names.len()),
    };
    let threshold = 0.7;
    Ok(WeakLabels {
        account_ids: matrix.account_ids.clone(),
        labels: io_probability.iter().map(|&p| p >= threshold).collect(),
        io_probability,
        threshold,
        method,
        lf_names: matrix.lf_names.clone(),
        lf_accuracies,
        class_prior,
        iterations,
    })
}

fn vote_probability(row: &[Vote]) -> f64 {
    let io = row.iter().filter(|v| **v == Vote::Io).count();
    let real = row.iter().filter(|v| **v == Vote::Real).count();
    if io + real == 0 {
        0.5
    } else {
        io as f64 / (io + real) as f64
    }
}

fn empirical_accuracies(votes: &[Vec<Vote>], post: &[f64], m: usize) -> Vec<f64> {
    (0..m)
        .map(|j| {
            let (mut hit, mut n) = (0.0, 0.0);
            for (row, &p) in votes.iter().zip(post) {
                match row[j] {
                    Vote::Io => {
                        hit += p;
                        n += 1.0;
                    }
                    Vote::Real => {
                        hit += 1.0 - p;
                        n += 1.0;
                    }
                    Vote::Abstain => {}
                }
            }
            if n > 0.0 { hit / n } else { EM_INIT_ACCURACY }
        })
        .collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Two-class model with one accuracy per labeling function and
/// class-independent abstention, fitted by expectation-maximization.
fn em(votes: &[Vec<Vote>], m: usize) -> (Vec<f64>, Vec<f64>, f64, usize) {
    let mut acc = vec![EM_INIT_ACCURACY; m];
    let mut prior = EM_INIT_PRIOR;
    let mut post = vec![prior; votes.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    loop {
        let mut ll = 0.0;
        for (row, p) in votes.iter().zip(post.iter_mut()) {
            let mut l_io = prior.ln();
            let mut l_real = (1.0 - prior).ln();
            for (v, &a) in row.iter().zip(&acc) {
                match v {
                    Vote::Io => {
                        l_io += a.ln();
                        l_real += (1.0 - a).ln();
                    }
                    Vote::Real => {
                        l_io += (1.0 - a).ln();
                        l_real += a.ln();
                    }
                    Vote::Abstain => {}
                }
            }
            *p = 1.0 / (1.0 + (l_real - l_io).exp());
            ll += log_sum_exp(l_io, l_real);
        }
        if (ll - prev_ll).abs() < EM_TOLERANCE || iterations >= EM_MAX_ITERATIONS {
            break;
        }
        prev_ll = ll;
        iterations += 1;
        acc = empirical_accuracies(votes, &post, m)
            .into_iter()
            .map(|a| a.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect();
        prior = (post.iter().sum::<f64>() / post.len() as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    }
    (post, acc, prior, iterations)
}

/// Binary labels: IO iff `io_probability >= threshold`.
pub fn threshold_labels(weak: &WeakLabels, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LabelError::InvalidThreshold(threshold));
    }
    Ok(weak.io_probability.iter().map(|&p| p >= threshold).collect())
}

/// Fraction of accounts labeled IO at each threshold.
pub fn positive_fractions(weak: &WeakLabels, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = weak.io_probability.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| {
            let labels = threshold_labels(weak, t)?;
            Ok((t, labels.iter().filter(|&&l| l).count() as f64 / n))
        })
        .collect()
}

impl WeakLabels {
    pub fn relabel(&mut self, threshold: f64) -> Result<()> {
        self.labels = threshold_labels(self, threshold)?;
        self.threshold = threshold;
        Ok(())
    }

    /// CSV: account_id, io_probability, label, then one column per LF vote.
    pub fn write_csv<W: Write>(&self, matrix: &LabelMatrix, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["account_id".to_string(), "io_probability".into(), "label".into()];
        header.extend(matrix.lf_names.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.account_ids.iter().enumerate() {
            let mut rec = vec![
                id.clone(),
                format!("{}", self.io_probability[i]),
                if self.labels[i] { "IO" } else { "non-IO" }.to_string(),
            ];
            rec.extend(matrix.votes[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
