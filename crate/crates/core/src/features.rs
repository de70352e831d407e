//! Account feature space: behavioral statistics, per-language tweet
//! fractions and rate-normalized 1-/2-grams, plus importance-based
//! selection per category.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AccountRecord, Corpus, TimeRange, Tweet};
use crate::forest::{Forest, ForestError, ForestParams, Matrix};
use crate::topics::Tokenizer;
use crate::weaklabel::{profile_for, NewsList};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("selection needs both classes in y")]
    SingleClass,
    #[error("labels: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("feature {0} is not in the matrix schema")]
    MissingFeature(String),
    #[error("malformed feature file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

pub const BEHAVIORAL_FEATURES: [&str; 17] = [
    "num_external_news_interactions",
    "avg_num_chars",
    "avg_num_hashtag_chars",
    "num_faves",
    "num_tweets_in_time_range",
    "sd_num_tweets_per_day",
    "ratio_retweets_w_links_all_tweets",
    "avg_num_tweets_per_day",
    "follower_count",
    "profile_length",
    "following_count",
    "num_langs_used",
    "und_fraction",
    "followers_following_ratio",
    "ratio_tweets_w_links_all_tweets",
    "ratio_retweets_all_tweets",
    "avg_num_links",
];

/// Twitter language codes given their own column; everything else is
/// bucketed into [`OTHER_LANGUAGE`].
pub const LANGUAGE_CODES: [&str; 60] = [
    "en", "de", "ht", "nl", "pl", "eu", "sr", "fr", "tl", "cs", "no", "ca", "it", "sl", "ro", "da",
    "lt", "fi", "und", "pt", "ru", "sv", "lv", "hu", "in", "es", "et", "tr", "cy", "hi", "ar", "bg",
    "bn", "el", "fa", "iw", "ja", "ko", "th", "uk", "ur", "vi", "zh", "is", "hy", "ka", "km", "lo",
    "my", "ne", "si", "ta", "te", "am", "gu", "kn", "ml", "mr", "pa", "ps",
];

pub const OTHER_LANGUAGE: &str = "other";
pub const DEFAULT_MIN_NGRAM_COUNT: u64 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Behavioral,
    Language,
    Ngram,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Behavioral, Category::Language, Category::Ngram];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn sizes(&self) -> BTreeMap<Category, usize> {
        let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
        for f in &self.features {
            *out.entry(f.category).or_default() += 1;
        }
        out
    }

    pub fn columns_of(&self, category: Category) -> Vec<usize> {
        (0..self.features.len())
            .filter(|&i| self.features[i].category == category)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            features: &'a [FeatureSpec],
            sizes: BTreeMap<Category, usize>,
        }
        Ok(serde_json::to_string_pretty(&Out {
            features: &self.features,
            sizes: self.sizes(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct In {
            features: Vec<FeatureSpec>,
        }
        let parsed: In = serde_json::from_str(text)?;
        let mut seen = HashSet::new();
        for f in &parsed.features {
            if !seen.insert(f.name.as_str()) {
                return Err(FeatureError::Malformed(format!("duplicate feature {}", f.name)));
            }
        }
        Ok(FeatureSchema {
            features: parsed.features,
        })
    }
}

fn language_feature_name(code: &str) -> String {
    format!("language={code}")
}

/// Sparse account-by-feature matrix; each row holds (column, value) pairs
/// in increasing column order with zeros omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub account_ids: Vec<String>,
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> Matrix {
        self.dense_columns(&(0..self.schema.len()).collect::<Vec<_>>())
    }

    fn dense_columns(&self, cols: &[usize]) -> Matrix {
        let position: HashMap<usize, usize> = cols.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let mut m = Matrix::zeros(self.rows.len(), cols.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                if let Some(&k) = position.get(&(c as usize)) {
                    m.set(i, k, v);
                }
            }
        }
        m
    }

    /// Restrict to the features of `schema`, in its order.
    pub fn project(&self, schema: &FeatureSchema) -> Result<FeatureMatrix> {
        let index: HashMap<&str, usize> = self
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect();
        let mut new_col: HashMap<usize, u32> = HashMap::new();
        for (k, f) in schema.features.iter().enumerate() {
            let &old = index
                .get(f.name.as_str())
                .ok_or_else(|| FeatureError::MissingFeature(f.name.clone()))?;
            new_col.insert(old, k as u32);
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut r: Vec<(u32, f64)> = row
                    .iter()
                    .filter_map(|&(c, v)| new_col.get(&(c as usize)).map(|&k| (k, v)))
                    .collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        Ok(FeatureMatrix {
            account_ids: self.account_ids.clone(),
            schema: schema.clone(),
            rows,
        })
    }

    /// Sparse triplets `row,col,value` (zeros omitted).
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "value"])?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                w.write_record([i.to_string(), c.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Row index file `row,account_id`.
    pub fn write_row_index<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "account_id"])?;
        for (i, id) in self.account_ids.iter().enumerate() {
            w.write_record([i.to_string(), id.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R1: Read, R2: Read>(schema: FeatureSchema, triplets: R1, row_index: R2) -> Result<Self> {
        let mut account_ids = Vec::new();
        for (k, rec) in csv::Reader::from_reader(row_index).into_records().enumerate() {
            let rec = rec?;
            if rec.get(0) != Some(k.to_string().as_str()) {
                return Err(FeatureError::Malformed(format!("row index line {}", k + 2)));
            }
            account_ids.push(rec.get(1).unwrap_or_default().to_string());
        }
        let mut rows = vec![Vec::new(); account_ids.len()];
        for rec in csv::Reader::from_reader(triplets).into_records() {
            let rec = rec?;
            let bad = || FeatureError::Malformed(format!("triplet {:?}", rec));
            let r: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c: u32 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if r >= rows.len() || c as usize >= schema.len() || !v.is_finite() {
                return Err(bad());
            }
            rows[r].push((c, v));
        }
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        Ok(FeatureMatrix {
            account_ids,
            schema,
            rows,
        })
    }
}

fn utc_day(t: i64) -> i64 {
    t.div_euclid(86_400)
}

fn behavioral_from(
    acct: &AccountRecord,
    tweets: &[&Tweet],
    news: &NewsList,
    window: Option<TimeRange>,
) -> [f64; 17] {
    let p = profile_for(acct, tweets, news);
    let n = tweets.len() as f64;
    let mean = |f: &dyn Fn(&Tweet) -> f64| {
        if tweets.is_empty() {
            0.0
        } else {
            tweets.iter().map(|t| f(t)).sum::<f64>() / n
        }
    };
    let mut per_day: BTreeMap<i64, f64> = BTreeMap::new();
    for t in tweets {
        *per_day.entry(utc_day(t.created_at)).or_default() += 1.0;
    }
    let days = per_day.len() as f64;
    let (avg_per_day, sd_per_day) = if per_day.is_empty() {
        (0.0, 0.0)
    } else {
        let m = n / days;
        let var = per_day.values().map(|c| (c - m).powi(2)).sum::<f64>() / days;
        (m, var.sqrt())
    };
    let in_range = tweets
        .iter()
        .filter(|t| window.is_none_or(|w| w.contains(t.created_at)))
        .count() as f64;
    [
        p.num_external_news_interactions as f64,
        mean(&|t| t.text.chars().count() as f64),
        mean(&|t| t.hashtags.iter().map(|h| h.chars().count()).sum::<usize>() as f64),
        p.num_faves as f64,
        in_range,
        sd_per_day,
        mean(&|t| (t.is_retweet && !t.urls.is_empty()) as u8 as f64),
        avg_per_day,
        p.follower_count as f64,
        p.profile_length as f64,
        p.following_count as f64,
        p.num_langs_used as f64,
        p.und_fraction,
        p.followers_following_ratio,
        p.ratio_tweets_w_links_all_tweets,
        mean(&|t| t.is_retweet as u8 as f64),
        p.avg_num_links,
    ]
}

fn account_tweets<'a>(corpus: &'a Corpus, account: &str) -> Result<(&'a AccountRecord, Vec<&'a Tweet>)> {
    let acct = corpus
        .accounts
        .get(account)
        .ok_or_else(|| FeatureError::UnknownAccount(account.to_string()))?;
    Ok((acct, corpus.tweets.iter().filter(|t| t.account_id == account).collect()))
}

/// The 17 behavioral features, in [`BEHAVIORAL_FEATURES`] order.
pub fn extract_behavioral(corpus: &Corpus, account: &str, news: &NewsList) -> Result<[f64; 17]> {
    let (acct, tweets) = account_tweets(corpus, account)?;
    Ok(behavioral_from(acct, &tweets, news, corpus.time_range))
}

fn language_fractions_from(tweets: &[&Tweet]) -> BTreeMap<String, f64> {
    let known: HashSet<&str> = LANGUAGE_CODES.iter().copied().collect();
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for t in tweets {
        let code = if known.contains(t.lang.as_str()) {
            t.lang.as_str()
        } else {
            OTHER_LANGUAGE
        };
        *counts.entry(code.to_string()).or_default() += 1.0;
    }
    let n = tweets.len() as f64;
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

/// Fraction of the account's tweets per language code.
pub fn extract_language_fractions(corpus: &Corpus, account: &str) -> Result<BTreeMap<String, f64>> {
    let (_, tweets) = account_tweets(corpus, account)?;
    Ok(language_fractions_from(&tweets))
}

fn tweet_grams(tweet: &Tweet, tokenizer: &Tokenizer) -> Vec<String> {
    let toks = tokenizer.tokenize(&tweet.text);
    let lang = &tweet.lang;
    let mut out: Vec<String> = toks.iter().map(|t| format!("{lang}:{t}")).collect();
    out.extend(toks.windows(2).map(|w| format!("{lang}:{} {}", w[0], w[1])));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramFeatures {
    /// Sorted gram keys, `lang:gram`.
    pub vocabulary: Vec<String>,
    /// Per account: (vocabulary index, count / tweet count).
    pub rows: Vec<Vec<(u32, f64)>>,
}

/// 1- and 2-gram rates for the given accounts, keeping grams whose total
/// count over those accounts exceeds `min_count`.
pub fn build_ngram_features(
    corpus: &Corpus,
    accounts: &[String],
    tokenizer: &Tokenizer,
    min_count: u64,
) -> NgramFeatures {
    let by_account = corpus.tweets_by_account();
    let per_account: Vec<(HashMap<String, u64>, usize)> = accounts
        .par_iter()
        .map(|a| {
            let tweets = by_account.get(a.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let mut counts: HashMap<String, u64> = HashMap::new();
            for t in tweets {
                for g in tweet_grams(t, tokenizer) {
                    *counts.entry(g).or_default() += 1;
                }
            }
            (counts, tweets.len())
        })
        .collect();
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for (counts, _) in &per_account {
        for (g, c) in counts {
            *totals.entry(g.as_str()).or_default() += c;
        }
    }
    let vocabulary: Vec<String> = totals
        .iter()
        .filter(|(_, &c)| c > min_count)
        .map(|(g, _)| g.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, u32> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i as u32))
        .collect();
    let rows = per_account
        .iter()
        .map(|(counts, n)| {
            let mut row: Vec<(u32, f64)> = counts
                .iter()
                .filter_map(|(g, &c)| index.get(g.as_str()).map(|&i| (i, c as f64 / *n as f64)))
                .collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    NgramFeatures { vocabulary, rows }
}

/// Full feature matrix (behavioral, then language, then n-gram columns)
/// for `accounts`, in that row order.
pub fn build_feature_matrix(
    corpus: &Corpus,
    accounts: &[String],
    news: &NewsList,
    tokenizer: &Tokenizer,
    min_ngram_count: u64,
) -> Result<FeatureMatrix> {
    for a in accounts {
        if !corpus.accounts.contains_key(a) {
            return Err(FeatureError::UnknownAccount(a.clone()));
        }
    }
    let mut features: Vec<FeatureSpec> = BEHAVIORAL_FEATURES
        .iter()
        .map(|n| FeatureSpec {
            name: n.to_string(),
            category: Category::Behavioral,
        })
        .collect();
    let lang_codes: Vec<&str> = LANGUAGE_CODES.iter().copied().chain([OTHER_LANGUAGE]).collect();
    let lang_offset = features.len();
    features.extend(lang_codes.iter().map(|c| FeatureSpec {
        name: language_feature_name(c),
        category: Category::Language,
    }));
    let lang_col: HashMap<&str, usize> = lang_codes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, lang_offset + i))
        .collect();
    let ngrams = build_ngram_features(corpus, accounts, tokenizer, min_ngram_count);
    let ngram_offset = features.len();
    features.extend(ngrams.vocabulary.iter().map(|g| FeatureSpec {
        name: g.clone(),
        category: Category::Ngram,
    }));
    let by_account = corpus.tweets_by_account();
    let rows = accounts
        .par_iter()
        .zip(ngrams.rows.par_iter())
        .map(|(a, grams)| {
            let tweets = by_account.get(a.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let mut row: Vec<(u32, f64)> = behavioral_from(&corpus.accounts[a], tweets, news, corpus.time_range)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (i as u32, v))
                .collect();
            let mut langs: Vec<(u32, f64)> = language_fractions_from(tweets)
                .iter()
                .map(|(c, &v)| (lang_col[c.as_str()] as u32, v))
                .collect();
            langs.sort_by_key(|e| e.0);
            row.extend(langs);
            row.extend(grams.iter().map(|&(i, v)| (i + ngram_offset as u32, v)));
            row
        })
        .collect();
    Ok(FeatureMatrix {
        account_ids: accounts.to_vec(),
        schema: FeatureSchema { features },
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSizes {
    pub behavioral: usize,
    pub language: usize,
    pub ngram: usize,
}

impl Default for SelectionSizes {
    fn default() -> Self {
        SelectionSizes {
            behavioral: 10,
            language: 30,
            ngram: 500,
        }
    }
}

impl SelectionSizes {
    fn get(&self, c: Category) -> usize {
        match c {
            Category::Behavioral => self.behavioral,
            Category::Language => self.language,
            Category::Ngram => self.ngram,
        }
    }
}

pub const SELECTION_TREES: usize = 100;

/// Keep the top-k columns of each category by extremely-randomized-trees
/// importance, each category ranked on its own columns only.
pub fn select_features(x: &FeatureMatrix, y: &[bool], sizes: SelectionSizes, seed: u64) -> Result<FeatureSchema> {
    if y.len() != x.n_rows() {
        return Err(FeatureError::LengthMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(FeatureError::SingleClass);
    }
    let mut keep: Vec<usize> = Vec::new();
    for cat in Category::ALL {
        let cols = x.schema.columns_of(cat);
        let k = sizes.get(cat).min(cols.len());
        if k == cols.len() {
            keep.extend(&cols);
            continue;
        }
        if k == 0 {
            continue;
        }
        let sub = x.dense_columns(&cols);
        let names: Vec<String> = cols.iter().map(|&c| x.schema.features[c].name.clone()).collect();
        let params = ForestParams::extra_trees(SELECTION_TREES, crate::seed::derive_seed(seed, &format!("{cat:?}")));
        let importance = Forest::train(&sub, y, &names, &params)?.feature_importance();
        let mut order: Vec<usize> = (0..cols.len()).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        keep.extend(order[..k].iter().map(|&i| cols[i]));
    }
    keep.sort_unstable();
    Ok(FeatureSchema {
        features: keep.iter().map(|&i| x.schema.features[i].clone()).collect(),
    })
}
