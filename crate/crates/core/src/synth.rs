//! Synthetic data generators: tweet corpora with planted topics, account
//! archetypes and retweet cascades; planted-topic documents; and network
//! outcome fixtures drawn from the outcome model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{simulate_outcomes, CausalError, Covariates, Influence, OutcomeParams};
use crate::corpus::{AccountRecord, AccountStatus, Corpus, CorpusError, KnownLabel, Tweet};
use crate::seed::{derive_seed, rng_from};
use crate::topics::{Document, TopicModel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("inconsistent synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

pub const NEWS_DOMAINS: [&str; 2] = ["newsdaily.example", "worldwire.example"];

const TROLL_LANGS: [&str; 12] = ["fr", "de", "es", "it", "pt", "ru", "ar", "ja", "tr", "nl", "pl", "sv"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusSpec {
    /// Topic names; topic 0 is the planted narrative.
    pub topics: Vec<String>,
    pub words_per_topic: usize,
    pub words_per_tweet: usize,
    pub n_troll: usize,
    pub n_media: usize,
    pub n_normal: usize,
    /// Original background tweets per account.
    pub tweets_per_account: usize,
    /// Background tweets per troll; trolls need enough to span many languages.
    pub troll_tweets: usize,
    /// Chance that a background tweet of a non-source is a narrative tweet.
    pub narrative_rate: f64,
    /// Cascade sources, drawn from the troll accounts.
    pub sources: usize,
    pub source_tweets: usize,
    pub branching: usize,
    pub depth: usize,
    /// Mean extra retweets per cascade edge beyond the first.
    pub extra_retweets: f64,
    pub hashtag: String,
    pub start: String,
    pub span_days: i64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        SynthCorpusSpec {
            topics: vec!["leak".into(), "match".into(), "recipe".into()],
            words_per_topic: 30,
            words_per_tweet: 10,
            n_troll: 30,
            n_media: 10,
            n_normal: 110,
            tweets_per_account: 8,
            troll_tweets: 14,
            narrative_rate: 0.05,
            sources: 3,
            source_tweets: 6,
            branching: 4,
            depth: 2,
            extra_retweets: 2.0,
            hashtag: "leaks".into(),
            start: "2017-05-01T00:00:00Z".into(),
            span_days: 7,
        }
    }
}

impl SynthCorpusSpec {
    fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.topics.len() < 2 || self.words_per_topic == 0 || self.words_per_tweet == 0 {
            return fail("need at least two topics with nonempty vocabularies and tweets");
        }
        if self.sources > self.n_troll {
            return fail("sources are drawn from trolls; sources exceeds n_troll");
        }
        if self.sources > 0 && self.source_tweets == 0 {
            return fail("sources need at least one narrative tweet");
        }
        let per_cascade: usize = (1..=self.depth).map(|d| self.branching.pow(d as u32)).sum();
        let others = self.n_troll + self.n_media + self.n_normal - self.sources;
        if self.sources * per_cascade > others {
            return fail("not enough accounts for disjoint cascades");
        }
        if !(0.0..=1.0).contains(&self.narrative_rate) || self.extra_retweets < 0.0 || self.span_days <= 0 {
            return fail("rates must be probabilities and the span positive");
        }
        if parse_time(&self.start).is_none() {
            return fail("start must be an ISO-8601 UTC timestamp");
        }
        Ok(())
    }

    /// Vocabulary of topic t: the topic name followed by a two-digit index.
    pub fn vocabulary(&self, t: usize) -> Vec<String> {
        (0..self.words_per_topic)
            .map(|i| format!("{}{i:02}", self.topics[t]))
            .collect()
    }
}

fn parse_time(s: &str) -> Option<i64> {
    chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Troll,
    Media,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEdge {
    pub parent: String,
    pub child: String,
    pub retweets: u64,
}

/// Planted structure recorded alongside the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub narrative_topic: usize,
    pub hashtag: String,
    pub vocabularies: Vec<Vec<String>>,
    /// Topic of every tweet; retweets inherit the original's topic.
    pub tweet_topics: BTreeMap<String, usize>,
    pub archetypes: BTreeMap<String, Archetype>,
    pub sources: Vec<String>,
    pub cascades: Vec<CascadeEdge>,
}

impl GroundTruth {
    pub fn io_accounts(&self) -> Vec<String> {
        self.archetypes
            .iter()
            .filter(|(_, a)| **a == Archetype::Troll)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub news_list: String,
    pub truth: GroundTruth,
}

/// File names written by [`SynthCorpus::write_to`].
pub const FIXTURE_FILES: [&str; 6] = [
    "tweets.jsonl",
    "accounts.jsonl",
    "news.txt",
    "known_io.txt",
    "known_benign.txt",
    "truth.json",
];

impl SynthCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        // Known labels travel only in the truth lists.
        let mut plain = self.corpus.clone();
        plain
            .accounts
            .values_mut()
            .for_each(|a| a.known_label = crate::corpus::KnownLabel::Unknown);
        plain.write_jsonl(&dir.join(FIXTURE_FILES[0]), &dir.join(FIXTURE_FILES[1]))?;
        std::fs::write(dir.join(FIXTURE_FILES[2]), &self.news_list)?;
        let list = |arch: Archetype| -> String {
            self.truth
                .archetypes
                .iter()
                .filter(|(_, a)| **a == arch)
                .map(|(id, _)| format!("{id}\n"))
                .collect()
        };
        std::fs::write(dir.join(FIXTURE_FILES[3]), list(Archetype::Troll))?;
        std::fs::write(dir.join(FIXTURE_FILES[4]), list(Archetype::Media))?;
        std::fs::write(dir.join(FIXTURE_FILES[5]), serde_json::to_string_pretty(&self.truth)? + "\n")?;
        Ok(())
    }
}

struct Builder<'a> {
    spec: &'a SynthCorpusSpec,
    rng: ChaCha8Rng,
    vocab: Vec<Vec<String>>,
    tweets: Vec<Tweet>,
    topics: BTreeMap<String, usize>,
    start: i64,
    links: u64,
}

impl Builder<'_> {
    fn text(&mut self, topic: usize) -> (String, Vec<String>) {
        let mut words: Vec<String> = (0..self.spec.words_per_tweet)
            .map(|_| self.vocab[topic].choose(&mut self.rng).expect("nonempty vocabulary").clone())
            .collect();
        let mut tags = Vec::new();
        if topic == 0 {
            words.push(format!("#{}", self.spec.hashtag));
            tags.push(self.spec.hashtag.to_lowercase());
        }
        (words.join(" "), tags)
    }

    fn time(&mut self, lo: i64) -> i64 {
        let end = self.start + self.spec.span_days * 86_400;
        if lo >= end {
            end
        } else {
            self.rng.random_range(lo..end)
        }
    }

    fn original(&mut self, account: &str, arch: Archetype, topic: usize, index: usize, at: i64) -> usize {
        let (text, hashtags) = self.text(topic);
        let lang = match arch {
            Archetype::Troll if topic != 0 => {
                if index % 5 == 4 {
                    "und".to_string()
                } else {
                    TROLL_LANGS[index % TROLL_LANGS.len()].to_string()
                }
            }
            _ => "en".to_string(),
        };
        self.links += 1;
        let urls = match arch {
            Archetype::Troll => NEWS_DOMAINS
                .iter()
                .map(|d| format!("https://www.{d}/story/{}", self.links))
                .collect(),
            Archetype::Normal if index == 0 => vec![format!("https://blog.example.org/p/{}", self.links)],
            Archetype::Media if index % 10 == 0 => {
                vec![format!("https://{account}.media.example/a/{}", self.links)]
            }
            _ => Vec::new(),
        };
        let id = format!("t{:07}", self.tweets.len() + 1);
        self.topics.insert(id.clone(), topic);
        self.tweets.push(Tweet {
            tweet_id: id,
            account_id: account.to_string(),
            created_at: at,
            text,
            lang,
            is_retweet: false,
            retweet_of_account: None,
            retweet_of_tweet: None,
            hashtags,
            urls,
        });
        self.tweets.len() - 1
    }

    fn retweet(&mut self, account: &str, of: usize) -> usize {
        let parent = self.tweets[of].clone();
        let at = self.time(parent.created_at + 1);
        let id = format!("t{:07}", self.tweets.len() + 1);
        let topic = self.topics[&parent.tweet_id];
        self.topics.insert(id.clone(), topic);
        self.tweets.push(Tweet {
            tweet_id: id,
            account_id: account.to_string(),
            created_at: at,
            text: parent.text.clone(),
            lang: parent.lang.clone(),
            is_retweet: true,
            retweet_of_account: Some(parent.account_id.clone()),
            retweet_of_tweet: Some(parent.tweet_id.clone()),
            hashtags: parent.hashtags.clone(),
            urls: Vec::new(),
        });
        self.tweets.len() - 1
    }
}

fn account_record(id: &str, arch: Archetype, index: usize, rng: &mut ChaCha8Rng) -> AccountRecord {
    let (profile_length, followers, following, faves, status, known) = match arch {
        Archetype::Troll => (
            0,
            rng.random_range(150..450),
            3500 + rng.random_range(0..500),
            rng.random_range(0..10),
            AccountStatus::Suspended,
            KnownLabel::KnownIo,
        ),
        Archetype::Media => (
            150 + rng.random_range(0..50),
            100_000 + rng.random_range(0..50_000),
            rng.random_range(200..800),
            rng.random_range(1000..5000),
            AccountStatus::Active,
            KnownLabel::KnownBenign,
        ),
        Archetype::Normal => {
            let followers: u64 = rng.random_range(100..450);
            let ratio: f64 = rng.random_range(1.0..3.0);
            (
                rng.random_range(60..160),
                followers,
                (followers as f64 / ratio).round() as u64,
                rng.random_range(800..5000),
                AccountStatus::Active,
                KnownLabel::Unknown,
            )
        }
    };
    let prefix = match arch {
        Archetype::Troll => "troll",
        Archetype::Media => "media",
        Archetype::Normal => "user",
    };
    AccountRecord {
        account_id: id.to_string(),
        screen_name: format!("{prefix}_{index}"),
        profile_length,
        follower_count: followers,
        following_count: following,
        num_faves: faves,
        status,
        known_label: known,
    }
}

/// Generate a corpus with planted topics, archetypal accounts and retweet
/// cascades from planted narrative sources.
pub fn synth_corpus(spec: &SynthCorpusSpec, seed: u64) -> Result<SynthCorpus> {
    spec.check()?;
    let start = parse_time(&spec.start).expect("checked");
    let mut rng = rng_from(derive_seed(seed, "synth-corpus"));
    let mut archetypes: Vec<(String, Archetype)> = Vec::new();
    let mut accounts = BTreeMap::new();
    let mut counters = [0usize; 3];
    let mut kinds: Vec<Archetype> = [
        (Archetype::Troll, spec.n_troll),
        (Archetype::Media, spec.n_media),
        (Archetype::Normal, spec.n_normal),
    ]
    .iter()
    .flat_map(|&(a, n)| std::iter::repeat_n(a, n))
    .collect();
    kinds.shuffle(&mut rng);
    for (k, arch) in kinds.into_iter().enumerate() {
        let id = format!("a{k:05}");
        let slot = arch as usize;
        accounts.insert(id.clone(), account_record(&id, arch, counters[slot], &mut rng));
        counters[slot] += 1;
        archetypes.push((id, arch));
    }
    let trolls: Vec<usize> = (0..archetypes.len())
        .filter(|&i| archetypes[i].1 == Archetype::Troll)
        .collect();
    let mut sources: Vec<usize> = trolls.choose_multiple(&mut rng, spec.sources).copied().collect();
    sources.sort_unstable();

    let mut b = Builder {
        spec,
        rng: rng_from(derive_seed(seed, "synth-text")),
        vocab: (0..spec.topics.len()).map(|t| spec.vocabulary(t)).collect(),
        tweets: Vec::new(),
        topics: BTreeMap::new(),
        start,
        links: 0,
    };
    let k = spec.topics.len();
    // background tweets
    for (i, (id, arch)) in archetypes.iter().enumerate() {
        let own = if *arch == Archetype::Troll { spec.troll_tweets } else { spec.tweets_per_account };
        for t in 0..own {
            let topic = if !sources.contains(&i) && b.rng.random::<f64>() < spec.narrative_rate {
                0
            } else {
                b.rng.random_range(1..k)
            };
            let at = b.time(start);
            b.original(id, *arch, topic, t, at);
        }
    }
    // cascades
    let mut pool: Vec<usize> = (0..archetypes.len()).filter(|i| !sources.contains(i)).collect();
    pool.shuffle(&mut rng);
    let mut cascades = Vec::new();
    for &s in &sources {
        let (sid, sarch) = archetypes[s].clone();
        let first_day = start + 86_400 / 2;
        let originals: Vec<usize> = (0..spec.source_tweets)
            .map(|t| {
                let at = first_day + (t as i64) * 600;
                b.original(&sid, sarch, 0, spec.troll_tweets + t, at)
            })
            .collect();
        let mut frontier: Vec<(usize, Vec<usize>)> = vec![(s, originals)];
        for _ in 0..spec.depth {
            let mut next = Vec::new();
            for (parent, parent_tweets) in &frontier {
                for _ in 0..spec.branching {
                    let child = pool.pop().expect("checked capacity");
                    let count = 1 + crate::causal::poisson_count(spec.extra_retweets, &mut rng);
                    let made: Vec<usize> = (0..count)
                        .map(|_| {
                            let of = *parent_tweets.choose(&mut rng).expect("parent has tweets");
                            b.retweet(&archetypes[child].0, of)
                        })
                        .collect();
                    cascades.push(CascadeEdge {
                        parent: archetypes[*parent].0.clone(),
                        child: archetypes[child].0.clone(),
                        retweets: count,
                    });
                    next.push((child, made));
                }
            }
            frontier = next;
        }
    }
    let Builder { tweets, topics, .. } = b;
    let truth = GroundTruth {
        narrative_topic: 0,
        hashtag: spec.hashtag.to_lowercase(),
        vocabularies: (0..k).map(|t| spec.vocabulary(t)).collect(),
        tweet_topics: topics,
        archetypes: archetypes.iter().cloned().collect(),
        sources: sources.iter().map(|&s| archetypes[s].0.clone()).collect(),
        cascades,
    };
    Ok(SynthCorpus {
        corpus: Corpus::from_parts(tweets, accounts),
        news_list: NEWS_DOMAINS.iter().map(|d| format!("{d}\n")).collect(),
        truth,
    })
}

/// Documents drawn from `k` planted topics with disjoint vocabularies and
/// Zipf-distributed word frequencies; returns the documents and each topic's
/// words in decreasing probability.
pub fn planted_topic_documents(
    n_docs: usize,
    k: usize,
    vocab_per_topic: usize,
    doc_len: usize,
    seed: u64,
) -> (Vec<Document>, Vec<Vec<String>>) {
    let mut rng = rng_from(derive_seed(seed, "planted-topics"));
    let vocab: Vec<Vec<String>> = (0..k)
        .map(|t| (0..vocab_per_topic).map(|w| format!("topic{t}word{w:03}")).collect())
        .collect();
    let weights: Vec<f64> = (0..vocab_per_topic).map(|r| 1.0 / (r + 1) as f64).collect();
    let dist = rand_distr::weighted::WeightedIndex::new(&weights).expect("positive weights");
    let docs = (0..n_docs)
        .map(|d| {
            let t = rng.random_range(0..k);
            Document {
                id: format!("d{d:05}"),
                tokens: (0..doc_len)
                    .map(|_| vocab[t][rand_distr::Distribution::sample(&dist, &mut rng)].clone())
                    .collect(),
            }
        })
        .collect();
    (docs, vocab)
}

/// Greedy one-to-one matching of fitted topics to planted word lists by
/// top-`n` overlap; returns the mean overlap fraction over planted topics.
pub fn greedy_topic_overlap(model: &TopicModel, planted: &[Vec<String>], n: usize) -> f64 {
    let fitted: Vec<BTreeSet<String>> = (0..model.k)
        .map(|t| {
            crate::topics::top_words(model, t, n)
                .expect("topic in range")
                .into_iter()
                .map(|(w, _)| w)
                .collect()
        })
        .collect();
    let truth: Vec<BTreeSet<String>> = planted.iter().map(|v| v.iter().take(n).cloned().collect()).collect();
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (p, tw) in truth.iter().enumerate() {
        for (f, fw) in fitted.iter().enumerate() {
            pairs.push((tw.intersection(fw).count(), p, f));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; truth.len()];
    let mut used_f = vec![false; fitted.len()];
    let mut total = 0usize;
    for (overlap, p, f) in pairs {
        if !used_p[p] && !used_f[f] {
            used_p[p] = true;
            used_f[f] = true;
            total += overlap;
        }
    }
    total as f64 / (n * truth.len().max(1)) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Directed stochastic block model with equal-sized blocks.
    Sbm { blocks: usize, p_in: f64, p_out: f64 },
    /// Edges i → i+1.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOutcomeSpec {
    pub n: usize,
    pub graph: GraphSpec,
    /// Counts are 1 + Poisson(extra_count).
    pub extra_count: f64,
    pub source_fraction: f64,
    /// Adds centered log in- and out-degree covariates; `params.beta` must
    /// then have length 2.
    pub degree_covariates: bool,
    pub params: OutcomeParams,
}

impl Default for NetworkOutcomeSpec {
    fn default() -> Self {
        NetworkOutcomeSpec {
            n: 200,
            graph: GraphSpec::Sbm {
                blocks: 2,
                p_in: 0.03,
                p_out: 0.005,
            },
            extra_count: 8.0,
            source_fraction: 0.2,
            degree_covariates: true,
            params: OutcomeParams {
                tau: 1.0,
                gamma: vec![0.5],
                beta: vec![0.0, 0.0],
                mu: 0.5,
                sigma: 0.1,
            },
        }
    }
}

/// Generated network, realized influence draw, covariates, sources and
/// outcomes with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutcomes {
    pub counts: Influence,
    pub realized: Influence,
    pub x: Covariates,
    pub z: Vec<bool>,
    pub y: Vec<u64>,
    pub blocks: Vec<usize>,
    pub truth: OutcomeParams,
}

pub fn synth_network_outcomes(spec: &NetworkOutcomeSpec, seed: u64) -> Result<NetworkOutcomes> {
    let n = spec.n;
    if n == 0 {
        return Err(SynthError::Spec("n must be positive".into()));
    }
    let width = if spec.degree_covariates { 2 } else { 0 };
    if spec.params.beta.len() != width {
        return Err(SynthError::Spec(format!(
            "beta has length {} but {width} covariates are generated",
            spec.params.beta.len()
        )));
    }
    let mut rng = rng_from(derive_seed(seed, "synth-network"));
    let (blocks, edges): (Vec<usize>, Vec<(usize, usize, f64)>) = match &spec.graph {
        GraphSpec::Sbm { blocks, p_in, p_out } => {
            if *blocks == 0 || !(0.0..=1.0).contains(p_in) || !(0.0..=1.0).contains(p_out) {
                return Err(SynthError::Spec("invalid block model".into()));
            }
            let b: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
            let mut e = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    let p = if b[i] == b[j] { *p_in } else { *p_out };
                    if i != j && rng.random::<f64>() < p {
                        e.push((i, j, 1.0 + crate::causal::poisson_count(spec.extra_count, &mut rng) as f64));
                    }
                }
            }
            (b, e)
        }
        GraphSpec::Chain => (
            vec![0; n],
            (1..n)
                .map(|j| (j - 1, j, 1.0 + crate::causal::poisson_count(spec.extra_count, &mut rng) as f64))
                .collect(),
        ),
    };
    let counts = Influence::from_edges(n, &edges)?;
    let z: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < spec.source_fraction).collect();
    let x = if spec.degree_covariates {
        let mut indeg = vec![0.0; n];
        let mut outdeg = vec![0.0; n];
        for (i, j, w) in counts.edges() {
            outdeg[i] += w;
            indeg[j] += w;
        }
        Covariates {
            names: vec!["log_in_degree".into(), "log_out_degree".into()],
            rows: (0..n).map(|i| vec![f64::ln_1p(indeg[i]), f64::ln_1p(outdeg[i])]).collect(),
        }
        .centered()
    } else {
        Covariates::empty(n)
    };
    let realized = counts.poisson_draw(&mut rng);
    let y = simulate_outcomes(&spec.params, &realized, &z, &x, derive_seed(seed, "synth-outcomes"))?;
    Ok(NetworkOutcomes {
        counts,
        realized,
        x,
        z,
        y,
        blocks,
        truth: spec.params.clone(),
    })
}
