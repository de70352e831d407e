//! Tweet and account records: JSONL ingestion, filtering and per-account
//! tweet caps.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from};

/// Ingestion fails when strictly more than this fraction of lines is malformed.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "{malformed} of {total} lines in {path} are malformed (first offending line: {first_line})"
    )]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
    },
    #[error("time window start {start} is after end {end}")]
    InvalidWindow { start: i64, end: i64 },
    #[error("tweet cap must be at least 1")]
    InvalidCap,
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serde adapter storing UTC seconds as ISO-8601 strings.
pub mod iso8601 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(secs: i64) -> String {
        DateTime::<Utc>::from_timestamp(secs, 0)
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    pub fn parse(s: &str) -> Option<i64> {
        DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc).timestamp())
            .ok()
    }

    pub fn serialize<S: Serializer>(secs: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*secs))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub tweet_id: String,
    pub account_id: String,
    #[serde(with = "iso8601")]
    pub created_at: i64,
    #[serde(default)]
    pub text: String,
    #[serde(default = "undetermined")]
    pub lang: String,
    #[serde(default)]
    pub is_retweet: bool,
    #[serde(default)]
    pub retweet_of_account: Option<String>,
    #[serde(default)]
    pub retweet_of_tweet: Option<String>,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub urls: Vec<String>,
}

fn undetermined() -> String {
    "und".to_string()
}

impl Tweet {
    fn is_consistent(&self) -> bool {
        !self.tweet_id.is_empty()
            && !self.account_id.is_empty()
            && self.is_retweet == self.retweet_of_account.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AccountStatus {
    Active,
    Suspended,
    Deleted,
    #[default]
    Unknown,
}

impl AccountStatus {
    pub const ALL: [AccountStatus; 4] = [
        AccountStatus::Active,
        AccountStatus::Suspended,
        AccountStatus::Deleted,
        AccountStatus::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AccountStatus::Active => "active",
            AccountStatus::Suspended => "suspended",
            AccountStatus::Deleted => "deleted",
            AccountStatus::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnownLabel {
    KnownIo,
    KnownBenign,
    #[default]
    Unknown,
}

impl KnownLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            KnownLabel::KnownIo => "known_io",
            KnownLabel::KnownBenign => "known_benign",
            KnownLabel::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account_id: String,
    #[serde(default)]
    pub screen_name: String,
    #[serde(default)]
    pub profile_length: u64,
    #[serde(default)]
    pub follower_count: u64,
    #[serde(default)]
    pub following_count: u64,
    #[serde(default)]
    pub num_faves: u64,
    #[serde(default)]
    pub status: AccountStatus,
    /// Not part of the upstream account schema; populated from truth lists
    /// and written back so that serialized corpora round-trip.
    #[serde(default)]
    pub known_label: KnownLabel,
}

impl AccountRecord {
    /// Placeholder for an account seen only through tweets or retweets.
    pub fn synthesized(account_id: &str) -> Self {
        AccountRecord {
            account_id: account_id.to_string(),
            screen_name: account_id.to_string(),
            profile_length: 0,
            follower_count: 0,
            following_count: 0,
            num_faves: 0,
            status: AccountStatus::Unknown,
            known_label: KnownLabel::Unknown,
        }
    }
}

/// Inclusive UTC range in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start > end {
            return Err(CorpusError::InvalidWindow { start, end });
        }
        Ok(TimeRange { start, end })
    }

    pub fn all() -> Self {
        TimeRange {
            start: i64::MIN,
            end: i64::MAX,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    /// Sorted by `created_at`, then `tweet_id`.
    pub tweets: Vec<Tweet>,
    pub accounts: BTreeMap<String, AccountRecord>,
    /// `None` for an empty corpus.
    pub time_range: Option<TimeRange>,
}

impl Corpus {
    /// Assemble a corpus, restoring ordering and referential integrity.
    pub fn from_parts(mut tweets: Vec<Tweet>, mut accounts: BTreeMap<String, AccountRecord>) -> Self {
        tweets.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.tweet_id.cmp(&b.tweet_id))
        });
        for t in &tweets {
            for id in std::iter::once(&t.account_id).chain(t.retweet_of_account.as_ref()) {
                accounts
                    .entry(id.clone())
                    .or_insert_with(|| AccountRecord::synthesized(id));
            }
        }
        let time_range = match (tweets.first(), tweets.last()) {
            (Some(first), Some(last)) => Some(TimeRange {
                start: first.created_at,
                end: last.created_at,
            }),
            _ => None,
        };
        Corpus {
            tweets,
            accounts,
            time_range,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    /// Tweets grouped by author, in corpus order.
    pub fn tweets_by_account(&self) -> BTreeMap<&str, Vec<&Tweet>> {
        let mut out: BTreeMap<&str, Vec<&Tweet>> = BTreeMap::new();
        for t in &self.tweets {
            out.entry(t.account_id.as_str()).or_default().push(t);
        }
        out
    }

    pub fn tweet_index(&self) -> BTreeMap<&str, &Tweet> {
        self.tweets.iter().map(|t| (t.tweet_id.as_str(), t)).collect()
    }

    /// Write tweets and accounts as JSONL.
    pub fn write_jsonl(&self, tweets_path: &Path, accounts_path: &Path) -> Result<()> {
        write_lines(tweets_path, self.tweets.iter())?;
        write_lines(accounts_path, self.accounts.values())?;
        Ok(())
    }
}

fn write_lines<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Externally supplied truth lists (newline-delimited account ids).
#[derive(Debug, Clone, Default)]
pub struct TruthLists {
    pub known_io: Option<PathBuf>,
    pub known_benign: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub tweet_lines: usize,
    pub malformed_tweet_lines: usize,
    pub first_malformed_tweet_line: Option<usize>,
    pub account_lines: usize,
    pub malformed_account_lines: usize,
    pub synthesized_accounts: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub report: IngestReport,
}

struct LineScan<T> {
    records: Vec<T>,
    lines: usize,
    malformed: usize,
    first_malformed: Option<usize>,
}

fn scan_jsonl<T, F>(path: &Path, mut accept: F) -> Result<LineScan<T>>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(&T) -> bool,
{
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut scan = LineScan {
        records: Vec::new(),
        lines: 0,
        malformed: 0,
        first_malformed: None,
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        scan.lines += 1;
        match serde_json::from_str::<T>(&line) {
            Ok(rec) if accept(&rec) => scan.records.push(rec),
            _ => {
                scan.malformed += 1;
                scan.first_malformed.get_or_insert(idx + 1);
            }
        }
    }
    if scan.lines > 0 && scan.malformed as f64 > MAX_MALFORMED_FRACTION * scan.lines as f64 {
        return Err(CorpusError::TooManyMalformed {
            path: path.to_path_buf(),
            malformed: scan.malformed,
            total: scan.lines,
            first_line: scan.first_malformed.unwrap_or(0),
        });
    }
    Ok(scan)
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Stream tweets (and optionally accounts) from JSONL files into a corpus.
///
/// Lines that fail to parse, lack required fields, violate the retweet
/// invariant or repeat an earlier `tweet_id` are counted as malformed.
pub fn ingest_jsonl(
    tweets_path: &Path,
    accounts_path: Option<&Path>,
    truth: &TruthLists,
) -> Result<Ingested> {
    let mut seen = HashSet::new();
    let tweets = scan_jsonl::<Tweet, _>(tweets_path, |t| {
        t.is_consistent() && seen.insert(t.tweet_id.clone())
    })?;

    let mut accounts = BTreeMap::new();
    let mut report = IngestReport {
        tweet_lines: tweets.lines,
        malformed_tweet_lines: tweets.malformed,
        first_malformed_tweet_line: tweets.first_malformed,
        ..Default::default()
    };
    if let Some(path) = accounts_path {
        let mut seen = HashSet::new();
        let scan = scan_jsonl::<AccountRecord, _>(path, |a| {
            !a.account_id.is_empty() && seen.insert(a.account_id.clone())
        })?;
        report.account_lines = scan.lines;
        report.malformed_account_lines = scan.malformed;
        for a in scan.records {
            accounts.insert(a.account_id.clone(), a);
        }
    }
    let declared = accounts.len();

    let mut tweets = tweets.records;
    for t in &mut tweets {
        for h in &mut t.hashtags {
            *h = h.trim_start_matches('#').to_lowercase();
        }
    }
    let mut corpus = Corpus::from_parts(tweets, accounts);
    report.synthesized_accounts = corpus.accounts.len() - declared;

    for (path, label) in [
        (&truth.known_io, KnownLabel::KnownIo),
        (&truth.known_benign, KnownLabel::KnownBenign),
    ] {
        if let Some(path) = path {
            for id in read_id_list(path)? {
                if let Some(acct) = corpus.accounts.get_mut(&id) {
                    acct.known_label = label;
                }
            }
        }
    }
    Ok(Ingested { corpus, report })
}

/// Keep tweets matching any keyword (case-insensitive substring of the text),
/// any language and the time window. Empty keyword or language lists match
/// everything.
pub fn filter(corpus: &Corpus, keywords: &[String], langs: &[String], window: TimeRange) -> Result<Corpus> {
    TimeRange::new(window.start, window.end)?;
    let keywords: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let langs: Vec<String> = langs.iter().map(|l| l.to_lowercase()).collect();
    let tweets: Vec<Tweet> = corpus
        .tweets
        .iter()
        .filter(|t| {
            let text = t.text.to_lowercase();
            (keywords.is_empty() || keywords.iter().any(|k| text.contains(k.as_str())))
                && (langs.is_empty() || langs.iter().any(|l| *l == t.lang.to_lowercase()))
                && window.contains(t.created_at)
        })
        .cloned()
        .collect();
    let mut out = restrict_accounts(corpus, tweets);
    out.time_range = Some(window);
    Ok(out)
}

fn restrict_accounts(corpus: &Corpus, tweets: Vec<Tweet>) -> Corpus {
    let keep: BTreeSet<&str> = tweets
        .iter()
        .flat_map(|t| std::iter::once(t.account_id.as_str()).chain(t.retweet_of_account.as_deref()))
        .collect();
    let accounts = corpus
        .accounts
        .iter()
        .filter(|(id, _)| keep.contains(id.as_str()))
        .map(|(id, a)| (id.clone(), a.clone()))
        .collect();
    Corpus {
        tweets,
        accounts,
        time_range: corpus.time_range,
    }
}

/// Keep at most `cap` tweets per account, sampled uniformly without
/// replacement. Each account draws from its own seed so results do not
/// depend on the rest of the corpus.
pub fn cap_tweets_per_account(corpus: &Corpus, cap: usize, seed: u64) -> Result<Corpus> {
    if cap == 0 {
        return Err(CorpusError::InvalidCap);
    }
    let mut keep = vec![false; corpus.tweets.len()];
    let mut by_account: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.tweets.iter().enumerate() {
        by_account.entry(t.account_id.as_str()).or_default().push(i);
    }
    for (account, idx) in by_account {
        if idx.len() <= cap {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            let mut rng = rng_from(derive_seed(seed, account));
            for pick in rand::seq::index::sample(&mut rng, idx.len(), cap) {
                keep[idx[pick]] = true;
            }
        }
    }
    let tweets = corpus
        .tweets
        .iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then(|| t.clone()))
        .collect();
    Ok(Corpus {
        tweets,
        accounts: corpus.accounts.clone(),
        time_range: corpus.time_range,
    })
}

/// Format UTC seconds for reports.
pub fn format_time(secs: i64) -> String {
    DateTime::<Utc>::from_timestamp(secs, 0)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tweet(id: &str, acct: &str, t: i64, text: &str, lang: &str) -> Tweet {
        Tweet {
            tweet_id: id.into(),
            account_id: acct.into(),
            created_at: t,
            text: text.into(),
            lang: lang.into(),
            is_retweet: false,
            retweet_of_account: None,
            retweet_of_tweet: None,
            hashtags: vec![],
            urls: vec![],
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn ingest_counts_tweets_and_synthesizes_retweet_sources() {
        let dir = tempfile::tempdir().unwrap();
        let tweets = write(
            dir.path(),
            "t.jsonl",
            concat!(
                r##"{"tweet_id":"1","account_id":"a","created_at":"2017-05-01T10:00:00Z","text":"Macron tax","lang":"en","is_retweet":false,"retweet_of_account":null,"retweet_of_tweet":null,"hashtags":["#Macron"],"urls":[]}"##, "\n",
                r##"{"tweet_id":"2","account_id":"b","created_at":"2017-05-01T09:00:00Z","text":"RT @c: hi","lang":"fr","is_retweet":true,"retweet_of_account":"c","retweet_of_tweet":"9","hashtags":[],"urls":[]}"##, "\n",
                r##"{"tweet_id":"3","account_id":"a","created_at":"2017-05-02T00:00:00Z","text":"x","lang":"en","is_retweet":false,"hashtags":[],"urls":["https://on.rt.com/a"]}"##, "\n",
            ),
        );
        let accounts = write(
            dir.path(),
            "a.jsonl",
            concat!(
                r##"{"account_id":"a","screen_name":"alice","profile_length":10,"follower_count":5,"following_count":6,"num_faves":7,"status":"active"}"##, "\n",
                r##"{"account_id":"b","screen_name":"bob","profile_length":0,"follower_count":1,"following_count":2,"num_faves":3,"status":"suspended"}"##, "\n",
            ),
        );
        let ing = ingest_jsonl(&tweets, Some(&accounts), &TruthLists::default()).unwrap();
        let c = &ing.corpus;
        assert_eq!(c.tweets.len(), 3);
        assert_eq!(c.accounts.len(), 3);
        assert_eq!(ing.report.synthesized_accounts, 1);
        assert_eq!(c.accounts["c"].status, AccountStatus::Unknown);
        assert_eq!(c.accounts["c"].follower_count, 0);
        assert_eq!(c.tweets[0].tweet_id, "2", "sorted by time");
        assert_eq!(c.tweets[1].hashtags, vec!["macron"]);
        assert_eq!(c.time_range.unwrap().start, c.tweets[0].created_at);
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.jsonl", "");
        let ing = ingest_jsonl(&p, None, &TruthLists::default()).unwrap();
        assert!(ing.corpus.is_empty());
        assert!(ing.corpus.accounts.is_empty());
        assert_eq!(ing.corpus.time_range, None);
    }

    fn good_line(i: usize) -> String {
        format!(
            r#"{{"tweet_id":"{i}","account_id":"a","created_at":"2017-05-01T10:00:00Z","text":"t","lang":"en","is_retweet":false,"hashtags":[],"urls":[]}}"#
        )
    }

    #[test]
    fn missing_tweet_id_is_counted_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut body: Vec<String> = (0..10).map(good_line).collect();
        body.insert(3, r#"{"account_id":"a","created_at":"2017-05-01T10:00:00Z","text":"t"}"#.into());
        let p = write(dir.path(), "t.jsonl", &body.join("\n"));
        let ing = ingest_jsonl(&p, None, &TruthLists::default()).unwrap();
        assert_eq!(ing.corpus.tweets.len(), 10);
        assert_eq!(ing.report.malformed_tweet_lines, 1);
        assert_eq!(ing.report.first_malformed_tweet_line, Some(4));
    }

    #[test]
    fn too_many_malformed_lines_is_an_error_naming_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut body: Vec<String> = (0..8).map(good_line).collect();
        body.insert(2, "not json".into());
        body.insert(5, r#"{"tweet_id":"x","account_id":"a","created_at":"2017-05-01T10:00:00Z","is_retweet":true}"#.into());
        let p = write(dir.path(), "t.jsonl", &body.join("\n"));
        match ingest_jsonl(&p, None, &TruthLists::default()) {
            Err(CorpusError::TooManyMalformed { first_line, malformed, .. }) => {
                assert_eq!(first_line, 3);
                assert_eq!(malformed, 2);
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let r = ingest_jsonl(Path::new("/nonexistent/tweets.jsonl"), None, &TruthLists::default());
        assert!(matches!(r, Err(CorpusError::Io { .. })));
    }

    #[test]
    fn truth_lists_set_known_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.jsonl", &(0..2).map(good_line).collect::<Vec<_>>().join("\n"));
        let io = write(dir.path(), "io.txt", "a\nzzz\n");
        let ing = ingest_jsonl(
            &p,
            None,
            &TruthLists {
                known_io: Some(io),
                known_benign: None,
            },
        )
        .unwrap();
        assert_eq!(ing.corpus.accounts["a"].known_label, KnownLabel::KnownIo);
    }

    fn sample_corpus() -> Corpus {
        let mut rt = tweet("4", "b", 40, "RT @a: MACRON leaks", "fr");
        rt.is_retweet = true;
        rt.retweet_of_account = Some("a".into());
        Corpus::from_parts(
            vec![
                tweet("1", "a", 10, "Macron tax", "fr"),
                tweet("2", "a", 20, "macron", "en"),
                tweet("3", "c", 30, "bonjour", "fr"),
                rt,
            ],
            BTreeMap::new(),
        )
    }

    #[test]
    fn filter_keywords_langs_and_window() {
        let c = sample_corpus();
        let f = filter(&c, &["macron".into()], &["fr".into()], TimeRange::all()).unwrap();
        let ids: Vec<_> = f.tweets.iter().map(|t| t.tweet_id.as_str()).collect();
        assert_eq!(ids, vec!["1", "4"]);
        assert_eq!(f.accounts.keys().cloned().collect::<Vec<_>>(), vec!["a", "b"]);

        let all = filter(&c, &[], &[], TimeRange::all()).unwrap();
        assert_eq!(all.tweets, c.tweets);

        let none = filter(&c, &[], &[], TimeRange::new(100, 200).unwrap()).unwrap();
        assert!(none.tweets.is_empty());
        assert!(none.accounts.is_empty());

        assert!(TimeRange::new(5, 1).is_err());
    }

    #[test]
    fn cap_keeps_at_most_cap_and_is_deterministic() {
        let tweets: Vec<Tweet> = (0..20_000)
            .map(|i| tweet(&format!("t{i}"), "big", i, "x", "en"))
            .chain((0..5).map(|i| tweet(&format!("s{i}"), "small", i, "x", "en")))
            .collect();
        let c = Corpus::from_parts(tweets, BTreeMap::new());
        let a = cap_tweets_per_account(&c, 10_000, 3).unwrap();
        let count = |c: &Corpus, acct: &str| c.tweets.iter().filter(|t| t.account_id == acct).count();
        assert_eq!(count(&a, "big"), 10_000);
        assert_eq!(count(&a, "small"), 5);
        let b = cap_tweets_per_account(&c, 10_000, 3).unwrap();
        let ids = |c: &Corpus| c.tweets.iter().map(|t| t.tweet_id.clone()).collect::<BTreeSet<_>>();
        assert_eq!(ids(&a), ids(&b));
        let d = cap_tweets_per_account(&c, 10_000, 4).unwrap();
        assert_ne!(ids(&a), ids(&d));
        assert!(cap_tweets_per_account(&c, 0, 1).is_err());
    }

    #[test]
    fn serialize_then_ingest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = sample_corpus();
        c.accounts.get_mut("a").unwrap().known_label = KnownLabel::KnownBenign;
        let (tp, ap) = (dir.path().join("t.jsonl"), dir.path().join("a.jsonl"));
        c.write_jsonl(&tp, &ap).unwrap();
        let back = ingest_jsonl(&tp, Some(&ap), &TruthLists::default()).unwrap().corpus;
        assert_eq!(back, c);
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        prop::collection::vec(
            (0usize..4, 0i64..100, prop::sample::select(vec!["en", "fr", "und"]), prop::sample::select(vec!["Macron", "tax", "le pen", "rien"]), prop::option::of(0usize..4)),
            0..30,
        )
        .prop_map(|rows| {
            let tweets = rows
                .into_iter()
                .enumerate()
                .map(|(i, (a, t, l, w, rt))| {
                    let mut tw = tweet(&i.to_string(), &format!("acct{a}"), t, w, l);
                    if let Some(src) = rt {
                        tw.is_retweet = true;
                        tw.retweet_of_account = Some(format!("acct{src}"));
                    }
                    tw
                })
                .collect();
            Corpus::from_parts(tweets, BTreeMap::new())
        })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_and_shrinking(c in arb_corpus(), lo in 0i64..50, span in 0i64..60, kw in prop::sample::select(vec!["", "macron", "TAX"])) {
            let kws: Vec<String> = if kw.is_empty() { vec![] } else { vec![kw.to_string()] };
            let langs = vec!["fr".to_string(), "und".to_string()];
            let w = TimeRange::new(lo, lo + span).unwrap();
            let once = filter(&c, &kws, &langs, w).unwrap();
            let twice = filter(&once, &kws, &langs, w).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.tweets.len() <= c.tweets.len());
            for t in &once.tweets {
                prop_assert!(once.time_range.unwrap().contains(t.created_at));
                prop_assert!(once.accounts.contains_key(&t.account_id));
            }
        }

        #[test]
        fn cap_never_increases_account_counts(c in arb_corpus(), cap in 1usize..5, seed in any::<u64>()) {
            let capped = cap_tweets_per_account(&c, cap, seed).unwrap();
            let before = c.tweets_by_account();
            let after = capped.tweets_by_account();
            for (acct, ts) in &after {
                let n = before[acct].len();
                prop_assert_eq!(ts.len(), n.min(cap));
            }
        }
    }
}
