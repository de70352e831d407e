//! Stage bodies. Each reads upstream artifacts through the context and
//! returns a one-line summary for the run log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{BaseAssignment, ALL_LANGUAGES};
use super::{report, PipelineError, Result, Stage, StageContext};
use crate::causal::{
    build_covariates, fit_outcome_model, posterior_impact, posterior_predictive_check, write_impact_csv, Covariates,
    Influence, OutcomeData, Posterior,
};
use crate::corpus::{cap_tweets_per_account, filter, ingest_jsonl, iso8601, Corpus, KnownLabel, TimeRange, TruthLists};
use crate::features::{build_feature_matrix, select_features, FeatureMatrix, FeatureSchema};
use crate::forest::{cross_validate, Forest};
use crate::network::{build_network, fit_sbm, pagerank, write_graphml, Attributes, AttrValue, NarrativeNetwork, Partition, SbmConfig};
use crate::seed::derive_seed;
use crate::topics::{
    documents, fit_lda, hashtag_narrative, match_narrative, topic_report, LdaConfig, Narrative, TopicModel, Tokenizer,
};
use crate::weaklabel::{compute_profiles, fit_label_model, positive_fractions, LabelMatrix, NewsList};

pub(crate) const TWEETS: &str = "corpus/tweets.jsonl";
pub(crate) const ACCOUNTS: &str = "corpus/accounts.jsonl";
pub(crate) const NARRATIVE: &str = "narrative/narrative.json";
pub(crate) const WEAK_LABELS: &str = "labels/weak_labels.json";
pub(crate) const TRAINING_LABELS: &str = "labels/training_labels.csv";
pub(crate) const SCHEMA: &str = "features/schema.json";
pub(crate) const TRIPLETS: &str = "features/matrix.csv";
pub(crate) const ROWS: &str = "features/rows.csv";
pub(crate) const FOREST: &str = "model/forest.json";
pub(crate) const SCORES: &str = "classify/scores.csv";
pub(crate) const NETWORK: &str = "network/network.json";
pub(crate) const PARTITION: &str = "communities/partition.json";
pub(crate) const POSTERIOR: &str = "impact/posterior.json";
pub(crate) const COVARIATES: &str = "impact/covariates.json";
pub(crate) const IMPACT: &str = "impact/impact.csv";

fn model_path(lang: &str) -> String {
    format!("topics/model_{lang}.json")
}

pub(crate) fn run(ctx: &mut StageContext<'_>) -> Result<String> {
    match ctx.stage {
        Stage::Ingest => ingest(ctx),
        Stage::Topics => topics(ctx),
        Stage::SelectNarrative => select_narrative(ctx),
        Stage::Label => label(ctx),
        Stage::Featurize => featurize(ctx),
        Stage::Train => train(ctx),
        Stage::Classify => classify(ctx),
        Stage::Network => network(ctx),
        Stage::Communities => communities(ctx),
        Stage::Impact => impact(ctx),
        Stage::Report => report::report(ctx),
    }
}

/// Corpus written by the ingest stage; known labels travel in the account
/// records.
pub(crate) fn load_corpus(ctx: &mut StageContext<'_>) -> Result<Corpus> {
    ctx.artifact(Stage::Ingest, TWEETS)?;
    ctx.artifact(Stage::Ingest, ACCOUNTS)?;
    let dir = ctx.cfg.run_path();
    let ing = ingest_jsonl(&dir.join(TWEETS), Some(&dir.join(ACCOUNTS)), &TruthLists::default())?;
    Ok(ing.corpus)
}

fn tokenizer(ctx: &mut StageContext<'_>) -> Result<Tokenizer> {
    match &ctx.cfg.topics.stopwords {
        Some(p) => {
            let (_, bytes) = ctx.external(p)?;
            Ok(Tokenizer::from_stopword_text(&String::from_utf8_lossy(&bytes)))
        }
        None => Ok(Tokenizer::new()),
    }
}

fn news_list(ctx: &mut StageContext<'_>) -> Result<NewsList> {
    match &ctx.cfg.label.news {
        Some(p) => {
            let (_, bytes) = ctx.external(p)?;
            Ok(NewsList::parse(&String::from_utf8_lossy(&bytes)))
        }
        None => Ok(NewsList::default()),
    }
}

#[derive(Debug, Serialize)]
struct IngestSummary<'a> {
    report: &'a crate::corpus::IngestReport,
    tweets_kept: usize,
    accounts: usize,
    time_range: Option<TimeRange>,
}

fn ingest(ctx: &mut StageContext<'_>) -> Result<String> {
    let c = &ctx.cfg.ingest;
    let (tweets, _) = ctx.external(&c.tweets)?;
    let mut opt = |p: &Option<std::path::PathBuf>| -> Result<Option<std::path::PathBuf>> {
        p.as_ref().map(|p| ctx.external(p).map(|r| r.0)).transpose()
    };
    let accounts = opt(&c.accounts)?;
    let truth = TruthLists {
        known_io: opt(&c.known_io)?,
        known_benign: opt(&c.known_benign)?,
    };
    let ing = ingest_jsonl(&tweets, accounts.as_deref(), &truth)?;
    let time = |s: &Option<String>, d: i64| s.as_deref().and_then(iso8601::parse).unwrap_or(d);
    let window = TimeRange::new(time(&c.start, i64::MIN), time(&c.end, i64::MAX))?;
    let mut corpus = filter(&ing.corpus, &c.keywords, &c.langs, window)?;
    if let Some(cap) = c.cap_per_account {
        corpus = cap_tweets_per_account(&corpus, cap, ctx.seed)?;
    }
    if corpus.is_empty() {
        return Err(PipelineError::Empty("no tweets left after filtering".into()));
    }
    let (tp, ap) = (ctx.output_path(TWEETS)?, ctx.output_path(ACCOUNTS)?);
    corpus.write_jsonl(&tp, &ap)?;
    ctx.record(TWEETS)?;
    ctx.record(ACCOUNTS)?;
    ctx.write_json(
        "corpus/ingest_report.json",
        &IngestSummary {
            report: &ing.report,
            tweets_kept: corpus.tweets.len(),
            accounts: corpus.accounts.len(),
            time_range: corpus.time_range,
        },
    )?;
    Ok(format!(
        "{} tweets, {} accounts, {} malformed lines",
        corpus.tweets.len(),
        corpus.accounts.len(),
        ing.report.malformed_tweet_lines + ing.report.malformed_account_lines
    ))
}

fn topics(ctx: &mut StageContext<'_>) -> Result<String> {
    let corpus = load_corpus(ctx)?;
    let tok = tokenizer(ctx)?;
    let cfg = &ctx.cfg.topics;
    let mut parts = Vec::new();
    for lang in cfg.models() {
        let filter = (lang != ALL_LANGUAGES).then_some(lang.as_str());
        let docs = documents(&corpus, filter, &tok);
        let lda = LdaConfig {
            k: cfg.k_for(&lang),
            alpha: cfg.alpha,
            beta: cfg.beta,
            iterations: cfg.iterations,
            seed: derive_seed(ctx.seed, &lang),
        };
        let model = fit_lda(&docs, &lda)?;
        ctx.write(&model_path(&lang), serde_json::to_string(&model)?.as_bytes())?;
        ctx.write_json(&format!("topics/topics_{lang}.json"), &topic_report(&model, cfg.top_words))?;
        parts.push(format!("{lang}: {} docs, K={}", model.doc_ids.len(), model.k));
    }
    Ok(parts.join("; "))
}

fn select_narrative(ctx: &mut StageContext<'_>) -> Result<String> {
    let corpus = load_corpus(ctx)?;
    let tok = tokenizer(ctx)?;
    let cfg = &ctx.cfg.narrative;
    let narrative = if let Some(tag) = &cfg.hashtag {
        hashtag_narrative(&corpus, tag, &tok)
    } else {
        if cfg.topics.is_empty() {
            return Err(PipelineError::NoNarrativeSelection);
        }
        let lang = cfg.language.clone();
        let bytes = ctx.artifact(Stage::Topics, &model_path(&lang))?;
        let model = TopicModel::from_json(&String::from_utf8_lossy(&bytes))?;
        let filter = (lang != ALL_LANGUAGES).then_some(lang.as_str());
        let docs = documents(&corpus, filter, &tok);
        let parts = cfg
            .topics
            .iter()
            .map(|&t| match_narrative(&model, &docs, t, cfg.threshold, &lang))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut n = Narrative::union(&parts).expect("at least one topic");
        if parts.len() > 1 {
            n.recount(&docs);
        }
        n
    };
    if narrative.tweet_ids.is_empty() {
        return Err(PipelineError::Empty("the selected narrative matches no tweets".into()));
    }
    ctx.write_json(NARRATIVE, &narrative)?;
    Ok(format!("{} tweets", narrative.tweet_ids.len()))
}

/// Training label of one account and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLabel {
    pub account_id: String,
    pub io: bool,
    /// known_io, known_benign, heuristic_positive or heuristic_negative.
    pub source: String,
}

impl TrainingLabel {
    pub fn heuristic_positive(&self) -> bool {
        self.source == "heuristic_positive"
    }
}

fn label(ctx: &mut StageContext<'_>) -> Result<String> {
    let corpus = load_corpus(ctx)?;
    let news = news_list(ctx)?;
    let cfg = &ctx.cfg.label;
    let active: BTreeSet<&str> = corpus.tweets.iter().map(|t| t.account_id.as_str()).collect();
    let profiles: BTreeMap<_, _> = compute_profiles(&corpus, &news)
        .into_iter()
        .filter(|(id, _)| active.contains(id.as_str()))
        .collect();
    let matrix = LabelMatrix::from_profiles(&profiles);
    let mut weak = fit_label_model(&matrix, cfg.method)?;
    weak.relabel(cfg.threshold)?;
    ctx.write_json(WEAK_LABELS, &weak)?;
    ctx.write_with("labels/label_matrix.csv", |buf| weak.write_csv(&matrix, buf))?;
    #[derive(Serialize)]
    struct Fraction {
        threshold: f64,
        positive_fraction: f64,
    }
    let sweep: Vec<Fraction> = positive_fractions(&weak, &cfg.sweep)?
        .into_iter()
        .map(|(threshold, positive_fraction)| Fraction {
            threshold,
            positive_fraction,
        })
        .collect();
    ctx.write_csv_rows("labels/threshold_sweep.csv", &sweep)?;
    let labels: Vec<TrainingLabel> = weak
        .account_ids
        .iter()
        .zip(&weak.labels)
        .map(|(id, &l)| {
            let known = corpus.accounts[id].known_label;
            let (io, source) = match known {
                KnownLabel::KnownIo if cfg.use_known_labels => (true, "known_io"),
                KnownLabel::KnownBenign if cfg.use_known_labels => (false, "known_benign"),
                _ if l => (true, "heuristic_positive"),
                _ => (false, "heuristic_negative"),
            };
            TrainingLabel {
                account_id: id.clone(),
                io,
                source: source.into(),
            }
        })
        .collect();
    ctx.write_csv_rows(TRAINING_LABELS, &labels)?;
    let pos = labels.iter().filter(|l| l.io).count();
    Ok(format!("{} accounts, {pos} labeled IO for training", labels.len()))
}

fn training_labels(ctx: &mut StageContext<'_>) -> Result<BTreeMap<String, TrainingLabel>> {
    Ok(ctx
        .artifact_csv::<TrainingLabel>(Stage::Label, TRAINING_LABELS)?
        .into_iter()
        .map(|l| (l.account_id.clone(), l))
        .collect())
}

fn featurize(ctx: &mut StageContext<'_>) -> Result<String> {
    let labels = training_labels(ctx)?;
    let corpus = load_corpus(ctx)?;
    let news = news_list(ctx)?;
    let tok = tokenizer(ctx)?;
    let accounts: Vec<String> = labels.keys().cloned().collect();
    let y: Vec<bool> = labels.values().map(|l| l.io).collect();
    let cfg = &ctx.cfg.features;
    let full = build_feature_matrix(&corpus, &accounts, &news, &tok, cfg.min_ngram_count)?;
    let schema = select_features(&full, &y, cfg.sizes, ctx.seed)?;
    let x = full.project(&schema)?;
    ctx.write(SCHEMA, schema.to_json()?.as_bytes())?;
    ctx.write_with(TRIPLETS, |buf| x.write_triplets(buf))?;
    ctx.write_with(ROWS, |buf| x.write_row_index(buf))?;
    Ok(format!(
        "{} accounts, {} of {} features selected",
        x.n_rows(),
        schema.len(),
        full.schema.len()
    ))
}

pub(crate) fn load_features(ctx: &mut StageContext<'_>) -> Result<FeatureMatrix> {
    let schema = FeatureSchema::from_json(&String::from_utf8_lossy(&ctx.artifact(Stage::Featurize, SCHEMA)?))?;
    let triplets = ctx.artifact(Stage::Featurize, TRIPLETS)?;
    let rows = ctx.artifact(Stage::Featurize, ROWS)?;
    Ok(FeatureMatrix::read(schema, triplets.as_slice(), rows.as_slice())?)
}

fn train(ctx: &mut StageContext<'_>) -> Result<String> {
    let labels = training_labels(ctx)?;
    let x = load_features(ctx)?;
    let mut y = Vec::with_capacity(x.n_rows());
    let mut mask = Vec::with_capacity(x.n_rows());
    for id in &x.account_ids {
        let l = labels.get(id).ok_or_else(|| PipelineError::Malformed {
            path: TRAINING_LABELS.into(),
            msg: format!("no label for {id}"),
        })?;
        y.push(l.io);
        mask.push(l.heuristic_positive());
    }
    let dense = x.to_dense();
    let names = x.schema.names();
    let cfg = &ctx.cfg.train;
    let report = cross_validate(
        &dense,
        &y,
        &names,
        &cfg.forest_params(derive_seed(ctx.seed, "cv-forest")),
        &cfg.cv_config(derive_seed(ctx.seed, "cv")),
        Some(&mask),
    )?;
    let forest = Forest::train(&dense, &y, &names, &cfg.forest_params(derive_seed(ctx.seed, "forest")))?;
    ctx.write(FOREST, forest.to_json()?.as_bytes())?;
    ctx.write_with("model/importance.json", |buf| forest.write_importance_json(buf))?;
    ctx.write_with("model/cv_summary.json", |buf| report.write_summary_json(buf))?;
    ctx.write_with("model/cv_curve.csv", |buf| report.write_curve_csv(buf))?;
    Ok(format!(
        "{} trees; CV AUPRC {:.3} ± {:.3}, EER {:.3}",
        forest.trees.len(),
        report.mean_auprc,
        report.sd_auprc,
        report.mean_eer
    ))
}

/// One row of `classify/scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub account_id: String,
    pub screen_name: String,
    pub status: String,
    pub known_label: String,
    pub score: f64,
    pub predicted_io: bool,
}

fn classify(ctx: &mut StageContext<'_>) -> Result<String> {
    let forest = Forest::from_json(&String::from_utf8_lossy(&ctx.artifact(Stage::Train, FOREST)?))?;
    let x = load_features(ctx)?;
    let corpus = load_corpus(ctx)?;
    let scores = forest.predict_proba(&x.to_dense(), &x.schema.names())?;
    let t = ctx.cfg.classify.threshold;
    let rows: Vec<ScoreRow> = x
        .account_ids
        .iter()
        .zip(&scores)
        .map(|(id, &score)| {
            let a = &corpus.accounts[id];
            ScoreRow {
                account_id: id.clone(),
                screen_name: a.screen_name.clone(),
                status: a.status.as_str().into(),
                known_label: a.known_label.as_str().into(),
                score,
                predicted_io: score >= t,
            }
        })
        .collect();
    ctx.write_csv_rows(SCORES, &rows)?;
    let n_io = rows.iter().filter(|r| r.predicted_io).count();
    Ok(format!("{} accounts scored, {n_io} at or above {t}", rows.len()))
}

/// Narrative network with its PageRank scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArtifact {
    pub network: NarrativeNetwork,
    pub pagerank: Vec<f64>,
}

fn network(ctx: &mut StageContext<'_>) -> Result<String> {
    let narrative: Narrative = ctx.artifact_json(Stage::SelectNarrative, NARRATIVE)?;
    let corpus = load_corpus(ctx)?;
    let cfg = &ctx.cfg.network;
    let mut net = build_network(&corpus, &narrative);
    if let Some(n) = cfg.most_active {
        net = net.most_active(n);
    }
    if net.is_empty() {
        return Err(PipelineError::Empty("the narrative network has no vertices".into()));
    }
    let pr = pagerank(&net, cfg.damping, cfg.tolerance);
    ctx.write_with("network/centrality.csv", |buf| net.write_centrality_csv(&pr, buf))?;
    let mut attrs = Attributes::new();
    attrs.insert(
        "pagerank".into(),
        net.vertices
            .iter()
            .zip(&pr)
            .map(|(v, &p)| (v.clone(), AttrValue::Float(p)))
            .collect(),
    );
    ctx.write_with("network/network.graphml", |buf| write_graphml(&net, &attrs, buf))?;
    let summary = format!("{} vertices, {} edges", net.len(), net.edges.len());
    ctx.write_json(
        NETWORK,
        &NetworkArtifact {
            network: net,
            pagerank: pr,
        },
    )?;
    Ok(summary)
}

fn communities(ctx: &mut StageContext<'_>) -> Result<String> {
    let art: NetworkArtifact = ctx.artifact_json(Stage::Network, NETWORK)?;
    let cfg = &ctx.cfg.communities;
    let part = fit_sbm(
        &art.network,
        &SbmConfig {
            b_min: cfg.b_min,
            b_max: cfg.b_max,
            sweeps: cfg.sweeps,
            seed: ctx.seed,
        },
    )?;
    ctx.write_json(PARTITION, &part)?;
    ctx.write_with("communities/partition.csv", |buf| part.write_csv(&art.network, buf))?;
    Ok(format!("{} blocks, description length {:.2}", part.b, part.description_length))
}

/// One row of `impact/impact.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub account_id: String,
    pub zeta_mean: f64,
    pub zeta_lo: f64,
    pub zeta_hi: f64,
}

/// Accounts that posted at least one original (non-retweet) narrative tweet.
pub(crate) fn original_posters(corpus: &Corpus, narrative: &Narrative) -> BTreeSet<String> {
    corpus
        .tweets
        .iter()
        .filter(|t| !t.is_retweet && narrative.tweet_ids.contains(&t.tweet_id))
        .map(|t| t.account_id.clone())
        .collect()
}

pub(crate) fn impact_covariates(ctx: &StageContext<'_>, net: &NarrativeNetwork, part: &Partition) -> Result<Covariates> {
    let cfg = &ctx.cfg.impact;
    let x = build_covariates(net, cfg.community_covariates.then_some(part.blocks.as_slice()))?;
    if cfg.degree_covariates {
        return Ok(x);
    }
    let keep: Vec<usize> = (0..x.width()).filter(|&c| x.names[c].starts_with("community_")).collect();
    Ok(Covariates {
        names: keep.iter().map(|&c| x.names[c].clone()).collect(),
        rows: x.rows.iter().map(|r| keep.iter().map(|&c| r[c]).collect()).collect(),
    })
}

fn impact(ctx: &mut StageContext<'_>) -> Result<String> {
    let art: NetworkArtifact = ctx.artifact_json(Stage::Network, NETWORK)?;
    let part: Partition = ctx.artifact_json(Stage::Communities, PARTITION)?;
    let narrative: Narrative = ctx.artifact_json(Stage::SelectNarrative, NARRATIVE)?;
    let corpus = load_corpus(ctx)?;
    let net = &art.network;
    let counts = Influence::from_network(net);
    let y: Vec<u64> = net.stats.iter().map(|s| s.tweet_count).collect();
    let posters = original_posters(&corpus, &narrative);
    let z: Vec<bool> = net.vertices.iter().map(|v| posters.contains(v)).collect();
    let x = impact_covariates(ctx, net, &part)?;
    let data = OutcomeData {
        y: &y,
        z: &z,
        counts: &counts,
        x: &x,
    };
    let cfg = &ctx.cfg.impact;
    let post = fit_outcome_model(data, &cfg.sampler(derive_seed(ctx.seed, "sampler")))?;
    let base = match cfg.base {
        BaseAssignment::Zero => vec![false; net.len()],
        BaseAssignment::Observed => z.clone(),
    };
    let est = posterior_impact(
        &post,
        &counts,
        &x,
        &base,
        cfg.imputation,
        cfg.max_draws,
        derive_seed(ctx.seed, "impute"),
    )?;
    let ppc = posterior_predictive_check(&post, data, cfg.ppc_draws, derive_seed(ctx.seed, "ppc"))?;

    #[derive(Serialize)]
    struct Outcome<'a> {
        account_id: &'a str,
        y: u64,
        z: bool,
    }
    let outcomes: Vec<Outcome> = net
        .vertices
        .iter()
        .zip(&y)
        .zip(&z)
        .map(|((v, &y), &z)| Outcome { account_id: v, y, z })
        .collect();
    ctx.write_csv_rows("impact/outcomes.csv", &outcomes)?;
    ctx.write_json(COVARIATES, &x)?;
    ctx.write(POSTERIOR, serde_json::to_string(&post)?.as_bytes())?;
    ctx.write_with("impact/posterior.csv", |buf| post.write_csv(buf))?;
    ctx.write_json("impact/diagnostics.json", &diagnostics(&post))?;
    ctx.write_json("impact/ppc.json", &ppc)?;
    ctx.write_with(IMPACT, |buf| write_impact_csv(&net.vertices, &est, buf))?;
    let flagged = &post.diagnostics.flagged;
    Ok(format!(
        "{} vertices, {} sources, {} draws, max split-R̂ {:.3}{}",
        net.len(),
        z.iter().filter(|&&b| b).count(),
        post.num_draws(),
        post.diagnostics.max_rhat(),
        if flagged.is_empty() {
            String::new()
        } else {
            format!(" (not converged: {})", flagged.join(", "))
        }
    ))
}

#[derive(Serialize)]
struct ParamSummary {
    name: String,
    mean: f64,
    q025: f64,
    q975: f64,
    rhat: f64,
}

#[derive(Serialize)]
struct DiagnosticsReport<'a> {
    converged: bool,
    flagged: &'a [String],
    params: Vec<ParamSummary>,
    acceptance: Vec<Vec<(String, f64)>>,
}

fn diagnostics(post: &Posterior) -> DiagnosticsReport<'_> {
    let params = post
        .param_names
        .iter()
        .enumerate()
        .map(|(i, name)| ParamSummary {
            name: name.clone(),
            mean: post.mean(i),
            q025: post.quantile(i, 0.025),
            q975: post.quantile(i, 0.975),
            rhat: post
                .diagnostics
                .rhat
                .iter()
                .find(|r| &r.0 == name)
                .map_or(f64::NAN, |r| r.1),
        })
        .collect();
    DiagnosticsReport {
        converged: post.diagnostics.converged(),
        flagged: &post.diagnostics.flagged,
        params,
        acceptance: post.chains.iter().map(|c| c.acceptance.clone()).collect(),
    }
}
