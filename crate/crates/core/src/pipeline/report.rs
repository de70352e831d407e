//! Report stage: impact ranking table, score/impact scatter, score
//! histograms by account status and the community cross-tab.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stages::{load_corpus, ImpactRow, NetworkArtifact, ScoreRow, IMPACT, NETWORK, PARTITION, SCORES};
use super::{PipelineError, Result, Stage, StageContext};
use crate::corpus::{format_time, AccountStatus};
use crate::network::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub status: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Equal-width score bins on [0, 1] per account status; a score of exactly
/// 1 falls in the last bin. Every status gets every bin, so the counts sum
/// to the number of rows.
pub fn score_histogram(rows: &[ScoreRow], bins: usize) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<&str, Vec<usize>> = AccountStatus::ALL
        .iter()
        .map(|s| (s.as_str(), vec![0; bins]))
        .collect();
    for r in rows {
        let b = ((r.score.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts.entry(r.status.as_str()).or_insert_with(|| vec![0; bins])[b] += 1;
    }
    counts
        .into_iter()
        .flat_map(|(status, c)| {
            c.into_iter().enumerate().map(move |(b, count)| HistogramBin {
                status: status.to_string(),
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                count,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct TableRow {
    rank: usize,
    screen_name: String,
    account_id: String,
    tweets: u64,
    retweets: u64,
    followers: u64,
    first_tweet: String,
    pagerank: f64,
    impact: f64,
    impact_lo: f64,
    impact_hi: f64,
    score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ScatterRow {
    account_id: String,
    score: Option<f64>,
    impact: f64,
    known_label: String,
}

#[derive(Debug, Serialize)]
struct CrossTabRow {
    block: usize,
    accounts: usize,
    scored: usize,
    predicted_io: usize,
    mean_score: Option<f64>,
    mean_impact: f64,
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    accounts_scored: usize,
    network_vertices: usize,
    blocks: usize,
    top_impact: Vec<String>,
}

pub(crate) fn report(ctx: &mut StageContext<'_>) -> Result<String> {
    let scores: Vec<ScoreRow> = ctx.artifact_csv(Stage::Classify, SCORES)?;
    let impact: Vec<ImpactRow> = ctx.artifact_csv(Stage::Impact, IMPACT)?;
    let art: NetworkArtifact = ctx.artifact_json(Stage::Network, NETWORK)?;
    let part: Partition = ctx.artifact_json(Stage::Communities, PARTITION)?;
    let corpus = load_corpus(ctx)?;
    let net = &art.network;
    if impact.len() != net.len() || part.blocks.len() != net.len() {
        return Err(PipelineError::Malformed {
            path: IMPACT.into(),
            msg: format!(
                "{} impact rows and {} blocks for {} network vertices",
                impact.len(),
                part.blocks.len(),
                net.len()
            ),
        });
    }
    let score_of: BTreeMap<&str, &ScoreRow> = scores.iter().map(|r| (r.account_id.as_str(), r)).collect();
    let score = |v: &str| score_of.get(v).map(|r| r.score);

    let mut order: Vec<usize> = (0..net.len()).collect();
    order.sort_by(|&a, &b| {
        impact[b]
            .zeta_mean
            .total_cmp(&impact[a].zeta_mean)
            .then_with(|| net.vertices[a].cmp(&net.vertices[b]))
    });
    let table: Vec<TableRow> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let v = &net.vertices[i];
            let s = &net.stats[i];
            TableRow {
                rank: rank + 1,
                screen_name: corpus.accounts.get(v).map_or_else(|| v.clone(), |a| a.screen_name.clone()),
                account_id: v.clone(),
                tweets: s.tweet_count,
                retweets: s.retweets_received,
                followers: s.follower_count,
                first_tweet: s.first_tweet.map(format_time).unwrap_or_default(),
                pagerank: art.pagerank[i],
                impact: impact[i].zeta_mean,
                impact_lo: impact[i].zeta_lo,
                impact_hi: impact[i].zeta_hi,
                score: score(v),
            }
        })
        .collect();
    ctx.write_csv_rows("report/table1.csv", &table)?;

    let scatter: Vec<ScatterRow> = net
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| ScatterRow {
            account_id: v.clone(),
            score: score(v),
            impact: impact[i].zeta_mean,
            known_label: corpus
                .accounts
                .get(v)
                .map_or("unknown", |a| a.known_label.as_str())
                .to_string(),
        })
        .collect();
    ctx.write_csv_rows("report/scatter.csv", &scatter)?;

    ctx.write_csv_rows(
        "report/score_histogram.csv",
        &score_histogram(&scores, ctx.cfg.report.histogram_bins),
    )?;

    let t = ctx.cfg.classify.threshold;
    let crosstab: Vec<CrossTabRow> = (0..part.b)
        .map(|b| {
            let members: Vec<usize> = (0..net.len()).filter(|&i| part.blocks[i] == b).collect();
            let s: Vec<f64> = members.iter().filter_map(|&i| score(&net.vertices[i])).collect();
            CrossTabRow {
                block: b,
                accounts: members.len(),
                scored: s.len(),
                predicted_io: s.iter().filter(|&&x| x >= t).count(),
                mean_score: (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64),
                mean_impact: members.iter().map(|&i| impact[i].zeta_mean).sum::<f64>() / members.len().max(1) as f64,
            }
        })
        .collect();
    ctx.write_csv_rows("report/community_crosstab.csv", &crosstab)?;

    let top: Vec<String> = table.iter().take(10).map(|r| r.account_id.clone()).collect();
    ctx.write_json(
        "report/summary.json",
        &ReportSummary {
            accounts_scored: scores.len(),
            network_vertices: net.len(),
            blocks: part.b,
            top_impact: top.clone(),
        },
    )?;
    Ok(format!(
        "{} network accounts ranked; top by impact: {}",
        net.len(),
        top.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
    ))
}
