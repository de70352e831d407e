//! Ranking metrics and the repeated shuffle-split evaluation harness.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Forest, ForestError, ForestParams, Matrix, Result};
use crate::seed::{derive_indexed, rng_from};

fn class_totals(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(ForestError::LengthMismatch {
            what: "labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let p = labels.iter().filter(|&&l| l).count() as f64;
    if p == 0.0 {
        return Err(ForestError::NoPositives);
    }
    Ok((p, labels.len() as f64 - p))
}

/// Cumulative (tp, fp) after each group of tied scores, highest first.
fn ranked_counts(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// Sum over distinct thresholds of (R_k - R_{k-1}) * P_k.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, _) = class_totals(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in ranked_counts(scores, labels) {
        let recall = tp / p;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    /// Scores at or above this value are called positive.
    pub threshold: f64,
    pub fnr: f64,
    pub fpr: f64,
}

/// Operating point where the miss rate 1 - TPR is closest to the FPR; the
/// rate reported is their mean there.
pub fn equal_error_rate(scores: &[f64], labels: &[bool]) -> Result<EerPoint> {
    let (p, n) = class_totals(scores, labels)?;
    if n == 0.0 {
        return Err(ForestError::InvalidParams("equal error rate needs negatives".into()));
    }
    let mut best = EerPoint {
        eer: 0.5,
        threshold: f64::INFINITY,
        fnr: 1.0,
        fpr: 0.0,
    };
    for (s, tp, fp) in ranked_counts(scores, labels) {
        let (fnr, fpr) = (1.0 - tp / p, fp / n);
        if (fnr - fpr).abs() < (best.fnr - best.fpr).abs() {
            best = EerPoint {
                eer: 0.5 * (fnr + fpr),
                threshold: s,
                fnr,
                fpr,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Precision/recall/FPR at each threshold (score >= threshold is positive).
/// Precision is 1 where nothing is called positive.
pub fn threshold_curve(scores: &[f64], labels: &[bool], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    let (p, n) = class_totals(scores, labels)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0.0, 0.0);
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= t {
                    if l {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / p;
            CurvePoint {
                threshold: t,
                precision: if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 },
                recall,
                tpr: recall,
                fpr: if n > 0.0 { fp / n } else { 0.0 },
            }
        })
        .collect())
}

/// Thresholds 0.00, 0.01, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    #[default]
    All,
    /// Positives flagged by the heuristic mask are removed from test folds.
    OmitHeuristicPositives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub rounds: usize,
    pub test_fraction: f64,
    pub mode: CvMode,
    pub op_threshold: f64,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            rounds: 20,
            test_fraction: 0.1,
            mode: CvMode::All,
            op_threshold: 0.6,
            max_retries: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_test_positive: usize,
    pub auprc: f64,
    pub eer: f64,
    pub precision_at_op: f64,
    pub recall_at_op: f64,
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
    /// Held-out scores and labels in test-row order.
    #[serde(skip)]
    pub test_scores: Vec<f64>,
    #[serde(skip)]
    pub test_labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rounds: usize,
    pub mode: CvMode,
    pub op_threshold: f64,
    pub mean_auprc: f64,
    pub sd_auprc: f64,
    pub mean_eer: f64,
    pub sd_eer: f64,
    pub mean_precision: f64,
    pub sd_precision: f64,
    pub mean_recall: f64,
    pub sd_recall: f64,
    pub per_round: Vec<RoundResult>,
    /// Curve averaged over rounds on the 0.00..1.00 grid.
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn split_round(
    y: &[bool],
    cfg: &CvConfig,
    mask: Option<&[bool]>,
    round: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng_from(derive_indexed(cfg.seed, "cv-split", round as u64));
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let take = |n: usize| ((n as f64 * cfg.test_fraction).round() as usize).clamp(1, n - 1);
    for _ in 0..=cfg.max_retries {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let (tp, tn) = (take(pos.len()), take(neg.len()));
        let mut train: Vec<usize> = pos[tp..].iter().chain(&neg[tn..]).copied().collect();
        let mut test: Vec<usize> = pos[..tp].iter().chain(&neg[..tn]).copied().collect();
        if cfg.mode == CvMode::OmitHeuristicPositives {
            let mask = mask.expect("mask checked by caller");
            test.retain(|&i| !(y[i] && mask[i]));
        }
        if test.iter().any(|&i| y[i]) && test.iter().any(|&i| !y[i]) {
            train.sort_unstable();
            test.sort_unstable();
            return Ok((train, test));
        }
    }
    Err(ForestError::FoldRetries(cfg.max_retries + 1))
}

/// Repeated stratified shuffle-split evaluation of a random forest.
pub fn cross_validate(
    x: &Matrix,
    y: &[bool],
    names: &[String],
    params: &ForestParams,
    cfg: &CvConfig,
    heuristic_mask: Option<&[bool]>,
) -> Result<EvalReport> {
    if cfg.rounds == 0 {
        return Err(ForestError::InvalidParams("rounds must be at least 1".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(ForestError::InvalidParams("test_fraction must lie in (0, 1)".into()));
    }
    if y.len() != x.n_rows() {
        return Err(ForestError::LengthMismatch {
            what: "labels",
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    match (cfg.mode, heuristic_mask) {
        (CvMode::OmitHeuristicPositives, None) => {
            return Err(ForestError::InvalidParams("omit_heuristic_positives needs a mask".into()))
        }
        (_, Some(m)) if m.len() != y.len() => {
            return Err(ForestError::LengthMismatch {
                what: "heuristic mask",
                expected: y.len(),
                found: m.len(),
            })
        }
        _ => {}
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos < 2 || y.len() - n_pos < 2 {
        return Err(ForestError::SingleClass);
    }
    let grid = default_grid();
    let per_round: Vec<RoundResult> = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| {
            let (train, test) = split_round(y, cfg, heuristic_mask, r)?;
            let xtr = x.select_rows(&train);
            let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let round_params = ForestParams {
                seed: derive_indexed(cfg.seed, "cv-forest", r as u64),
                ..params.clone()
            };
            let forest = Forest::train(&xtr, &ytr, names, &round_params)?;
            let scores: Vec<f64> = test.iter().map(|&i| forest.predict_row(x.row(i))).collect();
            let labels: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let op = threshold_curve(&scores, &labels, &[cfg.op_threshold])?[0];
            Ok(RoundResult {
                round: r,
                n_train: train.len(),
                n_test: test.len(),
                n_test_positive: labels.iter().filter(|&&l| l).count(),
                auprc: average_precision(&scores, &labels)?,
                eer: equal_error_rate(&scores, &labels)?.eer,
                precision_at_op: op.precision,
                recall_at_op: op.recall,
                curve: threshold_curve(&scores, &labels, &grid)?,
                test_scores: scores,
                test_labels: labels,
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&RoundResult) -> f64| mean_sd(&per_round.iter().map(f).collect::<Vec<_>>());
    let (mean_auprc, sd_auprc) = col(|r| r.auprc);
    let (mean_eer, sd_eer) = col(|r| r.eer);
    let (mean_precision, sd_precision) = col(|r| r.precision_at_op);
    let (mean_recall, sd_recall) = col(|r| r.recall_at_op);
    let k = per_round.len() as f64;
    let curve = grid
        .iter()
        .enumerate()
        .map(|(g, &t)| {
            let avg = |f: fn(&CurvePoint) -> f64| per_round.iter().map(|r| f(&r.curve[g])).sum::<f64>() / k;
            CurvePoint {
                threshold: t,
                precision: avg(|c| c.precision),
                recall: avg(|c| c.recall),
                tpr: avg(|c| c.tpr),
                fpr: avg(|c| c.fpr),
            }
        })
        .collect();
    Ok(EvalReport {
        rounds: cfg.rounds,
        mode: cfg.mode,
        op_threshold: cfg.op_threshold,
        mean_auprc,
        sd_auprc,
        mean_eer,
        sd_eer,
        mean_precision,
        sd_precision,
        mean_recall,
        sd_recall,
        per_round,
        curve,
    })
}

impl EvalReport {
    /// CSV with one row per grid threshold.
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "precision", "recall", "tpr", "fpr"])?;
        for c in &self.curve {
            w.write_record([
                format!("{:.2}", c.threshold),
                c.precision.to_string(),
                c.recall.to_string(),
                c.tpr.to_string(),
                c.fpr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tests::{names, separable};
    use proptest::prelude::*;
    use rand::Rng;

    /// Average precision as the mean, over positives, of precision at the
    /// rank of each positive counting all items scored at least as high.
    fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let mut sum = 0.0;
        let mut npos = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            if !l {
                continue;
            }
            npos += 1.0;
            let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
            let tp = above.iter().filter(|&&j| labels[j]).count() as f64;
            sum += tp / above.len() as f64;
        }
        sum / npos
    }

    #[test]
    fn five_point_average_precision() {
        let s = [0.9, 0.8, 0.7, 0.6, 0.1];
        let l = [true, true, false, true, false];
        let ap = average_precision(&s, &l).unwrap();
        assert!((ap - brute_ap(&s, &l)).abs() < 1e-12);
        assert!((ap - 11.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_scores() {
        let s = [0.9, 0.8, 0.3, 0.1];
        let l = [true, true, false, false];
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
        assert_eq!(equal_error_rate(&s, &l).unwrap().eer, 0.0);
        assert!(matches!(average_precision(&s, &[false; 4]), Err(ForestError::NoPositives)));
    }

    #[test]
    fn random_scores_give_prevalence() {
        let p = 0.3;
        let reps = 200;
        let mut aps = Vec::new();
        let mut rng = rng_from(5);
        for _ in 0..reps {
            let mut l: Vec<bool> = (0..400).map(|_| rng.random::<f64>() < p).collect();
            l[0] = true;
            let s: Vec<f64> = (0..400).map(|_| rng.random()).collect();
            aps.push(average_precision(&s, &l).unwrap());
        }
        let (mean, sd) = mean_sd(&aps);
        assert!((mean - p).abs() <= 3.0 * sd / (reps as f64).sqrt() + 0.01, "{mean} {sd}");
    }

    #[test]
    fn cross_validation_on_separable_data() {
        let (x, y) = separable(200, 11);
        let cfg = CvConfig {
            rounds: 4,
            ..Default::default()
        };
        let params = ForestParams {
            n_trees: 20,
            ..Default::default()
        };
        let r = cross_validate(&x, &y, &names(2), &params, &cfg, None).unwrap();
        assert_eq!(r.per_round.len(), 4);
        assert!(r.mean_auprc > 0.98, "{}", r.mean_auprc);
        assert!(r.mean_eer < 0.05);
        assert_eq!(r.curve.len(), 101);
        let again = cross_validate(&x, &y, &names(2), &params, &cfg, None).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        r.write_curve_csv(&mut a).unwrap();
        again.write_curve_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfectly_separated_clusters_score_exactly() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![if i < 50 { 0.0 } else { 10.0 }, i as f64 % 7.0]).collect();
        let y: Vec<bool> = (0..100).map(|i| i >= 50).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = CvConfig { rounds: 3, ..Default::default() };
        let params = ForestParams { n_trees: 10, max_features: Some(2), ..Default::default() };
        let r = cross_validate(&x, &y, &names(2), &params, &cfg, None).unwrap();
        assert_eq!(r.mean_auprc, 1.0);
        assert_eq!(r.mean_eer, 0.0);
    }

    #[test]
    fn omit_mode_drops_masked_positives_from_test_folds() {
        let (x, y) = separable(200, 12);
        let mask: Vec<bool> = (0..200).map(|i| y[i] && i % 2 == 0).collect();
        let cfg = CvConfig {
            rounds: 3,
            mode: CvMode::OmitHeuristicPositives,
            ..Default::default()
        };
        let params = ForestParams { n_trees: 5, ..Default::default() };
        let r = cross_validate(&x, &y, &names(2), &params, &cfg, Some(&mask)).unwrap();
        for round in &r.per_round {
            let (_, test) = split_round(&y, &cfg, Some(&mask), round.round).unwrap();
            assert!(test.iter().all(|&i| !mask[i]));
            assert_eq!(test.len(), round.n_test);
        }
        assert!(cross_validate(&x, &y, &names(2), &params, &cfg, None).is_err());
        assert!(cross_validate(&x, &y, &names(2), &params, &cfg, Some(&mask[..5])).is_err());
        let zero = CvConfig { rounds: 0, ..Default::default() };
        assert!(cross_validate(&x, &y, &names(2), &params, &zero, None).is_err());
    }

    proptest! {
        #[test]
        fn ap_matches_brute_force(raw in prop::collection::vec((0u8..20, any::<bool>()), 1..60)) {
            let s: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 20.0).collect();
            let mut l: Vec<bool> = raw.iter().map(|r| r.1).collect();
            l[0] = true;
            let ap = average_precision(&s, &l).unwrap();
            prop_assert!((ap - brute_ap(&s, &l)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn eer_gap_bounded_by_largest_step(raw in prop::collection::vec((0u8..30, any::<bool>()), 2..60)) {
            let s: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let mut l: Vec<bool> = raw.iter().map(|r| r.1).collect();
            l[0] = true;
            l[1] = false;
            let e = equal_error_rate(&s, &l).unwrap();
            let p = l.iter().filter(|&&v| v).count() as f64;
            let n = l.len() as f64 - p;
            let mut pts = vec![(1.0, 0.0)];
            pts.extend(ranked_counts(&s, &l).into_iter().map(|(_, tp, fp)| (1.0 - tp / p, fp / n)));
            let max_gap = pts
                .windows(2)
                .map(|w| (w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs())
                .fold(0.0, f64::max);
            prop_assert!((e.fnr - e.fpr).abs() <= max_gap + 1e-12);
            prop_assert!((0.0..=1.0).contains(&e.eer));
        }
    }
}
