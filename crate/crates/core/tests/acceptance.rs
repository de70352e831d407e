//! Acceptance suite: one pass/fail line per criterion; the process fails
//! if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use ioforge::causal::{
    absolute_k_neighbor_effect, average_primary_effect_i, fit_outcome_model, impact, impact_all, k_neighbor_effect,
    network_manipulation_effect, primary_effect, walk_counts, Covariates, Influence, McConfig, OutcomeData,
    OutcomeParams, SamplerConfig, Scenario,
};
use ioforge::features::build_feature_matrix;
use ioforge::forest::{cross_validate, CvConfig, ForestParams};
use ioforge::network::{fit_sbm, pagerank, BlockState, Edge, NarrativeNetwork, SbmConfig, VertexStats};
use ioforge::seed::{derive_indexed, rng_from};
use ioforge::synth::{
    greedy_topic_overlap, planted_topic_documents, synth_corpus, synth_network_outcomes, NetworkOutcomeSpec,
    SynthCorpusSpec,
};
use ioforge::topics::{fit_lda, LdaConfig, Tokenizer};
use ioforge::weaklabel::{
    apply_lfs, compute_profiles, fit_label_model, lf_names, positive_fractions, BehavioralProfile, LabelMatrix,
    LabelMethod, NewsList, Vote,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {t:.1?}, limit {limit:?}"))?;
    Ok(t)
}

// ---------------------------------------------------------------- causal

fn dense(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        a[i][j] += w;
    }
    a
}

/// `(Aᵀ)ʰ z` for h = 1..=n_hop by repeated dense products with the transpose.
fn dense_walks(a: &[Vec<f64>], z: &[f64], n_hop: usize) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut power: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut out = Vec::new();
    for _ in 0..n_hop {
        let mut next = vec![vec![0.0; n]; n];
        for r in 0..n {
            for c in 0..n {
                next[r][c] = (0..n).map(|m| a[m][r] * power[m][c]).sum();
            }
        }
        power = next;
        out.push((0..n).map(|r| (0..n).map(|c| power[r][c] * z[c]).sum()).collect());
    }
    out
}

/// `E[Y_i(z)]` by direct substitution into the log-linear outcome model.
fn oracle_outcomes(p: &OutcomeParams, a: &[Vec<f64>], x: &Covariates, z: &[bool]) -> Vec<f64> {
    let zf: Vec<f64> = z.iter().map(|&b| b as u8 as f64).collect();
    let w = dense_walks(a, &zf, p.gamma.len());
    (0..a.len())
        .map(|i| {
            let mut lr = p.tau * zf[i] + p.mu + 0.5 * p.sigma * p.sigma;
            let mut g = 1.0;
            for h in 0..p.gamma.len() {
                g *= p.gamma[h];
                lr += p.tau * g * (1.0 + w[h][i]).ln();
            }
            for (b, v) in p.beta.iter().zip(&x.rows[i]) {
                lr += b * v;
            }
            lr.exp()
        })
        .collect()
}

fn oracle_mean_change(p: &OutcomeParams, a: &[Vec<f64>], x: &Covariates, on: &[bool], off: &[bool]) -> f64 {
    let yp = oracle_outcomes(p, a, x, on);
    let ym = oracle_outcomes(p, a, x, off);
    yp.iter().zip(&ym).map(|(u, v)| u - v).sum::<f64>() / a.len() as f64
}

fn oracle_neighbors(a: &[Vec<f64>], i: usize) -> Vec<usize> {
    (0..a.len()).filter(|&j| j != i && (a[i][j] > 0.0 || a[j][i] > 0.0)).collect()
}

/// Mean of `Y_i(z_i, S) − Y_i(z_i, ∅)` over neighbor subsets S accepted by
/// `keep(|S|)`, with every non-neighbor untreated.
fn oracle_neighbor_average(
    p: &OutcomeParams,
    a: &[Vec<f64>],
    x: &Covariates,
    i: usize,
    z_i: bool,
    keep: impl Fn(usize) -> bool,
) -> f64 {
    let n = a.len();
    let nb = oracle_neighbors(a, i);
    let mut base = vec![false; n];
    base[i] = z_i;
    let y0 = oracle_outcomes(p, a, x, &base)[i];
    let (mut sum, mut count) = (0.0, 0usize);
    for mask in 0u32..(1 << nb.len()) {
        if !keep(mask.count_ones() as usize) {
            continue;
        }
        let mut z = base.clone();
        for (b, &u) in nb.iter().enumerate() {
            z[u] = mask >> b & 1 == 1;
        }
        sum += oracle_outcomes(p, a, x, &z)[i] - y0;
        count += 1;
    }
    sum / count as f64
}

fn random_edges<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<(usize, usize, f64)> {
    let mut e = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < p {
                e.push((i, j, rng.random_range(0.1..3.0)));
            }
        }
    }
    e
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * b.abs().max(1.0)
}

fn causal_oracle() -> Outcome {
    let start = Instant::now();
    let mut compared = 0usize;
    for case in 0..50u64 {
        let mut rng = rng_from(derive_indexed(101, "causal-case", case));
        let n = rng.random_range(2..=6);
        let n_hop = rng.random_range(1..=3);
        let width = rng.random_range(0..=2);
        let edges = random_edges(&mut rng, n, 0.4);
        let a = Influence::from_edges(n, &edges).map_err(|e| e.to_string())?;
        let ad = dense(n, &edges);
        let x = Covariates {
            names: (0..width).map(|c| format!("x{c}")).collect(),
            rows: (0..n).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        };
        let p = OutcomeParams {
            tau: rng.random_range(-1.0..1.5),
            gamma: (0..n_hop).map(|_| rng.random::<f64>()).collect(),
            beta: (0..width).map(|_| rng.random_range(-0.5..0.5)).collect(),
            mu: rng.random_range(-1.0..1.0),
            sigma: rng.random_range(0.0..0.5),
        };
        let s = Scenario::new(&p, &a, &x).map_err(|e| e.to_string())?;
        let mc = McConfig::default();
        let mut cmp = |what: &str, got: f64, want: f64| -> Result<(), String> {
            compared += 1;
            check(close(got, want), || format!("case {case} {what}: {got} vs oracle {want}"))
        };
        let base: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let all = impact_all(&s, &base).map_err(|e| e.to_string())?;
        for j in 0..n {
            let mut on = base.clone();
            on[j] = true;
            let mut off = base.clone();
            off[j] = false;
            let want = oracle_mean_change(&p, &ad, &x, &on, &off);
            cmp(&format!("impact({j})"), impact(&s, j, &base).map_err(|e| e.to_string())?, want)?;
            cmp(&format!("impact_all[{j}]"), all[j], want)?;
        }
        for i in 0..n {
            let others: Vec<bool> = (0..n - 1).map(|_| rng.random()).collect();
            let full = |zi: bool| -> Vec<bool> {
                let mut z = others.clone();
                z.insert(i, zi);
                z
            };
            let want = oracle_outcomes(&p, &ad, &x, &full(true))[i] - oracle_outcomes(&p, &ad, &x, &full(false))[i];
            cmp(&format!("primary({i})"), primary_effect(&s, i, &others).map_err(|e| e.to_string())?, want)?;

            let mut sum = 0.0;
            for mask in 0u32..(1 << (n - 1)) {
                let rest: Vec<bool> = (0..n - 1).map(|b| mask >> b & 1 == 1).collect();
                let mut on = rest.clone();
                on.insert(i, true);
                let mut off = rest;
                off.insert(i, false);
                sum += oracle_outcomes(&p, &ad, &x, &on)[i] - oracle_outcomes(&p, &ad, &x, &off)[i];
            }
            let ave = average_primary_effect_i(&s, i, &mc).map_err(|e| e.to_string())?;
            check(ave.std_error.is_none(), || format!("case {case}: primary average not exact"))?;
            cmp(&format!("primary_ave({i})"), ave.value, sum / (1u64 << (n - 1)) as f64)?;

            let m = oracle_neighbors(&ad, i).len();
            check(s.neighbors(i).len() == m, || format!("case {case}: neighbor count of {i}"))?;
            for k in 0..=m {
                for z_i in [false, true] {
                    let est = k_neighbor_effect(&s, i, k, z_i, &mc).map_err(|e| e.to_string())?;
                    let want = oracle_neighbor_average(&p, &ad, &x, i, z_i, |l| l == k);
                    cmp(&format!("k_neighbor({i},{k},{z_i})"), est.value, want)?;
                }
                let est = absolute_k_neighbor_effect(&s, i, k, &mc).map_err(|e| e.to_string())?;
                let want = oracle_neighbor_average(&p, &ad, &x, i, true, |l| l >= k);
                cmp(&format!("absolute({i},{k})"), est.value, want)?;
            }
        }
        let moved_edges = random_edges(&mut rng, n, 0.5);
        let moved = Influence::from_edges(n, &moved_edges).map_err(|e| e.to_string())?;
        let z: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let got = network_manipulation_effect(&s, &z, &moved).map_err(|e| e.to_string())?;
        let yb = oracle_outcomes(&p, &ad, &x, &z);
        let ya = oracle_outcomes(&p, &dense(n, &moved_edges), &x, &z);
        cmp("manipulation", got, ya.iter().zip(&yb).map(|(u, v)| u - v).sum::<f64>() / n as f64)?;
    }
    let t = within_time(start, Duration::from_secs(10))?;
    Ok(format!("50 parameterizations, {compared} values within 1e-10 in {t:.1?}"))
}

// ----------------------------------------------------------------- GLMM

fn glmm_recovery() -> Outcome {
    let start = Instant::now();
    let spec = NetworkOutcomeSpec::default();
    let truth = [("tau", 1.0), ("gamma_1", 0.5), ("mu", 0.5), ("sigma", 0.1)];
    struct Rep {
        means: Vec<f64>,
        covered: Vec<bool>,
        gamma_in_range: bool,
        max_rhat: f64,
    }
    let reps: Vec<Rep> = (0..20u64)
        .into_par_iter()
        .map(|r| {
            let d = synth_network_outcomes(&spec, derive_indexed(202, "glmm", r)).map_err(|e| e.to_string())?;
            let data = OutcomeData {
                y: &d.y,
                z: &d.z,
                counts: &d.counts,
                x: &d.x,
            };
            let cfg = SamplerConfig {
                n_hop: 1,
                seed: derive_indexed(202, "glmm-sampler", r),
                ..SamplerConfig::default()
            };
            let post = fit_outcome_model(data, &cfg).map_err(|e| e.to_string())?;
            let idx: Vec<usize> = truth.iter().map(|(n, _)| post.index_of(n).expect("named")).collect();
            Ok(Rep {
                means: idx.iter().map(|&i| post.mean(i)).collect(),
                covered: idx
                    .iter()
                    .zip(&truth)
                    .map(|(&i, (_, v))| post.quantile(i, 0.025) <= *v && *v <= post.quantile(i, 0.975))
                    .collect(),
                gamma_in_range: post.values(idx[1]).iter().all(|g| (0.0..=1.0).contains(g)),
                max_rhat: post.diagnostics.max_rhat(),
            })
        })
        .collect::<Result<_, String>>()?;
    let mut detail = Vec::new();
    for (k, (name, v)) in truth.iter().enumerate() {
        let worst = reps.iter().map(|r| (r.means[k] - v).abs()).fold(0.0, f64::max);
        let cover = reps.iter().filter(|r| r.covered[k]).count();
        check(worst <= 0.15, || format!("{name}: a posterior mean is {worst:.3} from truth"))?;
        check(cover >= 16, || format!("{name}: 95% interval covers truth in {cover}/20"))?;
        detail.push(format!("{name} max|err| {worst:.3} cover {cover}/20"));
    }
    check(reps.iter().all(|r| r.gamma_in_range), || "a gamma draw left [0, 1]".into())?;
    let good = reps.iter().filter(|r| r.max_rhat <= 1.05).count();
    check(good >= 18, || format!("split R-hat <= 1.05 on {good}/20 replicates"))?;
    let t = within_time(start, Duration::from_secs(600))?;
    Ok(format!("{}; R-hat ok {good}/20; {t:.1?}", detail.join(", ")))
}

// ------------------------------------------------------------- exposures

fn path_sum(a: &[Vec<f64>], z: &[f64], end: usize, hops: usize) -> f64 {
    if hops == 0 {
        return z[end];
    }
    (0..a.len()).map(|prev| a[prev][end] * path_sum(a, z, prev, hops - 1)).sum()
}

fn exposures() -> Outcome {
    let mut rng = rng_from(303);
    let mut values = 0usize;
    for g in 0..100 {
        let n = rng.random_range(1..=8);
        let n_hop = rng.random_range(1..=3);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.35 {
                    edges.push((i, j, rng.random_range(1..=5) as f64));
                }
            }
        }
        let a = Influence::from_edges(n, &edges).map_err(|e| e.to_string())?;
        let ad = dense(n, &edges);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0..=2) as f64).collect();
        let w = walk_counts(&a, &z, n_hop);
        check(w.len() == n_hop, || format!("graph {g}: {} hops returned", w.len()))?;
        for (h, row) in w.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                let want = path_sum(&ad, &z, i, h + 1);
                values += 1;
                check(v == want, || format!("graph {g} hop {} vertex {i}: {v} vs {want}", h + 1))?;
            }
        }
    }
    Ok(format!("100 graphs, {values} walk counts equal path enumeration exactly"))
}

// ------------------------------------------------------ labeling functions

struct LfCase {
    profile: BehavioralProfile,
    io: &'static [&'static str],
    real: &'static [&'static str],
}

/// Ordinary account on which every heuristic abstains.
fn neutral() -> BehavioralProfile {
    BehavioralProfile {
        profile_length: 30,
        num_external_news_interactions: 3,
        following_count: 1000,
        avg_num_links: 0.5,
        num_langs_used: 2,
        num_faves: 100,
        und_fraction: 0.0,
        follower_count: 1000,
        followers_following_ratio: 1.0,
        ratio_tweets_w_links_all_tweets: 0.5,
    }
}

fn case(
    edit: impl FnOnce(&mut BehavioralProfile),
    io: &'static [&'static str],
    real: &'static [&'static str],
) -> LfCase {
    let mut profile = neutral();
    edit(&mut profile);
    LfCase { profile, io, real }
}

fn lf_cases() -> Vec<LfCase> {
    vec![
        case(|p| p.profile_length = 0, &["profile_length"], &[]),
        case(|p| p.profile_length = 50, &[], &[]),
        case(|p| p.profile_length = 51, &[], &["normal_profile_len"]),
        case(|p| p.num_external_news_interactions = 5, &[], &[]),
        case(|p| p.num_external_news_interactions = 6, &["external_news_interactions"], &[]),
        case(|p| p.num_external_news_interactions = 1, &[], &["no_external_news_interactions"]),
        case(
            |p| {
                p.num_external_news_interactions = 0;
                p.profile_length = 0;
            },
            &["profile_length"],
            &["no_external_news_interactions"],
        ),
        case(|p| p.following_count = 3000, &[], &[]),
        case(|p| p.following_count = 3001, &["num_following"], &[]),
        case(|p| p.avg_num_links = 1.0, &[], &[]),
        case(|p| p.avg_num_links = 1.01, &["num_links"], &[]),
        case(|p| p.num_langs_used = 10, &[], &[]),
        case(|p| p.num_langs_used = 11, &["many_langs"], &[]),
        case(|p| p.num_faves = 19, &["few_faves"], &[]),
        case(|p| p.num_faves = 20, &[], &[]),
        case(|p| p.num_faves = 500, &[], &[]),
        case(|p| p.num_faves = 501, &[], &["normal_num_likes"]),
        case(|p| p.num_faves = 10000, &[], &[]),
        case(|p| p.num_faves = 30001, &["too_many_faves"], &[]),
        case(|p| p.und_fraction = 0.05, &[], &[]),
        case(|p| p.und_fraction = 0.06, &["many_und_tweets"], &[]),
        case(
            |p| {
                p.follower_count = 499;
                p.followers_following_ratio = 0.75;
            },
            &[],
            &[],
        ),
        case(
            |p| {
                p.follower_count = 499;
                p.followers_following_ratio = 0.76;
            },
            &[],
            &["normal_people_ff_ratio"],
        ),
        case(
            |p| {
                p.follower_count = 499;
                p.followers_following_ratio = 4.0;
            },
            &[],
            &[],
        ),
        case(|p| p.follower_count = 60000, &[], &[]),
        case(|p| p.follower_count = 60001, &[], &["org_num_followers"]),
        case(|p| p.ratio_tweets_w_links_all_tweets = 0.1, &[], &["few_tweets_w_links"]),
        case(|p| p.ratio_tweets_w_links_all_tweets = 0.15, &[], &[]),
        case(
            |p| {
                *p = BehavioralProfile {
                    profile_length: 0,
                    num_external_news_interactions: 8,
                    following_count: 4000,
                    avg_num_links: 2.0,
                    num_langs_used: 12,
                    num_faves: 5,
                    und_fraction: 0.2,
                    follower_count: 100,
                    followers_following_ratio: 0.025,
                    ratio_tweets_w_links_all_tweets: 0.9,
                }
            },
            &[
                "profile_length",
                "external_news_interactions",
                "num_following",
                "num_links",
                "many_langs",
                "few_faves",
                "many_und_tweets",
            ],
            &[],
        ),
        case(
            |p| {
                *p = BehavioralProfile {
                    profile_length: 80,
                    num_external_news_interactions: 1,
                    following_count: 50,
                    avg_num_links: 0.5,
                    num_langs_used: 2,
                    num_faves: 40000,
                    und_fraction: 0.01,
                    follower_count: 2_000_000,
                    followers_following_ratio: 40000.0,
                    ratio_tweets_w_links_all_tweets: 0.9,
                }
            },
            &["too_many_faves"],
            &["no_external_news_interactions", "normal_profile_len", "org_num_followers"],
        ),
    ]
}

fn lf_conformance() -> Outcome {
    let names = lf_names();
    let cases = lf_cases();
    check(cases.len() == 30, || format!("fixture has {} cases", cases.len()))?;
    for (c, lf) in cases.iter().enumerate() {
        for n in lf.io.iter().chain(lf.real) {
            check(names.iter().any(|x| x == n), || format!("case {c}: unknown heuristic {n}"))?;
        }
        let got = apply_lfs(&lf.profile);
        for (j, name) in names.iter().enumerate() {
            let want = if lf.io.contains(&name.as_str()) {
                Vote::Io
            } else if lf.real.contains(&name.as_str()) {
                Vote::Real
            } else {
                Vote::Abstain
            };
            check(got[j] == want, || format!("case {c} {name}: {} expected {want}", got[j]))?;
        }
    }
    let mut sweeps = Vec::new();
    for seed in 0..5 {
        let s = synth_corpus(&SynthCorpusSpec::default(), seed).map_err(|e| e.to_string())?;
        let profiles = compute_profiles(&s.corpus, &NewsList::parse(&s.news_list));
        let matrix = LabelMatrix::from_profiles(&profiles);
        for method in [LabelMethod::Em, LabelMethod::Vote] {
            let weak = fit_label_model(&matrix, method).map_err(|e| e.to_string())?;
            let f = positive_fractions(&weak, &[0.5, 0.7, 0.9]).map_err(|e| e.to_string())?;
            check(f.windows(2).all(|w| w[1].1 <= w[0].1), || {
                format!("seed {seed} {method:?}: fractions {f:?} increase")
            })?;
            if seed == 0 && method == LabelMethod::Em {
                sweeps = f.iter().map(|(t, v)| format!("{t}:{v:.2}")).collect();
            }
        }
    }
    Ok(format!("30 cases x 14 heuristics exact; sweep monotone ({})", sweeps.join(" ")))
}

// ------------------------------------------------------------ classifier

/// Mean over positives of the precision among items scoring at least as
/// high as that positive.
fn brute_average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for (k, &sk) in scores.iter().enumerate() {
        if !labels[k] {
            continue;
        }
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= sk).collect();
        let hits = above.iter().filter(|&&i| labels[i]).count() as f64;
        total += hits / above.len() as f64;
    }
    total / p
}

fn classifier() -> Outcome {
    let start = Instant::now();
    let s = synth_corpus(&SynthCorpusSpec::default(), 505).map_err(|e| e.to_string())?;
    let accounts: Vec<String> = s.corpus.accounts.keys().cloned().collect();
    let io: BTreeSet<String> = s.truth.io_accounts().into_iter().collect();
    let y: Vec<bool> = accounts.iter().map(|a| io.contains(a)).collect();
    let x = build_feature_matrix(&s.corpus, &accounts, &NewsList::parse(&s.news_list), &Tokenizer::new(), 15)
        .map_err(|e| e.to_string())?;
    let dense = x.to_dense();
    let names = x.schema.names();
    let params = ForestParams {
        seed: 5051,
        ..ForestParams::default()
    };
    let cfg = CvConfig {
        seed: 5052,
        ..CvConfig::default()
    };
    let run = || cross_validate(&dense, &y, &names, &params, &cfg, None).map_err(|e| e.to_string());
    let report = run()?;
    check(report.per_round.len() == 20, || format!("{} rounds", report.per_round.len()))?;
    for r in &report.per_round {
        let want = brute_average_precision(&r.test_scores, &r.test_labels);
        check((r.auprc - want).abs() <= 1e-12, || {
            format!("round {}: AUPRC {} vs brute force {want}", r.round, r.auprc)
        })?;
    }
    check(report.mean_auprc >= 0.95, || format!("mean AUPRC {:.4}", report.mean_auprc))?;
    check(report.mean_eer <= 0.10, || format!("mean EER {:.4}", report.mean_eer))?;
    let again = run()?;
    let bytes = |r: &ioforge::forest::EvalReport| {
        let mut b = serde_json::to_vec(r).expect("serializable");
        r.write_summary_json(&mut b).expect("in memory");
        r.write_curve_csv(&mut b).expect("in memory");
        b
    };
    check(bytes(&report) == bytes(&again), || "EvalReport bytes differ between runs".into())?;
    let t = within_time(start, Duration::from_secs(120))?;
    Ok(format!(
        "{} accounts ({} IO), AUPRC {:.4}, EER {:.4}, per-fold AP exact, bytes identical; {t:.1?}",
        accounts.len(),
        io.len(),
        report.mean_auprc,
        report.mean_eer
    ))
}

// ---------------------------------------------------------------- topics

fn topic_recovery() -> Outcome {
    let start = Instant::now();
    let overlaps: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let (docs, planted) = planted_topic_documents(3000, 3, 50, 20, seed);
            let cfg = LdaConfig {
                iterations: 200,
                ..LdaConfig::new(3, derive_indexed(606, "lda", seed))
            };
            let model = fit_lda(&docs, &cfg).map_err(|e| e.to_string())?;
            Ok(greedy_topic_overlap(&model, &planted, 10))
        })
        .collect::<Result<_, String>>()?;
    for (seed, o) in overlaps.iter().enumerate() {
        check(*o >= 0.8, || format!("seed {seed}: top-10 overlap {o:.2}"))?;
    }
    let t = within_time(start, Duration::from_secs(60))?;
    let min = overlaps.iter().copied().fold(1.0, f64::min);
    Ok(format!("10 seeds, minimum top-10 overlap {min:.2}; {t:.1?}"))
}

// ----------------------------------------------------------- communities

fn network_from_edges(n: usize, edges: Vec<Edge>) -> NarrativeNetwork {
    NarrativeNetwork {
        vertices: (0..n).map(|i| format!("v{i:03}")).collect(),
        stats: vec![
            VertexStats {
                tweet_count: 1,
                retweets_received: 0,
                follower_count: 0,
                first_tweet: None,
            };
            n
        ],
        edges,
    }
}

/// Two-block degree-corrected planted partition: vertices 0..30 and 30..60.
fn planted_sbm(seed: u64) -> (NarrativeNetwork, Vec<usize>) {
    let n = 60;
    let mut rng = rng_from(derive_indexed(707, "dcsbm", seed));
    let truth: Vec<usize> = (0..n).map(|i| i * 2 / n).collect();
    let mut theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    for b in 0..2 {
        let members: Vec<usize> = (0..n).filter(|&i| truth[i] == b).collect();
        let mean = members.iter().map(|&i| theta[i]).sum::<f64>() / members.len() as f64;
        members.iter().for_each(|&i| theta[i] /= mean);
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if truth[i] == truth[j] { 0.3 } else { 0.01 };
            if rng.random::<f64>() < (theta[i] * theta[j] * p).min(1.0) {
                edges.push(Edge {
                    source: i,
                    target: j,
                    count: 1,
                });
            }
        }
    }
    (network_from_edges(n, edges), truth)
}

fn community_recovery() -> Outcome {
    let mut exact = 0;
    let mut checked_moves = 0usize;
    for seed in 0..20u64 {
        let (net, truth) = planted_sbm(seed);
        let part = fit_sbm(
            &net,
            &SbmConfig {
                seed: derive_indexed(707, "fit", seed),
                ..SbmConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        if part.blocks == truth {
            exact += 1;
        }
        // Zero-temperature descent from a scrambled two-block start: every
        // accepted move must lower the recomputed description length by the
        // reported amount.
        let mut rng = rng_from(derive_indexed(707, "scramble", seed));
        let start: Vec<usize> = truth.iter().map(|&b| if rng.random::<f64>() < 0.3 { 1 - b } else { b }).collect();
        let mut state = BlockState::new(net.undirected_adjacency(), start);
        let mut dl = state.description_length();
        for sweep in 0..20 {
            let mut moved = false;
            for v in 0..net.len() {
                for s in 0..state.num_blocks() {
                    if state.move_delta(v, s).is_some_and(|d| d < -1e-12) {
                        let d = state.move_vertex(v, s).expect("valid move");
                        let now = state.description_length();
                        check(now <= dl && (now - (dl + d)).abs() <= 1e-8 * dl.abs(), || {
                            format!("seed {seed} sweep {sweep}: MDL {dl} -> {now} (reported {d})")
                        })?;
                        dl = now;
                        moved = true;
                        checked_moves += 1;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }
    check(exact >= 18, || format!("exact recovery in {exact}/20 seeds"))?;
    Ok(format!("exact recovery {exact}/20; {checked_moves} zero-temperature moves all lowered MDL"))
}

// -------------------------------------------------------------- pagerank

fn pagerank_oracle() -> Outcome {
    let mut rng = rng_from(808);
    let d = 0.85;
    let mut worst: f64 = 0.0;
    for g in 0..100 {
        let n = rng.random_range(1..=10);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < 0.3 {
                    edges.push(Edge {
                        source: i,
                        target: j,
                        count: rng.random_range(1..=5),
                    });
                }
            }
        }
        let net = network_from_edges(n, edges.clone());
        let pr = pagerank(&net, d, 1e-12);
        // Rank flows from the retweeter (target) to the retweeted (source).
        let mut out = vec![0.0; n];
        for e in &edges {
            out[e.target] += e.count as f64;
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        for e in &edges {
            m[(e.source, e.target)] += e.count as f64 / out[e.target];
        }
        for j in (0..n).filter(|&j| out[j] == 0.0) {
            for i in 0..n {
                m[(i, j)] = 1.0 / n as f64;
            }
        }
        let lhs = DMatrix::<f64>::identity(n, n) - m * d;
        let rhs = DVector::<f64>::from_element(n, (1.0 - d) / n as f64);
        let want = lhs.lu().solve(&rhs).ok_or_else(|| format!("graph {g}: singular system"))?;
        let sum: f64 = pr.iter().sum();
        check((sum - 1.0).abs() <= 1e-9, || format!("graph {g}: sum {sum}"))?;
        for i in 0..n {
            let err = (pr[i] - want[i]).abs();
            worst = worst.max(err);
            check(err <= 1e-8, || format!("graph {g} vertex {i}: {} vs {}", pr[i], want[i]))?;
        }
    }
    Ok(format!("100 digraphs, max abs error {worst:.1e}"))
}

// ------------------------------------------------------------ end to end

fn end_to_end() -> Outcome {
    let results: Vec<(u64, bool, Vec<String>)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let dir = tempfile::tempdir().expect("tempdir");
            let (s, mut cfg) = common::fixture(dir.path(), seed, &[]);
            common::run_pipeline(&mut cfg, &s);
            let top: Vec<String> = common::impact_ranking(&cfg).into_iter().take(3).collect();
            let hit = s.truth.sources.iter().all(|src| top.contains(src));
            (seed, hit, top)
        })
        .collect();
    let hits = results.iter().filter(|r| r.1).count();
    let misses: Vec<u64> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();

    let snapshot = |seed: u64| -> Vec<String> {
        let dir = tempfile::tempdir().expect("tempdir");
        let (s, mut cfg) = common::fixture(dir.path(), seed, &[]);
        common::run_pipeline(&mut cfg, &s);
        ["manifest.json", "report/table1.csv", "impact/posterior.csv"]
            .iter()
            .map(|f| std::fs::read_to_string(cfg.run_path().join(f)).expect("artifact"))
            .collect()
    };
    check(snapshot(0) == snapshot(0), || "two runs with seed 0 differ".into())?;
    check(hits >= 18, || format!("sources in top 3 for {hits}/20 seeds; misses {misses:?}"))?;
    Ok(format!("sources in top 3 for {hits}/20 seeds (misses {misses:?}); reruns byte-identical"))
}

// ---------------------------------------------------------------- driver

fn main() -> std::process::ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("causal estimands match brute force", causal_oracle),
        ("outcome model parameter recovery", glmm_recovery),
        ("exposures equal path enumeration", exposures),
        ("labeling function conformance", lf_conformance),
        ("classifier harness", classifier),
        ("topic recovery", topic_recovery),
        ("community recovery", community_recovery),
        ("pagerank linear-solve oracle", pagerank_oracle),
        ("end-to-end source ranking", end_to_end),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", k + 1),
            Err(why) => {
                println!("FAIL [{}] {name}: {why} ({:.1?})", k + 1, started.elapsed());
                failed.push(k + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
