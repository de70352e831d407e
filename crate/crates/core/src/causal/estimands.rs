//! Causal estimands evaluated by imputing potential outcomes from the outcome
//! model, for a fixed parameter draw or across posterior draws.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::quantile_sorted;
use super::{log_rate, poisson, walk_counts, CausalError, Covariates, Influence, OutcomeParams, Posterior, Result};
use crate::seed::{derive_indexed, rng_from};

/// Enumeration limits and Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Largest N for exact enumeration over all 2^(N-1) assignments.
    pub exact_max_n: usize,
    /// Largest number of neighbor assignments enumerated exactly.
    pub exact_max_assignments: u64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            exact_max_n: 12,
            exact_max_assignments: 10_000,
            samples: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Monte Carlo standard error; `None` when enumerated exactly.
    pub std_error: Option<f64>,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, std_error: None }
    }

    fn from_samples(v: &[f64]) -> Self {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        Estimate {
            value: mean,
            std_error: Some((var / m).sqrt()),
        }
    }

    /// Mean of estimates with independent errors.
    fn average(parts: &[Estimate]) -> Self {
        let n = parts.len() as f64;
        let value = parts.iter().map(|e| e.value).sum::<f64>() / n;
        let std_error = if parts.iter().all(|e| e.std_error.is_none()) {
            None
        } else {
            Some(parts.iter().map(|e| e.std_error.unwrap_or(0.0).powi(2)).sum::<f64>().sqrt() / n)
        };
        Estimate { value, std_error }
    }
}

/// A fixed parameter draw with its influence matrix and covariates.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub params: &'a OutcomeParams,
    pub a: &'a Influence,
    pub x: &'a Covariates,
    neighbors: Vec<Vec<usize>>,
}

impl<'a> Scenario<'a> {
    /// Neighborhoods are the undirected support of `a`.
    pub fn new(params: &'a OutcomeParams, a: &'a Influence, x: &'a Covariates) -> Result<Self> {
        Self::with_support(params, a, x, a)
    }

    /// Neighborhoods taken from `support` instead of `a`.
    pub fn with_support(
        params: &'a OutcomeParams,
        a: &'a Influence,
        x: &'a Covariates,
        support: &Influence,
    ) -> Result<Self> {
        params.validate(x.width())?;
        for (what, len) in [("covariate rows", x.n()), ("support", support.n())] {
            if len != a.n() {
                return Err(CausalError::Dimension {
                    what,
                    expected: a.n(),
                    found: len,
                });
            }
        }
        Ok(Scenario {
            params,
            a,
            x,
            neighbors: support.neighbors(),
        })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Log rate at ε = 0 from raw walk counts at vertex i.
    fn base_log_rate(&self, i: usize, z_i: bool, walks_i: &[f64]) -> Result<f64> {
        let s: Vec<f64> = walks_i.iter().map(|v| v.ln_1p()).collect();
        log_rate(self.params, z_i, &s, &self.x.rows[i], 0.0)
    }

    fn expected(&self, lr: f64) -> f64 {
        (lr + 0.5 * self.params.sigma * self.params.sigma).exp()
    }

    fn check_z(&self, z: &[bool]) -> Result<()> {
        if z.len() != self.n() {
            return Err(CausalError::Dimension {
                what: "source vector",
                expected: self.n(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// `E[Y_i(z)]` for every vertex.
    pub fn expected_outcomes(&self, z: &[bool]) -> Result<Vec<f64>> {
        self.check_z(z)?;
        let zf: Vec<f64> = z.iter().map(|&b| b as u8 as f64).collect();
        let w = walk_counts(self.a, &zf, self.params.n_hop());
        (0..self.n())
            .map(|i| {
                let wi: Vec<f64> = w.iter().map(|h| h[i]).collect();
                Ok(self.expected(self.base_log_rate(i, z[i], &wi)?))
            })
            .collect()
    }

    fn check_vertex(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            Err(CausalError::VertexOutOfRange(i))
        } else {
            Ok(())
        }
    }
}

/// Vertices within `n_hop` backward steps of a target, enough to evaluate
/// its walk counts exactly.
struct Ball {
    target: usize,
    verts: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
}

impl Ball {
    fn new(a: &Influence, target: usize, n_hop: usize) -> Self {
        let mut incoming: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (i, j, w) in a.edges() {
            incoming.entry(j).or_default().push((i, w));
        }
        let mut local: BTreeMap<usize, usize> = BTreeMap::from([(target, 0)]);
        let mut verts = vec![target];
        let mut frontier = vec![target];
        for _ in 0..n_hop {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(m, _) in incoming.get(&u).map_or(&[][..], |v| v.as_slice()) {
                    if !local.contains_key(&m) {
                        local.insert(m, verts.len());
                        verts.push(m);
                        next.push(m);
                    }
                }
            }
            frontier = next;
        }
        let edges = a
            .edges()
            .filter_map(|(i, j, w)| Some((*local.get(&i)?, *local.get(&j)?, w)))
            .collect();
        Ball { target, verts, edges }
    }

    fn walks(&self, z: &dyn Fn(usize) -> bool, n_hop: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.verts.iter().map(|&u| z(u) as u8 as f64).collect();
        let mut out = Vec::with_capacity(n_hop);
        for _ in 0..n_hop {
            let mut next = vec![0.0; v.len()];
            for &(i, j, w) in &self.edges {
                next[j] += w * v[i];
            }
            out.push(next[0]);
            v = next;
        }
        out
    }

    fn expected(&self, s: &Scenario<'_>, z: &dyn Fn(usize) -> bool) -> Result<f64> {
        let w = self.walks(z, s.params.n_hop());
        Ok(s.expected(s.base_log_rate(self.target, z(self.target), &w)?))
    }
}

/// ζ_j(base): mean change in expected outcomes when j is forced to be a
/// source versus forced not to be.
pub fn impact(s: &Scenario<'_>, j: usize, base_z: &[bool]) -> Result<f64> {
    s.check_vertex(j)?;
    s.check_z(base_z)?;
    let mut plus = base_z.to_vec();
    plus[j] = true;
    let mut minus = base_z.to_vec();
    minus[j] = false;
    let yp = s.expected_outcomes(&plus)?;
    let ym = s.expected_outcomes(&minus)?;
    Ok(yp.iter().zip(&ym).map(|(a, b)| a - b).sum::<f64>() / s.n() as f64)
}

/// Sparse `(Aᵀ)ʰ e_j` for h = 1..=n_hop.
fn unit_walks(a: &Influence, j: usize, n_hop: usize) -> Vec<BTreeMap<usize, f64>> {
    let mut cur: BTreeMap<usize, f64> = BTreeMap::from([(j, 1.0)]);
    let mut out = Vec::with_capacity(n_hop);
    for _ in 0..n_hop {
        let mut next: BTreeMap<usize, f64> = BTreeMap::new();
        for (&u, &val) in &cur {
            for &e in a.out_edges(u) {
                let (_, v, w) = a.edge(e);
                if w > 0.0 {
                    *next.entry(v).or_default() += w * val;
                }
            }
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

/// ζ_j for every j, using linearity of walk counts in z and touching only the
/// vertices each j can reach. `outcome(i, log_rate_at_eps0)` imputes Y_i.
fn impact_all_with(
    s: &Scenario<'_>,
    base_z: &[bool],
    outcome: &mut dyn FnMut(usize, f64) -> f64,
) -> Result<Vec<f64>> {
    s.check_z(base_z)?;
    let h = s.params.n_hop();
    let zf: Vec<f64> = base_z.iter().map(|&b| b as u8 as f64).collect();
    let base = walk_counts(s.a, &zf, h);
    let n = s.n();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let unit = unit_walks(s.a, j, h);
        let mut affected: Vec<usize> = unit.iter().flat_map(|m| m.keys().copied()).collect();
        affected.push(j);
        affected.sort_unstable();
        affected.dedup();
        let shift = zf[j];
        let mut total = 0.0;
        for &i in &affected {
            let mut minus = Vec::with_capacity(h);
            let mut plus = Vec::with_capacity(h);
            for k in 0..h {
                let u = unit[k].get(&i).copied().unwrap_or(0.0);
                let m = base[k][i] - shift * u;
                minus.push(m);
                plus.push(m + u);
            }
            let zi_plus = if i == j { true } else { base_z[i] };
            let zi_minus = if i == j { false } else { base_z[i] };
            let yp = outcome(i, s.base_log_rate(i, zi_plus, &plus)?);
            let ym = outcome(i, s.base_log_rate(i, zi_minus, &minus)?);
            total += yp - ym;
        }
        out.push(total / n as f64);
    }
    Ok(out)
}

/// ζ_j(base) for all vertices at once.
pub fn impact_all(s: &Scenario<'_>, base_z: &[bool]) -> Result<Vec<f64>> {
    impact_all_with(s, base_z, &mut |_, lr| s.expected(lr))
}

fn insert_self(i: usize, z_others: &[bool], zi: bool) -> Vec<bool> {
    let mut z = Vec::with_capacity(z_others.len() + 1);
    z.extend_from_slice(&z_others[..i]);
    z.push(zi);
    z.extend_from_slice(&z_others[i..]);
    z
}

/// ξ_i(z): effect of treating i given the assignment `z_others` of the
/// other N − 1 vertices (in vertex order, i skipped).
pub fn primary_effect(s: &Scenario<'_>, i: usize, z_others: &[bool]) -> Result<f64> {
    s.check_vertex(i)?;
    if z_others.len() + 1 != s.n() {
        return Err(CausalError::Dimension {
            what: "assignment of other vertices",
            expected: s.n() - 1,
            found: z_others.len(),
        });
    }
    let ball = Ball::new(s.a, i, s.params.n_hop());
    let on = insert_self(i, z_others, true);
    let off = insert_self(i, z_others, false);
    Ok(ball.expected(s, &|u| on[u])? - ball.expected(s, &|u| off[u])?)
}

/// ξ_i^ave: ξ_i(z) averaged over all 2^(N−1) assignments of the others.
pub fn average_primary_effect_i(s: &Scenario<'_>, i: usize, mc: &McConfig) -> Result<Estimate> {
    s.check_vertex(i)?;
    let n = s.n();
    let ball = Ball::new(s.a, i, s.params.n_hop());
    let effect = |others: &dyn Fn(usize) -> bool| -> Result<f64> {
        let on = |u: usize| if u == i { true } else { others(u) };
        let off = |u: usize| if u == i { false } else { others(u) };
        Ok(ball.expected(s, &on)? - ball.expected(s, &off)?)
    };
    if n <= mc.exact_max_n {
        let others: Vec<usize> = (0..n).filter(|&u| u != i).collect();
        let total = 1u64 << others.len();
        let mut sum = 0.0;
        let mut z = vec![false; n];
        for mask in 0..total {
            for (b, &u) in others.iter().enumerate() {
                z[u] = mask >> b & 1 == 1;
            }
            sum += effect(&|u| z[u])?;
        }
        return Ok(Estimate::exact(sum / total as f64));
    }
    let mut rng = rng_from(derive_indexed(mc.seed, "primary", i as u64));
    let samples = (0..mc.samples.max(2))
        .map(|_| {
            let z: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            effect(&|u| z[u])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// ξ^ave: mean of ξ_i^ave over all vertices.
pub fn average_primary_effect(s: &Scenario<'_>, mc: &McConfig) -> Result<Estimate> {
    let parts = (0..s.n())
        .into_par_iter()
        .map(|i| average_primary_effect_i(s, i, mc))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::average(&parts))
}

/// C(m, k), or `None` once it exceeds `cap`.
fn binomial_capped(m: usize, k: usize, cap: u64) -> Option<u64> {
    if k > m {
        return Some(0);
    }
    let k = k.min(m - k);
    let mut c: u128 = 1;
    for t in 0..k {
        c = c * (m - t) as u128 / (t + 1) as u128;
        if c > cap as u128 {
            return None;
        }
    }
    Some(c as u64)
}

fn ln_binomial(m: usize, k: usize) -> f64 {
    statrs::function::gamma::ln_gamma(m as f64 + 1.0)
        - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
        - statrs::function::gamma::ln_gamma((m - k) as f64 + 1.0)
}

/// Visit every k-subset of 0..m in lexicographic order.
fn for_each_combination(m: usize, k: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx)?;
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < m - k + p) else {
            return Ok(());
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Y_i(z_i, S treated) − Y_i(z_i, none treated) with all non-neighbors
/// untreated.
fn neighbor_contrast(s: &Scenario<'_>, ball: &Ball, i: usize, z_i: bool, treated: &[usize]) -> Result<f64> {
    let on = |u: usize| if u == i { z_i } else { treated.binary_search(&u).is_ok() };
    let off = |u: usize| u == i && z_i;
    Ok(ball.expected(s, &on)? - ball.expected(s, &off)?)
}

fn sorted_pick(nb: &[usize], picks: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = picks.into_iter().map(|p| nb[p]).collect();
    v.sort_unstable();
    v
}

/// δ_{i,k}(z_i): average effect on i of having exactly k of its neighbors
/// treated.
pub fn k_neighbor_effect(s: &Scenario<'_>, i: usize, k: usize, z_i: bool, mc: &McConfig) -> Result<Estimate> {
    s.check_vertex(i)?;
    let nb = s.neighbors(i).to_vec();
    if k > nb.len() {
        return Err(CausalError::TooFewNeighbors {
            vertex: i,
            neighbors: nb.len(),
            k,
        });
    }
    let ball = Ball::new(s.a, i, s.params.n_hop());
    if let Some(count) = binomial_capped(nb.len(), k, mc.exact_max_assignments) {
        let mut sum = 0.0;
        for_each_combination(nb.len(), k, &mut |c| {
            sum += neighbor_contrast(s, &ball, i, z_i, &sorted_pick(&nb, c.iter().copied()))?;
            Ok(())
        })?;
        return Ok(Estimate::exact(sum / count as f64));
    }
    let mut rng = rng_from(derive_indexed(mc.seed, &format!("k-neighbor-{k}-{z_i}"), i as u64));
    let samples = (0..mc.samples.max(2))
        .map(|_| {
            let pick = sorted_pick(&nb, sample_indices(&mut rng, nb.len(), k));
            neighbor_contrast(s, &ball, i, z_i, &pick)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// δ_{i,k}^ave = ½ (δ_{i,k}(0) + δ_{i,k}(1)).
pub fn k_neighbor_effect_ave(s: &Scenario<'_>, i: usize, k: usize, mc: &McConfig) -> Result<Estimate> {
    let e0 = k_neighbor_effect(s, i, k, false, mc)?;
    let e1 = k_neighbor_effect(s, i, k, true, mc)?;
    let value = 0.5 * (e0.value + e1.value);
    let std_error = match (e0.std_error, e1.std_error) {
        (None, None) => None,
        (a, b) => Some(0.5 * (a.unwrap_or(0.0).powi(2) + b.unwrap_or(0.0).powi(2)).sqrt()),
    };
    Ok(Estimate { value, std_error })
}

/// δ_k^ave: mean of δ_{i,k}^ave over vertices with at least k neighbors.
pub fn k_neighbor_effect_population(s: &Scenario<'_>, k: usize, mc: &McConfig) -> Result<Estimate> {
    let eligible: Vec<usize> = (0..s.n()).filter(|&i| s.neighbors(i).len() >= k).collect();
    if eligible.is_empty() {
        return Err(CausalError::InvalidParams(format!("no vertex has at least {k} neighbors")));
    }
    let parts = eligible
        .into_par_iter()
        .map(|i| k_neighbor_effect_ave(s, i, k, mc))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::average(&parts))
}

/// δ̃_{i,k}: effect on a treated i of having at least k treated neighbors,
/// averaged uniformly over all such neighbor assignments.
pub fn absolute_k_neighbor_effect(s: &Scenario<'_>, i: usize, k: usize, mc: &McConfig) -> Result<Estimate> {
    s.check_vertex(i)?;
    let nb = s.neighbors(i).to_vec();
    let m = nb.len();
    if k > m {
        return Err(CausalError::TooFewNeighbors {
            vertex: i,
            neighbors: m,
            k,
        });
    }
    let ball = Ball::new(s.a, i, s.params.n_hop());
    let mut total: Option<u64> = Some(0);
    for l in k..=m {
        total = match (total, binomial_capped(m, l, mc.exact_max_assignments)) {
            (Some(t), Some(c)) if t + c <= mc.exact_max_assignments => Some(t + c),
            _ => None,
        };
    }
    if let Some(count) = total {
        let mut sum = 0.0;
        for l in k..=m {
            for_each_combination(m, l, &mut |c| {
                sum += neighbor_contrast(s, &ball, i, true, &sorted_pick(&nb, c.iter().copied()))?;
                Ok(())
            })?;
        }
        return Ok(Estimate::exact(sum / count as f64));
    }
    let ln_w: Vec<f64> = (k..=m).map(|l| ln_binomial(m, l)).collect();
    let top = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ln_w.iter().map(|v| (v - top).exp()).collect();
    let dist = rand_distr::weighted::WeightedIndex::new(&w)
        .map_err(|e| CausalError::InvalidParams(e.to_string()))?;
    let mut rng: ChaCha8Rng = rng_from(derive_indexed(mc.seed, &format!("absolute-{k}"), i as u64));
    let samples = (0..mc.samples.max(2))
        .map(|_| {
            let l = k + rand_distr::Distribution::sample(&dist, &mut rng);
            let pick = sorted_pick(&nb, sample_indices(&mut rng, m, l));
            neighbor_contrast(s, &ball, i, true, &pick)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// ζ_A(z): mean change in expected outcomes when the influence matrix is
/// replaced by `a_prime`.
pub fn network_manipulation_effect(s: &Scenario<'_>, z: &[bool], a_prime: &Influence) -> Result<f64> {
    if a_prime.n() != s.n() {
        return Err(CausalError::Dimension {
            what: "manipulated influence matrix",
            expected: s.n(),
            found: a_prime.n(),
        });
    }
    let before = s.expected_outcomes(z)?;
    let moved = Scenario {
        params: s.params,
        a: a_prime,
        x: s.x,
        neighbors: Vec::new(),
    };
    let after = moved.expected_outcomes(z)?;
    Ok(after.iter().zip(&before).map(|(a, b)| a - b).sum::<f64>() / s.n() as f64)
}

/// How missing potential outcomes are imputed per posterior draw.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMode {
    /// Log-normal mean `exp(log λ + σ²/2)`.
    #[default]
    Expected,
    /// Poisson draws using the posterior draw's ε.
    Sampled,
}

/// Posterior mean, 95% credible interval and per-draw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEstimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub draws: Vec<f64>,
}

impl ImpactEstimate {
    pub fn from_draws(draws: Vec<f64>) -> Self {
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        ImpactEstimate {
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            lo: quantile_sorted(&sorted, 0.025),
            hi: quantile_sorted(&sorted, 0.975),
            draws,
        }
    }
}

/// Evenly spaced posterior draws, at most `max_draws`.
fn thinned(post: &Posterior, max_draws: usize) -> Result<Vec<(usize, &super::Draw)>> {
    let all: Vec<_> = post.draws().collect();
    if all.is_empty() {
        return Err(CausalError::EmptyPosterior);
    }
    let stride = all.len().div_ceil(max_draws.max(1));
    Ok(all.into_iter().step_by(stride).collect())
}

/// Per-draw evaluation shared by the posterior estimands.
fn per_draw<T: Send>(
    post: &Posterior,
    counts: &Influence,
    x: &Covariates,
    max_draws: usize,
    f: impl Fn(usize, &Scenario<'_>, &[f64]) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let picked = thinned(post, max_draws)?;
    picked
        .par_iter()
        .enumerate()
        .map(|(k, &(c, d))| {
            let a = post.influence(counts, c, d);
            let s = Scenario::with_support(&d.params, &a, x, counts)?;
            f(k, &s, &d.eps)
        })
        .collect()
}

/// ζ_j posterior summaries for every vertex.
pub fn posterior_impact(
    post: &Posterior,
    counts: &Influence,
    x: &Covariates,
    base_z: &[bool],
    mode: ImputationMode,
    max_draws: usize,
    seed: u64,
) -> Result<Vec<ImpactEstimate>> {
    let per = per_draw(post, counts, x, max_draws, |k, s, eps| match mode {
        ImputationMode::Expected => impact_all(s, base_z),
        ImputationMode::Sampled => {
            let mut rng = rng_from(derive_indexed(seed, "impute", k as u64));
            impact_all_with(s, base_z, &mut |i, lr| poisson((lr + eps[i]).exp(), &mut rng))
        }
    })?;
    Ok((0..counts.n())
        .map(|j| ImpactEstimate::from_draws(per.iter().map(|d| d[j]).collect()))
        .collect())
}

fn imputed_mean(s: &Scenario<'_>, z: &[bool], mode: ImputationMode, eps: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
    let y = s.expected_outcomes(z)?;
    let sig2 = 0.5 * s.params.sigma * s.params.sigma;
    Ok(match mode {
        ImputationMode::Expected => y.iter().sum::<f64>(),
        ImputationMode::Sampled => y
            .iter()
            .zip(eps)
            .map(|(e, ep)| poisson((e.ln() - sig2 + ep).exp(), rng))
            .sum::<f64>(),
    } / s.n() as f64)
}

/// Posterior of the joint effect of a source set versus no sources.
pub fn posterior_set_impact(
    post: &Posterior,
    counts: &Influence,
    x: &Covariates,
    sources: &[usize],
    mode: ImputationMode,
    max_draws: usize,
    seed: u64,
) -> Result<ImpactEstimate> {
    let n = counts.n();
    if let Some(&bad) = sources.iter().find(|&&j| j >= n) {
        return Err(CausalError::VertexOutOfRange(bad));
    }
    let mut z = vec![false; n];
    sources.iter().for_each(|&j| z[j] = true);
    let draws = per_draw(post, counts, x, max_draws, |k, s, eps| {
        let mut rng = rng_from(derive_indexed(seed, "set-impute", k as u64));
        Ok(imputed_mean(s, &z, mode, eps, &mut rng)? - imputed_mean(s, &vec![false; n], mode, eps, &mut rng)?)
    })?;
    Ok(ImpactEstimate::from_draws(draws))
}

/// Posterior of ζ_A(z) where each draw's influence matrix is transformed by
/// `manipulate`.
pub fn posterior_manipulation(
    post: &Posterior,
    counts: &Influence,
    x: &Covariates,
    z: &[bool],
    max_draws: usize,
    manipulate: impl Fn(&Influence) -> Influence + Sync,
) -> Result<ImpactEstimate> {
    let draws = per_draw(post, counts, x, max_draws, |_, s, _| {
        network_manipulation_effect(s, z, &manipulate(s.a))
    })?;
    Ok(ImpactEstimate::from_draws(draws))
}

/// account_id, zeta_mean, zeta_lo, zeta_hi.
pub fn write_impact_csv<W: Write>(ids: &[String], estimates: &[ImpactEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["account_id", "zeta_mean", "zeta_lo", "zeta_hi"])?;
    for (id, e) in ids.iter().zip(estimates) {
        out.write_record([id.clone(), e.mean.to_string(), e.lo.to_string(), e.hi.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
