//! Network causal inference: multi-hop exposures, the Poisson GLMM outcome
//! model, its MCMC sampler and the causal estimands built on imputed
//! potential outcomes.

mod estimands;
mod sampler;

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NarrativeNetwork;
use crate::seed::rng_from;

pub use estimands::{
    absolute_k_neighbor_effect, average_primary_effect, average_primary_effect_i, impact, impact_all,
    k_neighbor_effect, k_neighbor_effect_ave, k_neighbor_effect_population, network_manipulation_effect,
    posterior_impact, posterior_manipulation, posterior_set_impact, primary_effect, write_impact_csv, Estimate, ImpactEstimate,
    ImputationMode, McConfig, Scenario,
};
pub use sampler::{
    fit_outcome_model, posterior_predictive_check, split_rhat, Chain, Diagnostics, Draw, OutcomeData, Posterior,
    InfluenceUpdate, PpcReport, SamplerConfig, RHAT_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("log rate {0} exceeds the overflow guard")]
    Overflow(f64),
    #[error("all outcomes are zero and no vertex is a source; the likelihood is degenerate")]
    Degenerate,
    #[error("{what}: expected length {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("vertex {vertex} has {neighbors} neighbors, fewer than k = {k}")]
    TooFewNeighbors { vertex: usize, neighbors: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("posterior has no draws")]
    EmptyPosterior,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CausalError> = std::result::Result<T, E>;

/// Largest admissible log rate.
pub const LOG_RATE_GUARD: f64 = 30.0;

/// Sparse nonnegative influence matrix; entry (i, j) is the influence of i
/// on j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    n: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    w: Vec<f64>,
    #[serde(skip)]
    out: Vec<Vec<usize>>,
}

impl Influence {
    /// Duplicate (i, j) entries are summed; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        let mut e = edges.to_vec();
        e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (i, j, w) in e {
            if i >= n || j >= n {
                return Err(CausalError::VertexOutOfRange(i.max(j)));
            }
            if i == j || !(w >= 0.0) || !w.is_finite() {
                return Err(CausalError::InvalidParams(format!("bad influence entry ({i}, {j}, {w})")));
            }
            match sorted.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += w,
                _ => sorted.push((i, j, w)),
            }
        }
        let mut a = Influence {
            n,
            src: sorted.iter().map(|e| e.0).collect(),
            dst: sorted.iter().map(|e| e.1).collect(),
            w: sorted.iter().map(|e| e.2).collect(),
            out: Vec::new(),
        };
        a.index();
        Ok(a)
    }

    fn index(&mut self) {
        self.out = vec![Vec::new(); self.n];
        for (e, &i) in self.src.iter().enumerate() {
            self.out[i].push(e);
        }
    }

    /// Retweet counts `c_ij` of a narrative network.
    pub fn from_network(net: &NarrativeNetwork) -> Self {
        let edges: Vec<(usize, usize, f64)> = net
            .edges
            .iter()
            .map(|e| (e.source, e.target, e.count as f64))
            .collect();
        Influence::from_edges(net.len(), &edges).expect("network edges are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.w.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.w.len()).map(|e| (self.src[e], self.dst[e], self.w[e]))
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Same support with new weights.
    pub fn with_weights(&self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.w.len() {
            return Err(CausalError::Dimension {
                what: "influence weights",
                expected: self.w.len(),
                found: w.len(),
            });
        }
        let mut a = self.clone();
        a.w = w;
        Ok(a)
    }

    pub(crate) fn out_edges(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    pub(crate) fn set_weight(&mut self, e: usize, w: f64) {
        self.w[e] = w;
    }

    pub(crate) fn edge(&self, e: usize) -> (usize, usize, f64) {
        (self.src[e], self.dst[e], self.w[e])
    }

    /// `Aᵀ v`.
    pub fn propagate(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for e in 0..self.w.len() {
            out[self.dst[e]] += self.w[e] * v[self.src[e]];
        }
        out
    }

    /// Undirected neighbor sets over nonzero entries, sorted.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for e in 0..self.w.len() {
            if self.w[e] > 0.0 {
                out[self.src[e]].push(self.dst[e]);
                out[self.dst[e]].push(self.src[e]);
            }
        }
        for nb in &mut out {
            nb.sort_unstable();
            nb.dedup();
        }
        out
    }

    /// One draw with each entry replaced by Poisson(entry) on the support.
    pub fn poisson_draw<R: rand::Rng>(&self, rng: &mut R) -> Self {
        let w = self.w.iter().map(|&c| poisson(c, rng)).collect();
        self.with_weights(w).expect("same support")
    }
}

pub(crate) fn poisson<R: rand::Rng>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else {
        Poisson::new(lambda).expect("positive finite rate").sample(rng)
    }
}

pub(crate) fn poisson_count<R: rand::Rng>(lambda: f64, rng: &mut R) -> u64 {
    poisson(lambda, rng) as u64
}

/// `(Aᵀ)ⁿ z` for n = 1..=n_hop.
pub fn walk_counts(a: &Influence, z: &[f64], n_hop: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n_hop);
    let mut v = z.to_vec();
    for _ in 0..n_hop {
        v = a.propagate(&v);
        out.push(v.clone());
    }
    out
}

fn indicator(z: &[bool]) -> Vec<f64> {
    z.iter().map(|&b| b as u8 as f64).collect()
}

/// Log exposures `s⁽ⁿ⁾ = ln((Aᵀ)ⁿ Z + 1)`, one vector per hop.
pub fn compute_exposures(a: &Influence, z: &[bool], n_hop: usize) -> Result<Vec<Vec<f64>>> {
    if z.len() != a.n() {
        return Err(CausalError::Dimension {
            what: "source vector",
            expected: a.n(),
            found: z.len(),
        });
    }
    Ok(walk_counts(a, &indicator(z), n_hop)
        .into_iter()
        .map(|v| v.into_iter().map(f64::ln_1p).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub tau: f64,
    /// Per-hop attenuation, each in [0, 1].
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

impl OutcomeParams {
    pub fn n_hop(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(CausalError::InvalidParams("gamma must lie in [0, 1]".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(CausalError::InvalidParams("sigma must be nonnegative".into()));
        }
        if self.beta.len() != n_covariates {
            return Err(CausalError::Dimension {
                what: "beta",
                expected: n_covariates,
                found: self.beta.len(),
            });
        }
        Ok(())
    }

    /// Cumulative products Π_{k≤n} γ_k.
    pub(crate) fn hop_weights(&self) -> Vec<f64> {
        self.gamma
            .iter()
            .scan(1.0, |acc, g| {
                *acc *= g;
                Some(*acc)
            })
            .collect()
    }
}

/// `log λ_i` for one vertex.
pub fn log_rate(params: &OutcomeParams, z_i: bool, s_i: &[f64], x_i: &[f64], eps_i: f64) -> Result<f64> {
    let weights = params.hop_weights();
    let exposure: f64 = s_i.iter().zip(&weights).map(|(s, g)| s * params.tau * g).sum();
    let lin: f64 = params.beta.iter().zip(x_i).map(|(b, x)| b * x).sum();
    let lr = params.tau * (z_i as u8 as f64) + exposure + lin + params.mu + eps_i;
    if !lr.is_finite() || lr > LOG_RATE_GUARD {
        return Err(CausalError::Overflow(lr));
    }
    Ok(lr)
}

/// `λ_i = exp(log λ_i)`.
pub fn rate(params: &OutcomeParams, z_i: bool, s_i: &[f64], x_i: &[f64], eps_i: f64) -> Result<f64> {
    Ok(log_rate(params, z_i, s_i, x_i, eps_i)?.exp())
}

/// Per-vertex covariates with column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn empty(n: usize) -> Self {
        Covariates {
            names: Vec::new(),
            rows: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Subtract column means.
    pub fn centered(mut self) -> Self {
        let n = self.rows.len().max(1) as f64;
        for c in 0..self.names.len() {
            let m = self.rows.iter().map(|r| r[c]).sum::<f64>() / n;
            self.rows.iter_mut().for_each(|r| r[c] -= m);
        }
        self
    }
}

/// log(1+in-degree), log(1+out-degree), log(1+followers) and block
/// indicators (block 0 as reference), all centered. Degrees are weighted
/// by retweet counts in the influence direction.
pub fn build_covariates(net: &NarrativeNetwork, blocks: Option<&[usize]>) -> Result<Covariates> {
    let n = net.len();
    if let Some(b) = blocks {
        if b.len() != n {
            return Err(CausalError::Dimension {
                what: "partition",
                expected: n,
                found: b.len(),
            });
        }
    }
    let mut indeg = vec![0.0; n];
    let mut outdeg = vec![0.0; n];
    for e in &net.edges {
        outdeg[e.source] += e.count as f64;
        indeg[e.target] += e.count as f64;
    }
    let n_blocks = blocks.map_or(0, |b| b.iter().max().map_or(0, |m| m + 1));
    let mut names: Vec<String> = vec!["log_in_degree".into(), "log_out_degree".into(), "log_followers".into()];
    names.extend((1..n_blocks).map(|b| format!("community_{b}")));
    let rows = (0..n)
        .map(|i| {
            let mut r = vec![
                indeg[i].ln_1p(),
                outdeg[i].ln_1p(),
                (net.stats[i].follower_count as f64).ln_1p(),
            ];
            r.extend((1..n_blocks).map(|b| (blocks.unwrap()[i] == b) as u8 as f64));
            r
        })
        .collect();
    Ok(Covariates { names, rows }.centered())
}

/// Draw ε_i ~ Normal(0, σ²) then Y_i ~ Poisson(λ_i).
pub fn simulate_outcomes(
    params: &OutcomeParams,
    a: &Influence,
    z: &[bool],
    x: &Covariates,
    seed: u64,
) -> Result<Vec<u64>> {
    params.validate(x.width())?;
    if x.n() != a.n() {
        return Err(CausalError::Dimension {
            what: "covariate rows",
            expected: a.n(),
            found: x.n(),
        });
    }
    let s = compute_exposures(a, z, params.n_hop())?;
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, params.sigma).map_err(|e| CausalError::InvalidParams(e.to_string()))?;
    (0..a.n())
        .map(|i| {
            let eps = if params.sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            let si: Vec<f64> = s.iter().map(|h| h[i]).collect();
            let lambda = rate(params, z[i], &si, &x.rows[i], eps)?;
            Ok(poisson(lambda, &mut rng) as u64)
        })
        .collect()
}
