//! Metropolis-within-Gibbs sampler for the Poisson GLMM with influence-network
//! refreshes, plus split-R̂ and posterior predictive checks.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_exposures, poisson, walk_counts, CausalError, Covariates, Influence, OutcomeParams, Result, LOG_RATE_GUARD};
use crate::seed::{derive_indexed, derive_seed, rng_from};

pub const RHAT_THRESHOLD: f64 = 1.05;

/// σ updates (each centered and non-centered) per sweep.
const SIGMA_MOVES: usize = 10;

/// Acceptance target of the multivariate regression-coefficient move.
const BLOCK_TARGET_ACCEPT: f64 = 0.234;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_hop: usize,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Iterations between influence-network refreshes.
    pub refresh_every: usize,
    /// Warm-up iterations per step-size adaptation batch.
    pub adapt_every: usize,
    pub target_accept: f64,
    /// Prior sd of τ, β and μ.
    pub prior_sd: f64,
    /// Scale of the half-normal prior on σ.
    pub sigma_prior_sd: f64,
    pub influence_update: InfluenceUpdate,
    /// Off switch for the likelihood; the sampler then targets the prior.
    pub use_likelihood: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_hop: 2,
            chains: 4,
            warmup: 1000,
            draws: 1000,
            refresh_every: 10,
            adapt_every: 50,
            target_accept: 0.44,
            prior_sd: 2.5,
            sigma_prior_sd: 1.0,
            influence_update: InfluenceUpdate::Metropolis,
            use_likelihood: true,
            seed: 0,
        }
    }
}

/// How influence draws are refreshed every `refresh_every` iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceUpdate {
    /// Per-edge Metropolis step with a Poisson(c_ij) proposal, so that A is
    /// sampled jointly with the other parameters.
    #[default]
    Metropolis,
    /// Fresh Poisson(c_ij) draw, not conditioned on the outcomes.
    Prior,
}

/// Observed outcomes, sources, interaction counts and covariates.
#[derive(Debug, Clone, Copy)]
pub struct OutcomeData<'a> {
    pub y: &'a [u64],
    pub z: &'a [bool],
    pub counts: &'a Influence,
    pub x: &'a Covariates,
}

impl OutcomeData<'_> {
    fn n(&self) -> usize {
        self.counts.n()
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        for (what, len) in [("outcomes", self.y.len()), ("sources", self.z.len()), ("covariate rows", self.x.n())] {
            if len != n {
                return Err(CausalError::Dimension {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if self.x.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CausalError::InvalidParams("covariates must be finite".into()));
        }
        if self.y.iter().all(|&v| v == 0) && !self.z.iter().any(|&b| b) {
            return Err(CausalError::Degenerate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub params: OutcomeParams,
    pub eps: Vec<f64>,
    /// Index into the chain's influence snapshots.
    pub snapshot: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub draws: Vec<Draw>,
    /// Influence weights in the order of the count matrix's edges.
    pub snapshots: Vec<Vec<f64>>,
    /// Post-warm-up acceptance rate per scalar parameter.
    pub acceptance: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<(String, f64)>,
    /// Parameters whose split-R̂ exceeds the threshold.
    pub flagged: Vec<String>,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub n_hop: usize,
    pub param_names: Vec<String>,
    pub chains: Vec<Chain>,
    pub diagnostics: Diagnostics,
}

fn param_names(n_hop: usize, x: &Covariates) -> Vec<String> {
    let mut names = vec!["tau".to_string()];
    names.extend((1..=n_hop).map(|k| format!("gamma_{k}")));
    names.extend(x.names.iter().map(|c| format!("beta_{c}")));
    names.push("mu".into());
    names.push("sigma".into());
    names
}

fn flatten(p: &OutcomeParams) -> Vec<f64> {
    let mut v = vec![p.tau];
    v.extend(&p.gamma);
    v.extend(&p.beta);
    v.push(p.mu);
    v.push(p.sigma);
    v
}

impl Posterior {
    pub fn num_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn draws(&self) -> impl Iterator<Item = (usize, &Draw)> + '_ {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(c, ch)| ch.draws.iter().map(move |d| (c, d)))
    }

    /// Column index of a named scalar parameter.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Per-chain series of one scalar parameter.
    pub fn series(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| flatten(&d.params)[index]).collect())
            .collect()
    }

    pub fn values(&self, index: usize) -> Vec<f64> {
        self.series(index).concat()
    }

    pub fn mean(&self, index: usize) -> f64 {
        let v = self.values(index);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Empirical quantile with linear interpolation.
    pub fn quantile(&self, index: usize, q: f64) -> f64 {
        let mut v = self.values(index);
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, q)
    }

    /// Influence draw attached to a posterior draw.
    pub fn influence(&self, counts: &Influence, chain: usize, draw: &Draw) -> Influence {
        counts
            .with_weights(self.chains[chain].snapshots[draw.snapshot].clone())
            .expect("snapshot matches count support")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "iteration".into(), "log_likelihood".into()];
        header.extend(self.param_names.iter().cloned());
        out.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (it, d) in chain.draws.iter().enumerate() {
                let mut rec = vec![c.to_string(), it.to_string(), d.log_likelihood.to_string()];
                rec.extend(flatten(&d.params).iter().map(|v| v.to_string()));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Split-R̂ over chains of equal length; each chain is cut in half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return f64::NAN;
    }
    let seqs: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let n = half as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Poisson log-likelihood without the `ln y!` constant.
pub(crate) fn log_likelihood(y: &[u64], eta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (&yi, &e) in y.iter().zip(eta) {
        if e > LOG_RATE_GUARD {
            return f64::NEG_INFINITY;
        }
        ll += yi as f64 * e - e.exp();
    }
    ll
}

#[derive(Debug, Clone, Copy)]
struct Step {
    log_size: f64,
    accepted: u32,
    tried: u32,
    total_accepted: u64,
    total_tried: u64,
}

impl Step {
    fn new(size: f64) -> Self {
        Step {
            log_size: size.ln(),
            accepted: 0,
            tried: 0,
            total_accepted: 0,
            total_tried: 0,
        }
    }

    fn size(&self) -> f64 {
        self.log_size.exp()
    }

    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u32;
        self.total_tried += 1;
        self.total_accepted += accepted as u64;
    }

    fn adapt(&mut self, target: f64) {
        if self.tried > 0 {
            let rate = self.accepted as f64 / self.tried as f64;
            self.log_size = (self.log_size + 2.0 * (rate - target)).clamp(-12.0, 3.0);
        }
        self.accepted = 0;
        self.tried = 0;
    }

    fn reset_totals(&mut self) {
        self.total_accepted = 0;
        self.total_tried = 0;
    }

    fn rate(&self) -> f64 {
        if self.total_tried == 0 {
            0.0
        } else {
            self.total_accepted as f64 / self.total_tried as f64
        }
    }
}

/// Running mean and covariance of the regression coefficients during
/// warm-up, and the Cholesky factor of the resulting block proposal.
struct BlockProposal {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<Vec<f64>>,
    chol: Option<Vec<Vec<f64>>>,
    step: Step,
}

impl BlockProposal {
    fn new(d: usize) -> Self {
        BlockProposal {
            count: 0.0,
            mean: vec![0.0; d],
            m2: vec![vec![0.0; d]; d],
            chol: None,
            step: Step::new(2.38 / (d as f64).sqrt()),
        }
    }

    fn observe(&mut self, x: &[f64]) {
        self.count += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / self.count;
        }
        for r in 0..x.len() {
            for c in 0..x.len() {
                self.m2[r][c] += delta[r] * (x[c] - self.mean[c]);
            }
        }
    }

    fn refactor(&mut self) {
        let d = self.mean.len();
        if self.count < (2 * d + 10) as f64 {
            return;
        }
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|r| {
                (0..d)
                    .map(|c| self.m2[r][c] / (self.count - 1.0) + if r == c { 1e-10 } else { 0.0 })
                    .collect()
            })
            .collect();
        self.chol = cholesky(&cov);
    }
}

/// Lower-triangular Cholesky factor, `None` unless positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for r in 0..d {
        for c in 0..=r {
            let sum: f64 = (0..c).map(|k| l[r][k] * l[c][k]).sum();
            if r == c {
                let v = a[r][r] - sum;
                if !(v > 0.0) {
                    return None;
                }
                l[r][c] = v.sqrt();
            } else {
                l[r][c] = (a[r][c] - sum) / l[c][c];
            }
        }
    }
    Some(l)
}

struct ChainState<'a> {
    data: OutcomeData<'a>,
    cfg: &'a SamplerConfig,
    params: OutcomeParams,
    eps: Vec<f64>,
    a: Influence,
    /// Raw walk counts and log exposures per hop.
    v: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    /// `z_i + Σ_n s_i⁽ⁿ⁾ Π γ`.
    reach: Vec<f64>,
    xb: Vec<f64>,
    eta: Vec<f64>,
    ll: f64,
}

impl<'a> ChainState<'a> {
    fn reach_for(&self, gamma: &[f64]) -> Vec<f64> {
        let mut hw = 1.0;
        let mut r: Vec<f64> = self.data.z.iter().map(|&b| b as u8 as f64).collect();
        for (h, g) in gamma.iter().enumerate() {
            hw *= g;
            for (ri, si) in r.iter_mut().zip(&self.s[h]) {
                *ri += hw * si;
            }
        }
        r
    }

    fn xb_for(&self, beta: &[f64]) -> Vec<f64> {
        self.data
            .x
            .rows
            .iter()
            .map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    fn eta_for(&self, tau: f64, reach: &[f64], xb: &[f64], mu: f64) -> Vec<f64> {
        (0..self.eta.len())
            .map(|i| tau * reach[i] + xb[i] + mu + self.eps[i])
            .collect()
    }

    fn ll_of(&self, eta: &[f64]) -> f64 {
        if self.cfg.use_likelihood {
            log_likelihood(self.data.y, eta)
        } else if eta.iter().any(|&e| e > LOG_RATE_GUARD) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    fn refresh_exposures(&mut self) {
        let zf: Vec<f64> = self.data.z.iter().map(|&b| b as u8 as f64).collect();
        self.v = walk_counts(&self.a, &zf, self.cfg.n_hop);
        self.s = self.v.iter().map(|h| h.iter().map(|x| x.ln_1p()).collect()).collect();
        self.reach = self.reach_for(&self.params.gamma);
        self.eta = self.eta_for(self.params.tau, &self.reach, &self.xb, self.params.mu);
        self.ll = self.ll_of(&self.eta);
    }

    /// (τ, γ, β, μ) as one vector.
    fn regression(&self) -> Vec<f64> {
        let mut v = vec![self.params.tau];
        v.extend(&self.params.gamma);
        v.extend(&self.params.beta);
        v.push(self.params.mu);
        v
    }

    fn block_move(&mut self, rng: &mut ChaCha8Rng, block: &mut BlockProposal) {
        let Some(l) = &block.chol else {
            return;
        };
        let h = self.cfg.n_hop;
        let p = self.params.beta.len();
        let cur = self.regression();
        let xi: Vec<f64> = (0..cur.len()).map(|_| StandardNormal.sample(rng)).collect();
        let scale = block.step.size();
        let prop: Vec<f64> = (0..cur.len())
            .map(|r| cur[r] + scale * (0..=r).map(|k| l[r][k] * xi[k]).sum::<f64>())
            .collect();
        let gamma = prop[1..1 + h].to_vec();
        if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            block.step.record(false);
            return;
        }
        let (tau, beta, mu) = (prop[0], prop[1 + h..1 + h + p].to_vec(), prop[1 + h + p]);
        let reach = self.reach_for(&gamma);
        let xb = self.xb_for(&beta);
        let eta = self.eta_for(tau, &reach, &xb, mu);
        let ll = self.ll_of(&eta);
        let prior = |t: f64, b: &[f64], m: f64| -> f64 {
            self.normal_prior(t) + b.iter().map(|&v| self.normal_prior(v)).sum::<f64>() + self.normal_prior(m)
        };
        let log_ratio = ll - self.ll + prior(tau, &beta, mu) - prior(self.params.tau, &self.params.beta, self.params.mu);
        let ok = Self::accept(rng, log_ratio);
        block.step.record(ok);
        if ok {
            self.params.tau = tau;
            self.params.gamma = gamma;
            self.params.beta = beta;
            self.params.mu = mu;
            self.reach = reach;
            self.xb = xb;
            self.eta = eta;
            self.ll = ll;
        }
    }

    /// Metropolis update of one influence entry with a prior proposal.
    fn update_edge(&mut self, e: usize, proposal: f64, rng: &mut ChaCha8Rng) {
        let (i, j, old) = self.a.edge(e);
        let delta = proposal - old;
        if delta == 0.0 {
            return;
        }
        let h = self.cfg.n_hop;
        // change of the walk counts at each hop, propagated sparsely
        let mut d: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(h);
        for hop in 0..h {
            let from_i = if hop == 0 { self.data.z[i] as u8 as f64 } else { self.v[hop - 1][i] };
            let mut cur: BTreeMap<usize, f64> = BTreeMap::new();
            if from_i != 0.0 {
                cur.insert(j, delta * from_i);
            }
            if hop > 0 {
                for (&m, &dm) in &d[hop - 1] {
                    for &f in self.a.out_edges(m) {
                        let (_, k, w) = self.a.edge(f);
                        let w = if f == e { proposal } else { w };
                        *cur.entry(k).or_default() += w * dm;
                    }
                }
            }
            cur.retain(|_, v| *v != 0.0);
            d.push(cur);
        }
        let mut affected: Vec<usize> = d.iter().flat_map(|m| m.keys().copied()).collect();
        affected.sort_unstable();
        affected.dedup();
        let hw = self.params.hop_weights();
        let mut changes = Vec::with_capacity(affected.len());
        let mut dll = 0.0;
        for &k in &affected {
            let mut reach = self.data.z[k] as u8 as f64;
            for hop in 0..h {
                let v = self.v[hop][k] + d[hop].get(&k).copied().unwrap_or(0.0);
                reach += hw[hop] * v.ln_1p();
            }
            let eta = self.eta[k] + self.params.tau * (reach - self.reach[k]);
            if eta > LOG_RATE_GUARD {
                return;
            }
            if self.cfg.use_likelihood {
                dll += self.data.y[k] as f64 * (eta - self.eta[k]) - (eta.exp() - self.eta[k].exp());
            }
            changes.push((k, reach, eta));
        }
        if !Self::accept(rng, dll) {
            return;
        }
        self.a.set_weight(e, proposal);
        for hop in 0..h {
            for (&k, &dv) in &d[hop] {
                self.v[hop][k] += dv;
                self.s[hop][k] = self.v[hop][k].ln_1p();
            }
        }
        for (k, reach, eta) in changes {
            self.reach[k] = reach;
            self.eta[k] = eta;
        }
        self.ll += dll;
    }

    fn refresh_influence(&mut self, rng: &mut ChaCha8Rng) {
        match self.cfg.influence_update {
            InfluenceUpdate::Prior => {
                self.a = self.data.counts.poisson_draw(rng);
                self.refresh_exposures();
            }
            InfluenceUpdate::Metropolis => {
                for e in 0..self.a.num_edges() {
                    let proposal = poisson(self.data.counts.edge(e).2, rng);
                    self.update_edge(e, proposal, rng);
                }
            }
        }
    }

    fn normal_prior(&self, v: f64) -> f64 {
        -0.5 * (v / self.cfg.prior_sd).powi(2)
    }

    fn eps_prior(&self, sigma: f64, eps: &[f64]) -> f64 {
        -(eps.len() as f64) * sigma.ln() - eps.iter().map(|e| e * e).sum::<f64>() / (2.0 * sigma * sigma)
    }

    fn sigma_prior(&self, sigma: f64) -> f64 {
        // half-normal plus the log-scale Jacobian
        -0.5 * (sigma / self.cfg.sigma_prior_sd).powi(2) + sigma.ln()
    }

    fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
        log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng, steps: &mut [Step]) {
        let h = self.cfg.n_hop;
        let p = self.params.beta.len();
        let n = self.eta.len();
        let z = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        // tau
        let prop = self.params.tau + steps[0].size() * z(rng);
        let eta = self.eta_for(prop, &self.reach, &self.xb, self.params.mu);
        let ll = self.ll_of(&eta);
        let ok = Self::accept(rng, ll - self.ll + self.normal_prior(prop) - self.normal_prior(self.params.tau));
        steps[0].record(ok);
        if ok {
            self.params.tau = prop;
            self.eta = eta;
            self.ll = ll;
        }

        // gamma, reflected into [0, 1]
        for k in 0..h {
            let mut g = self.params.gamma[k] + steps[1 + k].size() * z(rng);
            loop {
                if g < 0.0 {
                    g = -g;
                } else if g > 1.0 {
                    g = 2.0 - g;
                } else {
                    break;
                }
            }
            let mut gamma = self.params.gamma.clone();
            gamma[k] = g;
            let reach = self.reach_for(&gamma);
            let eta = self.eta_for(self.params.tau, &reach, &self.xb, self.params.mu);
            let ll = self.ll_of(&eta);
            let ok = Self::accept(rng, ll - self.ll);
            steps[1 + k].record(ok);
            if ok {
                self.params.gamma = gamma;
                self.reach = reach;
                self.eta = eta;
                self.ll = ll;
            }
        }

        // beta
        for c in 0..p {
            let slot = 1 + h + c;
            let mut beta = self.params.beta.clone();
            beta[c] += steps[slot].size() * z(rng);
            let xb = self.xb_for(&beta);
            let eta = self.eta_for(self.params.tau, &self.reach, &xb, self.params.mu);
            let ll = self.ll_of(&eta);
            let ok = Self::accept(
                rng,
                ll - self.ll + self.normal_prior(beta[c]) - self.normal_prior(self.params.beta[c]),
            );
            steps[slot].record(ok);
            if ok {
                self.params.beta = beta;
                self.xb = xb;
                self.eta = eta;
                self.ll = ll;
            }
        }

        // mu
        let slot = 1 + h + p;
        let prop = self.params.mu + steps[slot].size() * z(rng);
        let eta: Vec<f64> = self.eta.iter().map(|e| e + prop - self.params.mu).collect();
        let ll = self.ll_of(&eta);
        let ok = Self::accept(rng, ll - self.ll + self.normal_prior(prop) - self.normal_prior(self.params.mu));
        steps[slot].record(ok);
        if ok {
            self.params.mu = prop;
            self.eta = eta;
            self.ll = ll;
        }

        for _ in 0..SIGMA_MOVES {
            // sigma with eps held fixed
            let slot = 2 + h + p;
            let sigma = self.params.sigma;
            let prop = sigma * (steps[slot].size() * z(rng)).exp();
            let log_ratio = self.eps_prior(prop, &self.eps) - self.eps_prior(sigma, &self.eps) + self.sigma_prior(prop)
                - self.sigma_prior(sigma);
            let ok = Self::accept(rng, log_ratio);
            steps[slot].record(ok);
            if ok {
                self.params.sigma = prop;
            }

            // sigma with the standardized eps held fixed
            let slot = 3 + h + p;
            let sigma = self.params.sigma;
            let prop = sigma * (steps[slot].size() * z(rng)).exp();
            let scale = prop / sigma;
            let eps: Vec<f64> = self.eps.iter().map(|e| e * scale).collect();
            let eta: Vec<f64> = (0..n).map(|i| self.eta[i] + eps[i] - self.eps[i]).collect();
            let ll = self.ll_of(&eta);
            let ok = Self::accept(rng, ll - self.ll + self.sigma_prior(prop) - self.sigma_prior(sigma));
            steps[slot].record(ok);
            if ok {
                self.params.sigma = prop;
                self.eps = eps;
                self.eta = eta;
                self.ll = ll;
            }
        }

        // joint move along the ridge where τγ₁ (and every higher hop product)
        // stays fixed; the map (τ, γ₁) → (τeᵘ, γ₁e⁻ᵘ) has unit Jacobian
        let slot = 4 + h + p;
        if h > 0 {
            let u = steps[slot].size() * z(rng);
            let tau = self.params.tau * u.exp();
            let g1 = self.params.gamma[0] * (-u).exp();
            let ok = if g1 > 1.0 {
                false
            } else {
                let mut gamma = self.params.gamma.clone();
                gamma[0] = g1;
                let reach = self.reach_for(&gamma);
                let eta = self.eta_for(tau, &reach, &self.xb, self.params.mu);
                let ll = self.ll_of(&eta);
                let ok = Self::accept(
                    rng,
                    ll - self.ll + self.normal_prior(tau) - self.normal_prior(self.params.tau),
                );
                if ok {
                    self.params.tau = tau;
                    self.params.gamma = gamma;
                    self.reach = reach;
                    self.eta = eta;
                    self.ll = ll;
                }
                ok
            };
            steps[slot].record(ok);
        }

        // per-vertex eps
        let inv2s2 = 0.5 / (self.params.sigma * self.params.sigma);
        for i in 0..n {
            let slot = 5 + h + p + i;
            // step in units of σ; symmetric because σ is fixed here
            let prop = self.eps[i] + self.params.sigma * steps[slot].size() * z(rng);
            let eta_new = self.eta[i] + prop - self.eps[i];
            let ok = if eta_new > LOG_RATE_GUARD {
                false
            } else {
                let dll = if self.cfg.use_likelihood {
                    self.data.y[i] as f64 * (eta_new - self.eta[i]) - (eta_new.exp() - self.eta[i].exp())
                } else {
                    0.0
                };
                Self::accept(rng, dll - (prop * prop - self.eps[i] * self.eps[i]) * inv2s2)
            };
            steps[slot].record(ok);
            if ok {
                self.ll += if self.cfg.use_likelihood {
                    self.data.y[i] as f64 * (eta_new - self.eta[i]) - (eta_new.exp() - self.eta[i].exp())
                } else {
                    0.0
                };
                self.eps[i] = prop;
                self.eta[i] = eta_new;
            }
        }
    }
}

fn run_chain(data: OutcomeData<'_>, cfg: &SamplerConfig, names: &[String], chain: usize) -> Result<Chain> {
    let mut rng = rng_from(derive_indexed(cfg.seed, "chain", chain as u64));
    let n = data.n();
    let p = data.x.width();
    let ybar = data.y.iter().sum::<u64>() as f64 / n.max(1) as f64;
    let params = OutcomeParams {
        tau: rng.random_range(-1.0..1.0),
        gamma: (0..cfg.n_hop).map(|_| rng.random_range(0.2..0.8)).collect(),
        beta: vec![0.0; p],
        mu: (ybar + 0.5).ln() + rng.random_range(-0.5..0.5),
        sigma: rng.random_range(0.2..1.0),
    };
    let a = data.counts.poisson_draw(&mut rng);
    let mut st = ChainState {
        data,
        cfg,
        eps: vec![0.0; n],
        a,
        v: Vec::new(),
        s: Vec::new(),
        reach: Vec::new(),
        xb: vec![0.0; n],
        eta: vec![0.0; n],
        ll: 0.0,
        params,
    };
    st.refresh_exposures();
    let h = cfg.n_hop;
    let mut steps: Vec<Step> = std::iter::once(Step::new(0.1))
        .chain((0..h).map(|_| Step::new(0.1)))
        .chain((0..p).map(|_| Step::new(0.05)))
        .chain([Step::new(0.1), Step::new(0.3), Step::new(0.3), Step::new(0.2)])
        .chain((0..n).map(|_| Step::new(1.0)))
        .collect();
    let mut block = BlockProposal::new(2 + h + p);
    let mut out = Chain {
        draws: Vec::with_capacity(cfg.draws),
        snapshots: Vec::new(),
        acceptance: Vec::new(),
    };
    let refresh = cfg.refresh_every.max(1);
    for it in 0..cfg.warmup + cfg.draws {
        if it > 0 && it % refresh == 0 {
            st.refresh_influence(&mut rng);
            if it >= cfg.warmup {
                out.snapshots.push(st.a.weights().to_vec());
            }
        }
        if it == cfg.warmup {
            steps.iter_mut().for_each(Step::reset_totals);
            block.step.reset_totals();
            if out.snapshots.is_empty() || it % refresh != 0 {
                out.snapshots.push(st.a.weights().to_vec());
            }
        }
        st.sweep(&mut rng, &mut steps);
        st.block_move(&mut rng, &mut block);
        if it < cfg.warmup {
            if it >= cfg.warmup / 4 {
                block.observe(&st.regression());
            }
            if (it + 1) % cfg.adapt_every.max(1) == 0 {
                steps.iter_mut().for_each(|s| s.adapt(cfg.target_accept));
                if block.chol.is_some() {
                    block.step.adapt(BLOCK_TARGET_ACCEPT);
                }
                block.refactor();
            }
        } else {
            out.draws.push(Draw {
                params: st.params.clone(),
                eps: st.eps.clone(),
                snapshot: out.snapshots.len() - 1,
                log_likelihood: if cfg.use_likelihood { st.ll } else { log_likelihood(data.y, &st.eta) },
            });
        }
    }
    let mut acceptance: Vec<(String, f64)> = names[..names.len() - 1]
        .iter()
        .cloned()
        .zip(steps.iter().map(Step::rate))
        .collect();
    acceptance.push(("sigma".into(), (steps[2 + h + p].rate() + steps[3 + h + p].rate()) / 2.0));
    acceptance.push(("tau_gamma_ridge".into(), steps[4 + h + p].rate()));
    acceptance.push(("regression_block".into(), block.step.rate()));
    let eps_rate = steps[5 + h + p..].iter().map(Step::rate).sum::<f64>() / n.max(1) as f64;
    acceptance.push(("eps".into(), eps_rate));
    out.acceptance = acceptance;
    Ok(out)
}

/// Fit the outcome model with `cfg.chains` independent chains.
pub fn fit_outcome_model(data: OutcomeData<'_>, cfg: &SamplerConfig) -> Result<Posterior> {
    data.check()?;
    if cfg.n_hop == 0 || cfg.chains == 0 || cfg.draws < 4 {
        return Err(CausalError::InvalidParams(
            "need n_hop >= 1, at least one chain and at least 4 draws".into(),
        ));
    }
    let names = param_names(cfg.n_hop, data.x);
    let chains: Vec<Chain> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(data, cfg, &names, c))
        .collect::<Result<_>>()?;
    let mut post = Posterior {
        n_hop: cfg.n_hop,
        param_names: names,
        chains,
        diagnostics: Diagnostics {
            rhat: Vec::new(),
            flagged: Vec::new(),
        },
    };
    for (i, name) in post.param_names.clone().into_iter().enumerate() {
        let r = split_rhat(&post.series(i));
        if !(r <= RHAT_THRESHOLD) {
            post.diagnostics.flagged.push(name.clone());
        }
        post.diagnostics.rhat.push((name, r));
    }
    Ok(post)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcStatistic {
    pub name: String,
    pub observed: f64,
    pub replicated_mean: f64,
    /// Two-sided posterior predictive tail probability.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub draws_used: usize,
    pub statistics: Vec<PpcStatistic>,
}

/// Replicate outcomes from up to `max_draws` evenly spaced posterior draws
/// and compare total count, zero count and maximum with the observed data.
pub fn posterior_predictive_check(
    post: &Posterior,
    data: OutcomeData<'_>,
    max_draws: usize,
    seed: u64,
) -> Result<PpcReport> {
    let all: Vec<(usize, &Draw)> = post.draws().collect();
    if all.is_empty() {
        return Err(CausalError::EmptyPosterior);
    }
    let stride = all.len().div_ceil(max_draws.max(1));
    let mut rng = rng_from(derive_seed(seed, "ppc"));
    let stats = |y: &[u64]| -> [f64; 3] {
        [
            y.iter().sum::<u64>() as f64,
            y.iter().filter(|&&v| v == 0).count() as f64,
            y.iter().copied().max().unwrap_or(0) as f64,
        ]
    };
    let observed = stats(data.y);
    let mut reps: Vec<[f64; 3]> = Vec::new();
    for &(c, d) in all.iter().step_by(stride) {
        let a = post.influence(data.counts, c, d);
        let s = compute_exposures(&a, data.z, post.n_hop)?;
        let y: Vec<u64> = (0..data.n())
            .map(|i| {
                let si: Vec<f64> = s.iter().map(|h| h[i]).collect();
                super::rate(&d.params, data.z[i], &si, &data.x.rows[i], d.eps[i]).map(|l| poisson(l, &mut rng) as u64)
            })
            .collect::<Result<_>>()?;
        reps.push(stats(&y));
    }
    let m = reps.len() as f64;
    let statistics = ["total", "zeros", "max"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let ge = reps.iter().filter(|r| r[k] >= observed[k]).count() as f64 / m;
            let le = reps.iter().filter(|r| r[k] <= observed[k]).count() as f64 / m;
            PpcStatistic {
                name: name.to_string(),
                observed: observed[k],
                replicated_mean: reps.iter().map(|r| r[k]).sum::<f64>() / m,
                p_value: (2.0 * ge.min(le)).min(1.0),
            }
        })
        .collect();
    Ok(PpcReport {
        draws_used: reps.len(),
        statistics,
    })
}
