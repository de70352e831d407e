//! Flat microcanonical degree-corrected stochastic blockmodel on the
//! undirected collapse of the count graph, fitted by agglomerative
//! initialization and single-vertex Metropolis moves on the description
//! length.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{NarrativeNetwork, NetworkError, Result};
use crate::seed::{derive_indexed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub b_min: usize,
    pub b_max: usize,
    /// Metropolis sweeps at unit temperature; the same budget bounds the
    /// zero-temperature polish that follows.
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            b_min: 1,
            b_max: 8,
            sweeps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Block of each vertex, ids contiguous from 0 in order of first
    /// appearance.
    pub blocks: Vec<usize>,
    pub b: usize,
    /// Description length in nats.
    pub description_length: f64,
}

impl Partition {
    /// CSV: account_id, block.
    pub fn write_csv<W: Write>(&self, net: &NarrativeNetwork, out: W) -> Result<()> {
        if self.blocks.len() != net.len() {
            return Err(NetworkError::PartitionSize {
                expected: net.len(),
                found: self.blocks.len(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "block"])?;
        for (v, b) in net.vertices.iter().zip(&self.blocks) {
            w.write_record([v.clone(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.b];
        for &b in &self.blocks {
            out[b] += 1;
        }
        out
    }
}

fn canonical(blocks: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let out = blocks
        .iter()
        .map(|b| {
            let next = map.len();
            *map.entry(*b).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn ln_choose_big(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Block-level sufficient statistics with incremental updates.
#[derive(Debug, Clone)]
pub struct BlockState {
    adj: Vec<Vec<(usize, u64)>>,
    blocks: Vec<usize>,
    b: usize,
    n: Vec<u64>,
    e: Vec<u64>,
    m_diag: Vec<u64>,
    m_off: Vec<BTreeMap<usize, u64>>,
    degree: Vec<u64>,
    lnf: Vec<f64>,
    edges: u64,
    constant: f64,
}

impl BlockState {
    pub fn new(adj: Vec<Vec<(usize, u64)>>, blocks: Vec<usize>) -> Self {
        let (blocks, b) = canonical(&blocks);
        let degree: Vec<u64> = adj.iter().map(|nb| nb.iter().map(|e| e.1).sum()).collect();
        let edges = degree.iter().sum::<u64>() / 2;
        let size = adj.len() + 2 * edges as usize + 2;
        let mut lnf = Vec::with_capacity(size);
        let mut acc = 0.0;
        lnf.push(0.0);
        for k in 1..size {
            acc += (k as f64).ln();
            lnf.push(acc);
        }
        let mut constant = 0.0;
        for (i, nb) in adj.iter().enumerate() {
            constant -= lnf[degree[i] as usize];
            for &(j, w) in nb {
                if i < j {
                    constant += lnf[w as usize];
                }
            }
        }
        let mut s = BlockState {
            adj,
            blocks,
            b,
            n: Vec::new(),
            e: Vec::new(),
            m_diag: Vec::new(),
            m_off: Vec::new(),
            degree,
            lnf,
            edges,
            constant,
        };
        s.rebuild();
        s
    }

    fn rebuild(&mut self) {
        let b = self.b;
        self.n = vec![0; b];
        self.e = vec![0; b];
        self.m_diag = vec![0; b];
        self.m_off = vec![BTreeMap::new(); b];
        for (i, nb) in self.adj.iter().enumerate() {
            let r = self.blocks[i];
            self.n[r] += 1;
            self.e[r] += self.degree[i];
            for &(j, w) in nb {
                if i < j {
                    let s = self.blocks[j];
                    if r == s {
                        self.m_diag[r] += w;
                    } else {
                        *self.m_off[r].entry(s).or_default() += w;
                        *self.m_off[s].entry(r).or_default() += w;
                    }
                }
            }
        }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.b
    }

    fn f(&self, k: u64) -> f64 {
        self.lnf[k as usize]
    }

    fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.f(n) - self.f(k) - self.f(n - k)
    }

    fn m(&self, r: usize, s: usize) -> u64 {
        if r == s {
            self.m_diag[r]
        } else {
            self.m_off[r].get(&s).copied().unwrap_or(0)
        }
    }

    /// Terms of the description length owned by a single block.
    fn block_terms(&self, r: usize) -> f64 {
        let (n, e, mrr) = (self.n[r], self.e[r], self.m_diag[r]);
        self.f(e) - (mrr as f64 * std::f64::consts::LN_2 + self.f(mrr)) - self.f(n)
            + if n > 0 { self.ln_choose(n + e - 1, e) } else { 0.0 }
    }

    fn global_terms(&self) -> f64 {
        let nv = self.adj.len() as u64;
        if nv == 0 {
            return 0.0;
        }
        let b = self.b as f64;
        self.f(nv)
            + self.ln_choose(nv - 1, self.b as u64 - 1)
            + (nv as f64).ln()
            + ln_choose_big(b * (b + 1.0) / 2.0 + self.edges as f64 - 1.0, self.edges as f64)
    }

    /// Full description length.
    pub fn description_length(&self) -> f64 {
        let mut dl = self.constant + self.global_terms();
        for r in 0..self.b {
            dl += self.block_terms(r);
            for (&s, &m) in &self.m_off[r] {
                if r < s {
                    dl -= self.f(m);
                }
            }
        }
        dl
    }

    fn neighbor_blocks(&self, v: usize) -> Vec<(usize, u64)> {
        let mut d: Vec<(usize, u64)> = Vec::new();
        for &(u, w) in &self.adj[v] {
            let t = self.blocks[u];
            match d.iter_mut().find(|x| x.0 == t) {
                Some(x) => x.1 += w,
                None => d.push((t, w)),
            }
        }
        d
    }

    fn local_terms(&self, r: usize, s: usize, touched: &[(usize, u64)]) -> f64 {
        let mut out = self.block_terms(r) + self.block_terms(s) - self.f(self.m(r, s));
        for &(t, _) in touched {
            if t != r && t != s {
                out -= self.f(self.m(r, t)) + self.f(self.m(s, t));
            }
        }
        out
    }

    fn add_m(&mut self, r: usize, s: usize, w: u64, add: bool) {
        if r == s {
            if add {
                self.m_diag[r] += w
            } else {
                self.m_diag[r] -= w
            }
            return;
        }
        for (a, c) in [(r, s), (s, r)] {
            let entry = self.m_off[a].entry(c).or_default();
            if add {
                *entry += w;
            } else {
                *entry -= w;
                if *entry == 0 {
                    self.m_off[a].remove(&c);
                }
            }
        }
    }

    fn apply_move(&mut self, v: usize, s: usize, d: &[(usize, u64)]) {
        let r = self.blocks[v];
        for &(t, w) in d {
            self.add_m(r, t, w, false);
            self.add_m(s, t, w, true);
        }
        let k = self.degree[v];
        self.e[r] -= k;
        self.e[s] += k;
        self.n[r] -= 1;
        self.n[s] += 1;
        self.blocks[v] = s;
    }

    /// Change in description length if `v` moved to block `s`; `None` when
    /// the move would empty its current block.
    pub fn move_delta(&mut self, v: usize, s: usize) -> Option<f64> {
        let r = self.blocks[v];
        if r == s || self.n[r] == 1 {
            return None;
        }
        let d = self.neighbor_blocks(v);
        let before = self.local_terms(r, s, &d);
        self.apply_move(v, s, &d);
        let after = self.local_terms(r, s, &d);
        self.apply_move(v, r, &d);
        Some(after - before)
    }

    /// Move `v` to block `s`, returning the description-length change.
    pub fn move_vertex(&mut self, v: usize, s: usize) -> Option<f64> {
        let delta = self.move_delta(v, s)?;
        let d = self.neighbor_blocks(v);
        self.apply_move(v, s, &d);
        Some(delta)
    }

    /// Description-length change from merging block `s` into `r`.
    fn merge_delta(&self, r: usize, s: usize) -> f64 {
        let mut before = self.block_terms(r) + self.block_terms(s) - self.f(self.m(r, s));
        let mut merged_off: BTreeMap<usize, u64> = BTreeMap::new();
        for x in [r, s] {
            for (&t, &m) in &self.m_off[x] {
                if t != r && t != s {
                    before -= self.f(m);
                    *merged_off.entry(t).or_default() += m;
                }
            }
        }
        let (n, e) = (self.n[r] + self.n[s], self.e[r] + self.e[s]);
        let mrr = self.m_diag[r] + self.m_diag[s] + self.m(r, s);
        let mut after = self.f(e) - (mrr as f64 * std::f64::consts::LN_2 + self.f(mrr)) - self.f(n)
            + self.ln_choose(n + e - 1, e);
        for m in merged_off.values() {
            after -= self.f(*m);
        }
        after - before
    }

    fn relabel(&mut self, blocks: Vec<usize>) {
        let (blocks, b) = canonical(&blocks);
        self.blocks = blocks;
        self.b = b;
        self.rebuild();
    }
}

/// Description length of an arbitrary partition.
pub fn description_length(net: &NarrativeNetwork, blocks: &[usize]) -> f64 {
    BlockState::new(net.undirected_adjacency(), blocks.to_vec()).description_length()
}

/// Greedy agglomeration from singletons down to `target` blocks.
fn agglomerate(state: &mut BlockState, target: usize, rng: &mut ChaCha8Rng) {
    while state.b > target {
        let b = state.b;
        let mut best: Vec<(f64, usize, usize)> = Vec::with_capacity(b);
        for r in 0..b {
            let mut partners: Vec<usize> = state.m_off[r].keys().copied().collect();
            partners.sort_unstable();
            for _ in 0..2 {
                let s = rng.random_range(0..b);
                if s != r {
                    partners.push(s);
                }
            }
            let choice = partners
                .iter()
                .map(|&s| (state.merge_delta(r, s), s))
                .min_by(|a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
            if let Some((delta, s)) = choice {
                best.push((delta, r, s));
            }
        }
        best.sort_by(|a, c| a.0.total_cmp(&c.0).then((a.1, a.2).cmp(&(c.1, c.2))));
        let goal = target.max((b as f64 / 1.5).floor() as usize).min(b - 1);
        let mut merges = b - goal;
        let mut parent: Vec<usize> = (0..b).collect();
        let mut used = vec![false; b];
        for (_, r, s) in best {
            if merges == 0 {
                break;
            }
            if used[r] || used[s] {
                continue;
            }
            used[r] = true;
            used[s] = true;
            parent[s] = r;
            merges -= 1;
        }
        let blocks: Vec<usize> = state.blocks.iter().map(|&x| parent[x]).collect();
        state.relabel(blocks);
        sweep(state, rng, None);
    }
}

/// One sweep in random vertex order. `beta = None` is zero temperature
/// (only strictly improving moves). Returns the total change.
fn sweep(state: &mut BlockState, rng: &mut ChaCha8Rng, beta: Option<f64>) -> f64 {
    if state.b < 2 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..state.adj.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for v in order {
        let mut s = rng.random_range(0..state.b - 1);
        if s >= state.blocks[v] {
            s += 1;
        }
        let Some(delta) = state.move_delta(v, s) else {
            continue;
        };
        let accept = match beta {
            None => delta < -1e-12,
            Some(beta) => delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp(),
        };
        if accept {
            total += state.move_vertex(v, s).expect("move validated");
        }
    }
    total
}

fn fit_fixed_b(adj: &[Vec<(usize, u64)>], b: usize, sweeps: usize, seed: u64) -> Partition {
    let mut rng = rng_from(seed);
    let n = adj.len();
    let mut state = BlockState::new(adj.to_vec(), (0..n).collect());
    agglomerate(&mut state, b, &mut rng);
    let mut dl = state.description_length();
    let mut best = (dl, state.blocks.clone());
    for _ in 0..sweeps {
        dl += sweep(&mut state, &mut rng, Some(1.0));
        if dl < best.0 {
            best = (dl, state.blocks.clone());
        }
    }
    state.relabel(best.1.clone());
    dl = state.description_length();
    for _ in 0..sweeps.max(1) {
        let change = sweep(&mut state, &mut rng, None);
        debug_assert!(change <= 0.0 && state.description_length() <= dl + 1e-8 * dl.abs().max(1.0));
        dl += change;
        if change == 0.0 {
            break;
        }
    }
    let (blocks, b) = canonical(&state.blocks);
    Partition {
        blocks,
        b,
        description_length: dl,
    }
}

/// Minimum-description-length partition over `b_min..=b_max` (block counts
/// above the vertex count are skipped).
pub fn fit_sbm(net: &NarrativeNetwork, cfg: &SbmConfig) -> Result<Partition> {
    if cfg.b_min == 0 || cfg.b_min > cfg.b_max {
        return Err(NetworkError::InvalidBlockRange(cfg.b_min, cfg.b_max));
    }
    let n = net.len();
    if n == 0 {
        return Ok(Partition {
            blocks: Vec::new(),
            b: 0,
            description_length: 0.0,
        });
    }
    let adj = net.undirected_adjacency();
    let upper = cfg.b_max.min(n);
    let lower = cfg.b_min.min(upper);
    let fits: Vec<Partition> = (lower..=upper)
        .into_par_iter()
        .map(|b| fit_fixed_b(&adj, b, cfg.sweeps, derive_indexed(cfg.seed, "sbm", b as u64)))
        .collect();
    Ok(fits
        .into_iter()
        .min_by(|a, c| {
            a.description_length
                .total_cmp(&c.description_length)
                .then(a.b.cmp(&c.b))
        })
        .expect("nonempty block range"))
}
