//! DTMC abstraction of the target, coverage rewards and critical-block
//! selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;

use crate::coverage::{BlockSet, GlobalCoverage};
use crate::target::{BlockId, Cfg};
use crate::Scalar;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
pub const MC_STEP_CAP: usize = 10_000;
pub const DEFAULT_K_PERCENT: f64 = 10.0;
pub const DEFAULT_K_PRIME: f64 = 0.5;

/// Transition probabilities over CFG edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc<T> {
    rows: Vec<Vec<(BlockId, T)>>,
    /// Counts the probabilities were estimated from, per row, aligned with `rows`.
    counts: Vec<Vec<u64>>,
}

impl<T: Scalar> Dtmc<T> {
    /// Builds a chain from explicit rows. Rows are used as given.
    pub fn from_rows(rows: Vec<Vec<(BlockId, T)>>) -> Self {
        let counts = rows.iter().map(|r| vec![0; r.len()]).collect();
        Self { rows, counts }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, b: BlockId) -> &[(BlockId, T)] {
        &self.rows[b.index()]
    }

    pub fn prob(&self, from: BlockId, to: BlockId) -> T {
        self.rows[from.index()].iter().find(|(t, _)| *t == to).map_or(T::zero(), |&(_, p)| p)
    }

    pub fn count(&self, from: BlockId, to: BlockId) -> u64 {
        let row = &self.rows[from.index()];
        row.iter().position(|(t, _)| *t == to).map_or(0, |i| self.counts[from.index()][i])
    }

    pub fn row_sum(&self, b: BlockId) -> T {
        self.rows[b.index()].iter().fold(T::zero(), |acc, &(_, p)| acc + p)
    }

    fn sample_next<R: Rng + ?Sized>(&self, b: BlockId, rng: &mut R) -> BlockId {
        let row = &self.rows[b.index()];
        let u = T::of(rng.gen::<f64>());
        let mut acc = T::zero();
        for &(t, p) in row {
            acc += p;
            if u < acc {
                return t;
            }
        }
        row.last().expect("non-empty row").0
    }
}

/// Static CFG plus any edge observed at run time but missing statically.
pub fn complete_cfg(cfg: &Cfg, gc: &GlobalCoverage) -> Cfg {
    let mut out = cfg.clone();
    for (a, b, _) in gc.edges() {
        out.add_edge(a, b);
    }
    out
}

/// `Pr(b1, b2) = (1 + #(b1, b2)) / (#b1 + n)` with `n` the out-degree of
/// `b1` and `#b1` the transitions taken out of it.
pub fn estimate_dtmc<T: Scalar>(gc: &GlobalCoverage, cfg: &Cfg) -> Dtmc<T> {
    let cfg = complete_cfg(cfg, gc);
    let mut rows = Vec::with_capacity(cfg.len());
    let mut counts = Vec::with_capacity(cfg.len());
    for b in cfg.block_ids() {
        let succ = cfg.successors(b);
        let n = succ.len() as u64;
        let denom = T::of((gc.out_taken(b) + n) as f64);
        let c: Vec<u64> = succ.iter().map(|&t| gc.edge_taken(b, t)).collect();
        rows.push(succ.iter().zip(&c).map(|(&t, &k)| (t, T::of((1 + k) as f64) / denom)).collect());
        counts.push(c);
    }
    Dtmc { rows, counts }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector<T> {
    pub reward: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub residual: T,
}

impl<T: Scalar> RewardVector<T> {
    pub fn get(&self, b: BlockId) -> T {
        self.reward[b.index()]
    }
}

/// Value iteration for `R = c + P R` from `R = 0`, where `c_b = 1` for
/// uncovered blocks.
pub fn solve_rewards<T: Scalar>(dtmc: &Dtmc<T>, covered: &BlockSet, tol: T, max_iters: usize) -> RewardVector<T> {
    let n = dtmc.len();
    let c: Vec<T> = (0..n).map(|i| if covered.contains(BlockId(i as u32)) { T::zero() } else { T::one() }).collect();
    let mut r = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut residual = T::infinity();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        residual = T::zero();
        for i in 0..n {
            let v = dtmc.rows[i].iter().fold(c[i], |acc, &(t, p)| acc + p * r[t.index()]);
            residual = residual.max((v - r[i]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut r, &mut next);
        if residual < tol {
            return RewardVector { reward: r, converged: true, iterations, residual };
        }
    }
    RewardVector { reward: r, converged: false, iterations, residual }
}

/// Monte-Carlo estimate of `R_b`: uncovered visits (counting `b`) on a
/// random walk from `b` that stops at a sink or after [`MC_STEP_CAP`]
/// steps. Returns `(mean, standard error)`.
pub fn mc_reward_oracle<T: Scalar, R: Rng + ?Sized>(
    dtmc: &Dtmc<T>,
    covered: &BlockSet,
    b: BlockId,
    walks: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(walks >= 1);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..walks {
        let mut cur = b;
        let mut visits = 0u64;
        let mut steps = 0;
        loop {
            if !covered.contains(cur) {
                visits += 1;
            }
            if dtmc.row(cur).is_empty() || steps >= MC_STEP_CAP {
                break;
            }
            cur = dtmc.sample_next(cur, rng);
            steps += 1;
        }
        let v = visits as f64;
        sum += v;
        sq += v * v;
    }
    let n = walks as f64;
    let mean = sum / n;
    let var = if walks > 1 { ((sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Probability of ever visiting `target` from every block, with `target`
/// made absorbing.
pub fn hitting_probabilities<T: Scalar>(dtmc: &Dtmc<T>, target: BlockId) -> Vec<T> {
    let n = dtmc.len();
    let tol = T::of(DEFAULT_TOL);
    let mut h = vec![T::zero(); n];
    h[target.index()] = T::one();
    let mut next = h.clone();
    for _ in 0..DEFAULT_MAX_ITERS {
        let mut delta = T::zero();
        for i in 0..n {
            if i == target.index() {
                continue;
            }
            let v = dtmc.rows[i].iter().fold(T::zero(), |acc, &(t, p)| acc + p * h[t.index()]);
            delta = delta.max((v - h[i]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut h, &mut next);
        if delta < tol {
            break;
        }
    }
    h
}

pub fn reach_probability<T: Scalar>(dtmc: &Dtmc<T>, target: BlockId, init: BlockId) -> T {
    hitting_probabilities(dtmc, target)[init.index()]
}

/// Outcome of critical-block selection. Empty when nothing is uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSelection<T> {
    /// Selected uncovered blocks, best reward first.
    pub ranked_targets: Vec<BlockId>,
    pub target_uncovered: BTreeSet<BlockId>,
    pub critical: BTreeSet<BlockId>,
    pub target_of: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Reach probability of every covered pre-dominant candidate, kept or not.
    pub reach: BTreeMap<BlockId, T>,
    pub k_percent: f64,
    pub k_prime: f64,
}

impl<T> CriticalSelection<T> {
    pub fn is_empty(&self) -> bool {
        self.target_uncovered.is_empty()
    }
}

/// Top `k_percent` of uncovered blocks by reward, then their covered direct
/// predecessors whose reach probability from `init` is at most `k_prime`.
pub fn select_critical_blocks<T: Scalar>(
    rewards: &RewardVector<T>,
    covered: &BlockSet,
    cfg: &Cfg,
    dtmc: &Dtmc<T>,
    init: BlockId,
    k_percent: f64,
    k_prime: f64,
) -> CriticalSelection<T> {
    assert!(k_percent > 0.0 && k_percent <= 100.0, "k_percent in (0, 100]");
    assert!(k_prime > 0.0 && k_prime <= 1.0, "k_prime in (0, 1]");
    let mut uncovered: Vec<BlockId> = cfg.block_ids().filter(|&b| !covered.contains(b)).collect();
    let mut sel = CriticalSelection {
        ranked_targets: Vec::new(),
        target_uncovered: BTreeSet::new(),
        critical: BTreeSet::new(),
        target_of: BTreeMap::new(),
        reach: BTreeMap::new(),
        k_percent,
        k_prime,
    };
    if uncovered.is_empty() {
        return sel;
    }
    uncovered.sort_by(|&a, &b| {
        rewards.get(b).partial_cmp(&rewards.get(a)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let take = ((k_percent / 100.0 * uncovered.len() as f64).ceil() as usize).clamp(1, uncovered.len());
    sel.ranked_targets = uncovered[..take].to_vec();
    sel.target_uncovered = sel.ranked_targets.iter().copied().collect();
    for &b in &sel.ranked_targets {
        for &p in cfg.pre_dominants(b) {
            if !covered.contains(p) {
                continue;
            }
            let r = *sel.reach.entry(p).or_insert_with(|| reach_probability(dtmc, p, init));
            if r.to_f64_lossy() <= k_prime {
                sel.critical.insert(p);
                sel.target_of.entry(p).or_default().insert(b);
            }
        }
    }
    sel
}

/// `rewards.csv`: one row per block.
pub fn rewards_csv<T: Scalar>(
    rewards: &RewardVector<T>,
    covered: &BlockSet,
    reach: &[T],
    critical: &BTreeSet<BlockId>,
) -> String {
    let mut s = String::from("block_id,covered,reward,reach_probability,is_critical\n");
    for (i, r) in rewards.reward.iter().enumerate() {
        let b = BlockId(i as u32);
        writeln!(
            s,
            "{i},{},{},{},{}",
            covered.contains(b) as u8,
            r.to_f64_lossy(),
            reach.get(i).map_or(f64::NAN, |p| p.to_f64_lossy()),
            critical.contains(&b) as u8
        )
        .unwrap();
    }
    s
}
