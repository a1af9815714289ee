//! Hot-byte protection plans and the guided mutation stream.
//!
//! A byte is hot for a (seed, mutator) pair when its heat strictly exceeds
//! the mean heat of that seed's map. When a seed covers several critical
//! blocks, a byte is protected if it is hot for any of them. Protected
//! bytes are still mutated with probability `p_hot`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;

use crate::attention::HeatMap;
use crate::coverage::BlockSet;
use crate::mutation::{deterministic_schedule, Mutation, MutatorId, TokenDictionary};
use crate::target::BlockId;
use crate::Scalar;

pub const DEFAULT_P_HOT: f64 = 0.05;

/// Heat of one critical block's model for one mutator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLayer<T> {
    pub block: BlockId,
    pub heat: Vec<T>,
    pub threshold: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutatorPlan<T> {
    pub layers: Vec<PlanLayer<T>>,
    pub hot_set: BTreeSet<usize>,
    protected: Vec<bool>,
}

impl<T> MutatorPlan<T> {
    #[inline]
    pub fn is_protected(&self, position: usize) -> bool {
        self.protected.get(position).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePlan<T> {
    pub seed_id: u64,
    pub p_hot: f64,
    pub mutators: BTreeMap<MutatorId, MutatorPlan<T>>,
}

impl<T> GuidancePlan<T> {
    pub fn empty(seed_id: u64, p_hot: f64) -> Self {
        Self { seed_id, p_hot, mutators: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.mutators.is_empty()
    }

    pub fn hot_set(&self, m: MutatorId) -> Option<&BTreeSet<usize>> {
        self.mutators.get(&m).map(|p| &p.hot_set)
    }

    pub fn is_protected(&self, m: MutatorId, position: usize) -> bool {
        self.mutators.get(&m).is_some_and(|p| p.is_protected(position))
    }
}

/// Builds the plan for one seed from `(critical block, heat map)` pairs.
/// Maps whose block is not in `covered_criticals` are ignored.
pub fn compute_plan<T: Scalar>(
    seed_id: u64,
    heatmaps: &[(BlockId, HeatMap<T>)],
    covered_criticals: &BTreeSet<BlockId>,
    p_hot: f64,
) -> GuidancePlan<T> {
    let mut plan = GuidancePlan::empty(seed_id, p_hot);
    for (block, h) in heatmaps {
        if !covered_criticals.contains(block) {
            continue;
        }
        let threshold = h.mean();
        let heat = h.heat[..h.valid_len].to_vec();
        let mp = plan.mutators.entry(h.mutator).or_insert_with(|| MutatorPlan {
            layers: Vec::new(),
            hot_set: BTreeSet::new(),
            protected: Vec::new(),
        });
        if mp.protected.len() < heat.len() {
            mp.protected.resize(heat.len(), false);
        }
        for (i, &v) in heat.iter().enumerate() {
            if v > threshold {
                mp.hot_set.insert(i);
                mp.protected[i] = true;
            }
        }
        mp.layers.push(PlanLayer { block: *block, heat, threshold });
    }
    plan
}

/// Unprotected positions always pass; protected ones pass with
/// probability `p_hot`.
#[inline]
pub fn should_mutate_position<T, R: Rng + ?Sized>(
    plan: &GuidancePlan<T>,
    mutator: MutatorId,
    position: usize,
    rng: &mut R,
) -> bool {
    if !plan.is_protected(mutator, position) {
        return true;
    }
    plan.p_hot > 0.0 && rng.gen::<f64>() < plan.p_hot
}

/// The deterministic schedule of `seed`, filtered through the plan.
pub fn guided_mutation_stream<'a, T, R: Rng + ?Sized>(
    seed: &[u8],
    plan: &'a GuidancePlan<T>,
    dict: &'a TokenDictionary,
    rng: &'a mut R,
) -> impl Iterator<Item = Mutation> + 'a {
    deterministic_schedule(seed, dict).filter(move |m| should_mutate_position(plan, m.mutator, m.position, rng))
}

/// Indices into `pool`: seeds covering more critical blocks first, then the
/// rest; pool order is kept within each group.
pub fn schedule_seeds(pool: &[&BlockSet], critical: &BTreeSet<BlockId>) -> Vec<usize> {
    let crit: BlockSet = critical.iter().copied().collect();
    let mut order: Vec<(usize, usize)> =
        pool.iter().enumerate().map(|(i, c)| (i, c.intersection_count(&crit))).collect();
    order.sort_by_key(|&(_, k)| std::cmp::Reverse(k));
    order.into_iter().map(|(i, _)| i).collect()
}

/// `plan_<seed>.csv` rows: mutator, position, heat, threshold, protected,
/// and the critical block the heat belongs to.
pub fn plan_csv<T: Scalar>(plan: &GuidancePlan<T>, block_name: impl Fn(BlockId) -> String) -> String {
    let mut s = String::from("mutator,position,heat,threshold,protected,block\n");
    for (m, mp) in &plan.mutators {
        for layer in &mp.layers {
            for (i, h) in layer.heat.iter().enumerate() {
                writeln!(
                    s,
                    "{m},{i},{},{},{},{}",
                    h.to_f64_lossy(),
                    layer.threshold.to_f64_lossy(),
                    mp.is_protected(i) as u8,
                    block_name(layer.block)
                )
                .unwrap();
            }
        }
    }
    s
}
