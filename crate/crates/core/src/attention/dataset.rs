use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::model::PAD;
use super::{AttentionError, EncodedSample};
use crate::coverage::{BlockSet, ExecutionRecord};
use crate::mutation::{apply_mutation, Mutation, TokenDictionary};
use crate::target::BlockId;

pub const DEFAULT_MAX_PER_CLASS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    /// Upper bound on the padded length `N`.
    pub max_input_len: usize,
    /// Upper bound on samples kept per class after undersampling.
    pub max_per_class: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { max_input_len: crate::target::DEFAULT_INPUT_LEN_MAX, max_per_class: DEFAULT_MAX_PER_CLASS }
    }
}

/// Pads or truncates `input` to `n` tokens.
pub fn encode_input(input: &[u8], m: &Mutation, dict_len: usize, label: u8, n: usize) -> EncodedSample {
    let valid_len = input.len().min(n);
    let mut x: Vec<u16> = input[..valid_len].iter().map(|&b| b as u16).collect();
    x.resize(n, PAD);
    EncodedSample { x, mutator: m.mutator, param_norm: m.mutator.param_norm(m.param, dict_len), label, valid_len }
}

/// Rebuilds each single-site record's input from its parent seed, labels
/// it by whether `target` was covered, and undersamples the majority class.
///
/// Returns the balanced, shuffled samples and the padded length `N`.
pub fn build_dataset<R: Rng + ?Sized>(
    records: &[ExecutionRecord],
    seeds: &BTreeMap<u64, Vec<u8>>,
    target: BlockId,
    dict: &TokenDictionary,
    opts: DatasetOptions,
    rng: &mut R,
) -> Result<(Vec<EncodedSample>, usize), AttentionError> {
    let items = records.iter().filter_map(|r| Some((r.parent_seed, r.mutation()?, &r.covered_blocks)));
    build_dataset_from(items, seeds, target, dict, opts, rng)
}

/// [`build_dataset`] over `(parent seed, mutation, covered blocks)` triples.
pub fn build_dataset_from<'a, I, R>(
    items: I,
    seeds: &BTreeMap<u64, Vec<u8>>,
    target: BlockId,
    dict: &TokenDictionary,
    opts: DatasetOptions,
    rng: &mut R,
) -> Result<(Vec<EncodedSample>, usize), AttentionError>
where
    I: IntoIterator<Item = (u64, Mutation, &'a BlockSet)>,
    R: Rng + ?Sized,
{
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut n = 1;
    for (parent, m, covered) in items {
        let seed = seeds.get(&parent).ok_or(AttentionError::MissingSeed(parent))?;
        let fits = m.position + m.footprint(dict).max(1) <= seed.len();
        if !fits || !m.mutator.param_range(dict.len()).contains(&m.param) {
            continue;
        }
        n = n.max(seed.len());
        if covered.contains(target) {
            pos.push((parent, m));
        } else {
            neg.push((parent, m));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(AttentionError::Untrainable { positives: pos.len(), negatives: neg.len() });
    }
    let n = n.min(opts.max_input_len);
    let keep = pos.len().min(neg.len()).min(opts.max_per_class);
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut samples = Vec::with_capacity(2 * keep);
    for (list, label) in [(&pos, 1), (&neg, 0)] {
        for &(parent, m) in list.iter().take(keep) {
            let input = apply_mutation(&seeds[&parent], &m, dict).expect("validated above");
            samples.push(encode_input(&input, &m, dict.len(), label, n));
        }
    }
    samples.shuffle(rng);
    Ok((samples, n))
}
