use std::fmt::Write as _;

use super::bitmap::{CoverageBitmap, EdgeHashDict};
use crate::target::{BlockId, ExecutionTrace};

/// Growable bitset over block ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BlockSet {
    words: Vec<u64>,
}

impl BlockSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, b: BlockId) -> bool {
        let (w, bit) = (b.index() / 64, b.index() % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        let fresh = self.words[w] & (1 << bit) == 0;
        self.words[w] |= 1 << bit;
        fresh
    }

    #[inline]
    pub fn contains(&self, b: BlockId) -> bool {
        self.words.get(b.index() / 64).is_some_and(|w| w & (1 << (b.index() % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros();
                w &= w - 1;
                Some(BlockId(wi as u32 * 64 + b))
            })
        })
    }

    pub fn intersects(&self, other: &BlockSet) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn intersection_count(&self, other: &BlockSet) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    /// Lowercase hex of the bit array: byte `i` holds blocks `8i..8i+8`,
    /// lowest block in the lowest bit. Always at least one byte.
    pub fn to_hex(&self) -> String {
        let nbytes = self
            .words
            .iter()
            .rposition(|&w| w != 0)
            .map(|wi| wi * 8 + 8 - (self.words[wi].leading_zeros() as usize / 8))
            .unwrap_or(1);
        let mut s = String::with_capacity(nbytes * 2);
        for i in 0..nbytes {
            let byte = (self.words.get(i / 8).copied().unwrap_or(0) >> ((i % 8) * 8)) as u8;
            write!(s, "{byte:02x}").unwrap();
        }
        s
    }

    pub fn from_hex(hex: &str) -> Option<Self> {
        if hex.is_empty() || !hex.len().is_multiple_of(2) {
            return None;
        }
        let mut set = Self::new();
        for (i, pair) in hex.as_bytes().chunks(2).enumerate() {
            let byte = u8::from_str_radix(std::str::from_utf8(pair).ok()?, 16).ok()?;
            if pair.iter().any(|c| c.is_ascii_uppercase()) {
                return None;
            }
            for bit in 0..8 {
                if byte & (1 << bit) != 0 {
                    set.insert(BlockId((i * 8 + bit) as u32));
                }
            }
        }
        Some(set)
    }
}

impl FromIterator<BlockId> for BlockSet {
    fn from_iter<I: IntoIterator<Item = BlockId>>(iter: I) -> Self {
        let mut s = Self::new();
        for b in iter {
            s.insert(b);
        }
        s
    }
}

/// Campaign-wide hit counters.
///
/// `out_taken(b)` counts transitions taken out of `b`, not visits, so a
/// trace ending at `b` does not contribute to it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalCoverage {
    block_hits: Vec<u64>,
    /// Per source block: `(destination, count)` pairs in first-seen order.
    edge_taken: Vec<Vec<(BlockId, u64)>>,
    out_taken: Vec<u64>,
    covered: BlockSet,
    covered_edges: usize,
}

impl GlobalCoverage {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            block_hits: vec![0; n_blocks],
            edge_taken: vec![Vec::new(); n_blocks],
            out_taken: vec![0; n_blocks],
            covered: BlockSet::new(),
            covered_edges: 0,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.block_hits.len()
    }

    pub fn block_hits(&self, b: BlockId) -> u64 {
        self.block_hits[b.index()]
    }

    pub fn edge_taken(&self, from: BlockId, to: BlockId) -> u64 {
        self.edge_taken[from.index()].iter().find(|(t, _)| *t == to).map_or(0, |&(_, c)| c)
    }

    pub fn out_taken(&self, b: BlockId) -> u64 {
        self.out_taken[b.index()]
    }

    pub fn covered(&self) -> &BlockSet {
        &self.covered
    }

    pub fn is_covered(&self, b: BlockId) -> bool {
        self.covered.contains(b)
    }

    pub fn covered_block_count(&self) -> usize {
        self.covered.len()
    }

    pub fn covered_edge_count(&self) -> usize {
        self.covered_edges
    }

    /// All taken edges with their counts, sorted by `(from, to)`.
    pub fn edges(&self) -> Vec<(BlockId, BlockId, u64)> {
        let mut out: Vec<_> = self
            .edge_taken
            .iter()
            .enumerate()
            .flat_map(|(i, v)| v.iter().map(move |&(t, c)| (BlockId(i as u32), t, c)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Marks a block covered without counting a visit.
    pub fn mark_covered(&mut self, b: BlockId) -> bool {
        self.covered.insert(b)
    }

    /// Adds `count` traversals of an edge, e.g. when restoring a snapshot.
    pub fn add_edge_count(&mut self, from: BlockId, to: BlockId, count: u64) -> bool {
        let row = &mut self.edge_taken[from.index()];
        let fresh = match row.iter_mut().find(|(t, _)| *t == to) {
            Some((_, c)) => {
                *c += count;
                false
            }
            None => {
                row.push((to, count));
                self.covered_edges += 1;
                true
            }
        };
        self.out_taken[from.index()] += count;
        let a = self.covered.insert(from);
        let b = self.covered.insert(to);
        fresh || a || b
    }

    /// Folds one trace into the counters. Returns true iff a block or an
    /// edge was seen for the first time.
    pub fn record_trace(&mut self, trace: &ExecutionTrace) -> bool {
        let mut new = false;
        for &b in &trace.block_seq {
            self.block_hits[b.index()] += 1;
            new |= self.covered.insert(b);
        }
        for (a, b) in trace.edges() {
            new |= self.add_edge_count(a, b, 1);
        }
        new
    }
}

/// Updates counters and bitmap from a trace; true iff anything was covered
/// for the first time.
pub fn update_from_trace(
    gc: &mut GlobalCoverage,
    bitmap: &mut CoverageBitmap,
    dict: &EdgeHashDict,
    trace: &ExecutionTrace,
) -> bool {
    dict.mark_trace(bitmap, trace);
    gc.record_trace(trace)
}
