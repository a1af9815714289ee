use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::CoverageError;
use crate::target::{BlockId, Cfg, ExecutionTrace};

pub const DEFAULT_MAP_SIZE: usize = 1 << 16;

/// AFL-style hit bitmap over hashed edge indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageBitmap {
    words: Vec<u64>,
    map_size: usize,
}

impl CoverageBitmap {
    pub fn new(map_size: usize) -> Result<Self, CoverageError> {
        if !map_size.is_power_of_two() {
            return Err(CoverageError::MapSize(map_size));
        }
        Ok(Self { words: vec![0; map_size.div_ceil(64)], map_size })
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    /// Sets bit `index`; returns true if it was previously clear.
    #[inline]
    pub fn set(&mut self, index: usize) -> bool {
        let (w, b) = (index / 64, index % 64);
        let fresh = self.words[w] & (1 << b) == 0;
        self.words[w] |= 1 << b;
        fresh
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.words[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    /// Raw bit array, bit `i` in byte `i / 8` at position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.map_size.div_ceil(8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CoverageError> {
        let mut bm = Self::new(bytes.len() * 8)?;
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            bm.words[i] = u64::from_le_bytes(buf);
        }
        Ok(bm)
    }
}

/// Maps bitmap indices back to CFG edges.
///
/// Every block gets a random id in `[0, map_size)`; edge `(prev, cur)`
/// lands at `((id(prev) >> 1) ^ id(cur)) mod map_size`, the classic AFL
/// scheme. Distinct edges may collide.
#[derive(Debug, Clone)]
pub struct EdgeHashDict {
    block_rand_id: Vec<u32>,
    index_to_edges: BTreeMap<usize, Vec<(BlockId, BlockId)>>,
    map_size: usize,
}

impl EdgeHashDict {
    pub fn build<R: Rng + ?Sized>(cfg: &Cfg, map_size: usize, rng: &mut R) -> Result<Self, CoverageError> {
        if !map_size.is_power_of_two() {
            return Err(CoverageError::MapSize(map_size));
        }
        let ids = (0..cfg.len()).map(|_| rng.gen_range(0..map_size as u64) as u32).collect();
        Self::with_ids(cfg, ids, map_size)
    }

    /// Builds a dictionary from explicit block ids, one per CFG block.
    pub fn with_ids(cfg: &Cfg, block_rand_id: Vec<u32>, map_size: usize) -> Result<Self, CoverageError> {
        if !map_size.is_power_of_two() {
            return Err(CoverageError::MapSize(map_size));
        }
        assert_eq!(block_rand_id.len(), cfg.len(), "one random id per block");
        let mut dict = Self { block_rand_id, index_to_edges: BTreeMap::new(), map_size };
        for (a, b) in cfg.edges() {
            dict.register_edge(a, b)?;
        }
        Ok(dict)
    }

    /// Records an edge discovered after construction (e.g. a dynamic edge).
    pub fn register_edge(&mut self, prev: BlockId, cur: BlockId) -> Result<usize, CoverageError> {
        let idx = self.index(prev, cur)?;
        let slot = self.index_to_edges.entry(idx).or_default();
        if !slot.contains(&(prev, cur)) {
            slot.push((prev, cur));
        }
        Ok(idx)
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    pub fn rand_id(&self, b: BlockId) -> Option<u32> {
        self.block_rand_id.get(b.index()).copied()
    }

    pub fn edges_at(&self, index: usize) -> &[(BlockId, BlockId)] {
        self.index_to_edges.get(&index).map(Vec::as_slice).unwrap_or(&[])
    }

    #[inline]
    pub fn index(&self, prev: BlockId, cur: BlockId) -> Result<usize, CoverageError> {
        edge_hash_index(prev, cur, self)
    }

    /// Blocks incident to every edge whose bit is set, plus whether any set
    /// index is shared by two or more edges.
    pub fn reconstruct_blocks(&self, bitmap: &CoverageBitmap) -> (BTreeSet<BlockId>, bool) {
        let mut blocks = BTreeSet::new();
        let mut ambiguous = false;
        for idx in bitmap.iter_set() {
            let edges = self.edges_at(idx);
            ambiguous |= edges.len() >= 2;
            for &(a, b) in edges {
                blocks.insert(a);
                blocks.insert(b);
            }
        }
        (blocks, ambiguous)
    }

    /// Sets the bitmap bit of every edge in `trace`; returns how many bits
    /// flipped from clear to set.
    pub fn mark_trace(&self, bitmap: &mut CoverageBitmap, trace: &ExecutionTrace) -> usize {
        trace
            .edges()
            .filter(|&(a, b)| {
                let idx = self.index(a, b).expect("trace blocks belong to the program");
                bitmap.set(idx)
            })
            .count()
    }
}

/// AFL edge index: `((id(prev) >> 1) ^ id(cur)) mod map_size`.
#[inline]
pub fn edge_hash_index(prev: BlockId, cur: BlockId, dict: &EdgeHashDict) -> Result<usize, CoverageError> {
    let p = dict.rand_id(prev).ok_or(CoverageError::UnknownBlock(prev))?;
    let c = dict.rand_id(cur).ok_or(CoverageError::UnknownBlock(cur))?;
    Ok((((p >> 1) ^ c) as usize) & (dict.map_size - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::parse_target;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> (crate::target::TargetProgram, Cfg) {
        let p = parse_target("init A\nblock A {\n else -> B\n}\nblock B {\n else -> C\n}\nblock C {}\n").unwrap();
        let cfg = Cfg::build(&p);
        (p, cfg)
    }

    #[test]
    fn index_arithmetic() {
        let (_, cfg) = chain();
        let dict = EdgeHashDict::with_ids(&cfg, vec![0, 0, 0], 16).unwrap();
        assert_eq!(edge_hash_index(BlockId(0), BlockId(1), &dict).unwrap(), 0);
        let dict = EdgeHashDict::with_ids(&cfg, vec![2, 5, 0], 16).unwrap();
        assert_eq!(edge_hash_index(BlockId(0), BlockId(1), &dict).unwrap(), 4);
        assert_eq!(edge_hash_index(BlockId(0), BlockId(9), &dict), Err(CoverageError::UnknownBlock(BlockId(9))));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(CoverageBitmap::new(1000).is_err());
        assert!(CoverageBitmap::new(1024).is_ok());
    }

    #[test]
    fn reconstruct_collision_free() {
        let (p, cfg) = chain();
        let dict = EdgeHashDict::with_ids(&cfg, vec![2, 5, 9], 16).unwrap();
        let mut bm = CoverageBitmap::new(16).unwrap();
        assert_eq!(dict.reconstruct_blocks(&bm), (BTreeSet::new(), false));
        let trace = p.execute(&[], 10);
        dict.mark_trace(&mut bm, &trace);
        let (blocks, ambiguous) = dict.reconstruct_blocks(&bm);
        assert_eq!(blocks, trace.block_seq.iter().copied().collect());
        assert!(!ambiguous);
    }

    #[test]
    fn reconstruct_with_collision() {
        // (A,B): (0>>1)^1 = 1; (B,C): (1>>1)^1 = 1.
        let (_, cfg) = chain();
        let dict = EdgeHashDict::with_ids(&cfg, vec![0, 1, 1], 16).unwrap();
        assert_eq!(dict.edges_at(1).len(), 2);
        let mut bm = CoverageBitmap::new(16).unwrap();
        bm.set(1);
        let (blocks, ambiguous) = dict.reconstruct_blocks(&bm);
        assert_eq!(blocks.len(), 3);
        assert!(ambiguous);
    }

    #[test]
    fn every_edge_registered_at_its_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200;
        let mut cfg = Cfg::empty(n);
        let mut added = 0;
        while added < 1000 {
            let a = BlockId(rng.gen_range(0..n as u32));
            let b = BlockId(rng.gen_range(0..n as u32));
            if cfg.add_edge(a, b) {
                added += 1;
            }
        }
        let dict = EdgeHashDict::build(&cfg, 1 << 10, &mut rng).unwrap();
        for (a, b) in cfg.edges() {
            let idx = edge_hash_index(a, b, &dict).unwrap();
            assert!(dict.edges_at(idx).contains(&(a, b)));
        }
    }

    #[test]
    fn bitmap_bytes_little_endian() {
        let mut bm = CoverageBitmap::new(64).unwrap();
        bm.set(0);
        bm.set(9);
        let bytes = bm.to_bytes();
        assert_eq!(bytes.len(), 8);
        assert_eq!(bytes[0], 0b1);
        assert_eq!(bytes[1], 0b10);
        assert_eq!(CoverageBitmap::from_bytes(&bytes).unwrap(), bm);
    }
}
