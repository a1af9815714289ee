#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use heatfuzz::attention::{
    build_dataset, encode_input, extract_heatmap, train, DatasetOptions, EncodedSample, HeatMap, ModelParams,
    TrainConfig, TrainMetrics,
};
use heatfuzz::coverage::{load_records, ExecutionRecord, GlobalCoverage};
use heatfuzz::mutation::{apply_mutation, MutatorId, TokenDictionary};
use heatfuzz::orchestrator::{run_campaign, CampaignReport, FuzzerConfig, Mode};
use heatfuzz::target::{motivating_input, parse_target, BlockId, Cfg, TargetProgram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of a random DAG program: block `Bi` only jumps to `Bj` with
/// `j > i`, guarded by single-byte equalities that read disjoint offsets
/// per block so no two guards of a block can both hold.
pub fn random_dag_source<R: Rng>(rng: &mut R, n: usize) -> String {
    let mut s = String::from("init B0\n");
    for i in 0..n {
        writeln!(s, "block B{i} {{").unwrap();
        if i + 1 < n {
            let k = rng.gen_range(1..=3.min(n - i - 1));
            let mut dests: Vec<usize> = (i + 1..n).collect();
            for d in 0..k {
                let j = rng.gen_range(d..dests.len());
                dests.swap(d, j);
            }
            dests.truncate(k);
            for (e, &d) in dests.iter().enumerate() {
                if e + 1 == k && rng.gen_bool(0.5) {
                    writeln!(s, "    else -> B{d}").unwrap();
                } else {
                    writeln!(s, "    if byte[{}] == {} -> B{d}", i % 16, e * 37 % 256).unwrap();
                }
            }
        }
        writeln!(s, "}}").unwrap();
    }
    s
}

pub fn random_dag_program<R: Rng>(rng: &mut R, n: usize) -> TargetProgram {
    parse_target(&random_dag_source(rng, n)).expect("generated program parses")
}

/// Random DAG as a bare CFG: every block except the last has 1..=3
/// successors with larger ids.
pub fn random_dag_cfg<R: Rng>(rng: &mut R, n: usize) -> Cfg {
    let mut cfg = Cfg::empty(n);
    for i in 0..n.saturating_sub(1) {
        let k = rng.gen_range(1..=3.min(n - i - 1));
        for _ in 0..k {
            let j = rng.gen_range(i + 1..n);
            cfg.add_edge(BlockId(i as u32), BlockId(j as u32));
        }
    }
    cfg
}

/// Random edge counts on `cfg`, a few edges left at zero.
pub fn random_counts<R: Rng>(rng: &mut R, cfg: &Cfg) -> GlobalCoverage {
    let mut gc = GlobalCoverage::new(cfg.len());
    for (a, b) in cfg.edges().collect::<Vec<_>>() {
        if rng.gen_bool(0.8) {
            gc.add_edge_count(a, b, rng.gen_range(1..500));
        }
    }
    gc
}

pub fn random_subset<R: Rng>(rng: &mut R, n: usize, p: f64) -> heatfuzz::BlockSet {
    (0..n).filter(|_| rng.gen_bool(p)).map(|i| BlockId(i as u32)).collect()
}

/// The flag-setting seed (`a = 200, b = -1, c = -10`) followed by `buf_len`
/// zero bytes, and an all-zero seed of the same length.
pub fn motivating_corpus(buf_len: usize) -> Vec<Vec<u8>> {
    vec![motivating_input(200, -1, -10, &vec![0; buf_len]), vec![0; 12 + buf_len]]
}

/// Ground truth for reaching L6: `a > 100 && b == -1 && c < 0`.
pub fn reaches_l6(input: &[u8]) -> bool {
    let rd = |o: usize| {
        let mut b = [0u8; 4];
        for (k, x) in b.iter_mut().enumerate() {
            *x = input.get(o + k).copied().unwrap_or(0);
        }
        i32::from_le_bytes(b)
    };
    rd(0) > 100 && rd(4) == -1 && rd(8) < 0
}

pub struct Warmup {
    pub report: CampaignReport,
    pub records: Vec<ExecutionRecord>,
    pub seeds: BTreeMap<u64, Vec<u8>>,
}

/// Unguided campaign on the motivating target that keeps its record log.
pub fn motivating_warmup(program: &TargetProgram, rng_seed: u64, execs: u64, buf_len: usize, dir: &Path) -> Warmup {
    let cfg = FuzzerConfig {
        rng_seed,
        mode: Mode::Baseline,
        max_execs: execs,
        window_execs: 10_000,
        iter_limit: 10_000,
        ..FuzzerConfig::default()
    };
    let report = run_campaign(&cfg, program, &motivating_corpus(buf_len), Some(dir)).unwrap();
    let records = load_records(&dir.join("records.log"), true).unwrap().records;
    let seeds = report.pool.iter().map(|s| (s.id, s.bytes.clone())).collect();
    Warmup { report, records, seeds }
}

/// Trains the L6 classifier on a warm-up log.
pub fn l6_model(program: &TargetProgram, w: &Warmup, seed: u64) -> (ModelParams<f64>, TrainMetrics) {
    let l6 = program.id_of("L6").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ds, n) =
        build_dataset(&w.records, &w.seeds, l6, &TokenDictionary::empty(), DatasetOptions::default(), &mut rng)
            .unwrap();
    train::<f64>(&ds, n, &TrainConfig { seed, ..TrainConfig::default() }).unwrap()
}

/// Heat map of `seed_id` under `mutator`, from at most `limit` logged
/// single-site mutations of that seed.
pub fn seed_heatmap(
    params: &ModelParams<f64>,
    w: &Warmup,
    seed_id: u64,
    mutator: MutatorId,
    limit: usize,
) -> Option<HeatMap<f64>> {
    let seed = &w.seeds[&seed_id];
    let samples: Vec<EncodedSample> = w
        .records
        .iter()
        .filter(|r| r.parent_seed == seed_id)
        .filter_map(|r| r.mutation())
        .filter(|m| m.mutator == mutator)
        .filter_map(|m| {
            Some(encode_input(&apply_mutation(seed, &m, &TokenDictionary::empty()).ok()?, &m, 0, 0, params.shape.n))
        })
        .take(limit)
        .collect();
    extract_heatmap(params, seed_id, mutator, &samples)
}

/// The flag seed followed by `others` seeds with random `a, b, c` that do
/// not reach L6, all with `buf_len` zero bytes.
pub fn mixed_corpus(buf_len: usize, others: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = vec![motivating_input(200, -1, -10, &vec![0; buf_len])];
    while out.len() < 1 + others {
        let s = motivating_input(rng.gen(), rng.gen(), rng.gen(), &vec![0; buf_len]);
        if !reaches_l6(&s) {
            out.push(s);
        }
    }
    out
}
