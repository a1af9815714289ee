mod common;

use heatfuzz::coverage::GlobalCoverage;
use heatfuzz::markov::{
    estimate_dtmc, reach_probability, select_critical_blocks, solve_rewards, Dtmc, RewardVector, DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
};
use heatfuzz::target::{build_cfg, demo_target, motivating_input, BlockId};
use heatfuzz::BlockSet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn step(d: &Dtmc<f64>, b: BlockId, rng: &mut ChaCha8Rng) -> Option<BlockId> {
    let row = d.row(b);
    if row.is_empty() {
        return None;
    }
    let mut u: f64 = rng.gen();
    for &(t, p) in row {
        if u < p {
            return Some(t);
        }
        u -= p;
    }
    Some(row.last().unwrap().0)
}

/// Fraction of walks from `init` that visit `target`, with its standard error.
fn mc_reach(d: &Dtmc<f64>, init: BlockId, target: BlockId, walks: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut hits = 0usize;
    for _ in 0..walks {
        let mut b = Some(init);
        while let Some(x) = b {
            if x == target {
                hits += 1;
                break;
            }
            b = step(d, x, rng);
        }
    }
    let p = hits as f64 / walks as f64;
    (p, (p * (1.0 - p) / walks as f64).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rows_are_stochastic_and_positive(gen in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(gen);
        let cfg = common::random_dag_cfg(&mut rng, n);
        let gc = common::random_counts(&mut rng, &cfg);
        let d: Dtmc<f64> = estimate_dtmc(&gc, &cfg);
        for b in cfg.block_ids() {
            if cfg.out_degree(b) > 0 {
                prop_assert!((d.row_sum(b) - 1.0).abs() < 1e-9);
            }
            for &t in cfg.successors(b) {
                prop_assert!(d.prob(b, t) > 0.0);
            }
        }
    }

    #[test]
    fn monotone_targeting_and_rank_stability(gen in any::<u64>(), n in 3usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(gen);
        let cfg = common::random_dag_cfg(&mut rng, n);
        let gc = common::random_counts(&mut rng, &cfg);
        let d: Dtmc<f64> = estimate_dtmc(&gc, &cfg);
        let mut covered = common::random_subset(&mut rng, n, 0.6);
        covered.insert(BlockId(0));
        let r = solve_rewards(&d, &covered, DEFAULT_TOL, DEFAULT_MAX_ITERS);
        let sel = |r: &RewardVector<f64>, k: f64, kp: f64| select_critical_blocks(r, &covered, &cfg, &d, BlockId(0), k, kp);
        let mut prev = sel(&r, 5.0, 0.5);
        for k in [10.0, 30.0, 60.0, 100.0] {
            let s = sel(&r, k, 0.5);
            prop_assert!(prev.target_uncovered.is_subset(&s.target_uncovered));
            prev = s;
        }
        let mut prev = sel(&r, 50.0, 0.05);
        for kp in [0.2, 0.5, 0.9, 1.0] {
            let s = sel(&r, 50.0, kp);
            prop_assert!(prev.critical.is_subset(&s.critical));
            prev = s;
        }
        let scaled = RewardVector { reward: r.reward.iter().map(|x| x * 7.5).collect(), ..r.clone() };
        prop_assert_eq!(sel(&r, 30.0, 0.5).target_uncovered, sel(&scaled, 30.0, 0.5).target_uncovered);
        let full = sel(&r, 100.0, 1.0);
        for (c, ts) in &full.target_of {
            prop_assert!(covered.contains(*c));
            for t in ts {
                prop_assert!(cfg.pre_dominants(*t).contains(c));
            }
        }
    }
}

#[test]
fn reach_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..8 {
        let n = rng.gen_range(4..20);
        let cfg = common::random_dag_cfg(&mut rng, n);
        let gc = common::random_counts(&mut rng, &cfg);
        let d: Dtmc<f64> = estimate_dtmc(&gc, &cfg);
        let target = BlockId(rng.gen_range(1..n) as u32);
        let exact = reach_probability(&d, target, BlockId(0));
        let (p, se) = mc_reach(&d, BlockId(0), target, 100_000, &mut rng);
        assert!((exact - p).abs() <= 3.0 * se.max(1e-3), "{exact} vs {p} ± {se}");
    }
}

#[test]
fn reach_basics() {
    let mut cfg = heatfuzz::Cfg::empty(3);
    cfg.add_edge(BlockId(0), BlockId(1));
    cfg.add_edge(BlockId(0), BlockId(2));
    let d: Dtmc<f64> = estimate_dtmc(&GlobalCoverage::new(3), &cfg);
    assert_eq!(reach_probability(&d, BlockId(0), BlockId(0)), 1.0);
    assert!((reach_probability(&d, BlockId(1), BlockId(0)) - 0.5).abs() < 1e-12);
}

#[test]
fn sinks() {
    let mut cfg = heatfuzz::Cfg::empty(2);
    cfg.add_edge(BlockId(0), BlockId(1));
    let d: Dtmc<f64> = estimate_dtmc(&GlobalCoverage::new(2), &cfg);
    let uncovered: BlockSet = [BlockId(0)].into_iter().collect();
    assert_eq!(solve_rewards(&d, &uncovered, 1e-12, 1000).reward[1], 1.0);
    let all: BlockSet = [BlockId(0), BlockId(1)].into_iter().collect();
    assert_eq!(solve_rewards(&d, &all, 1e-12, 1000).reward[1], 0.0);
}

#[test]
fn motivating_selects_l6() {
    let p = demo_target("motivating").unwrap();
    let cfg = build_cfg(&p);
    let mut gc = GlobalCoverage::new(p.len());
    let inputs = [
        motivating_input(200, -1, -10, b"YYY"),
        motivating_input(0, 0, 0, b"YYY"),
        motivating_input(200, 3, 0, b"YYY"),
        motivating_input(200, -1, 5, b"YYY"),
    ];
    for i in 0..400 {
        gc.record_trace(&p.execute(&inputs[i % inputs.len()], 100));
    }
    let d: Dtmc<f64> = estimate_dtmc(&gc, &cfg);
    let covered = gc.covered().clone();
    let l = |s: &str| p.id_of(s).unwrap();
    assert!(!covered.contains(l("L7")) && !covered.contains(l("L8")));
    let r = solve_rewards(&d, &covered, DEFAULT_TOL, DEFAULT_MAX_ITERS);
    let sel = select_critical_blocks(&r, &covered, &cfg, &d, p.init(), 100.0, 0.5);
    assert!(sel.target_uncovered.contains(&l("L7")) && sel.target_uncovered.contains(&l("L8")));
    assert!(sel.critical.contains(&l("L6")));
    let vacuous = select_critical_blocks(&r, &covered, &cfg, &d, p.init(), 100.0, 1.0);
    let preds: std::collections::BTreeSet<_> = vacuous
        .target_uncovered
        .iter()
        .flat_map(|t| cfg.pre_dominants(*t).iter().copied())
        .filter(|b| covered.contains(*b))
        .collect();
    assert_eq!(vacuous.critical, preds);
}
