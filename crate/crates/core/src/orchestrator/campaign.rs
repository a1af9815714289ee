use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::crash::{triage_crash, CrashReport, Lineage, Triage};
use super::history::{detect_bottleneck, CoverageHistory};
use super::{FuzzerConfig, Mode, OrchestratorError};
use crate::attention::{
    build_dataset_from, encode_input, extract_heatmap, train, DatasetOptions, HeatMap, ModelParams, TrainMetrics,
};
use crate::coverage::{
    update_from_trace, BlockSet, CoverageBitmap, EdgeHashDict, ExecutionRecord, GlobalCoverage, RecordLog,
};
use crate::guidance::{compute_plan, schedule_seeds, should_mutate_position, GuidancePlan};
use crate::markov::{
    complete_cfg, estimate_dtmc, hitting_probabilities, select_critical_blocks, solve_rewards, CriticalSelection, Dtmc,
    RewardVector, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::mutation::{
    apply_mutation, deterministic_schedule, havoc_step, havoc_step_filtered, DeterministicSchedule, Mutation,
    MutatorId, TokenDictionary,
};
use crate::target::{BlockId, Cfg, ExecutionTrace, TargetProgram};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEntry {
    pub id: u64,
    pub bytes: Vec<u8>,
    pub covered: BlockSet,
    /// Execution that produced it; 0 for the initial corpus.
    pub discovered_at: u64,
}

/// How often each analysis stage ran. A baseline campaign leaves all of
/// them at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub markov: u64,
    pub training: u64,
    pub heatmaps: u64,
    pub plans: u64,
}

/// Per-window execution statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowStats {
    pub start: u64,
    pub end: u64,
    /// Executions in the window that covered each block.
    pub block_hits: Vec<u64>,
    /// Executions that covered any block of the critical set in force.
    pub critical_hits: u64,
    pub guided: bool,
}

impl WindowStats {
    pub fn execs(&self) -> u64 {
        self.end - self.start
    }

    pub fn critical_ratio(&self) -> f64 {
        if self.execs() == 0 {
            0.0
        } else {
            self.critical_hits as f64 / self.execs() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub block: BlockId,
    pub params: ModelParams<f64>,
    pub metrics: TrainMetrics,
    pub dataset_size: usize,
}

/// One activation of the analysis pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub exec: u64,
    pub rewards: RewardVector<f64>,
    /// Probability of reaching each block from `init`.
    pub reach: Vec<f64>,
    pub selection: CriticalSelection<f64>,
    pub trained: Vec<(BlockId, TrainMetrics)>,
    pub untrainable: Vec<BlockId>,
    pub plans: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub mode: Mode,
    pub rng_seed: u64,
    pub execs: u64,
    pub history: CoverageHistory,
    pub windows: Vec<WindowStats>,
    pub crashes: Vec<CrashReport>,
    pub anomalies: u64,
    pub pool: Vec<SeedEntry>,
    pub global: GlobalCoverage,
    pub bitmap: CoverageBitmap,
    pub ops: OpCounters,
    pub pipeline_runs: Vec<PipelineRun>,
    pub first_activation: Option<u64>,
    pub models: BTreeMap<BlockId, TrainedModel>,
    /// Heat maps of the latest pipeline run, keyed by seed.
    pub heatmaps: BTreeMap<u64, Vec<(BlockId, HeatMap<f64>)>>,
    pub plans: BTreeMap<u64, GuidancePlan<f64>>,
    /// Stopped before the budget: a pipeline run found every block
    /// covered and nothing left to target.
    pub complete: bool,
}

impl CampaignReport {
    pub fn crashed(&self) -> bool {
        !self.crashes.is_empty()
    }

    /// `(hits, execs)` for `block` over windows starting in `[from, to)`.
    pub fn block_hits_between(&self, block: BlockId, from: u64, to: u64) -> (u64, u64) {
        self.windows
            .iter()
            .filter(|w| w.start >= from && w.start < to)
            .fold((0, 0), |(h, e), w| (h + w.block_hits[block.index()], e + w.execs()))
    }
}

/// Single-site mutation records kept in memory for training, with
/// coverage sets interned.
#[derive(Default)]
struct SiteStore {
    recs: Vec<(u64, Mutation, u32)>,
    sets: Vec<BlockSet>,
    index: HashMap<BlockSet, u32>,
    by_pair: HashMap<(u64, MutatorId), Vec<u32>>,
}

impl SiteStore {
    fn push(&mut self, parent: u64, m: Mutation, covered: &BlockSet) {
        let set = match self.index.get(covered) {
            Some(&i) => i,
            None => {
                let i = self.sets.len() as u32;
                self.sets.push(covered.clone());
                self.index.insert(covered.clone(), i);
                i
            }
        };
        self.by_pair.entry((parent, m.mutator)).or_default().push(self.recs.len() as u32);
        self.recs.push((parent, m, set));
    }

    fn iter(&self) -> impl Iterator<Item = (u64, Mutation, &BlockSet)> + '_ {
        self.recs.iter().map(|&(p, m, s)| (p, m, &self.sets[s as usize]))
    }

    fn pair(&self, parent: u64, m: MutatorId) -> impl Iterator<Item = (Mutation, &BlockSet)> + '_ {
        self.by_pair.get(&(parent, m)).into_iter().flatten().map(|&i| {
            let (_, m, s) = self.recs[i as usize];
            (m, &self.sets[s as usize])
        })
    }
}

struct Campaign<'p> {
    cfg_: FuzzerConfig,
    program: &'p TargetProgram,
    cfg: Cfg,
    tokens: Arc<TokenDictionary>,
    edge_dict: EdgeHashDict,
    bitmap: CoverageBitmap,
    gc: GlobalCoverage,
    rng: ChaCha8Rng,
    pool: Vec<SeedEntry>,
    store: SiteStore,
    log: Option<RecordLog>,
    crash_dir: Option<PathBuf>,
    crash_seen: BTreeSet<BlockId>,
    crashes: Vec<CrashReport>,
    anomalies: u64,
    execs: u64,
    history: CoverageHistory,
    windows: Vec<WindowStats>,
    window_start: u64,
    window_hits: Vec<u64>,
    window_critical: u64,
    window_guided: bool,
    trace: ExecutionTrace,
    cur_cov: BlockSet,
    // Pipeline state.
    active: bool,
    critical: BTreeSet<BlockId>,
    critical_set: BlockSet,
    plans: BTreeMap<u64, GuidancePlan<f64>>,
    plan_epoch: u64,
    det_cursor: HashMap<u64, usize>,
    models: BTreeMap<BlockId, TrainedModel>,
    heatmaps: BTreeMap<u64, Vec<(BlockId, HeatMap<f64>)>>,
    pipeline_runs: Vec<PipelineRun>,
    first_activation: Option<u64>,
    ops: OpCounters,
    complete: bool,
}

/// Runs a campaign over `corpus`. With `out_dir`, the record log and
/// crashes are written while fuzzing and statistics afterwards.
pub fn run_campaign(
    config: &FuzzerConfig,
    program: &TargetProgram,
    corpus: &[Vec<u8>],
    out_dir: Option<&Path>,
) -> Result<CampaignReport, OrchestratorError> {
    let tokens = match &config.dict {
        Some(p) => TokenDictionary::load(p)?,
        None => TokenDictionary::empty(),
    };
    run_campaign_with_dict(config, program, corpus, tokens, out_dir)
}

pub fn run_campaign_with_dict(
    config: &FuzzerConfig,
    program: &TargetProgram,
    corpus: &[Vec<u8>],
    tokens: TokenDictionary,
    out_dir: Option<&Path>,
) -> Result<CampaignReport, OrchestratorError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(OrchestratorError::EmptyCorpus);
    }
    if let Some((index, c)) = corpus.iter().enumerate().find(|(_, c)| c.len() > config.max_input_len) {
        return Err(OrchestratorError::InputTooLong { index, len: c.len(), max: config.max_input_len });
    }
    let (log, crash_dir) = match out_dir {
        Some(dir) => {
            let crash_dir = dir.join("crashes");
            std::fs::create_dir_all(&crash_dir).map_err(|e| OrchestratorError::io(&crash_dir, e))?;
            (Some(RecordLog::create(&dir.join("records.log"))?), Some(crash_dir))
        }
        None => (None, None),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let cfg = Cfg::build(program);
    let edge_dict = EdgeHashDict::build(&cfg, config.map_size, &mut rng)?;
    let mut c = Campaign {
        cfg_: config.clone(),
        program,
        cfg,
        tokens: Arc::new(tokens),
        edge_dict,
        bitmap: CoverageBitmap::new(config.map_size)?,
        gc: GlobalCoverage::new(program.len()),
        rng,
        pool: Vec::new(),
        store: SiteStore::default(),
        log,
        crash_dir,
        crash_seen: BTreeSet::new(),
        crashes: Vec::new(),
        anomalies: 0,
        execs: 0,
        history: CoverageHistory::new(),
        windows: Vec::new(),
        window_start: 0,
        window_hits: vec![0; program.len()],
        window_critical: 0,
        window_guided: false,
        trace: ExecutionTrace::default(),
        cur_cov: BlockSet::new(),
        active: false,
        critical: BTreeSet::new(),
        critical_set: BlockSet::new(),
        plans: BTreeMap::new(),
        plan_epoch: 0,
        det_cursor: HashMap::new(),
        models: BTreeMap::new(),
        heatmaps: BTreeMap::new(),
        pipeline_runs: Vec::new(),
        first_activation: None,
        ops: OpCounters::default(),
        complete: false,
    };
    c.dry_run(corpus)?;
    while !c.done() {
        let order: Vec<usize> = if c.active {
            let covs: Vec<&BlockSet> = c.pool.iter().map(|s| &s.covered).collect();
            schedule_seeds(&covs, &c.critical)
        } else {
            (0..c.pool.len()).collect()
        };
        let epoch = c.plan_epoch;
        for idx in order {
            c.fuzz_seed(idx)?;
            // A fresh plan reorders the pool right away.
            if c.done() || c.plan_epoch != epoch {
                break;
            }
        }
    }
    c.finish()
}

impl Campaign<'_> {
    fn done(&self) -> bool {
        self.complete || self.execs >= self.cfg_.max_execs
    }

    fn dry_run(&mut self, corpus: &[Vec<u8>]) -> Result<(), OrchestratorError> {
        for input in corpus {
            let mut trace = std::mem::take(&mut self.trace);
            self.program.execute_into(input, self.cfg_.step_limit, &mut trace);
            update_from_trace(&mut self.gc, &mut self.bitmap, &self.edge_dict, &trace);
            let covered: BlockSet = trace.block_seq.iter().copied().collect();
            if trace.crashed {
                let lin = Lineage { exec_id: 0, parent_seed: None, mutations: &[] };
                self.triage(&trace, input, lin)?;
            } else {
                let id = self.pool.len() as u64;
                self.pool.push(SeedEntry { id, bytes: input.clone(), covered, discovered_at: 0 });
            }
            self.trace = trace;
        }
        if self.pool.is_empty() {
            // Every corpus input crashes; keep them fuzzable anyway.
            for input in corpus {
                let covered = self.program.execute(input, self.cfg_.step_limit).block_seq.into_iter().collect();
                let id = self.pool.len() as u64;
                self.pool.push(SeedEntry { id, bytes: input.clone(), covered, discovered_at: 0 });
            }
        }
        self.history.push(0, self.gc.covered_edge_count(), self.gc.covered_block_count());
        Ok(())
    }

    fn fuzz_seed(&mut self, idx: usize) -> Result<(), OrchestratorError> {
        let seed = self.pool[idx].bytes.clone();
        let sid = self.pool[idx].id;
        let tokens = Arc::clone(&self.tokens);
        // (schedule, entries consumed), resumed from where this seed left off.
        let mut cursor: Option<(DeterministicSchedule<'_>, usize)> = None;
        let start_epoch = self.plan_epoch;
        for _ in 0..self.cfg_.iter_limit {
            if self.done() || (self.plan_epoch != start_epoch && !self.plans.contains_key(&sid)) {
                break;
            }
            let plan = if self.active { self.plans.get(&sid) } else { None };
            let (input, muts) = match plan {
                Some(plan) => {
                    let (cur, used) = cursor.get_or_insert_with(|| {
                        let used = self.det_cursor.get(&sid).copied().unwrap_or(0);
                        let mut cur = deterministic_schedule(&seed, &tokens);
                        if used > 0 {
                            cur.nth(used - 1);
                        }
                        (cur, used)
                    });
                    let mut next = None;
                    for m in cur.by_ref() {
                        *used += 1;
                        if should_mutate_position(plan, m.mutator, m.position, &mut self.rng) {
                            next = Some(m);
                            break;
                        }
                    }
                    match next {
                        Some(m) => (apply_mutation(&seed, &m, &tokens)?, vec![m]),
                        None => havoc_step_filtered(&seed, &mut self.rng, &tokens, |m, rng| {
                            should_mutate_position(plan, m.mutator, m.position, rng)
                        }),
                    }
                }
                None => havoc_step(&seed, &mut self.rng, &tokens),
            };
            self.execute_one(&input, sid, &muts)?;
        }
        if let Some((_, used)) = cursor {
            self.det_cursor.insert(sid, used);
        }
        Ok(())
    }

    fn execute_one(&mut self, input: &[u8], parent: u64, muts: &[Mutation]) -> Result<(), OrchestratorError> {
        self.execs += 1;
        let exec_id = self.execs;
        let mut trace = std::mem::take(&mut self.trace);
        self.program.execute_into(input, self.cfg_.step_limit, &mut trace);
        let new = update_from_trace(&mut self.gc, &mut self.bitmap, &self.edge_dict, &trace);
        self.cur_cov = BlockSet::new();
        for &b in &trace.block_seq {
            if self.cur_cov.insert(b) {
                self.window_hits[b.index()] += 1;
            }
        }
        if self.cur_cov.intersects(&self.critical_set) {
            self.window_critical += 1;
        }
        let single = if muts.len() == 1 { Some(muts[0]) } else { None };
        if let Some(log) = self.log.as_mut() {
            let rec = ExecutionRecord {
                exec_id,
                parent_seed: parent,
                mutator: single.map(|m| m.mutator),
                param: single.map_or(muts.len() as i64, |m| m.param as i64),
                position: single.map_or(-1, |m| m.position as i64),
                input_len: input.len(),
                covered_blocks: self.cur_cov.clone(),
                new_coverage: new,
                crashed: trace.crashed,
            };
            log.append(&rec)?;
        }
        if let (Some(m), Mode::Attuzz) = (single, self.cfg_.mode) {
            self.store.push(parent, m, &self.cur_cov);
        }
        if trace.crashed {
            let lin = Lineage { exec_id, parent_seed: Some(parent), mutations: muts };
            self.triage(&trace, input, lin)?;
        } else if new {
            let id = self.pool.len() as u64;
            self.pool.push(SeedEntry {
                id,
                bytes: input.to_vec(),
                covered: self.cur_cov.clone(),
                discovered_at: exec_id,
            });
        }
        self.trace = trace;
        if self.execs.is_multiple_of(self.cfg_.window_execs) {
            self.window_boundary()?;
        }
        Ok(())
    }

    fn triage(&mut self, trace: &ExecutionTrace, input: &[u8], lin: Lineage<'_>) -> Result<(), OrchestratorError> {
        match triage_crash(self.program, self.cfg_.step_limit, &mut self.crash_seen, trace, input, lin) {
            Triage::New(report) => {
                if let Some(dir) = &self.crash_dir {
                    let name = self.program.name_of(report.crash_block);
                    let stem = dir.join(format!("crash_{name}_{}", report.exec_id));
                    let bin = stem.with_extension("bin");
                    std::fs::write(&bin, &report.input).map_err(|e| OrchestratorError::io(&bin, e))?;
                    let txt = stem.with_extension("txt");
                    std::fs::write(&txt, report.describe(self.program)).map_err(|e| OrchestratorError::io(&txt, e))?;
                }
                self.crashes.push(report);
            }
            Triage::Duplicate => {}
            Triage::NonReproducible => self.anomalies += 1,
        }
        Ok(())
    }

    fn close_window(&mut self) {
        let hits = std::mem::replace(&mut self.window_hits, vec![0; self.program.len()]);
        self.windows.push(WindowStats {
            start: self.window_start,
            end: self.execs,
            block_hits: hits,
            critical_hits: self.window_critical,
            guided: self.window_guided,
        });
        self.window_start = self.execs;
        self.window_critical = 0;
        self.window_guided = self.active;
        self.history.push(self.execs, self.gc.covered_edge_count(), self.gc.covered_block_count());
    }

    fn window_boundary(&mut self) -> Result<(), OrchestratorError> {
        self.close_window();
        if self.cfg_.mode == Mode::Attuzz
            && detect_bottleneck(&self.history, self.cfg_.window_execs, self.cfg_.bottleneck_delta)
        {
            self.run_pipeline()?;
            self.window_guided = self.active;
        }
        Ok(())
    }

    fn run_pipeline(&mut self) -> Result<(), OrchestratorError> {
        self.ops.markov += 1;
        let cfg = complete_cfg(&self.cfg, &self.gc);
        let dtmc: Dtmc<f64> = estimate_dtmc(&self.gc, &cfg);
        let covered = self.gc.covered().clone();
        let rewards = solve_rewards(&dtmc, &covered, DEFAULT_TOL, DEFAULT_MAX_ITERS);
        let init = self.program.init();
        let sel = select_critical_blocks(&rewards, &covered, &cfg, &dtmc, init, self.cfg_.k_percent, self.cfg_.k_prime);
        let reach: Vec<f64> = cfg.block_ids().map(|b| hitting_probabilities(&dtmc, b)[init.index()]).collect();
        if sel.is_empty() && covered.len() == self.program.len() {
            self.complete = true;
            return Ok(());
        }

        let seeds: BTreeMap<u64, Vec<u8>> = self.pool.iter().map(|s| (s.id, s.bytes.clone())).collect();
        let opts = DatasetOptions { max_input_len: self.cfg_.max_input_len, max_per_class: self.cfg_.max_per_class };
        let mut trained = Vec::new();
        let mut untrainable = Vec::new();
        self.models.clear();
        for &b in &sel.critical {
            let built = build_dataset_from(self.store.iter(), &seeds, b, &self.tokens, opts, &mut self.rng);
            let (samples, n) = match built {
                Ok(d) if d.0.len() >= 8 => d,
                _ => {
                    untrainable.push(b);
                    continue;
                }
            };
            let tc = crate::attention::TrainConfig { seed: self.rng.gen(), ..self.cfg_.train.clone() };
            self.ops.training += 1;
            match train::<f64>(&samples, n, &tc) {
                Ok((params, metrics)) => {
                    trained.push((b, metrics.clone()));
                    self.models.insert(b, TrainedModel { block: b, params, metrics, dataset_size: samples.len() });
                }
                Err(_) => {
                    self.anomalies += 1;
                    untrainable.push(b);
                }
            }
        }

        let modeled: BTreeSet<BlockId> = self.models.keys().copied().collect();
        self.plans.clear();
        self.heatmaps.clear();
        for seed in &self.pool {
            let covered_crit: BTreeSet<BlockId> =
                modeled.iter().copied().filter(|&b| seed.covered.contains(b)).collect();
            if covered_crit.is_empty() {
                continue;
            }
            let mut maps = Vec::new();
            for &b in &covered_crit {
                let model = &self.models[&b];
                for m in MutatorId::ALL {
                    let samples: Vec<_> = self
                        .store
                        .pair(seed.id, m)
                        .take(self.cfg_.heatmap_samples)
                        .map(|(mu, _)| {
                            let input =
                                apply_mutation(&seed.bytes, &mu, &self.tokens).expect("logged mutation is valid");
                            encode_input(&input, &mu, self.tokens.len(), 0, model.params.shape.n)
                        })
                        .collect();
                    if let Some(h) = extract_heatmap(&model.params, seed.id, m, &samples) {
                        self.ops.heatmaps += 1;
                        maps.push((b, h));
                    }
                }
            }
            self.ops.plans += 1;
            let plan = compute_plan(seed.id, &maps, &covered_crit, self.cfg_.p_hot);
            if !plan.is_empty() {
                self.plans.insert(seed.id, plan);
            }
            self.heatmaps.insert(seed.id, maps);
        }

        self.critical = sel.critical.clone();
        self.critical_set = self.critical.iter().copied().collect();
        self.active = true;
        self.plan_epoch += 1;
        self.first_activation.get_or_insert(self.execs);
        self.pipeline_runs.push(PipelineRun {
            exec: self.execs,
            rewards,
            reach,
            selection: sel,
            trained,
            untrainable,
            plans: self.plans.len(),
        });
        Ok(())
    }

    fn finish(mut self) -> Result<CampaignReport, OrchestratorError> {
        if self.execs > self.window_start {
            self.close_window();
        }
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(CampaignReport {
            mode: self.cfg_.mode,
            rng_seed: self.cfg_.rng_seed,
            execs: self.execs,
            history: self.history,
            windows: self.windows,
            crashes: self.crashes,
            anomalies: self.anomalies,
            pool: self.pool,
            global: self.gc,
            bitmap: self.bitmap,
            ops: self.ops,
            pipeline_runs: self.pipeline_runs,
            first_activation: self.first_activation,
            models: self.models,
            heatmaps: self.heatmaps,
            plans: self.plans,
            complete: self.complete,
        })
    }
}
