use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use heatfuzz::attention::{
    build_dataset, encode_input, extract_heatmap, heatmap_csv, load_checkpoint, save_checkpoint, train, DatasetOptions,
};
use heatfuzz::coverage::{load_records, ExecutionRecord, GlobalCoverage};
use heatfuzz::markov::{
    complete_cfg, estimate_dtmc, hitting_probabilities, rewards_csv, select_critical_blocks, solve_rewards,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use heatfuzz::mutation::{apply_mutation, MutatorId, TokenDictionary};
use heatfuzz::orchestrator::{export_stats, run_campaign, FuzzerConfig, Mode};
use heatfuzz::target::{build_cfg, demo_target, parse_target, BlockId, TargetProgram};

#[derive(Parser)]
#[command(name = "heatfuzz", version, about = "Greybox fuzzer with reward-directed, attention-guided mutation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fuzzing campaign.
    Fuzz {
        /// Target file, or the name of a bundled demo target.
        #[arg(long)]
        target: String,
        /// Directory of initial inputs.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_execs: Option<u64>,
        /// `key = value` config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Recompute rewards and critical blocks from a campaign directory.
    Rewards {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier for one block from the record log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Block name or index.
        #[arg(long)]
        block: String,
    },
    /// Extract one heat map with a trained model.
    Heatmap {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_id: u64,
        #[arg(long)]
        mutator: MutatorId,
        /// Model of this block; defaults to the most recently trained one.
        #[arg(long)]
        block: Option<String>,
    },
    /// Execute one input and print its path.
    Replay {
        #[arg(long)]
        target: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = heatfuzz::target::DEFAULT_STEP_LIMIT)]
        step_limit: usize,
    },
    /// Print the summary of a campaign directory.
    Stats {
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Res<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Fuzz { target, corpus, out, mode, seed, max_execs, config, dict } => {
            let program = load_target(&target)?;
            let mut cfg = FuzzerConfig::default();
            if let Some(path) = config {
                let text = read_text(&path)?;
                if let Err(e) = cfg.apply_text(&text) {
                    return usage(format!("{}: {e}", path.display()));
                }
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            if let Some(n) = max_execs {
                cfg.max_execs = n;
            }
            if dict.is_some() {
                cfg.dict = dict;
            }
            if let Err(e) = cfg.validate() {
                return usage(e.to_string());
            }
            let inputs = read_corpus(&corpus)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let report = run_campaign(&cfg, &program, &inputs, Some(&out)).map_err(anyhow::Error::from)?;
            export_stats(&report, &cfg, &program, &out).map_err(anyhow::Error::from)?;
            print!("{}", read_text(&out.join("report.txt"))?);
            Ok(())
        }
        Cmd::Rewards { out } => rewards(&out),
        Cmd::Train { out, block } => train_block(&out, &block),
        Cmd::Heatmap { out, seed_id, mutator, block } => heatmap(&out, seed_id, mutator, block.as_deref()),
        Cmd::Replay { target, input, step_limit } => {
            let program = load_target(&target)?;
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let t = program.execute(&bytes, step_limit);
            let path: Vec<&str> = t.block_seq.iter().map(|&b| program.name_of(b)).collect();
            println!("path = {}", path.join(" "));
            println!("crashed = {}", t.crashed);
            println!("termination = {:?}", t.termination);
            Ok(())
        }
        Cmd::Stats { out } => {
            print!("{}", read_text(&out.join("report.txt"))?);
            let cov = read_text(&out.join("coverage.csv"))?;
            if let Some(last) = cov.lines().skip(1).last() {
                println!("last coverage row (exec_count,edges,blocks) = {last}");
            }
            let crashes = out.join("crashes");
            if crashes.is_dir() {
                let n = fs::read_dir(&crashes)
                    .map_err(anyhow::Error::from)?
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "bin"))
                    .count();
                println!("crash files = {n}");
            }
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Res<String> {
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_target(spec: &str) -> Res<TargetProgram> {
    let path = Path::new(spec);
    if path.exists() {
        let text = read_text(path)?;
        return Ok(parse_target(&text).with_context(|| format!("parsing {spec}"))?);
    }
    match demo_target(spec) {
        Some(p) => Ok(p),
        None => usage(format!("no target file or bundled target named {spec:?}")),
    }
}

fn read_corpus(dir: &Path) -> Res<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus {}", dir.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let inputs = paths
        .iter()
        .map(|p| fs::read(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if inputs.is_empty() {
        return usage(format!("corpus directory {} has no files", dir.display()));
    }
    Ok(inputs)
}

/// Target and config saved by a previous `fuzz` run.
fn load_campaign(out: &Path) -> Res<(TargetProgram, FuzzerConfig)> {
    let program = parse_target(&read_text(&out.join("target.tgt"))?).context("parsing target.tgt")?;
    let cfg = FuzzerConfig::from_text(&read_text(&out.join("config.txt"))?).context("parsing config.txt")?;
    Ok((program, cfg))
}

fn load_dict(cfg: &FuzzerConfig) -> Res<TokenDictionary> {
    Ok(match &cfg.dict {
        Some(p) => TokenDictionary::load(p).map_err(anyhow::Error::from)?,
        None => TokenDictionary::empty(),
    })
}

fn load_seeds(out: &Path) -> Res<BTreeMap<u64, Vec<u8>>> {
    let dir = out.join("queue");
    let mut seeds = BTreeMap::new();
    for e in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e.map_err(anyhow::Error::from)?.path();
        let id =
            p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.strip_prefix("seed_")).and_then(|s| s.parse().ok());
        if let Some(id) = id {
            seeds.insert(id, fs::read(&p).with_context(|| format!("reading {}", p.display()))?);
        }
    }
    Ok(seeds)
}

fn load_log(out: &Path) -> Res<Vec<ExecutionRecord>> {
    let loaded = load_records(&out.join("records.log"), false).map_err(anyhow::Error::from)?;
    for (line, msg) in &loaded.skipped {
        eprintln!("warning: skipped records.log line {line}: {msg}");
    }
    Ok(loaded.records)
}

fn resolve_block(program: &TargetProgram, name: &str) -> Res<BlockId> {
    match program.resolve(name) {
        Some(b) => Ok(b),
        None => usage(format!("unknown block {name:?}")),
    }
}

fn rewards(out: &Path) -> Res<()> {
    let (program, cfg) = load_campaign(out)?;
    let mut gc = GlobalCoverage::new(program.len());
    gc.mark_covered(program.init());
    let text = read_text(&out.join("edge_counts.csv"))?;
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<u64>().ok();
        let (Some(a), Some(b), Some(n)) =
            (f.first().copied().and_then(parse), f.get(1).copied().and_then(parse), f.get(2).copied().and_then(parse))
        else {
            return Err(anyhow!("edge_counts.csv line {}: malformed", i + 1).into());
        };
        if a as usize >= program.len() || b as usize >= program.len() {
            return Err(anyhow!("edge_counts.csv line {}: block out of range", i + 1).into());
        }
        gc.add_edge_count(BlockId(a as u32), BlockId(b as u32), n);
    }
    let cfg_graph = complete_cfg(&build_cfg(&program), &gc);
    let dtmc = estimate_dtmc::<f64>(&gc, &cfg_graph);
    let covered = gc.covered().clone();
    let rewards = solve_rewards(&dtmc, &covered, DEFAULT_TOL, DEFAULT_MAX_ITERS);
    let init = program.init();
    let sel = select_critical_blocks(&rewards, &covered, &cfg_graph, &dtmc, init, cfg.k_percent, cfg.k_prime);
    let reach: Vec<f64> = program.block_ids().map(|b| hitting_probabilities(&dtmc, b)[init.index()]).collect();
    let csv = rewards_csv(&rewards, &covered, &reach, &sel.critical);
    fs::write(out.join("rewards.csv"), &csv).context("writing rewards.csv")?;
    print!("{csv}");
    if !rewards.converged {
        eprintln!("warning: value iteration stopped at residual {:e}", rewards.residual);
    }
    let names =
        |s: &std::collections::BTreeSet<BlockId>| s.iter().map(|&b| program.name_of(b)).collect::<Vec<_>>().join(" ");
    println!("targets = {}", names(&sel.target_uncovered));
    println!("critical = {}", names(&sel.critical));
    Ok(())
}

fn train_block(out: &Path, block: &str) -> Res<()> {
    let (program, cfg) = load_campaign(out)?;
    let b = resolve_block(&program, block)?;
    let dict = load_dict(&cfg)?;
    let records = load_log(out)?;
    let seeds = load_seeds(out)?;
    let opts = DatasetOptions { max_input_len: cfg.max_input_len, max_per_class: cfg.max_per_class };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (samples, n) = build_dataset(&records, &seeds, b, &dict, opts, &mut rng).map_err(anyhow::Error::from)?;
    let (params, m) = train::<f64>(&samples, n, &cfg.train).map_err(anyhow::Error::from)?;
    let path = out.join(format!("model_{}.bin", program.name_of(b)));
    save_checkpoint(&params, &path).map_err(anyhow::Error::from)?;
    save_checkpoint(&params, &out.join("model.bin")).map_err(anyhow::Error::from)?;
    println!("samples = {}", samples.len());
    println!("train_acc = {:.4}", m.train_acc);
    println!("holdout_acc = {:.4}", m.holdout_acc);
    println!("final_loss = {:.6}", m.loss_curve.last().copied().unwrap_or(f64::NAN));
    println!("model = {}", path.display());
    Ok(())
}

fn heatmap(out: &Path, seed_id: u64, mutator: MutatorId, block: Option<&str>) -> Res<()> {
    let (program, cfg) = load_campaign(out)?;
    let model_path = match block {
        Some(name) => out.join(format!("model_{}.bin", program.name_of(resolve_block(&program, name)?))),
        None => out.join("model.bin"),
    };
    let params = load_checkpoint::<f64>(&model_path).map_err(anyhow::Error::from)?;
    let dict = load_dict(&cfg)?;
    let seeds = load_seeds(out)?;
    let Some(seed) = seeds.get(&seed_id) else {
        return usage(format!("no seed with id {seed_id} in queue/"));
    };
    let samples: Vec<_> = load_log(out)?
        .iter()
        .filter(|r| r.parent_seed == seed_id && r.mutator == Some(mutator))
        .filter_map(|r| {
            let m = r.mutation()?;
            let input = apply_mutation(seed, &m, &dict).ok()?;
            Some(encode_input(&input, &m, dict.len(), 0, params.shape.n))
        })
        .take(cfg.heatmap_samples)
        .collect();
    let Some(h) = extract_heatmap(&params, seed_id, mutator, &samples) else {
        return Err(anyhow!("no records for seed {seed_id} and mutator {mutator}").into());
    };
    let csv = heatmap_csv(&h);
    let path = out.join(format!("heatmap_{seed_id}_{}.csv", mutator.name()));
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}
