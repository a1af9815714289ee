use std::fmt::Write as _;
use std::path::Path;

use super::{CampaignReport, FuzzerConfig, OrchestratorError};
use crate::attention::{heatmap_csv, params_to_bytes};
use crate::guidance::plan_csv;
use crate::markov::rewards_csv;
use crate::target::TargetProgram;

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), OrchestratorError> {
    std::fs::write(path, data).map_err(|e| OrchestratorError::io(path, e))
}

/// `critical_ratio.csv`: per-window share of executions that covered a
/// critical block.
pub fn critical_ratio_csv(report: &CampaignReport) -> String {
    let mut s = String::from("window_start,window_end,execs,critical_hits,ratio,guided\n");
    for w in &report.windows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            w.start,
            w.end,
            w.execs(),
            w.critical_hits,
            w.critical_ratio(),
            w.guided as u8
        )
        .unwrap();
    }
    s
}

/// Plain-text summary. Contains no timings, so equal campaigns give equal
/// reports.
pub fn report_text(report: &CampaignReport, program: &TargetProgram) -> String {
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "mode = {}", report.mode).unwrap();
    writeln!(w, "rng_seed = {}", report.rng_seed).unwrap();
    writeln!(w, "execs = {}", report.execs).unwrap();
    writeln!(w, "blocks_covered = {}/{}", report.global.covered_block_count(), program.len()).unwrap();
    writeln!(w, "edges_covered = {}", report.global.covered_edge_count()).unwrap();
    writeln!(w, "complete = {}", report.complete).unwrap();
    writeln!(w, "pool_size = {}", report.pool.len()).unwrap();
    writeln!(w, "crashes = {}", report.crashes.len()).unwrap();
    for c in &report.crashes {
        writeln!(w, "crash {} at exec {}", program.name_of(c.crash_block), c.exec_id).unwrap();
    }
    writeln!(w, "anomalies = {}", report.anomalies).unwrap();
    match report.first_activation {
        Some(e) => writeln!(w, "first_activation = {e}").unwrap(),
        None => writeln!(w, "first_activation = -").unwrap(),
    }
    let o = report.ops;
    writeln!(w, "ops = markov:{} training:{} heatmaps:{} plans:{}", o.markov, o.training, o.heatmaps, o.plans).unwrap();
    for run in &report.pipeline_runs {
        let names = |it: &mut dyn Iterator<Item = crate::target::BlockId>| {
            it.map(|b| program.name_of(b).to_string()).collect::<Vec<_>>().join(" ")
        };
        writeln!(
            w,
            "pipeline at {}: targets [{}] critical [{}] trained [{}] untrainable [{}] plans {}",
            run.exec,
            names(&mut run.selection.target_uncovered.iter().copied()),
            names(&mut run.selection.critical.iter().copied()),
            names(&mut run.trained.iter().map(|t| t.0)),
            names(&mut run.untrainable.iter().copied()),
            run.plans
        )
        .unwrap();
    }
    for (b, m) in &report.models {
        writeln!(
            w,
            "model {}: samples {} train_acc {:.4} holdout_acc {:.4}",
            program.name_of(*b),
            m.dataset_size,
            m.metrics.train_acc,
            m.metrics.holdout_acc
        )
        .unwrap();
    }
    s
}

/// Writes campaign statistics under `dir`. Crashes and the record log are
/// written by the campaign itself.
pub fn export_stats(
    report: &CampaignReport,
    config: &FuzzerConfig,
    program: &TargetProgram,
    dir: &Path,
) -> Result<(), OrchestratorError> {
    let queue = dir.join("queue");
    std::fs::create_dir_all(&queue).map_err(|e| OrchestratorError::io(&queue, e))?;
    write(&dir.join("coverage.csv"), report.history.to_csv())?;
    write(&dir.join("critical_ratio.csv"), critical_ratio_csv(report))?;
    let mut edges = String::from("from,to,count\n");
    for (f, t, n) in report.global.edges() {
        writeln!(edges, "{},{},{n}", f.0, t.0).unwrap();
    }
    write(&dir.join("edge_counts.csv"), edges)?;
    write(&dir.join("bitmap.bin"), report.bitmap.to_bytes())?;
    for s in &report.pool {
        write(&queue.join(format!("seed_{}.bin", s.id)), &s.bytes)?;
    }
    write(&dir.join("target.tgt"), program.to_string())?;
    write(&dir.join("config.txt"), config.to_text())?;
    if let Some(run) = report.pipeline_runs.last() {
        let covered = report.global.covered();
        write(&dir.join("rewards.csv"), rewards_csv(&run.rewards, covered, &run.reach, &run.selection.critical))?;
    }
    for (seed, maps) in &report.heatmaps {
        let single = maps.iter().map(|(b, _)| *b).collect::<std::collections::BTreeSet<_>>().len() == 1;
        for (b, h) in maps {
            let name = if single {
                format!("heatmap_{seed}_{}.csv", h.mutator.name())
            } else {
                format!("heatmap_{seed}_{}_{}.csv", h.mutator.name(), program.name_of(*b))
            };
            write(&dir.join(name), heatmap_csv(h))?;
        }
    }
    for (seed, plan) in &report.plans {
        write(&dir.join(format!("plan_{seed}.csv")), plan_csv(plan, |b| program.name_of(b).to_string()))?;
    }
    for (b, m) in &report.models {
        write(&dir.join(format!("model_{}.bin", program.name_of(*b))), params_to_bytes(&m.params))?;
    }
    if let Some(m) = report.models.values().next() {
        write(&dir.join("model.bin"), params_to_bytes(&m.params))?;
    }
    write(&dir.join("report.txt"), report_text(report, program))
}
