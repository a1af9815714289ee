use std::collections::BTreeSet;

use crate::mutation::Mutation;
use crate::target::{BlockId, ExecutionTrace, TargetProgram};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashReport {
    pub crash_block: BlockId,
    pub input: Vec<u8>,
    pub exec_id: u64,
    pub parent_seed: Option<u64>,
    pub mutations: Vec<Mutation>,
}

impl CrashReport {
    pub fn describe(&self, program: &TargetProgram) -> String {
        let muts: Vec<String> = self.mutations.iter().map(ToString::to_string).collect();
        format!(
            "block = {}\nexec_id = {}\nparent_seed = {}\nmutations = {}\ninput_len = {}\n",
            program.name_of(self.crash_block),
            self.exec_id,
            self.parent_seed.map_or("-".to_string(), |s| s.to_string()),
            muts.join(" "),
            self.input.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Triage {
    New(CrashReport),
    Duplicate,
    /// Replaying the input did not crash; not counted.
    NonReproducible,
}

/// Who produced a crashing input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lineage<'a> {
    pub exec_id: u64,
    pub parent_seed: Option<u64>,
    pub mutations: &'a [Mutation],
}

/// Deduplicates by crash block. The input is replayed once before a new
/// report is issued.
pub fn triage_crash(
    program: &TargetProgram,
    step_limit: usize,
    seen: &mut BTreeSet<BlockId>,
    trace: &ExecutionTrace,
    input: &[u8],
    lineage: Lineage<'_>,
) -> Triage {
    debug_assert!(trace.crashed);
    let block = trace.last();
    if seen.contains(&block) {
        return Triage::Duplicate;
    }
    let replay = program.execute(input, step_limit);
    if !replay.crashed || replay.last() != block {
        return Triage::NonReproducible;
    }
    seen.insert(block);
    Triage::New(CrashReport {
        crash_block: block,
        input: input.to_vec(),
        exec_id: lineage.exec_id,
        parent_seed: lineage.parent_seed,
        mutations: lineage.mutations.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{demo_target, motivating_input};

    #[test]
    fn dedup_and_replay() {
        let p = demo_target("motivating").unwrap();
        let input = motivating_input(200, -1, -10, b"XYZ");
        let t = p.execute(&input, 100);
        let mut seen = BTreeSet::new();
        let lin = Lineage { exec_id: 3, parent_seed: Some(0), mutations: &[] };
        let Triage::New(r) = triage_crash(&p, 100, &mut seen, &t, &input, lin) else { panic!() };
        assert_eq!(p.name_of(r.crash_block), "L8");
        assert!(p.execute(&r.input, 100).crashed);
        assert_eq!(triage_crash(&p, 100, &mut seen, &t, &input, lin), Triage::Duplicate);
    }

    #[test]
    fn mismatched_input_is_not_counted() {
        let p = demo_target("motivating").unwrap();
        let t = p.execute(&motivating_input(200, -1, -10, b"X"), 100);
        let mut seen = BTreeSet::new();
        let lin = Lineage { exec_id: 0, parent_seed: None, mutations: &[] };
        assert_eq!(triage_crash(&p, 100, &mut seen, &t, &[0; 16], lin), Triage::NonReproducible);
        assert!(seen.is_empty());
    }
}
