use std::fmt::Write as _;

/// Coverage snapshots at window boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageHistory {
    rows: Vec<HistoryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryRow {
    pub exec_count: u64,
    pub edges: usize,
    pub blocks: usize,
}

impl CoverageHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Panics if `exec_count` does not increase.
    pub fn push(&mut self, exec_count: u64, edges: usize, blocks: usize) {
        if let Some(last) = self.rows.last() {
            assert!(exec_count > last.exec_count, "history exec counts must increase");
        }
        self.rows.push(HistoryRow { exec_count, edges, blocks });
    }

    pub fn rows(&self) -> &[HistoryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("exec_count,edges,blocks\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.exec_count, r.edges, r.blocks).unwrap();
        }
        s
    }
}

/// True iff relative edge growth over the last window is below `delta`:
/// `(now - before) / max(before, 1) < delta`, where `before` is the newest
/// row at least `window_execs` older than the latest one.
pub fn detect_bottleneck(history: &CoverageHistory, window_execs: u64, delta: f64) -> bool {
    let Some(now) = history.last() else { return false };
    let Some(before) = history.rows.iter().rev().find(|r| r.exec_count + window_execs <= now.exec_count) else {
        return false;
    };
    let growth = now.edges.saturating_sub(before.edges) as f64 / before.edges.max(1) as f64;
    growth < delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(rows: &[(u64, usize)]) -> CoverageHistory {
        let mut h = CoverageHistory::new();
        for &(e, n) in rows {
            h.push(e, n, 0);
        }
        h
    }

    #[test]
    fn thresholds() {
        assert!(detect_bottleneck(&h(&[(0, 100), (10, 104)]), 10, 0.05));
        assert!(!detect_bottleneck(&h(&[(0, 100), (10, 106)]), 10, 0.05));
        assert!(!detect_bottleneck(&h(&[(0, 0), (10, 1)]), 10, 0.05));
        assert!(detect_bottleneck(&h(&[(0, 0), (10, 0)]), 10, 0.05));
    }

    #[test]
    fn needs_a_full_window() {
        assert!(!detect_bottleneck(&h(&[(0, 100)]), 10, 0.05));
        assert!(!detect_bottleneck(&h(&[(0, 100), (5, 100)]), 10, 0.05));
    }

    #[test]
    #[should_panic]
    fn exec_counts_increase() {
        h(&[(5, 1), (5, 2)]);
    }
}
