use std::fmt::Write as _;

use super::model::{ModelParams, Workspace};
use super::EncodedSample;
use crate::mutation::MutatorId;
use crate::Scalar;

/// Mean attention per byte position for one (seed, mutator) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap<T> {
    pub seed_id: u64,
    pub mutator: MutatorId,
    pub heat: Vec<T>,
    pub valid_len: usize,
}

impl<T: Scalar> HeatMap<T> {
    pub fn sum(&self) -> T {
        self.heat.iter().fold(T::zero(), |a, &v| a + v)
    }

    /// Arithmetic mean over valid positions.
    pub fn mean(&self) -> T {
        if self.valid_len == 0 {
            return T::zero();
        }
        let s = self.heat[..self.valid_len].iter().fold(T::zero(), |a, &v| a + v);
        s / T::of(self.valid_len as f64)
    }

    /// Total heat over `range`, clipped to the valid prefix.
    pub fn mass(&self, range: std::ops::Range<usize>) -> T {
        let end = range.end.min(self.valid_len);
        self.heat[range.start.min(end)..end].iter().fold(T::zero(), |a, &v| a + v)
    }
}

/// Averages the attention vectors of `samples`, which should all be
/// mutations of `seed_id` by `mutator`. `None` if there are none.
pub fn extract_heatmap<T: Scalar>(
    params: &ModelParams<T>,
    seed_id: u64,
    mutator: MutatorId,
    samples: &[EncodedSample],
) -> Option<HeatMap<T>> {
    if samples.is_empty() {
        return None;
    }
    let n = params.shape.n;
    let mut ws = Workspace::new(params.shape);
    let mut heat = vec![T::zero(); n];
    for s in samples {
        ws.forward(params, s);
        for (h, &a) in heat.iter_mut().zip(&ws.alpha) {
            *h += a;
        }
    }
    let k = T::of(samples.len() as f64);
    heat.iter_mut().for_each(|h| *h /= k);
    let valid_len = samples.iter().map(|s| s.valid_len).max().unwrap_or(0);
    Some(HeatMap { seed_id, mutator, heat, valid_len })
}

/// `position,heat` rows over valid positions.
pub fn heatmap_csv<T: Scalar>(h: &HeatMap<T>) -> String {
    let mut s = String::from("position,heat\n");
    for (i, v) in h.heat[..h.valid_len].iter().enumerate() {
        writeln!(s, "{i},{}", v.to_f64_lossy()).unwrap();
    }
    s
}
