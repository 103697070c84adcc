use serde::{Deserialize, Serialize};

/// Evenly spaced confidence levels `{0, 1/G, ..., 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceGrid {
    intervals: usize,
}

impl ConfidenceGrid {
    /// `intervals` is G; the grid has G + 1 levels.
    pub fn new(intervals: usize) -> Option<Self> {
        (intervals >= 1).then_some(Self { intervals })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, level: usize) -> f64 {
        assert!(level <= self.intervals, "grid level {level} out of range");
        if level == self.intervals {
            1.0
        } else {
            level as f64 / self.intervals as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|l| self.value(l)).collect()
    }

    /// Level whose value is exactly `v`, if any.
    pub fn level_of(&self, v: f64) -> Option<usize> {
        (0..self.len()).find(|&l| self.value(l) == v)
    }

    /// Nearest level to `num / den`, ties rounded up. Exact integer arithmetic.
    pub fn nearest_ratio(&self, num: usize, den: usize) -> usize {
        assert!(den > 0 && num <= den);
        let g = self.intervals as u128;
        let (num, den) = (num as u128, den as u128);
        ((2 * num * g + den) / (2 * den)) as usize
    }

    /// Nearest level to `v` in `[0, 1]`, ties rounded up.
    pub fn nearest(&self, v: f64) -> usize {
        let scaled = (v.clamp(0.0, 1.0) * self.intervals as f64 + 0.5).floor();
        (scaled as usize).min(self.intervals)
    }
}
