/// Consecutive-difference trigger: alarm when `|P(t) - P(t-1)| >= h1`.
#[derive(Debug, Clone)]
pub struct ThresholdDetector {
    pub h1: f64,
    prev: Option<f64>,
}

impl ThresholdDetector {
    pub fn new(h1: f64) -> Self {
        Self { h1, prev: None }
    }

    pub(crate) fn statistic(prev: Option<f64>, now: f64) -> f64 {
        prev.map_or(0.0, |p| (now - p).abs())
    }

    pub fn step(&mut self, p_measured: f64) -> bool {
        let had_prev = self.prev.is_some();
        let s = Self::statistic(self.prev, p_measured);
        self.prev = Some(p_measured);
        had_prev && s >= self.h1
    }

    pub fn last(&self) -> Option<f64> {
        self.prev
    }
}
