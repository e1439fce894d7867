#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Strict improvement; the counter was reset.
    Improved,
    Continue,
    Stop,
}

/// Patience counter over dev WER (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, dev_wer: f64) -> StopDecision {
        if self.best.is_none_or(|b| dev_wer < b) {
            self.best = Some(dev_wer);
            self.since_improvement = 0;
            return StopDecision::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_stops_after_patience() {
        let mut es = EarlyStopping::new(30);
        assert_eq!(es.observe(0.5), StopDecision::Improved);
        for _ in 0..29 {
            assert_eq!(es.observe(0.5), StopDecision::Continue);
        }
        assert_eq!(es.observe(0.6), StopDecision::Stop);
    }

    #[test]
    fn late_improvement_resets() {
        let mut es = EarlyStopping::new(30);
        es.observe(0.5);
        for _ in 0..28 {
            es.observe(0.7);
        }
        assert_eq!(es.observe(0.4), StopDecision::Improved);
        assert_eq!(es.since_improvement, 0);
        let mut es = EarlyStopping::new(3);
        for k in 0..100 {
            assert_eq!(es.observe(1.0 / (k + 1) as f64), StopDecision::Improved);
        }
    }
}
