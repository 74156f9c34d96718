/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    /// Strictly below every earlier loss; keep these parameters.
    Improved,
    Stale,
    /// `patience` consecutive epochs without improvement.
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        match self.best {
            Some((_, b)) if loss >= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Observation::Exhausted
                } else {
                    Observation::Stale
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                Observation::Improved
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_after_epoch_three_stops_at_twenty_three() {
        let mut es = EarlyStopping::new(20);
        let losses = |e: usize| if e <= 3 { 1.0 / e as f64 } else { 1.0 / 3.0 };
        let mut stopped = None;
        for epoch in 1..=60 {
            if es.observe(epoch, losses(epoch)) == Observation::Exhausted {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(23));
        assert_eq!(es.best_epoch(), Some(3));
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.observe(1, 1.0), Observation::Improved);
        assert_eq!(es.observe(2, 1.5), Observation::Stale);
        assert_eq!(es.observe(3, 0.5), Observation::Improved);
        assert_eq!(es.observe(4, 0.5), Observation::Stale);
        assert_eq!(es.observe(5, 0.7), Observation::Exhausted);
        assert_eq!(es.best_loss(), Some(0.5));
    }
}
