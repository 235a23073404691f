/// Outcome of feeding one validation loss to the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleEvent {
    Improved,
    Stale,
    Halved,
    /// The final halving triggered; training should stop.
    Exhausted,
}

/// Halves the learning rate after `patience` epochs without improvement of
/// the best validation loss, and reports exhaustion on the last halving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub initial_lr: f64,
    pub patience: u32,
    pub max_halvings: u32,
    /// Smallest decrease of the best loss that counts as improvement.
    pub min_delta: f64,
    pub best: f64,
    pub stale: u32,
    pub halvings: u32,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, patience: u32, max_halvings: u32, min_delta: f64) -> Self {
        Self {
            initial_lr,
            patience,
            max_halvings,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
            halvings: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr / 2f64.powi(self.halvings as i32)
    }

    pub fn exhausted(&self) -> bool {
        self.halvings >= self.max_halvings
    }

    pub fn observe(&mut self, val_loss: f64) -> ScheduleEvent {
        if val_loss <= self.best - self.min_delta || (self.best.is_infinite() && val_loss.is_finite()) {
            self.best = val_loss;
            self.stale = 0;
            return ScheduleEvent::Improved;
        }
        self.stale += 1;
        if self.stale < self.patience {
            return ScheduleEvent::Stale;
        }
        self.stale = 0;
        self.halvings += 1;
        if self.exhausted() {
            ScheduleEvent::Exhausted
        } else {
            ScheduleEvent::Halved
        }
    }

    /// Learning rate after replaying a whole validation history.
    pub fn replay(initial_lr: f64, patience: u32, max_halvings: u32, min_delta: f64, history: &[f64]) -> f64 {
        let mut s = Self::new(initial_lr, patience, max_halvings, min_delta);
        for &v in history {
            if s.observe(v) == ScheduleEvent::Exhausted {
                break;
            }
        }
        s.lr()
    }
}
