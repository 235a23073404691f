//! Pairwise ranking loss, Adam, the plateau learning-rate schedule and the
//! training loop.

mod adam;
mod loss;
mod schedule;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use loss::{cosine_score, hinge_terms, ranking_loss, score_matrix, RankingLoss};
pub use schedule::{PlateauSchedule, ScheduleEvent};
pub use trainer::{
    batch_ranges, distinct_note_order, train, validation_loss, EpochLog, StopReason, TrainConfig, TrainOutcome, Trainer,
};
