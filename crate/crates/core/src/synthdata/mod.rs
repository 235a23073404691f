//! Deterministic toy corpus of sheet/audio correspondences.
//!
//! A piece is a random-walk melody. Its score is engraved as one unrolled
//! staff of elliptical note heads; its performances are harmonic-stack
//! spectrograms rendered with a few timbre profiles and tempos. Every note
//! yields a snippet centered on its head and an excerpt ending at its onset.

mod augment;
mod dataset;
mod piece;
mod render;

pub use augment::{
    augment_image, cut_sheet_snippet, cut_sheet_snippet_into, AugmentParams, AugmentToggles, MAX_SHIFT, SCALE_RANGE,
};
pub use dataset::{
    build_dataset, build_dataset_with_plan, CorrespondencePair, Dataset, DatasetConfig, PairRecord, PieceData,
    RecordingData, Split, SplitKind, SplitPlan, DATASET_FORMAT, REFERENCE_TEMPO, TEMPO_GRID,
};
pub use piece::{gen_piece, Layout, Note, SymbolicPiece, DEFAULT_PITCH_RANGE};
pub use render::{
    beat_to_frame, excerpt_at, fundamental_bin, note_x_positions, pitch_y, render_recording,
    render_spectrogram_excerpt, render_unrolled_staff, sound_font, Image, Recording, SoundFontProfile,
    UnrolledStaff, HEAD_VALUE, SOUND_FONTS, STAFF_LINE_VALUE, TEST_FONT, TRAIN_FONTS,
};
