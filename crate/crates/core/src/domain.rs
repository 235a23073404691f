//! Fixed geometry of the two modalities.

/// Sheet snippet height in pixels.
pub const SNIPPET_HEIGHT: usize = 180;
/// Sheet snippet width in pixels.
pub const SNIPPET_WIDTH: usize = 200;
/// Log-frequency bins per spectrogram frame.
pub const SPEC_BINS: usize = 92;
/// Frames per spectrogram excerpt.
pub const EXCERPT_FRAMES: usize = 42;
pub const FRAMES_PER_SECOND: f64 = 20.0;
/// Dimension of the joint embedding space.
pub const EMBED_DIM: usize = 32;
/// Background value of sheet images (white).
pub const BACKGROUND: f32 = 1.0;
