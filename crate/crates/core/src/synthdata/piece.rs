use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};

/// Pitch indices `0..DEFAULT_PITCH_RANGE`; index 4 sits on the bottom staff
/// line and 12 on the top one.
pub const DEFAULT_PITCH_RANGE: usize = 17;
const DURATIONS: [f64; 5] = [0.5, 1.0, 1.0, 1.5, 2.0];
const MAX_STEP: i64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub pitch: usize,
    /// Nominal length in beats.
    pub duration: f64,
}

/// Geometry of the unrolled staff, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub line_spacing: usize,
    /// Horizontal advance per beat; each head sits `duration * note_spacing`
    /// after the previous one.
    pub note_spacing: usize,
    /// Distance from the left edge to the first note head (and from the last
    /// head to the right edge).
    pub margin: usize,
    pub head_rx: f64,
    pub head_ry: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            line_spacing: 10,
            note_spacing: 26,
            margin: 100,
            head_rx: 5.5,
            head_ry: 4.5,
        }
    }
}

/// A monophonic piece: note events plus tempo and engraving layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicPiece {
    pub id: u32,
    pub notes: Vec<Note>,
    pub tempo: f64,
    pub layout: Layout,
}

impl SymbolicPiece {
    pub fn new(id: u32, notes: Vec<Note>, tempo: f64) -> Result<Self> {
        if notes.is_empty() {
            return Err(Error::Empty("piece notes"));
        }
        if !(tempo.is_finite() && tempo > 0.0) {
            return Err(Error::InvalidArgument(format!("tempo must be positive, got {tempo}")));
        }
        Ok(Self {
            id,
            notes,
            tempo,
            layout: Layout::default(),
        })
    }

    pub fn with_tempo(&self, tempo: f64) -> Self {
        Self { tempo, ..self.clone() }
    }

    /// Beat position at which each note starts.
    pub fn onset_beats(&self) -> Vec<f64> {
        let mut beat = 0.0;
        self.notes
            .iter()
            .map(|n| {
                let b = beat;
                beat += n.duration;
                b
            })
            .collect()
    }

    pub fn total_beats(&self) -> f64 {
        self.notes.iter().map(|n| n.duration).sum()
    }

    pub fn seconds_per_beat(&self) -> f64 {
        60.0 / self.tempo
    }
}

/// Random-walk melody with durations from a small fixed palette, at 120 bpm.
///
/// `seed` fully determines the piece; `id` is only a label.
pub fn gen_piece(id: u32, seed: u64, note_count: usize, pitch_range: usize) -> Result<SymbolicPiece> {
    if note_count == 0 {
        return Err(Error::InvalidArgument("note_count must be at least 1".into()));
    }
    if pitch_range == 0 {
        return Err(Error::InvalidArgument("pitch_range must be at least 1".into()));
    }
    let mut rng = keyed_rng(seed, Stream::Data, u64::from(id));
    let top = pitch_range as i64 - 1;
    let mut pitch = rng.gen_range(0..=top);
    let mut notes = Vec::with_capacity(note_count);
    for _ in 0..note_count {
        let duration = *DURATIONS.choose(&mut rng).expect("non-empty palette");
        notes.push(Note {
            pitch: pitch as usize,
            duration,
        });
        let step = rng.gen_range(-MAX_STEP..=MAX_STEP);
        pitch += step;
        if pitch < 0 {
            pitch = -pitch;
        }
        if pitch > top {
            pitch = (2 * top - pitch).max(0);
        }
    }
    SymbolicPiece::new(id, notes, 120.0)
}
