use rand::Rng;
use serde::{Deserialize, Serialize};

use super::piece::SymbolicPiece;
use crate::domain::{BACKGROUND, EXCERPT_FRAMES, FRAMES_PER_SECOND, SNIPPET_HEIGHT, SPEC_BINS};
use crate::error::{shape_err, Error, Result};
use crate::rng::{keyed_rng, Stream};

/// Gray value of staff lines; note heads are drawn at 0.
pub const STAFF_LINE_VALUE: f32 = 0.5;
pub const HEAD_VALUE: f32 = 0.0;
/// Fundamental of pitch index `p` lands in bin `FUNDAMENTAL_OFFSET + FUNDAMENTAL_STEP * p`.
pub const FUNDAMENTAL_OFFSET: usize = 6;
pub const FUNDAMENTAL_STEP: usize = 4;
/// Frames of silence rendered after the last note ends.
const TAIL_FRAMES: usize = 10;

/// Row-major single-channel image or spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err("Image::from_vec", height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    /// Columns `[start, start + width)`, zero-filled where they fall outside.
    pub fn columns(&self, start: isize, width: usize, fill: f32) -> Image {
        let mut out = Image::filled(self.height, width, fill);
        for c in 0..width {
            let src = start + c as isize;
            if src < 0 || src >= self.width as isize {
                continue;
            }
            for r in 0..self.height {
                out.data[r * width + c] = self.data[r * self.width + src as usize];
            }
        }
        out
    }
}

/// Timbre used to render spectrograms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundFontProfile {
    pub id: u32,
    /// Amplitude ratio between consecutive harmonics.
    pub rolloff: f64,
    /// Number of partials including the fundamental.
    pub harmonics: usize,
    /// Upper bound of the uniform noise added to every bin while a note sounds.
    pub noise_floor: f64,
    /// Exponential decay rate per second.
    pub decay: f64,
}

/// Fonts 0 to 2 are used for training renders, font 3 is held out for testing.
pub const SOUND_FONTS: [SoundFontProfile; 4] = [
    SoundFontProfile {
        id: 0,
        rolloff: 0.6,
        harmonics: 4,
        noise_floor: 0.02,
        decay: 1.0,
    },
    SoundFontProfile {
        id: 1,
        rolloff: 0.8,
        harmonics: 6,
        noise_floor: 0.03,
        decay: 0.5,
    },
    SoundFontProfile {
        id: 2,
        rolloff: 0.45,
        harmonics: 3,
        noise_floor: 0.01,
        decay: 2.0,
    },
    SoundFontProfile {
        id: 3,
        rolloff: 0.7,
        harmonics: 5,
        noise_floor: 0.025,
        decay: 0.8,
    },
];
pub const TRAIN_FONTS: [u32; 3] = [0, 1, 2];
pub const TEST_FONT: u32 = 3;

pub fn sound_font(id: u32) -> Result<SoundFontProfile> {
    SOUND_FONTS
        .iter()
        .find(|f| f.id == id)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("unknown sound font {id}")))
}

/// The piece engraved on one continuous staff.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledStaff {
    pub image: Image,
    /// Horizontal center of each note head, strictly increasing.
    pub note_x: Vec<usize>,
    /// Vertical center of each note head.
    pub note_y: Vec<f64>,
}

pub fn note_x_positions(piece: &SymbolicPiece) -> Vec<usize> {
    let l = &piece.layout;
    piece
        .onset_beats()
        .iter()
        .map(|&b| l.margin + (b * l.note_spacing as f64).round() as usize)
        .collect()
}

pub fn pitch_y(piece: &SymbolicPiece, pitch: usize) -> f64 {
    let half = piece.layout.line_spacing as f64 / 2.0;
    // middle line (pitch 8) at the vertical center
    SNIPPET_HEIGHT as f64 / 2.0 + (8.0 - pitch as f64) * half
}

/// Five staff lines across the whole width and one filled elliptical head
/// per note.
pub fn render_unrolled_staff(piece: &SymbolicPiece) -> UnrolledStaff {
    let l = piece.layout;
    let note_x = note_x_positions(piece);
    let width = note_x.last().expect("non-empty piece") + l.margin;
    let mut image = Image::filled(SNIPPET_HEIGHT, width, BACKGROUND);
    let center = SNIPPET_HEIGHT / 2;
    for k in 0..5 {
        let y = center + k * l.line_spacing - 2 * l.line_spacing;
        image.data[y * width..(y + 1) * width].fill(STAFF_LINE_VALUE);
    }
    let mut note_y = Vec::with_capacity(piece.notes.len());
    for (note, &cx) in piece.notes.iter().zip(&note_x) {
        let cy = pitch_y(piece, note.pitch);
        note_y.push(cy);
        let (rx, ry) = (l.head_rx, l.head_ry);
        let r0 = (cy - ry).floor().max(0.0) as usize;
        let r1 = ((cy + ry).ceil() as usize).min(SNIPPET_HEIGHT - 1);
        for r in r0..=r1 {
            for c in cx - rx as usize..=cx + rx as usize {
                let (dx, dy) = ((c as f64 - cx as f64) / rx, (r as f64 - cy) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    image.set(r, c, HEAD_VALUE);
                }
            }
        }
    }
    UnrolledStaff { image, note_x, note_y }
}

pub fn fundamental_bin(pitch: usize) -> usize {
    FUNDAMENTAL_OFFSET + FUNDAMENTAL_STEP * pitch
}

/// `round(seconds * 20)` for a beat position at the piece tempo.
pub fn beat_to_frame(beats: f64, tempo: f64) -> usize {
    (beats * 60.0 / tempo * FRAMES_PER_SECOND).round() as usize
}

/// A rendered performance of one piece with one font at the piece tempo.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    /// `SPEC_BINS x frames` log magnitude.
    pub spectrogram: Image,
    pub onset_frames: Vec<usize>,
}

/// Harmonic stacks with exponential decay plus a uniform noise floor while
/// notes sound, mapped through `ln(1 + 10 * magnitude)`.
///
/// Harmonics above the top bin are dropped. The noise is keyed by piece,
/// font and tempo, so the render is a pure function of its arguments.
pub fn render_recording(piece: &SymbolicPiece, font: &SoundFontProfile, seed: u64) -> Recording {
    let onsets: Vec<usize> = piece.onset_beats().iter().map(|&b| beat_to_frame(b, piece.tempo)).collect();
    let end = beat_to_frame(piece.total_beats(), piece.tempo);
    let frames = end + TAIL_FRAMES;
    let mut mag = vec![0.0f64; SPEC_BINS * frames];
    let key = (u64::from(piece.id) << 32) ^ (u64::from(font.id) << 16) ^ piece.tempo.round() as u64;
    let mut rng = keyed_rng(seed, Stream::Data, key);
    for (i, note) in piece.notes.iter().enumerate() {
        let start = onsets[i];
        let stop = onsets.get(i + 1).copied().unwrap_or(end).max(start + 1);
        let f0 = fundamental_bin(note.pitch);
        for t in start..stop {
            let env = (-font.decay * (t - start) as f64 / FRAMES_PER_SECOND).exp();
            for b in 0..SPEC_BINS {
                mag[b * frames + t] += font.noise_floor * rng.gen::<f64>();
            }
            let mut amp = env;
            for h in 1..=font.harmonics {
                let bin = h * f0;
                if bin >= SPEC_BINS {
                    break;
                }
                mag[bin * frames + t] += amp;
                amp *= font.rolloff;
            }
        }
    }
    let data = mag.iter().map(|&m| (10.0 * m).ln_1p() as f32).collect();
    Recording {
        spectrogram: Image {
            height: SPEC_BINS,
            width: frames,
            data,
        },
        onset_frames: onsets,
    }
}

/// The excerpt whose last frame is `onset_frame`, zero before frame 0.
pub fn excerpt_at(recording: &Recording, onset_frame: usize) -> Image {
    let start = onset_frame as isize + 1 - EXCERPT_FRAMES as isize;
    recording.spectrogram.columns(start, EXCERPT_FRAMES, 0.0)
}

/// Excerpt ending at the onset of note `note_index`.
pub fn render_spectrogram_excerpt(
    piece: &SymbolicPiece,
    note_index: usize,
    font: &SoundFontProfile,
    seed: u64,
) -> Result<Image> {
    if note_index >= piece.notes.len() {
        return Err(Error::InvalidArgument(format!(
            "note index {note_index} out of range for {} notes",
            piece.notes.len()
        )));
    }
    let rec = render_recording(piece, font, seed);
    Ok(excerpt_at(&rec, rec.onset_frames[note_index]))
}

#[cfg(test)]
mod tests {
    use super::super::piece::{gen_piece, Note, DEFAULT_PITCH_RANGE};
    use super::*;

    fn piece(pitches: &[usize]) -> SymbolicPiece {
        let notes = pitches.iter().map(|&pitch| Note { pitch, duration: 1.0 }).collect();
        SymbolicPiece::new(0, notes, 120.0).unwrap()
    }

    /// Column runs containing head-valued pixels, as (first, last) pairs.
    fn head_runs(img: &Image) -> Vec<(usize, usize)> {
        let dark: Vec<bool> = (0..img.width)
            .map(|c| (0..img.height).any(|r| img.get(r, c) == HEAD_VALUE))
            .collect();
        let mut runs = Vec::new();
        let mut c = 0;
        while c < dark.len() {
            if dark[c] {
                let s = c;
                while c + 1 < dark.len() && dark[c + 1] {
                    c += 1;
                }
                runs.push((s, c));
            }
            c += 1;
        }
        runs
    }

    #[test]
    fn layout_law() {
        let p = piece(&[5, 5, 6]);
        let staff = render_unrolled_staff(&p);
        assert_eq!(staff.note_y[0], staff.note_y[1]);
        assert_ne!(staff.note_x[0], staff.note_x[1]);
        assert_eq!(staff.note_y[1] - staff.note_y[2], p.layout.line_spacing as f64 / 2.0);
        assert!(staff.note_x.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rendered_heads_match_ground_truth() {
        let p = gen_piece(1, 5, 30, DEFAULT_PITCH_RANGE).unwrap();
        let staff = render_unrolled_staff(&p);
        let runs = head_runs(&staff.image);
        assert_eq!(runs.len(), p.notes.len());
        for ((a, b), &x) in runs.iter().zip(&staff.note_x) {
            assert_eq!(a + b, 2 * x);
        }
        for (i, &x) in staff.note_x.iter().enumerate() {
            let rows: Vec<usize> = (0..staff.image.height).filter(|&r| staff.image.get(r, x) == HEAD_VALUE).collect();
            let mid = (rows[0] + rows[rows.len() - 1]) as f64 / 2.0;
            assert_eq!(mid, staff.note_y[i]);
        }
    }

    #[test]
    fn five_staff_lines() {
        let staff = render_unrolled_staff(&piece(&[0]));
        let lines = (0..staff.image.height).filter(|&r| staff.image.get(r, 0) == STAFF_LINE_VALUE).count();
        assert_eq!(lines, 5);
        assert_eq!(staff.image.width, 200);
    }

    #[test]
    fn silence_gives_zero_excerpt() {
        let p = piece(&[3, 4]);
        let ex = render_spectrogram_excerpt(&p, 0, &SOUND_FONTS[0], 1).unwrap();
        for r in 0..ex.height {
            assert!(ex.row(r)[..EXCERPT_FRAMES - 1].iter().all(|&v| v == 0.0));
        }
        assert!(ex.data.iter().all(|&v| v >= 0.0));
        let last_col_energy: f32 = (0..ex.height).map(|r| ex.get(r, EXCERPT_FRAMES - 1)).sum();
        assert!(last_col_energy > 0.0);
    }

    #[test]
    fn onset_frames_follow_tempo() {
        let notes = vec![
            Note { pitch: 2, duration: 1.5 },
            Note { pitch: 2, duration: 2.5 },
            Note { pitch: 2, duration: 1.0 },
        ];
        let p = SymbolicPiece::new(0, notes, 120.0).unwrap();
        for tempo in [100.0, 120.0] {
            let rec = render_recording(&p.with_tempo(tempo), &SOUND_FONTS[0], 0);
            let expected: Vec<usize> = [0.0, 1.5, 4.0]
                .iter()
                .map(|b: &f64| (b * 60.0 / tempo * 20.0).round() as usize)
                .collect();
            assert_eq!(rec.onset_frames, expected);
        }
        assert_eq!(beat_to_frame(4.0, 120.0), 40);
        assert_eq!(beat_to_frame(4.0, 100.0), 48);
    }

    #[test]
    fn fonts_change_the_excerpt() {
        let p = gen_piece(2, 9, 10, DEFAULT_PITCH_RANGE).unwrap();
        let a = render_spectrogram_excerpt(&p, 5, &SOUND_FONTS[0], 1).unwrap();
        let b = render_spectrogram_excerpt(&p, 5, &SOUND_FONTS[1], 1).unwrap();
        let a2 = render_spectrogram_excerpt(&p, 5, &SOUND_FONTS[0], 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }

    #[test]
    fn harmonics_sit_on_multiples_of_the_fundamental() {
        let font = SoundFontProfile {
            id: 9,
            rolloff: 0.5,
            harmonics: 30,
            noise_floor: 0.0,
            decay: 0.0,
        };
        let p = piece(&[4]);
        let rec = render_recording(&p, &font, 0);
        let f0 = fundamental_bin(4);
        let active: Vec<usize> = (0..SPEC_BINS).filter(|&b| rec.spectrogram.get(b, 0) > 0.0).collect();
        let expected: Vec<usize> = (1..).map(|h| h * f0).take_while(|&b| b < SPEC_BINS).collect();
        assert_eq!(active, expected);
        assert!((rec.spectrogram.get(f0, 0) - (11.0f64).ln() as f32).abs() < 1e-6);
    }

    #[test]
    fn test_font_is_held_out() {
        assert!(!TRAIN_FONTS.contains(&TEST_FONT));
        assert!(sound_font(TEST_FONT).is_ok());
        assert!(sound_font(17).is_err());
    }
}
