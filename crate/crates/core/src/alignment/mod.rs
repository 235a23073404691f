//! Audio-to-sheet alignment: window sequences over an unrolled staff and a
//! recording, the cross-modal cost matrix, DTW and a linear baseline, and
//! normalized alignment errors.

use serde::{Deserialize, Serialize};

use crate::domain::{EXCERPT_FRAMES, SNIPPET_WIDTH};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::synthdata::{cut_sheet_snippet, excerpt_at, AugmentParams, Image, Recording, UnrolledStaff};
use crate::tensor::Matrix;

pub const DEFAULT_HOP_IMAGE: usize = 50;
pub const DEFAULT_HOP_AUDIO: usize = 10;
/// Width of one printed page in staff pixels.
pub const DEFAULT_REFERENCE_WIDTH: f64 = 835.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub hop_image: usize,
    pub hop_audio: usize,
    pub reference_width: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            hop_image: DEFAULT_HOP_IMAGE,
            hop_audio: DEFAULT_HOP_AUDIO,
            reference_width: DEFAULT_REFERENCE_WIDTH,
        }
    }
}

/// Number of full windows of `window` over `len` with stride `hop`.
pub fn window_count(len: usize, window: usize, hop: usize) -> Result<usize> {
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be at least 1".into()));
    }
    if len < window {
        return Err(Error::InvalidArgument(format!("sequence of {len} shorter than one window of {window}")));
    }
    Ok((len - window) / hop + 1)
}

/// Piecewise linear interpolation of `ys` over increasing `xs`, clamped at
/// both ends.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Window positions of both modalities and the ground truth of each audio
/// window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequences {
    /// Left edge of each sheet window.
    pub image_starts: Vec<usize>,
    /// First frame of each audio window.
    pub audio_starts: Vec<usize>,
    /// True staff x-pixel at each audio window's last frame.
    pub true_x: Vec<f64>,
}

pub fn build_sequences(staff: &UnrolledStaff, recording: &Recording, config: &AlignConfig) -> Result<Sequences> {
    if staff.note_x.len() != recording.onset_frames.len() || staff.note_x.is_empty() {
        return Err(shape_err("note ground truth", staff.note_x.len(), recording.onset_frames.len()));
    }
    let n_img = window_count(staff.image.width, SNIPPET_WIDTH, config.hop_image)?;
    let n_aud = window_count(recording.spectrogram.width, EXCERPT_FRAMES, config.hop_audio)?;
    let onsets: Vec<f64> = recording.onset_frames.iter().map(|&f| f as f64).collect();
    let xs: Vec<f64> = staff.note_x.iter().map(|&x| x as f64).collect();
    let audio_starts: Vec<usize> = (0..n_aud).map(|c| c * config.hop_audio).collect();
    let true_x = audio_starts
        .iter()
        .map(|&s| interpolate(&onsets, &xs, (s + EXCERPT_FRAMES - 1) as f64))
        .collect();
    Ok(Sequences {
        image_starts: (0..n_img).map(|r| r * config.hop_image).collect(),
        audio_starts,
        true_x,
    })
}

impl Sequences {
    pub fn image_center(&self, row: usize) -> f64 {
        (self.image_starts[row] + SNIPPET_WIDTH / 2) as f64
    }

    pub fn image_windows(&self, staff: &UnrolledStaff) -> Result<Vec<Image>> {
        self.image_starts
            .iter()
            .map(|&s| cut_sheet_snippet(&staff.image, s + SNIPPET_WIDTH / 2, &AugmentParams::IDENTITY))
            .collect()
    }

    pub fn audio_windows(&self, recording: &Recording) -> Vec<Image> {
        self.audio_starts
            .iter()
            .map(|&s| excerpt_at(recording, s + EXCERPT_FRAMES - 1))
            .collect()
    }
}

/// Cosine distances between sheet windows (rows) and audio windows (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if data.len() != rows * cols {
            return Err(shape_err("cost matrix", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cost matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn path_cost(&self, path: &AlignmentPath) -> f64 {
        path.steps.iter().map(|&(r, c)| self.get(r, c)).sum()
    }

    /// Whitespace separated rows, one line per sheet window.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| format!("{:.6}", self.get(r, c))).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// `1 - x_r . y_c`, clamped to `[0, 2]`.
pub fn cost_matrix<T: Scalar>(image: &Matrix<T>, audio: &Matrix<T>) -> Result<CostMatrix> {
    if image.cols() != audio.cols() {
        return Err(shape_err("cost matrix embeddings", image.cols(), audio.cols()));
    }
    let mut data = Vec::with_capacity(image.rows() * audio.rows());
    for x in image.iter_rows() {
        for y in audio.iter_rows() {
            let d: f64 = x.iter().zip(y).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            data.push((1.0 - d).clamp(0.0, 2.0));
        }
    }
    CostMatrix::from_vec(image.rows(), audio.rows(), data)
}

/// Monotone path of `(row, col)` cells from the first to the last cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Checks start, end and step set for an `rows x cols` matrix.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("alignment path: {m}")));
        if self.steps.first() != Some(&(0, 0)) {
            return bad("does not start at (0, 0)");
        }
        if self.steps.last() != Some(&(rows - 1, cols - 1)) {
            return bad("does not end at the last cell");
        }
        for w in self.steps.windows(2) {
            let (dr, dc) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((dr, dc), (1, 0) | (0, 1) | (1, 1)) {
                return bad("illegal step");
            }
        }
        Ok(())
    }

    /// Matched row for each column, the lower median when several rows match.
    pub fn row_per_column(&self, cols: usize) -> Vec<usize> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); cols];
        for &(r, c) in &self.steps {
            rows[c].push(r);
        }
        rows.iter().map(|rs| rs[(rs.len() - 1) / 2]).collect()
    }
}

/// Minimum-cost monotone path under unit-weight steps `(1,0)`, `(0,1)` and
/// `(1,1)`. Ties in the backtrace go to the diagonal, then the row step.
pub fn dtw(cost: &CostMatrix) -> (AlignmentPath, f64) {
    let (rows, cols) = (cost.rows, cost.cols);
    let mut acc = vec![f64::INFINITY; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let best = if r == 0 && c == 0 {
                0.0
            } else {
                let diag = if r > 0 && c > 0 { acc[(r - 1) * cols + c - 1] } else { f64::INFINITY };
                let up = if r > 0 { acc[(r - 1) * cols + c] } else { f64::INFINITY };
                let left = if c > 0 { acc[r * cols + c - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[r * cols + c] = best + cost.get(r, c);
        }
    }
    let total = acc[rows * cols - 1];
    let (mut r, mut c) = (rows - 1, cols - 1);
    let mut steps = vec![(r, c)];
    while (r, c) != (0, 0) {
        let at = |r: usize, c: usize| acc[r * cols + c];
        (r, c) = if r == 0 {
            (r, c - 1)
        } else if c == 0 {
            (r - 1, c)
        } else {
            let (d, u, l) = (at(r - 1, c - 1), at(r - 1, c), at(r, c - 1));
            if d <= u && d <= l {
                (r - 1, c - 1)
            } else if u <= l {
                (r - 1, c)
            } else {
                (r, c - 1)
            }
        };
        steps.push((r, c));
    }
    steps.reverse();
    (AlignmentPath { steps }, total)
}

/// Row of each column on the straight diagonal: `round(c (R-1) / (C-1))`,
/// halves rounded up.
pub fn linear_rows(rows: usize, cols: usize) -> Vec<usize> {
    if cols == 1 {
        return vec![0];
    }
    let (num, den) = (rows - 1, cols - 1);
    (0..cols).map(|c| (2 * c * num + den) / (2 * den)).collect()
}

/// The straight diagonal as a valid path; row jumps wider than one are
/// filled with row steps inside the arriving column.
pub fn linear_baseline(rows: usize, cols: usize) -> Result<AlignmentPath> {
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("linear baseline grid"));
    }
    let targets = linear_rows(rows, cols);
    let mut steps = vec![(0, 0)];
    for (c, &t) in targets.iter().enumerate().skip(1) {
        let prev = steps.last().expect("path starts at (0, 0)").0;
        let first = if t > prev { prev + 1 } else { prev };
        steps.extend((first..=t).map(|r| (r, c)));
    }
    let (last_r, last_c) = *steps.last().expect("non-empty path");
    steps.extend((last_r + 1..rows).map(|r| (r, last_c)));
    Ok(AlignmentPath { steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    pub audio_window: usize,
    pub true_x: f64,
    pub est_x: f64,
    pub norm_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linearly interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ErrorSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("alignment errors"));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentErrors {
    pub windows: Vec<WindowError>,
    pub summary: ErrorSummary,
}

impl AlignmentErrors {
    pub const CSV_HEADER: &'static str = "audio_window,true_x,est_x,norm_error";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for w in &self.windows {
            out.push_str(&format!("{},{},{},{}\n", w.audio_window, w.true_x, w.est_x, w.norm_error));
        }
        out
    }
}

/// Errors of estimated sheet positions against the ground truth, divided by
/// `reference_width`.
pub fn alignment_error(est_x: &[f64], true_x: &[f64], reference_width: f64) -> Result<AlignmentErrors> {
    if est_x.len() != true_x.len() {
        return Err(shape_err("alignment estimates", true_x.len(), est_x.len()));
    }
    if !(reference_width > 0.0) {
        return Err(Error::InvalidArgument(format!("reference width must be positive, got {reference_width}")));
    }
    let windows: Vec<WindowError> = est_x
        .iter()
        .zip(true_x)
        .enumerate()
        .map(|(i, (&e, &t))| WindowError {
            audio_window: i,
            true_x: t,
            est_x: e,
            norm_error: (e - t).abs() / reference_width,
        })
        .collect();
    let summary = ErrorSummary::of(&windows.iter().map(|w| w.norm_error).collect::<Vec<_>>())?;
    Ok(AlignmentErrors { windows, summary })
}

/// Sheet x estimated for each audio window from matched rows.
pub fn estimates(seq: &Sequences, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| seq.image_center(r)).collect()
}
