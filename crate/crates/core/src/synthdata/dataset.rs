use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::{cut_sheet_snippet_into, AugmentParams, AugmentToggles};
use super::piece::{gen_piece, SymbolicPiece, DEFAULT_PITCH_RANGE};
use super::render::{
    excerpt_at, render_recording, render_unrolled_staff, sound_font, Image, Recording, UnrolledStaff, TEST_FONT,
    TRAIN_FONTS,
};
use crate::binio::{read_f32s_exact, write_f32s};
use crate::domain::{EXCERPT_FRAMES, SNIPPET_HEIGHT, SNIPPET_WIDTH, SPEC_BINS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const TEMPO_GRID: [f64; 4] = [100.0, 110.0, 120.0, 130.0];
pub const REFERENCE_TEMPO: f64 = 120.0;
pub const DATASET_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_pieces: usize,
    pub val_pieces: usize,
    pub test_pieces: usize,
    pub notes_per_piece: usize,
    pub pitch_range: usize,
    /// Only `multi_font` and `tempo_var` matter here; they choose which
    /// renders the train and validation splits contain.
    pub augment: AugmentToggles,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_pieces: 5,
            val_pieces: 1,
            test_pieces: 3,
            notes_per_piece: 40,
            pitch_range: DEFAULT_PITCH_RANGE,
            augment: AugmentToggles::FULL,
        }
    }
}

impl DatasetConfig {
    /// Consecutive piece ids: train first, then validation, then test.
    pub fn plan(&self) -> SplitPlan {
        let (a, b, c) = (self.train_pieces as u32, self.val_pieces as u32, self.test_pieces as u32);
        SplitPlan {
            train: (0..a).collect(),
            val: (a..a + b).collect(),
            test: (a + b..a + b + c).collect(),
        }
    }

    /// Fonts and tempos of the train and validation renders.
    pub fn train_renders(&self) -> (Vec<u32>, Vec<f64>) {
        let fonts = if self.augment.multi_font {
            TRAIN_FONTS.to_vec()
        } else {
            vec![TRAIN_FONTS[0]]
        };
        let tempos = if self.augment.tempo_var {
            TEMPO_GRID.to_vec()
        } else {
            vec![REFERENCE_TEMPO]
        };
        (fonts, tempos)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(*id) {
                return Err(Error::Dataset(format!("piece id {id} appears more than once across splits")));
            }
        }
        if self.train.is_empty() {
            return Err(Error::Empty("training pieces"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceData {
    /// The piece at the reference tempo.
    pub piece: SymbolicPiece,
    pub staff: UnrolledStaff,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingData {
    /// Index into [`Split::pieces`].
    pub piece_index: usize,
    pub font: u32,
    pub tempo: f64,
    pub recording: Recording,
}

/// Ground truth of one snippet/excerpt correspondence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub piece_id: u32,
    /// Index into [`Split::pieces`].
    pub piece_index: usize,
    pub note_index: usize,
    /// Index into [`Split::recordings`].
    pub recording: usize,
    pub x_pixel: usize,
    pub onset_frame: usize,
}

/// A materialized correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondencePair {
    pub snippet: Image,
    pub excerpt: Image,
    pub record: PairRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub pieces: Vec<PieceData>,
    pub recordings: Vec<RecordingData>,
    pub pairs: Vec<PairRecord>,
}

impl Split {
    fn build(kind: SplitKind, ids: &[u32], fonts: &[u32], tempos: &[f64], cfg: &DatasetConfig, seed: u64) -> Result<Self> {
        let mut pieces = Vec::with_capacity(ids.len());
        let mut recordings = Vec::new();
        let mut pairs = Vec::new();
        for (piece_index, &id) in ids.iter().enumerate() {
            let piece = gen_piece(id, seed, cfg.notes_per_piece, cfg.pitch_range)?;
            let staff = render_unrolled_staff(&piece);
            for &font in fonts {
                let profile = sound_font(font)?;
                for &tempo in tempos {
                    let recording = render_recording(&piece.with_tempo(tempo), &profile, seed);
                    let rec_index = recordings.len();
                    for (note_index, (&x_pixel, &onset_frame)) in
                        staff.note_x.iter().zip(&recording.onset_frames).enumerate()
                    {
                        pairs.push(PairRecord {
                            piece_id: id,
                            piece_index,
                            note_index,
                            recording: rec_index,
                            x_pixel,
                            onset_frame,
                        });
                    }
                    recordings.push(RecordingData {
                        piece_index,
                        font,
                        tempo,
                        recording,
                    });
                }
            }
            pieces.push(PieceData { piece, staff });
        }
        Ok(Self {
            kind,
            pieces,
            recordings,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn piece_ids(&self) -> Vec<u32> {
        self.pieces.iter().map(|p| p.piece.id).collect()
    }

    pub fn snippet(&self, pair: usize, params: &AugmentParams) -> Result<Image> {
        let mut out = Image::filled(SNIPPET_HEIGHT, SNIPPET_WIDTH, 0.0);
        let r = &self.pairs[pair];
        cut_sheet_snippet_into(&self.pieces[r.piece_index].staff.image, r.x_pixel, params, &mut out.data)?;
        Ok(out)
    }

    pub fn excerpt(&self, pair: usize) -> Image {
        let r = &self.pairs[pair];
        excerpt_at(&self.recordings[r.recording].recording, r.onset_frame)
    }

    pub fn pair(&self, pair: usize) -> Result<CorrespondencePair> {
        Ok(CorrespondencePair {
            snippet: self.snippet(pair, &AugmentParams::IDENTITY)?,
            excerpt: self.excerpt(pair),
            record: self.pairs[pair],
        })
    }

    /// `(n, 1, 180, 200)` batch of snippets, one augmentation per pair.
    pub fn snippet_batch<T: Scalar>(&self, pairs: &[usize], params: &[AugmentParams]) -> Result<Tensor4<T>> {
        if params.len() != pairs.len() {
            return Err(crate::error::shape_err("snippet_batch params", pairs.len(), params.len()));
        }
        let plane = SNIPPET_HEIGHT * SNIPPET_WIDTH;
        let mut buf = vec![0.0f32; plane];
        let mut out = Tensor4::zeros([pairs.len(), 1, SNIPPET_HEIGHT, SNIPPET_WIDTH]);
        for (s, (&i, p)) in pairs.iter().zip(params).enumerate() {
            let r = &self.pairs[i];
            cut_sheet_snippet_into(&self.pieces[r.piece_index].staff.image, r.x_pixel, p, &mut buf)?;
            for (d, &v) in out.sample_mut(s).iter_mut().zip(&buf) {
                *d = T::lit(v as f64);
            }
        }
        Ok(out)
    }

    /// `(n, 1, 92, 42)` batch of excerpts.
    pub fn excerpt_batch<T: Scalar>(&self, pairs: &[usize]) -> Tensor4<T> {
        let mut out = Tensor4::zeros([pairs.len(), 1, SPEC_BINS, EXCERPT_FRAMES]);
        for (s, &i) in pairs.iter().enumerate() {
            let ex = self.excerpt(i);
            for (d, &v) in out.sample_mut(s).iter_mut().zip(&ex.data) {
                *d = T::lit(v as f64);
            }
        }
        out
    }

    /// Recordings of one piece, in render order.
    pub fn recordings_of(&self, piece_id: u32) -> Vec<usize> {
        (0..self.recordings.len())
            .filter(|&i| self.pieces[self.recordings[i].piece_index].piece.id == piece_id)
            .collect()
    }

    /// Pairs belonging to one recording, in note order.
    pub fn pairs_of_recording(&self, recording: usize) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.pairs[i].recording == recording).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Renders all three splits. Train and validation use the configured fonts
/// and tempos; the test split always uses the held-out font at 120 bpm.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    build_dataset_with_plan(config, &config.plan(), seed)
}

pub fn build_dataset_with_plan(config: &DatasetConfig, plan: &SplitPlan, seed: u64) -> Result<Dataset> {
    plan.validate()?;
    if config.notes_per_piece == 0 {
        return Err(Error::InvalidArgument("notes_per_piece must be at least 1".into()));
    }
    let (fonts, tempos) = config.train_renders();
    Ok(Dataset {
        config: config.clone(),
        seed,
        train: Split::build(SplitKind::Train, &plan.train, &fonts, &tempos, config, seed)?,
        val: Split::build(SplitKind::Val, &plan.val, &fonts, &tempos, config, seed)?,
        test: Split::build(SplitKind::Test, &plan.test, &[TEST_FONT], &[REFERENCE_TEMPO], config, seed)?,
    })
}

#[derive(Serialize, Deserialize)]
struct PieceEntry {
    piece: SymbolicPiece,
    staff_width: usize,
    staff_offset: usize,
    note_x: Vec<usize>,
    note_y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RecordingEntry {
    piece_id: u32,
    piece_index: usize,
    font: u32,
    tempo: f64,
    frames: usize,
    offset: usize,
    onset_frames: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    file: String,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    split: SplitKind,
    piece_ids: Vec<u32>,
    fonts: Vec<u32>,
    tempos: Vec<f64>,
    pieces: Vec<PieceEntry>,
    recordings: Vec<RecordingEntry>,
    pairs: Vec<PairRecord>,
    staff: TensorFile,
    spectrograms: TensorFile,
    /// One unaugmented snippet per note (pairs of different renders share it),
    /// indexed by `piece_index * notes_per_piece + note_index`.
    snippets: TensorFile,
    /// One excerpt per pair.
    excerpts: TensorFile,
}

#[derive(Serialize, Deserialize)]
struct SplitSummary {
    dir: String,
    piece_ids: Vec<u32>,
    pairs: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format: u32,
    seed: u64,
    config: DatasetConfig,
    train: SplitSummary,
    val: SplitSummary,
    test: SplitSummary,
}

fn unique<T: PartialEq + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

impl Split {
    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut staff = Vec::new();
        let mut pieces = Vec::new();
        for p in &self.pieces {
            pieces.push(PieceEntry {
                piece: p.piece.clone(),
                staff_width: p.staff.image.width,
                staff_offset: staff.len(),
                note_x: p.staff.note_x.clone(),
                note_y: p.staff.note_y.clone(),
            });
            staff.extend_from_slice(&p.staff.image.data);
        }
        let mut spec = Vec::new();
        let mut recordings = Vec::new();
        for r in &self.recordings {
            recordings.push(RecordingEntry {
                piece_id: self.pieces[r.piece_index].piece.id,
                piece_index: r.piece_index,
                font: r.font,
                tempo: r.tempo,
                frames: r.recording.spectrogram.width,
                offset: spec.len(),
                onset_frames: r.recording.onset_frames.clone(),
            });
            spec.extend_from_slice(&r.recording.spectrogram.data);
        }
        let mut snippets = Vec::new();
        let mut snippet_count = 0;
        for p in &self.pieces {
            for &x in &p.staff.note_x {
                let mut buf = vec![0.0; SNIPPET_HEIGHT * SNIPPET_WIDTH];
                cut_sheet_snippet_into(&p.staff.image, x, &AugmentParams::IDENTITY, &mut buf)?;
                snippets.extend_from_slice(&buf);
                snippet_count += 1;
            }
        }
        let mut excerpts = Vec::with_capacity(self.pairs.len() * SPEC_BINS * EXCERPT_FRAMES);
        for i in 0..self.pairs.len() {
            excerpts.extend_from_slice(&self.excerpt(i).data);
        }
        write_f32s(dir.join("staff.f32"), &staff)?;
        write_f32s(dir.join("spectrograms.f32"), &spec)?;
        write_f32s(dir.join("snippets.f32"), &snippets)?;
        write_f32s(dir.join("excerpts.f32"), &excerpts)?;
        let manifest = SplitManifest {
            split: self.kind,
            piece_ids: self.piece_ids(),
            fonts: unique(self.recordings.iter().map(|r| r.font)),
            tempos: unique(self.recordings.iter().map(|r| r.tempo)),
            pieces,
            recordings,
            pairs: self.pairs.clone(),
            staff: TensorFile {
                file: "staff.f32".into(),
                dims: vec![SNIPPET_HEIGHT, staff.len() / SNIPPET_HEIGHT],
            },
            spectrograms: TensorFile {
                file: "spectrograms.f32".into(),
                dims: vec![SPEC_BINS, spec.len() / SPEC_BINS],
            },
            snippets: TensorFile {
                file: "snippets.f32".into(),
                dims: vec![snippet_count, SNIPPET_HEIGHT, SNIPPET_WIDTH],
            },
            excerpts: TensorFile {
                file: "excerpts.f32".into(),
                dims: vec![self.pairs.len(), SPEC_BINS, EXCERPT_FRAMES],
            },
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn load(dir: &Path, expected: SplitKind) -> Result<Self> {
        let manifest: SplitManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.split != expected {
            return Err(Error::Dataset(format!(
                "{}: expected split {}, found {}",
                dir.display(),
                expected.name(),
                manifest.split.name()
            )));
        }
        let staff_len: usize = manifest.staff.dims.iter().product();
        let staff = read_f32s_exact(dir.join(&manifest.staff.file), staff_len)?;
        let spec_len: usize = manifest.spectrograms.dims.iter().product();
        let spec = read_f32s_exact(dir.join(&manifest.spectrograms.file), spec_len)?;

        let slice = |data: &[f32], offset: usize, len: usize, what: &str| -> Result<Vec<f32>> {
            data.get(offset..offset + len)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::Dataset(format!("{what} extends past the end of its file")))
        };
        let mut pieces = Vec::with_capacity(manifest.pieces.len());
        for e in manifest.pieces {
            let data = slice(&staff, e.staff_offset, SNIPPET_HEIGHT * e.staff_width, "staff image")?;
            pieces.push(PieceData {
                piece: e.piece,
                staff: UnrolledStaff {
                    image: Image::from_vec(SNIPPET_HEIGHT, e.staff_width, data)?,
                    note_x: e.note_x,
                    note_y: e.note_y,
                },
            });
        }
        let mut recordings = Vec::with_capacity(manifest.recordings.len());
        for e in manifest.recordings {
            if e.piece_index >= pieces.len() {
                return Err(Error::Dataset(format!("recording refers to missing piece {}", e.piece_index)));
            }
            let data = slice(&spec, e.offset, SPEC_BINS * e.frames, "spectrogram")?;
            recordings.push(RecordingData {
                piece_index: e.piece_index,
                font: e.font,
                tempo: e.tempo,
                recording: Recording {
                    spectrogram: Image::from_vec(SPEC_BINS, e.frames, data)?,
                    onset_frames: e.onset_frames,
                },
            });
        }
        for p in &manifest.pairs {
            if p.piece_index >= pieces.len() || p.recording >= recordings.len() {
                return Err(Error::Dataset("pair refers to a missing piece or recording".into()));
            }
        }
        Ok(Self {
            kind: expected,
            pieces,
            recordings,
            pairs: manifest.pairs,
        })
    }
}

impl Dataset {
    /// Writes `manifest.json` plus one directory per split.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut summary = Vec::new();
        for split in [&self.train, &self.val, &self.test] {
            split.save(&dir.join(split.kind.name()))?;
            summary.push(SplitSummary {
                dir: split.kind.name().into(),
                piece_ids: split.piece_ids(),
                pairs: split.len(),
            });
        }
        let mut it = summary.into_iter();
        let manifest = DatasetManifest {
            format: DATASET_FORMAT,
            seed: self.seed,
            config: self.config.clone(),
            train: it.next().expect("three splits"),
            val: it.next().expect("three splits"),
            test: it.next().expect("three splits"),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Version {
                found: manifest.format,
                expected: DATASET_FORMAT,
            });
        }
        let ds = Self {
            config: manifest.config,
            seed: manifest.seed,
            train: Split::load(&dir.join(&manifest.train.dir), SplitKind::Train)?,
            val: Split::load(&dir.join(&manifest.val.dir), SplitKind::Val)?,
            test: Split::load(&dir.join(&manifest.test.dir), SplitKind::Test)?,
        };
        SplitPlan {
            train: ds.train.piece_ids(),
            val: ds.val.piece_ids(),
            test: ds.test.piece_ids(),
        }
        .validate()?;
        Ok(ds)
    }
}
