//! Embedding a split and the evaluation protocols built on it: audio-to-sheet
//! retrieval and piece identification.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    alignment_error, build_sequences, cost_matrix, dtw, estimates, linear_rows, AlignConfig, AlignmentErrors,
    AlignmentPath, CostMatrix,
};
use crate::domain::{EXCERPT_FRAMES, SNIPPET_HEIGHT, SNIPPET_WIDTH, SPEC_BINS};
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::retrieval::{identify_piece, true_ranks, CandidateMeta, EmbeddingIndex, PieceVotes, RetrievalMetrics};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::synthdata::{AugmentParams, Split};
use crate::synthdata::Image;
use crate::tensor::{l2_normalize_rows, Matrix, Mode, Tensor4};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 100;

/// Eval-mode embeddings of a split: one candidate per note of every piece,
/// one query per pair.
#[derive(Clone, Debug)]
pub struct SplitEmbeddings<T> {
    pub index: EmbeddingIndex<T>,
    /// Audio embeddings in pair order.
    pub queries: Matrix<T>,
    /// Index row of each query's true snippet.
    pub true_rows: Vec<usize>,
}

fn stack_rows<T: Scalar>(parts: Vec<Matrix<T>>, cols: usize) -> Result<Matrix<T>> {
    let rows = parts.iter().map(|m| m.rows()).sum();
    let data = parts.into_iter().flat_map(|m| m.into_data()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Row offsets of each piece's first note in the candidate index.
fn note_offsets(split: &Split) -> Vec<usize> {
    let mut acc = 0;
    split
        .pieces
        .iter()
        .map(|p| {
            let o = acc;
            acc += p.staff.note_x.len();
            o
        })
        .collect()
}

/// Pairs that stand for each note once, in piece then note order.
fn first_pair_per_note(split: &Split) -> Result<Vec<usize>> {
    let total: usize = split.pieces.iter().map(|p| p.staff.note_x.len()).sum();
    let offsets = note_offsets(split);
    let mut pick = vec![usize::MAX; total];
    for (i, p) in split.pairs.iter().enumerate() {
        let row = offsets[p.piece_index] + p.note_index;
        if pick[row] == usize::MAX {
            pick[row] = i;
        }
    }
    if pick.contains(&usize::MAX) {
        return Err(Error::Dataset("a note has no correspondence pair".into()));
    }
    Ok(pick)
}

pub fn embed_split<T: Scalar>(model: &EmbeddingModel<T>, split: &Split) -> Result<SplitEmbeddings<T>> {
    if split.is_empty() {
        return Err(Error::Empty("split pairs"));
    }
    let dim = model.image.spec.embed_dim;
    let notes = first_pair_per_note(split)?;
    let mut parts = Vec::new();
    for chunk in notes.chunks(EVAL_BATCH) {
        let imgs = split.snippet_batch::<T>(chunk, &vec![AugmentParams::IDENTITY; chunk.len()])?;
        parts.push(model.embed_image(&imgs, Mode::Eval)?);
    }
    let meta = notes
        .iter()
        .map(|&i| CandidateMeta {
            piece_id: split.pairs[i].piece_id,
            note_index: split.pairs[i].note_index,
        })
        .collect();
    let index = EmbeddingIndex::new(stack_rows(parts, dim)?, meta)?;

    let all: Vec<usize> = (0..split.len()).collect();
    let mut parts = Vec::new();
    for chunk in all.chunks(EVAL_BATCH) {
        parts.push(model.embed_audio(&split.excerpt_batch::<T>(chunk), Mode::Eval)?);
    }
    let offsets = note_offsets(split);
    let true_rows = split.pairs.iter().map(|p| offsets[p.piece_index] + p.note_index).collect();
    Ok(SplitEmbeddings {
        index,
        queries: stack_rows(parts, model.audio.spec.embed_dim)?,
        true_rows,
    })
}

impl<T: Scalar> SplitEmbeddings<T> {
    pub fn ranks(&self) -> Result<Vec<usize>> {
        true_ranks(&self.index, &self.queries, &self.true_rows)
    }

    pub fn metrics(&self) -> Result<(RetrievalMetrics, Vec<usize>)> {
        let ranks = self.ranks()?;
        Ok((RetrievalMetrics::from_ranks(&ranks, self.index.len())?, ranks))
    }

    /// The index embeddings used as their own queries.
    pub fn oracle(&self) -> Self {
        Self {
            index: self.index.clone(),
            queries: self.index.embeddings().clone(),
            true_rows: (0..self.index.len()).collect(),
        }
    }

    /// Same shapes and ground truth with embeddings replaced by random unit
    /// vectors from the baseline stream.
    pub fn random_baseline(&self, seed: u64) -> Result<Self> {
        random_like(self.index.meta().to_vec(), self.true_rows.clone(), self.index.dim(), seed)
    }

    /// Vote-based identification of one recording of the split.
    pub fn identify(&self, split: &Split, recording: usize, votes_per_query: usize) -> Result<Identification> {
        let rec = split
            .recordings
            .get(recording)
            .ok_or_else(|| Error::InvalidArgument(format!("no recording {recording} in the {} split", split.kind.name())))?;
        let pairs = split.pairs_of_recording(recording);
        let rows: Vec<&[T]> = pairs.iter().map(|&i| self.queries.row(i)).collect();
        let queries = Matrix::from_rows(&rows)?;
        let votes = identify_piece(&self.index, &queries, votes_per_query)?;
        let piece_id = split.pieces[rec.piece_index].piece.id;
        Ok(Identification {
            recording,
            piece_id,
            true_rank: votes.rank_of(piece_id).unwrap_or(usize::MAX),
            queries: pairs.len(),
            votes,
        })
    }
}

fn random_like<T: Scalar>(meta: Vec<CandidateMeta>, true_rows: Vec<usize>, dim: usize, seed: u64) -> Result<SplitEmbeddings<T>> {
    let mut rng = stream_rng(seed, Stream::Baseline);
    let index = EmbeddingIndex::new(random_unit_rows(meta.len(), dim, &mut rng)?, meta)?;
    Ok(SplitEmbeddings {
        index,
        queries: random_unit_rows(true_rows.len(), dim, &mut rng)?,
        true_rows,
    })
}

/// Random-embedding baseline of a split, without a model.
pub fn random_split_embeddings<T: Scalar>(split: &Split, dim: usize, seed: u64) -> Result<SplitEmbeddings<T>> {
    if split.is_empty() {
        return Err(Error::Empty("split pairs"));
    }
    let meta = first_pair_per_note(split)?
        .into_iter()
        .map(|i| CandidateMeta {
            piece_id: split.pairs[i].piece_id,
            note_index: split.pairs[i].note_index,
        })
        .collect();
    let offsets = note_offsets(split);
    let true_rows = split.pairs.iter().map(|p| offsets[p.piece_index] + p.note_index).collect();
    random_like(meta, true_rows, dim, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub recording: usize,
    pub piece_id: u32,
    /// 1-based position of the true piece among all pieces of the index.
    pub true_rank: usize,
    pub queries: usize,
    pub votes: PieceVotes,
}

/// Every recording of the split identified against its whole index.
pub fn identify_all<T: Scalar>(emb: &SplitEmbeddings<T>, split: &Split, votes_per_query: usize) -> Result<Vec<Identification>> {
    (0..split.recordings.len())
        .map(|r| emb.identify(split, r, votes_per_query))
        .collect()
}

fn embed_images<T: Scalar>(
    images: &[Image],
    (h, w): (usize, usize),
    embed: impl Fn(&Tensor4<T>) -> Result<Matrix<T>>,
    dim: usize,
) -> Result<Matrix<T>> {
    let mut parts = Vec::new();
    for chunk in images.chunks(EVAL_BATCH) {
        let data = chunk.iter().flat_map(|im| im.data.iter().map(|&v| T::lit(v as f64))).collect();
        let batch = Tensor4::from_vec([chunk.len(), 1, h, w], data)?;
        parts.push(embed(&batch)?);
    }
    stack_rows(parts, dim)
}

/// DTW and linear-baseline alignment of one recording to its piece's staff.
#[derive(Clone, Debug)]
pub struct RecordingAlignment {
    pub recording: usize,
    pub piece_id: u32,
    pub cost: CostMatrix,
    pub path: AlignmentPath,
    pub path_cost: f64,
    pub dtw: AlignmentErrors,
    pub linear: AlignmentErrors,
}

pub fn align_recording<T: Scalar>(
    model: &EmbeddingModel<T>,
    split: &Split,
    recording: usize,
    config: &AlignConfig,
) -> Result<RecordingAlignment> {
    let rec = split
        .recordings
        .get(recording)
        .ok_or_else(|| Error::InvalidArgument(format!("no recording {recording} in the {} split", split.kind.name())))?;
    let piece = &split.pieces[rec.piece_index];
    let seq = build_sequences(&piece.staff, &rec.recording, config)?;
    let dim = model.image.spec.embed_dim;
    let x = embed_images(
        &seq.image_windows(&piece.staff)?,
        (SNIPPET_HEIGHT, SNIPPET_WIDTH),
        |b| model.embed_image(b, Mode::Eval),
        dim,
    )?;
    let y = embed_images(
        &seq.audio_windows(&rec.recording),
        (SPEC_BINS, EXCERPT_FRAMES),
        |b| model.embed_audio(b, Mode::Eval),
        dim,
    )?;
    let cost = cost_matrix(&x, &y)?;
    let (path, path_cost) = dtw(&cost);
    let dtw_est = estimates(&seq, &path.row_per_column(cost.cols()));
    let lin_est = estimates(&seq, &linear_rows(cost.rows(), cost.cols()));
    Ok(RecordingAlignment {
        recording,
        piece_id: piece.piece.id,
        dtw: alignment_error(&dtw_est, &seq.true_x, config.reference_width)?,
        linear: alignment_error(&lin_est, &seq.true_x, config.reference_width)?,
        cost,
        path,
        path_cost,
    })
}

/// `n` i.i.d. random unit rows (normalized uniform cube samples).
pub fn random_unit_rows<T: Scalar, R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Matrix<T>> {
    let raw = Matrix::from_vec(n, dim, (0..n * dim).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect())?;
    l2_normalize_rows(&raw)
}
