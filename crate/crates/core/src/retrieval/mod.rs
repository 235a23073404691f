//! Exact cosine-distance retrieval over an embedding index, rank metrics and
//! piece identification by voting.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_f32s_exact, write_f32s};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_VOTES_PER_QUERY: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateMeta {
    pub piece_id: u32,
    pub note_index: usize,
}

/// Candidate embeddings with per-row metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex<T> {
    embeddings: Matrix<T>,
    meta: Vec<CandidateMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub query_id: usize,
    /// Candidate rows, nearest first, ties by ascending row.
    pub rows: Vec<usize>,
    /// `1 - cos` for each returned row, non-decreasing.
    pub distances: Vec<f64>,
}

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

#[inline]
fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl<T: Scalar> EmbeddingIndex<T> {
    pub fn new(embeddings: Matrix<T>, meta: Vec<CandidateMeta>) -> Result<Self> {
        if embeddings.rows() == 0 {
            return Err(Error::Empty("embedding index"));
        }
        if meta.len() != embeddings.rows() {
            return Err(shape_err("index metadata", embeddings.rows(), meta.len()));
        }
        for (i, row) in embeddings.iter_rows().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("index row {i} has norm {n}")));
            }
        }
        Ok(Self { embeddings, meta })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn meta(&self) -> &[CandidateMeta] {
        &self.meta
    }

    /// Cosine distance from `y` to every candidate, in row order.
    pub fn distances(&self, y: &[T]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(shape_err("query dimension", self.dim(), y.len()));
        }
        let ny = norm(y);
        if ny == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self
            .embeddings
            .iter_rows()
            .map(|x| {
                let d: f64 = x.iter().zip(y).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                1.0 - d / (norm(x) * ny)
            })
            .collect())
    }

    /// The `k` nearest candidates by exhaustive search.
    pub fn query_knn(&self, query_id: usize, y: &[T], k: usize) -> Result<RetrievalResult> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", self.len())));
        }
        let mut scored: Vec<(f64, usize)> = self.distances(y)?.into_iter().zip(0..).collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_distance);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance);
        Ok(RetrievalResult {
            query_id,
            rows: scored.iter().map(|s| s.1).collect(),
            distances: scored.iter().map(|s| s.0).collect(),
        })
    }

    /// 1-based position of `true_row` in the full ranking for `y`.
    pub fn rank_of(&self, y: &[T], true_row: usize) -> Result<usize> {
        if true_row >= self.len() {
            return Err(Error::InvalidArgument(format!("row {true_row} outside index of {}", self.len())));
        }
        let d = self.distances(y)?;
        let target = (d[true_row], true_row);
        Ok(1 + d
            .iter()
            .enumerate()
            .filter(|&(i, &di)| by_distance(&(di, i), &target) == Ordering::Less)
            .count())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let flat: Vec<f32> = self.embeddings.data().iter().map(|v| v.as_f64() as f32).collect();
        write_f32s(dir.join("embeddings.f32"), &flat)?;
        let manifest = IndexManifest {
            rows: self.len(),
            dim: self.dim(),
            file: "embeddings.f32".into(),
            meta: self.meta.clone(),
        };
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: IndexManifest = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
        let data = read_f32s_exact(dir.join(&m.file), m.rows * m.dim)?;
        let emb = Matrix::from_vec(m.rows, m.dim, data.iter().map(|&v| T::lit(v as f64)).collect())?;
        Self::new(emb, m.meta)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexManifest {
    rows: usize,
    dim: usize,
    file: String,
    meta: Vec<CandidateMeta>,
}

/// True-candidate rank of every query row, queries matched to `true_rows`.
pub fn true_ranks<T: Scalar>(index: &EmbeddingIndex<T>, queries: &Matrix<T>, true_rows: &[usize]) -> Result<Vec<usize>> {
    if queries.rows() != true_rows.len() {
        return Err(shape_err("true rows", queries.rows(), true_rows.len()));
    }
    queries
        .iter_rows()
        .zip(true_rows)
        .map(|(q, &t)| index.rank_of(q, t))
        .collect()
}

/// Percentage of queries whose true candidate is within the top `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Median rank, the lower middle value for even counts.
pub fn median_rank(ranks: &[usize]) -> Result<usize> {
    if ranks.is_empty() {
        return Err(Error::Empty("ranks"));
    }
    let mut r = ranks.to_vec();
    r.sort_unstable();
    Ok(r[(r.len() - 1) / 2])
}

/// Recall at the given `k`, as percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub candidates: usize,
    pub r1: f64,
    pub r10: f64,
    pub r25: f64,
    pub median_rank: usize,
}

impl RetrievalMetrics {
    pub fn from_ranks(ranks: &[usize], candidates: usize) -> Result<Self> {
        Ok(Self {
            queries: ranks.len(),
            candidates,
            r1: recall_at_k(ranks, 1),
            r10: recall_at_k(ranks, 10),
            r25: recall_at_k(ranks, 25),
            median_rank: median_rank(ranks)?,
        })
    }
}

/// `query_id,true_rank` lines followed by a `median,<MR>` summary row.
pub fn ranks_csv(ranks: &[usize]) -> Result<String> {
    let mut out = String::from("query_id,true_rank\n");
    for (i, r) in ranks.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    out.push_str(&format!("median,{}\n", median_rank(ranks)?));
    Ok(out)
}

/// Vote tally of one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceVotes {
    /// `(piece id, votes)` by descending votes, ties by ascending piece id.
    /// Every piece in the index appears, with zero votes if need be.
    pub ranking: Vec<(u32, usize)>,
    pub total_votes: usize,
}

impl PieceVotes {
    /// 1-based position of `piece_id`.
    pub fn rank_of(&self, piece_id: u32) -> Option<usize> {
        self.ranking.iter().position(|&(p, _)| p == piece_id).map(|i| i + 1)
    }
}

/// Every query's `votes_per_query` nearest candidates vote for their piece.
pub fn identify_piece<T: Scalar>(index: &EmbeddingIndex<T>, queries: &Matrix<T>, votes_per_query: usize) -> Result<PieceVotes> {
    let k = votes_per_query.min(index.len());
    let results = queries
        .iter_rows()
        .enumerate()
        .map(|(i, q)| index.query_knn(i, q, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(tally_votes(index.meta(), &results))
}

/// Vote counting over precomputed retrieval results.
pub fn tally_votes(meta: &[CandidateMeta], results: &[RetrievalResult]) -> PieceVotes {
    let mut votes: BTreeMap<u32, usize> = meta.iter().map(|m| (m.piece_id, 0)).collect();
    let mut total = 0;
    for r in results {
        for &row in &r.rows {
            *votes.entry(meta[row].piece_id).or_default() += 1;
            total += 1;
        }
    }
    let mut ranking: Vec<(u32, usize)> = votes.into_iter().collect();
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    PieceVotes {
        ranking,
        total_votes: total,
    }
}
