//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. The training criteria run three full-scale seeds each way and
//! take well over an hour on one core.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cmscore::alignment::AlignConfig;
use cmscore::eval::{align_recording, embed_split, identify_all};
use cmscore::model::EmbeddingModel;
use cmscore::synthdata::{build_dataset, AugmentToggles, DatasetConfig};
use cmscore::training::{TrainConfig, Trainer};
use common::*;

const SEEDS: [u64; 3] = [0, 1, 2];
/// Epoch budget of the fully augmented runs.
const FULL_EPOCHS: u64 = 22;
/// Train pairs per epoch differ by the 12 font and tempo renders; the
/// unaugmented runs get the same number of optimizer steps.
const NONE_EPOCHS: u64 = FULL_EPOCHS * 12;
const TIME_LIMIT: Duration = Duration::from_secs(15 * 60);
const MR_FRACTION: f64 = 0.10;

struct Run {
    elapsed: Duration,
    candidates: usize,
    median_rank: usize,
    /// Rank of the true piece per test recording.
    id_ranks: Vec<usize>,
    /// `(piece, dtw median, linear median)` per test recording.
    alignment: Vec<(u32, f64, f64)>,
}

fn run(seed: u64, augment: AugmentToggles, epochs: u64) -> Result<Run, String> {
    let start = Instant::now();
    let cfg = DatasetConfig { augment, ..DatasetConfig::default() };
    let data = build_dataset(&cfg, seed).map_err(|e| e.to_string())?;
    let tcfg = TrainConfig { seed, augment, max_epochs: Some(epochs), ..TrainConfig::default() };
    let mut trainer = Trainer::<f32>::new(tcfg).map_err(|e| e.to_string())?;
    trainer.run(&data, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let model = EmbeddingModel::<f32>::from_checkpoint(&trainer.best_checkpoint()).map_err(|e| e.to_string())?;
    let emb = embed_split(&model, &data.test).map_err(|e| e.to_string())?;
    let (metrics, _) = emb.metrics().map_err(|e| e.to_string())?;
    let ids = identify_all(&emb, &data.test, 25).map_err(|e| e.to_string())?;
    let mut alignment = Vec::new();
    for r in 0..data.test.recordings.len() {
        let a = align_recording(&model, &data.test, r, &AlignConfig::default()).map_err(|e| e.to_string())?;
        alignment.push((a.piece_id, a.dtw.summary.median, a.linear.summary.median));
    }
    Ok(Run {
        elapsed: start.elapsed(),
        candidates: metrics.candidates,
        median_rank: metrics.median_rank,
        id_ranks: ids.iter().map(|i| i.true_rank).collect(),
        alignment,
    })
}

fn median<T: Copy + PartialOrd>(v: &[T]) -> T {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    s[(s.len() - 1) / 2]
}

fn timed(f: impl FnOnce() -> Check, limit: Option<Duration>) -> Check {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    match (out, limit) {
        (Ok(msg), Some(l)) if took >= l => Err(format!("{msg}; took {took:.1?}, limit {l:?}")),
        (Ok(msg), _) => Ok(format!("{msg} ({took:.1?})")),
        (Err(msg), _) => Err(msg),
    }
}

fn training_criteria() -> [Check; 3] {
    let mut full = Vec::new();
    let mut none = Vec::new();
    for &seed in &SEEDS {
        match run(seed, AugmentToggles::FULL, FULL_EPOCHS) {
            Ok(r) => full.push(r),
            Err(e) => return [Err(e.clone()), Err(e.clone()), Err(e)],
        }
        match run(seed, AugmentToggles::NONE, NONE_EPOCHS) {
            Ok(r) => none.push(r),
            Err(e) => return [Err(e.clone()), Err(e.clone()), Err(e)],
        }
    }

    let mrs: Vec<usize> = full.iter().map(|r| r.median_rank).collect();
    let times: Vec<String> = full.iter().map(|r| format!("{:.0?}", r.elapsed)).collect();
    let limit = MR_FRACTION * full[0].candidates as f64;
    let pieces = full[0].id_ranks.len();
    let id_median: Vec<usize> = (0..pieces).map(|p| median(&full.iter().map(|r| r.id_ranks[p]).collect::<Vec<_>>())).collect();
    let c6 = format!(
        "MR per seed {mrs:?} (median {}, limit {limit}), piece ranks median {id_median:?}, times {times:?}",
        median(&mrs)
    );
    let c6 = if median(&mrs) as f64 <= limit
        && id_median.iter().all(|&r| r == 1)
        && full.iter().all(|r| r.elapsed < TIME_LIMIT)
    {
        Ok(c6)
    } else {
        Err(c6)
    };

    let mut rows = Vec::new();
    let mut ok7 = true;
    for p in 0..full[0].alignment.len() {
        let dtw = median(&full.iter().map(|r| r.alignment[p].1).collect::<Vec<_>>());
        let lin = median(&full.iter().map(|r| r.alignment[p].2).collect::<Vec<_>>());
        ok7 &= dtw < lin;
        rows.push(format!("piece {} dtw {dtw:.3} linear {lin:.3}", full[0].alignment[p].0));
    }
    let c7 = if ok7 { Ok(rows.join(", ")) } else { Err(rows.join(", ")) };

    let none_mrs: Vec<usize> = none.iter().map(|r| r.median_rank).collect();
    let c8 = format!(
        "median MR full {} {mrs:?} vs none {} {none_mrs:?}",
        median(&mrs),
        median(&none_mrs)
    );
    let c8 = if median(&mrs) <= median(&none_mrs) { Ok(c8) } else { Err(c8) };
    [c6, c7, c8]
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Check)> = vec![
        (1, "gradient suite", timed(check_gradients, Some(Duration::from_secs(120)))),
        (2, "architecture fidelity", timed(check_architecture, Some(Duration::from_secs(1)))),
        (3, "loss law", timed(check_loss_law, None)),
        (4, "dtw oracle", timed(|| check_dtw_oracle(500), Some(Duration::from_secs(60)))),
        (5, "retrieval metric oracles", timed(check_retrieval_oracle, None)),
    ];
    let [c6, c7, c8] = training_criteria();
    results.push((6, "end-to-end toy training", c6));
    results.push((7, "alignment trend", c7));
    results.push((8, "augmentation trend", c8));
    results.push((9, "random baseline", timed(check_random_baseline, None)));
    results.push((10, "determinism and persistence", timed(check_determinism, None)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(msg) => println!("PASS {n:>2} {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
