//! Oracles and criterion checks shared by the integration tests and the
//! acceptance runner. Each check returns a one-line summary on success.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use cmscore::alignment::{dtw, linear_baseline, CostMatrix};
use cmscore::model::{build_pathways, EmbeddingModel, ModelCheckpoint, Pathway, PathwaySpec};
use cmscore::retrieval::{median_rank, recall_at_k, CandidateMeta, EmbeddingIndex};
use cmscore::synthdata::{build_dataset, build_dataset_with_plan, AugmentToggles, Dataset, DatasetConfig, SplitPlan};
use cmscore::tensor::{
    elu, elu_backward, global_average_pool, global_average_pool_backward, l2_normalize_rows,
    l2_normalize_rows_backward, maxpool2x2, maxpool2x2_backward, BatchNorm, BatchNormGrads, Conv2d, ConvGrads,
    Kernel, Matrix, Mode, Tensor4,
};
use cmscore::training::{hinge_terms, ranking_loss, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn random_tensor(dims: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(t: &Tensor4<f64>, p: &Tensor4<f64>) -> f64 {
    t.data().iter().zip(p.data()).map(|(a, b)| a * b).sum()
}

fn with(dims: [usize; 4], v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(dims, v.to_vec()).unwrap()
}

fn conv_errors(kernel: Kernel, cin: usize, cout: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Conv2d::<f64>::zeros(cin, cout, kernel);
    conv.init_uniform(&mut rng);
    conv.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    let x = random_tensor([2, cin, 5, 6], &mut rng);
    let proj = random_tensor([2, cout, 5, 6], &mut rng);
    let mut g = ConvGrads::zeros_like(&conv);
    let gx = conv.backward(&x, &proj, &mut g, true).unwrap().unwrap();
    let nx = numeric_grad(x.data(), |v| project(&conv.forward(&with(x.dims(), v)).unwrap(), &proj));
    let nw = numeric_grad(&conv.weight, |v| {
        let mut c = conv.clone();
        c.weight = v.to_vec();
        project(&c.forward(&x).unwrap(), &proj)
    });
    let nb = numeric_grad(&conv.bias, |v| {
        let mut c = conv.clone();
        c.bias = v.to_vec();
        project(&c.forward(&x).unwrap(), &proj)
    });
    rel_error(gx.data(), &nx).max(rel_error(&g.weight, &nw)).max(rel_error(&g.bias, &nb))
}

fn batchnorm_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
    bn.beta = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let x = random_tensor([4, 3, 3, 2], &mut rng);
    let proj = random_tensor([4, 3, 3, 2], &mut rng);
    let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
    let mut g = BatchNormGrads::zeros_like(&bn);
    let gx = bn.backward(&x, &cache, &proj, &mut g).unwrap();
    let f = |b: &BatchNorm<f64>, x: &Tensor4<f64>| project(&b.forward(x, Mode::Train).unwrap().0, &proj);
    let nx = numeric_grad(x.data(), |v| f(&bn, &with(x.dims(), v)));
    let ng = numeric_grad(&bn.gamma, |v| {
        let mut b = bn.clone();
        b.gamma = v.to_vec();
        f(&b, &x)
    });
    let nb = numeric_grad(&bn.beta, |v| {
        let mut b = bn.clone();
        b.beta = v.to_vec();
        f(&b, &x)
    });
    rel_error(gx.data(), &nx).max(rel_error(&g.gamma, &ng)).max(rel_error(&g.beta, &nb))
}

fn elu_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor([2, 2, 4, 4], &mut rng).map(|v| 3.0 * v);
    let proj = random_tensor([2, 2, 4, 4], &mut rng);
    let gx = elu_backward(&x, &proj).unwrap();
    let nx = numeric_grad(x.data(), |v| project(&elu(&with(x.dims(), v)), &proj));
    rel_error(gx.data(), &nx)
}

fn maxpool_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [2, 2, 4, 6];
    // distinct values at least 0.01 apart, so no step flips a window's maximum
    let mut order: Vec<usize> = (0..dims.iter().product()).collect();
    order.shuffle(&mut rng);
    let x = with(dims, &order.iter().map(|&k| k as f64 * 0.01).collect::<Vec<_>>());
    let proj = random_tensor([2, 2, 2, 3], &mut rng);
    let (_, argmax) = maxpool2x2(&x).unwrap();
    let gx = maxpool2x2_backward(dims, &argmax, &proj).unwrap();
    let nx = numeric_grad(x.data(), |v| project(&maxpool2x2(&with(dims, v)).unwrap().0, &proj));
    rel_error(gx.data(), &nx)
}

fn gap_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [3, 2, 3, 4];
    let x = random_tensor(dims, &mut rng);
    let proj: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pm = Matrix::from_vec(3, 2, proj.clone()).unwrap();
    let gx = global_average_pool_backward(dims, &pm).unwrap();
    let nx = numeric_grad(x.data(), |v| {
        global_average_pool(&with(dims, v)).data().iter().zip(&proj).map(|(a, b)| a * b).sum()
    });
    rel_error(gx.data(), &nx)
}

fn l2_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Matrix::from_vec(3, 5, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let proj: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = l2_normalize_rows_backward(&raw, &Matrix::from_vec(3, 5, proj.clone()).unwrap()).unwrap();
    let n = numeric_grad(raw.data(), |v| {
        let m = Matrix::from_vec(3, 5, v.to_vec()).unwrap();
        l2_normalize_rows(&m).unwrap().data().iter().zip(&proj).map(|(a, b)| a * b).sum()
    });
    rel_error(g.data(), &n)
}

fn pathway_params(p: &Pathway<f64>) -> Vec<f64> {
    p.params().iter().flat_map(|a| a.iter().copied()).collect()
}

fn set_pathway_params(p: &mut Pathway<f64>, flat: &[f64]) {
    let mut at = 0;
    for a in p.params_mut() {
        let n = a.len();
        a.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Loss of tiny `f`/`g` pathways through normalization and the ranking loss,
/// differentiated w.r.t. every parameter of both pathways.
fn end_to_end_error(symmetric: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_spec = PathwaySpec::custom([1, 16, 18], [2, 3, 2, 2], 4);
    let g_spec = PathwaySpec::custom([1, 16, 16], [2, 2, 3, 2], 4);
    let model = EmbeddingModel::<f64>::from_specs(f_spec, g_spec, seed);
    let imgs = random_tensor([4, 1, 16, 18], &mut rng);
    let auds = random_tensor([4, 1, 16, 16], &mut rng);
    let margin = 0.5;
    let loss = |f: &Pathway<f64>, g: &Pathway<f64>| {
        let x = f.embed(&imgs, Mode::Train).unwrap();
        let y = g.embed(&auds, Mode::Train).unwrap();
        ranking_loss(&x, &y, margin, symmetric).unwrap().loss
    };
    let (x, tf) = model.image.forward(&imgs, Mode::Train).unwrap();
    let (y, tg) = model.audio.forward(&auds, Mode::Train).unwrap();
    let r = ranking_loss(&x, &y, margin, symmetric).unwrap();
    let gf: Vec<f64> = model.image.backward(&tf, &r.grad_x).unwrap().concat();
    let gg: Vec<f64> = model.audio.backward(&tg, &r.grad_y).unwrap().concat();
    let nf = numeric_grad(&pathway_params(&model.image), |v| {
        let mut f = model.image.clone();
        set_pathway_params(&mut f, v);
        loss(&f, &model.audio)
    });
    let ng = numeric_grad(&pathway_params(&model.audio), |v| {
        let mut g = model.audio.clone();
        set_pathway_params(&mut g, v);
        loss(&model.image, &g)
    });
    rel_error(&gf, &nf).max(rel_error(&gg, &ng))
}

/// Relative errors of every layer and of the whole network plus loss.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("conv3x3 direct", conv_errors(Kernel::K3, 3, 4, 1)),
        ("conv3x3 gemm", conv_errors(Kernel::K3, 4, 5, 2)),
        ("conv1x1", conv_errors(Kernel::K1, 3, 4, 3)),
        ("batchnorm", batchnorm_error(4)),
        ("elu", elu_error(5)),
        ("maxpool", maxpool_error(6)),
        ("global average pool", gap_error(7)),
        ("l2 normalize", l2_error(8)),
        ("end to end", end_to_end_error(false, 9)),
        ("end to end symmetric", end_to_end_error(true, 10)),
    ]
}

pub fn check_gradients() -> Check {
    let results = gradient_suite();
    let worst = results.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e < GRAD_TOLERANCE))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    if failed.is_empty() {
        Ok(format!("{} checks, worst {} {:.2e}", results.len(), worst.0, worst.1))
    } else {
        Err(format!("over {GRAD_TOLERANCE:e}: {}", failed.join(", ")))
    }
}

pub fn check_architecture() -> Check {
    let (f, g) = build_pathways(1.0).map_err(|e| e.to_string())?;
    let expect_names = [
        "Conv(3, pad-1)-12", "BN", "ELU", "Conv(3, pad-1)-12", "BN", "ELU", "MP(2)",
        "Conv(3, pad-1)-24", "BN", "ELU", "Conv(3, pad-1)-24", "BN", "ELU", "MP(2)",
        "Conv(3, pad-1)-48", "BN", "ELU", "Conv(3, pad-1)-48", "BN", "ELU", "MP(2)",
        "Conv(3, pad-1)-48", "BN", "ELU", "Conv(3, pad-1)-48", "BN", "ELU", "MP(2)",
        "Conv(1, pad-0)-32", "BN", "GlobalAveragePooling",
    ];
    for (which, spec, pre, input) in [("image", f, [32, 11, 12], [1, 180, 200]), ("audio", g, [32, 5, 2], [1, 92, 42])] {
        if spec.input != input {
            return Err(format!("{which} input {:?}", spec.input));
        }
        let names: Vec<String> = spec.layers().iter().map(|l| l.name()).collect();
        if names != expect_names {
            return Err(format!("{which} layer sequence {names:?}"));
        }
        if spec.pre_pool_shape() != pre {
            return Err(format!("{which} pre-pool {:?}", spec.pre_pool_shape()));
        }
    }
    let model = EmbeddingModel::<f32>::new(1.0, 0).map_err(|e| e.to_string())?;
    let x = model.embed_image(&Tensor4::filled([1, 1, 180, 200], 0.5), Mode::Eval).map_err(|e| e.to_string())?;
    let y = model.embed_audio(&Tensor4::filled([1, 1, 92, 42], 0.5), Mode::Eval).map_err(|e| e.to_string())?;
    if x.cols() != 32 || y.cols() != 32 {
        return Err(format!("embedding dims {} / {}", x.cols(), y.cols()));
    }
    Ok("31 layers per pathway; pre-pool 32x11x12 and 32x5x2; 32-d embeddings".into())
}

fn random_unit(n: usize, d: usize, rng: &mut impl Rng) -> Matrix<f64> {
    let raw = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    l2_normalize_rows(&raw).unwrap()
}

pub fn check_loss_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let basis = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let zero = ranking_loss(&basis, &basis, 0.0, false).map_err(|e| e.to_string())?.loss;
    if zero != 0.0 {
        return Err(format!("alpha 0 with dominating matches gave {zero}"));
    }
    let x = random_unit(8, 6, &mut rng);
    let same = ranking_loss(&x, &x, 0.0, true).map_err(|e| e.to_string())?.loss;
    if same != 0.0 {
        return Err(format!("alpha 0 with x = y gave {same}"));
    }
    let n = 7;
    let alpha = 0.2;
    let x = random_unit(n, 5, &mut rng);
    let y = random_unit(n, 5, &mut rng);
    let (mut xd, mut yd) = (x.clone(), y.clone());
    xd.append(&x).map_err(|e| e.to_string())?;
    yd.append(&y).map_err(|e| e.to_string())?;
    let terms = hinge_terms(&xd, &yd, alpha, false).map_err(|e| e.to_string())?;
    let dup: Vec<f64> = terms.iter().filter(|(j, k, _)| j % n == k % n).map(|t| t.2).collect();
    let contrastive = terms.len() - dup.len();
    if contrastive != 2 * n * (2 * n - 2) || dup.len() != 2 * n {
        return Err(format!("counted {contrastive} contrastive and {} duplicate terms", dup.len()));
    }
    if dup.iter().any(|&v| v != alpha) {
        return Err("a duplicated-match term differs from alpha".into());
    }
    Ok(format!("zero loss exact; {} anchors x {} contrastive + {} terms equal to alpha", 2 * n, 2 * n - 2, 2 * n))
}

fn all_paths(rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(r: usize, c: usize, rows: usize, cols: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((r, c));
        if (r, c) == (rows - 1, cols - 1) {
            out.push(cur.clone());
        } else {
            for (dr, dc) in [(1, 1), (1, 0), (0, 1)] {
                if r + dr < rows && c + dc < cols {
                    go(r + dr, c + dc, rows, cols, cur, out);
                }
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    go(0, 0, rows, cols, &mut Vec::new(), &mut out);
    out
}

pub fn check_dtw_oracle(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let levels = [0.0, 0.5, 1.0];
    let mut paths_seen = 0;
    for i in 0..count {
        let (rows, cols) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let data: Vec<f64> = (0..rows * cols).map(|_| levels[rng.gen_range(0..3)]).collect();
        let m = CostMatrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
        let (path, cost) = dtw(&m);
        path.validate(rows, cols).map_err(|e| format!("matrix {i}: {e}"))?;
        let all = all_paths(rows, cols);
        paths_seen += all.len();
        let best = all
            .iter()
            .map(|p| p.iter().map(|&(r, c)| m.get(r, c)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if cost != best || m.path_cost(&path) != cost {
            return Err(format!("matrix {i} ({rows}x{cols}): dtw {cost}, exhaustive {best}"));
        }
        let lin = linear_baseline(rows, cols).map_err(|e| e.to_string())?;
        if cost > m.path_cost(&lin) {
            return Err(format!("matrix {i}: dtw above linear baseline"));
        }
    }
    Ok(format!("{count} matrices, {paths_seen} enumerated paths, all equal"))
}

pub fn check_retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let emb = random_unit(200, 16, &mut rng);
    let meta = (0..200).map(|i| CandidateMeta { piece_id: (i / 40) as u32, note_index: i % 40 }).collect();
    let index = EmbeddingIndex::new(emb.clone(), meta).map_err(|e| e.to_string())?;
    let queries = random_unit(50, 16, &mut rng);
    for (qi, q) in queries.iter_rows().enumerate() {
        let mut all: Vec<(f64, usize)> = emb
            .iter_rows()
            .enumerate()
            .map(|(i, x)| (1.0 - x.iter().zip(q).map(|(a, b)| a * b).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let got = index.query_knn(qi, q, 200).map_err(|e| e.to_string())?;
        if got.rows != all.iter().map(|a| a.1).collect::<Vec<_>>() {
            return Err(format!("query {qi} ranking differs from full sort"));
        }
    }
    let ranks = [1, 3, 12, 30];
    let got = (
        recall_at_k(&ranks, 1),
        recall_at_k(&ranks, 10),
        recall_at_k(&ranks, 25),
        median_rank(&ranks).map_err(|e| e.to_string())?,
    );
    if got != (25.0, 50.0, 75.0, 3) {
        return Err(format!("hand-counted metrics {got:?}"));
    }
    Ok("50x200 rankings equal full sort; R@1 25, R@10 50, R@25 75, MR 3".into())
}

pub fn check_random_baseline() -> Check {
    use cmscore::eval::{random_unit_rows, SplitEmbeddings};
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let index = EmbeddingIndex::new(
        random_unit_rows::<f32, _>(n, 32, &mut rng).map_err(|e| e.to_string())?,
        (0..n).map(|i| CandidateMeta { piece_id: 0, note_index: i }).collect(),
    )
    .map_err(|e| e.to_string())?;
    let base = SplitEmbeddings { queries: index.embeddings().clone(), index, true_rows: (0..n).collect() };
    let mut mrs = Vec::new();
    for seed in 0..5 {
        let emb = base.random_baseline(seed).map_err(|e| e.to_string())?;
        let mr = median_rank(&emb.ranks().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        mrs.push(mr);
    }
    let half = n as f64 / 2.0;
    if mrs.iter().all(|&m| (m as f64 - half).abs() <= 0.2 * half) {
        Ok(format!("MR over 5 seeds {mrs:?}, N/2 = {half}"))
    } else {
        Err(format!("MR over 5 seeds {mrs:?} not within 20% of {half}"))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

fn tiny_data(seed: u64) -> Dataset {
    let cfg = DatasetConfig { notes_per_piece: 8, augment: AugmentToggles::FULL, ..DatasetConfig::default() };
    let plan = SplitPlan { train: vec![0], val: vec![1], test: vec![2, 3] };
    build_dataset_with_plan(&cfg, &plan, seed).unwrap()
}

fn metric_csv(model: &EmbeddingModel<f32>, data: &Dataset) -> String {
    let emb = cmscore::eval::embed_split(model, &data.test).unwrap();
    let (_, ranks) = emb.metrics().unwrap();
    cmscore::retrieval::ranks_csv(&ranks).unwrap()
}

pub fn check_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = DatasetConfig::default();
    for name in ["a", "b"] {
        build_dataset(&cfg, 21).map_err(|e| e.to_string())?.save(tmp.path().join(name)).map_err(|e| e.to_string())?;
    }
    let (a, b) = (dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    if a != b {
        return Err("dataset files differ between identical builds".into());
    }
    let reloaded = Dataset::load(tmp.path().join("a")).map_err(|e| e.to_string())?;
    if reloaded != build_dataset(&cfg, 21).map_err(|e| e.to_string())? {
        return Err("reloaded dataset differs".into());
    }

    let data = tiny_data(3);
    let tcfg = TrainConfig { seed: 3, max_epochs: Some(3), batch_size: 24, ..TrainConfig::default() };
    let run = |epochs: u64| {
        let mut t = Trainer::<f32>::new(TrainConfig { max_epochs: Some(epochs), ..tcfg.clone() }).unwrap();
        t.run(&data, |_, _| Ok(())).unwrap();
        t
    };
    let (t1, t2) = (run(3), run(3));
    let curve = |t: &Trainer<f32>| t.log.iter().map(|r| r.csv_row()).collect::<Vec<_>>().join("\n");
    if curve(&t1) != curve(&t2) {
        return Err("loss curves differ between identical runs".into());
    }
    if metric_csv(&t1.model, &data) != metric_csv(&t2.model, &data) {
        return Err("metric CSVs differ between identical runs".into());
    }

    let ck = t1.checkpoint();
    let path = tmp.path().join("m.ckpt");
    ck.save(&path).map_err(|e| e.to_string())?;
    let back = ModelCheckpoint::load(&path).map_err(|e| e.to_string())?;
    if back != ck || back.to_bytes() != ck.to_bytes() {
        return Err("checkpoint does not round-trip".into());
    }
    let restored = EmbeddingModel::<f32>::from_checkpoint(&back).map_err(|e| e.to_string())?;
    if restored != t1.model {
        return Err("restored model differs".into());
    }

    let mut resumed = Trainer::<f32>::resume(TrainConfig { max_epochs: Some(4), ..tcfg.clone() }, &back, t1.best.clone())
        .map_err(|e| e.to_string())?;
    let mut straight = run(3);
    straight.config.max_epochs = Some(4);
    let (order, params) = resumed.epoch_plan(&data.train);
    let batch = &order[..24];
    let l_resumed = resumed.step(&data.train, batch, &params[..24]).map_err(|e| e.to_string())?;
    let l_straight = straight.step(&data.train, batch, &params[..24]).map_err(|e| e.to_string())?;
    if l_resumed.to_bits() != l_straight.to_bits() {
        return Err(format!("next-step loss after resume {l_resumed} vs {l_straight}"));
    }
    Ok(format!("{} dataset files identical; curves, metric CSV, checkpoint and next-step loss exact", a.len()))
}
