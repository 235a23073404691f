use std::fs;
use std::path::{Path, PathBuf};

use cmscore::alignment::ErrorSummary;
use cmscore::domain::{EMBED_DIM, EXCERPT_FRAMES, SNIPPET_HEIGHT, SNIPPET_WIDTH, SPEC_BINS};
use cmscore::eval::{align_recording, embed_split, identify_all, random_split_embeddings, SplitEmbeddings};
use cmscore::model::{EmbeddingModel, ModelCheckpoint};
use cmscore::retrieval::{ranks_csv, RetrievalMetrics};
use cmscore::synthdata::{build_dataset, AugmentToggles, Dataset, Split};
use cmscore::training::{EpochLog, StopReason, Trainer};
use serde::Serialize;

use crate::config::{EvalMode, RunConfig};
use crate::{CliError, Common};

const LAST_CKPT: &str = "last.ckpt";
const BEST_CKPT: &str = "best.ckpt";
const METRICS_CSV: &str = "metrics.csv";

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.set)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn is_empty_dir(p: &Path) -> Result<bool, CliError> {
    Ok(fs::read_dir(p)?.next().is_none())
}

/// Creates the output directory; a non-empty one needs `force` and is
/// cleared first.
fn prepare_out(c: &Common) -> Result<(), CliError> {
    if c.out.exists() {
        if !c.out.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", c.out.display())));
        }
        if !is_empty_dir(&c.out)? {
            if !c.force {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty (use --force to replace it)",
                    c.out.display()
                )));
            }
            fs::remove_dir_all(&c.out)?;
        }
    }
    fs::create_dir_all(&c.out)?;
    Ok(())
}

fn write_config(c: &Common, cfg: &RunConfig) -> Result<(), CliError> {
    fs::write(c.out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(cmscore::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn require_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("config key `{key}` is required for this command")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{key} {} does not exist", p.display())));
    }
    Ok(p)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = require_path(&cfg.dataset, "dataset")?;
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Usage(format!("{} holds no dataset manifest", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

fn load_model(cfg: &RunConfig) -> Result<EmbeddingModel<f32>, CliError> {
    let path = require_path(&cfg.checkpoint, "checkpoint")?;
    let ckpt = ModelCheckpoint::load(path)?;
    let want_img = [1, SNIPPET_HEIGHT, SNIPPET_WIDTH];
    let want_aud = [1, SPEC_BINS, EXCERPT_FRAMES];
    if ckpt.image_spec.input != want_img || ckpt.audio_spec.input != want_aud {
        return Err(CliError::Run(cmscore::Error::InvalidArgument(format!(
            "checkpoint inputs {:?}/{:?} do not match data dimensions {want_img:?}/{want_aud:?}",
            ckpt.image_spec.input, ckpt.audio_spec.input
        ))));
    }
    Ok(EmbeddingModel::from_checkpoint(&ckpt)?)
}

fn save_checkpoint(ckpt: &ModelCheckpoint, path: PathBuf) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    ckpt.save(&tmp)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn gen_data(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dcfg = cfg.dataset_config()?;
    prepare_out(c)?;
    let data = build_dataset(&dcfg, cfg.seed)?;
    data.save(&c.out)?;
    write_config(c, &cfg)?;
    for split in [&data.train, &data.val, &data.test] {
        println!(
            "{:<5} {:>6} pairs  {:>2} pieces  {:>3} recordings  ids {:?}",
            split.kind.name(),
            split.len(),
            split.pieces.len(),
            split.recordings.len(),
            split.piece_ids()
        );
    }
    Ok(())
}

/// Keeps the header and the rows of epochs up to `epoch`.
fn trimmed_log(path: &Path, epoch: u64) -> Result<String, CliError> {
    let mut out = format!("{}\n", EpochLog::CSV_HEADER);
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let e: u64 = line.split(',').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
            if e <= epoch {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn train(c: &Common, resume: bool) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let tcfg = cfg.train_config()?;
    tcfg.validate()?;
    let data = load_dataset(&cfg)?;
    let mut trainer = if resume {
        let last = c.out.join(LAST_CKPT);
        if !last.is_file() {
            return Err(CliError::Usage(format!("--resume: no checkpoint at {}", last.display())));
        }
        let last = ModelCheckpoint::load(&last)?;
        let best_path = c.out.join(BEST_CKPT);
        let best = if best_path.is_file() {
            Some(ModelCheckpoint::load(&best_path)?)
        } else {
            None
        };
        fs::write(c.out.join(METRICS_CSV), trimmed_log(&c.out.join(METRICS_CSV), last.epoch)?)?;
        Trainer::<f32>::resume(tcfg, &last, best)?
    } else {
        prepare_out(c)?;
        fs::write(c.out.join(METRICS_CSV), format!("{}\n", EpochLog::CSV_HEADER))?;
        Trainer::<f32>::new(tcfg)?
    };
    write_config(c, &cfg)?;
    let out = c.out.clone();
    let stop = trainer.run(&data, |t, row| {
        let io = |e: std::io::Error| cmscore::Error::from(e);
        let improved = t.best.as_ref().is_some_and(|b| b.epoch == t.epoch);
        let save = |ck: &ModelCheckpoint, name: &str| -> cmscore::Result<()> {
            let tmp = out.join(format!("{name}.tmp"));
            ck.save(&tmp)?;
            fs::rename(&tmp, out.join(name)).map_err(io)
        };
        save(&t.checkpoint(), LAST_CKPT)?;
        if improved {
            save(t.best.as_ref().expect("improved epoch has a best checkpoint"), BEST_CKPT)?;
        }
        use std::io::Write;
        let mut f = fs::OpenOptions::new().append(true).open(out.join(METRICS_CSV)).map_err(io)?;
        writeln!(f, "{}", row.csv_row()).map_err(io)?;
        eprintln!(
            "epoch {:>4}  train {:.5}  val {:.5}  lr {:.3e}{}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.lr,
            if improved { "  *" } else { "" }
        );
        Ok(())
    })?;
    if !c.out.join(BEST_CKPT).is_file() {
        save_checkpoint(&trainer.best_checkpoint(), c.out.join(BEST_CKPT))?;
    }
    let why = match stop {
        StopReason::ScheduleExhausted => "learning-rate schedule exhausted",
        StopReason::MaxEpochs => "epoch limit reached",
    };
    println!("stopped after {} epochs: {why}", trainer.epoch);
    Ok(())
}

fn test_embeddings(cfg: &RunConfig, test: &Split) -> Result<SplitEmbeddings<f32>, CliError> {
    Ok(match cfg.eval_mode {
        EvalMode::Random => random_split_embeddings(test, EMBED_DIM, cfg.seed)?,
        EvalMode::Model => embed_split(&load_model(cfg)?, test)?,
        EvalMode::Oracle => embed_split(&load_model(cfg)?, test)?.oracle(),
    })
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    mode: EvalMode,
    #[serde(flatten)]
    metrics: &'a RetrievalMetrics,
}

pub fn eval_retrieval(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    if cfg.eval_mode != EvalMode::Random {
        require_path(&cfg.checkpoint, "checkpoint")?;
    }
    let data = load_dataset(&cfg)?;
    prepare_out(c)?;
    write_config(c, &cfg)?;
    let emb = test_embeddings(&cfg, &data.test)?;
    let (m, ranks) = emb.metrics()?;
    emb.index.save(c.out.join("index"))?;
    fs::write(c.out.join("ranks.csv"), ranks_csv(&ranks)?)?;
    write_json(c.out.join("metrics.json"), &MetricsReport { mode: cfg.eval_mode, metrics: &m })?;
    println!("queries {}  candidates {}", m.queries, m.candidates);
    println!("R@1 {:.2}  R@10 {:.2}  R@25 {:.2}  MR {}", m.r1, m.r10, m.r25, m.median_rank);
    Ok(())
}

pub fn identify(c: &Common, recording: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_config(c)?;
    if recording.is_some() {
        cfg.recording = recording;
    }
    require_path(&cfg.checkpoint, "checkpoint")?;
    let data = load_dataset(&cfg)?;
    prepare_out(c)?;
    write_config(c, &cfg)?;
    let emb = embed_split(&load_model(&cfg)?, &data.test)?;
    let results = match cfg.recording {
        Some(r) => vec![emb.identify(&data.test, r, cfg.votes_per_query)?],
        None => identify_all(&emb, &data.test, cfg.votes_per_query)?,
    };
    let mut csv = String::from("recording,true_piece,true_rank,piece_id,votes\n");
    for id in &results {
        println!(
            "recording {}  piece {}  rank {}  ({} votes from {} queries)",
            id.recording, id.piece_id, id.true_rank, id.votes.total_votes, id.queries
        );
        for (pos, (piece, votes)) in id.votes.ranking.iter().enumerate() {
            println!("  {:>3}. piece {:>4}  {:>5} votes", pos + 1, piece, votes);
            csv.push_str(&format!("{},{},{},{},{}\n", id.recording, id.piece_id, id.true_rank, piece, votes));
        }
    }
    let at_one = results.iter().filter(|r| r.true_rank == 1).count();
    println!("{at_one} of {} recordings identified at rank 1", results.len());
    fs::write(c.out.join("identify.csv"), csv)?;
    write_json(c.out.join("identify.json"), &results)?;
    Ok(())
}

#[derive(Serialize)]
struct AlignSummary {
    piece_id: u32,
    recording: usize,
    image_windows: usize,
    audio_windows: usize,
    path_cost: f64,
    dtw: ErrorSummary,
    linear: ErrorSummary,
}

pub fn align(c: &Common, piece: Option<u32>, matrix_dump: bool) -> Result<(), CliError> {
    let mut cfg = load_config(c)?;
    if piece.is_some() {
        cfg.piece = piece;
    }
    cfg.matrix_dump |= matrix_dump;
    require_path(&cfg.checkpoint, "checkpoint")?;
    let data = load_dataset(&cfg)?;
    let test = &data.test;
    let pieces = match cfg.piece {
        Some(p) if test.piece_ids().contains(&p) => vec![p],
        Some(p) => return Err(CliError::Usage(format!("piece {p} is not in the test split {:?}", test.piece_ids()))),
        None => test.piece_ids(),
    };
    prepare_out(c)?;
    write_config(c, &cfg)?;
    let model = load_model(&cfg)?;
    let acfg = cfg.align_config();
    let mut summaries = Vec::new();
    for p in pieces {
        for r in test.recordings_of(p) {
            let a = align_recording(&model, test, r, &acfg)?;
            let stem = format!("piece{p}_rec{r}");
            fs::write(c.out.join(format!("{stem}_dtw.csv")), a.dtw.to_csv())?;
            fs::write(c.out.join(format!("{stem}_linear.csv")), a.linear.to_csv())?;
            if cfg.matrix_dump {
                fs::write(c.out.join(format!("{stem}_cost.txt")), a.cost.to_text())?;
                let path: String = a.path.steps.iter().map(|(i, j)| format!("{i} {j}\n")).collect();
                fs::write(c.out.join(format!("{stem}_path.txt")), path)?;
            }
            println!(
                "piece {p} recording {r}: median error dtw {:.4}  linear {:.4}",
                a.dtw.summary.median, a.linear.summary.median
            );
            summaries.push(AlignSummary {
                piece_id: p,
                recording: r,
                image_windows: a.cost.rows(),
                audio_windows: a.cost.cols(),
                path_cost: a.path_cost,
                dtw: a.dtw.summary,
                linear: a.linear.summary,
            });
        }
    }
    let mut boxes = String::from("# method median q1 q3 max\n");
    for s in &summaries {
        for (name, e) in [("dtw", s.dtw), ("linear", s.linear)] {
            boxes.push_str(&format!("{name}_{}_{} {} {} {} {}\n", s.piece_id, s.recording, e.median, e.q1, e.q3, e.max));
        }
    }
    fs::write(c.out.join("boxplot.dat"), boxes)?;
    write_json(c.out.join("align_summary.json"), &summaries)?;
    Ok(())
}

/// Lower middle element.
fn median_of<T: Copy + PartialOrd>(v: &[T]) -> T {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    s[(s.len() - 1) / 2]
}

pub fn ablate(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    if cfg.ablate_rows.is_empty() || cfg.ablate_seeds.is_empty() {
        return Err(CliError::Usage("ablate_rows and ablate_seeds must not be empty".into()));
    }
    let rows = cfg
        .ablate_rows
        .iter()
        .map(|r| AugmentToggles::parse(r).map(|t| t.label()))
        .collect::<cmscore::Result<Vec<_>>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    prepare_out(c)?;
    write_config(c, &cfg)?;
    let mut cells = String::from("row,seed,epochs,r1,r10,r25,mr\n");
    let mut summary = String::from("row,median_r1,median_r10,median_r25,median_mr\n");
    for name in &rows {
        let mut per_seed = Vec::new();
        for &seed in &cfg.ablate_seeds {
            let mut run = cfg.clone();
            run.seed = seed;
            run.augment = name.clone();
            let data = build_dataset(&run.dataset_config()?, seed)?;
            let mut t = Trainer::<f32>::new(run.train_config()?)?;
            t.run(&data, |_, row| {
                eprintln!("[{name} seed {seed}] epoch {} val {:.5}", row.epoch, row.val_loss);
                Ok(())
            })?;
            let model = EmbeddingModel::<f32>::from_checkpoint(&t.best_checkpoint())?;
            let (m, _) = embed_split(&model, &data.test)?.metrics()?;
            println!(
                "{name:<12} seed {seed:<4} R@1 {:6.2}  R@10 {:6.2}  R@25 {:6.2}  MR {}",
                m.r1, m.r10, m.r25, m.median_rank
            );
            cells.push_str(&format!("{name},{seed},{},{},{},{},{}\n", t.epoch, m.r1, m.r10, m.r25, m.median_rank));
            per_seed.push(m);
        }
        let col = |f: fn(&RetrievalMetrics) -> f64| median_of(&per_seed.iter().map(f).collect::<Vec<_>>());
        let mr = median_of(&per_seed.iter().map(|m| m.median_rank).collect::<Vec<_>>());
        summary.push_str(&format!("{name},{},{},{},{mr}\n", col(|m| m.r1), col(|m| m.r10), col(|m| m.r25)));
    }
    fs::write(c.out.join("ablate.csv"), cells)?;
    fs::write(c.out.join("ablate_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}
