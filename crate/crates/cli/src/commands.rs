use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use breathorder::dataio::{
    read_clip, read_frames_dir, segment_video, split_by_participant, synth_dataset, Dataset, RecoverySequence, Split,
    MANIFEST_FILE,
};
use breathorder::evalharness::{
    evaluate, evaluation_pairs, render_reports, EvalReport, ModelPredictor, RunMeta, SeparationCurve,
};
use breathorder::gradsuite::gradient_suite;
use breathorder::motionmask::{motion_guided_mask, write_previews};
use breathorder::tensorcore::read_checkpoint;
use breathorder::trainer::{train as train_model, Model, PreparedClips, FINAL_CHECKPOINT};
use breathorder::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{io_error, write_json, CommonArgs, RunConfig, CONFIG_FILE};

pub const SPLIT_FILE: &str = "split.json";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Raised when at least one gradient check exceeds tolerance.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} gradient checks exceeded tolerance", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

pub fn synth(common: &CommonArgs, out: &Path, sequences: usize, clips: Option<usize>) -> Result<()> {
    let mut config = common.resolve()?;
    config.align_synth();
    if let Some(m) = clips {
        if m < 3 {
            return Err(Error::InsufficientSequence(m).into());
        }
        config.synth.num_clips = m;
    }
    if sequences == 0 {
        return Err(Error::Config("at least one sequence is required".into()).into());
    }
    config.validate()?;
    let data = Dataset::new(synth_dataset(&config.synth, sequences)?)?;
    data.write(out)?;
    config.write(out)?;
    println!(
        "wrote {} sequences of {} clips to {}",
        data.len(),
        config.synth.num_clips,
        out.display()
    );
    Ok(())
}

pub fn mask(common: &CommonArgs, data: &Path, out: &Path, tile: Option<usize>, previews: usize) -> Result<()> {
    let config = common.resolve()?;
    config.encoder.validate()?;
    let mut mgm = config.encoder.mgm();
    if let Some(t) = tile {
        mgm.tile_size = t;
    }
    let dataset = Dataset::load(data)?;
    let mut kept = 0usize;
    let mut tiles = 0usize;
    let mut written = 0usize;
    let mut masked = Vec::with_capacity(dataset.len());
    for seq in &dataset.sequences {
        let outputs = seq
            .clips
            .par_iter()
            .map(|c| motion_guided_mask(c, &mgm))
            .collect::<breathorder::Result<Vec<_>>>()?;
        for o in &outputs {
            if written < previews {
                let dir = out
                    .join("previews")
                    .join(format!("{}_{:04}", o.clip.video_id, o.clip.clip_index));
                let source = &seq.clips[o.clip.clip_index];
                write_previews(&dir, source, &o.motion, &o.mask)?;
                written += 1;
            }
            kept += o.mask.kept_in_frame(0);
            tiles += o.mask.frame(0).len();
        }
        let clips = outputs.into_iter().map(|o| o.clip).collect();
        masked.push(RecoverySequence::new(
            seq.video_id.clone(),
            seq.participant_id.clone(),
            clips,
        )?);
    }
    Dataset::new(masked)?.write(out)?;
    let mut recorded = config.clone();
    recorded.data_dir = Some(data.to_path_buf());
    recorded.write(out)?;
    let clips: usize = dataset.sequences.iter().map(|s| s.num_clips()).sum();
    println!(
        "masked {clips} clips with {}px tiles, keeping {kept} of {tiles} tiles per frame summed over clips",
        mgm.tile_size
    );
    Ok(())
}

pub fn train(
    common: &CommonArgs,
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
) -> Result<()> {
    let mut config = common.resolve()?;
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = lr {
        config.train.adam.lr = lr;
    }
    if let Some(b) = batch_size {
        config.train.batch_size = b;
    }
    config.data_dir = Some(data.to_path_buf());
    config.encoder.validate()?;
    config.train.validate()?;
    let dataset = Dataset::load(data)?;
    let split = split_by_participant(
        &dataset.sequences,
        config.train.test_fraction,
        config.train.validation_fraction,
        config.seed(),
    )?;
    let train_set = dataset.subset(&split.train)?;
    let val_set = dataset.subset(&split.validation)?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    config.write(out)?;
    write_json(out, SPLIT_FILE, &split)?;
    let outcome = train_model(&config.encoder, &config.train, &train_set, &val_set, Some(out))?;
    for e in &outcome.log.epochs {
        println!(
            "epoch {} train_loss {:.4} val_loss {:.4} val_acc {:.3}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    println!("wrote {}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

/// A trained run with its test sequences loaded.
struct LoadedRun {
    config: RunConfig,
    dataset: Dataset,
    split: Split,
    model: Model,
}

fn load_run(run: &Path, data: Option<&Path>) -> Result<LoadedRun> {
    let config = RunConfig::load(&run.join(CONFIG_FILE))?;
    let split_path = run.join(SPLIT_FILE);
    let text = fs::read_to_string(&split_path).map_err(|e| io_error(&split_path, e))?;
    let split: Split = serde_json::from_str(&text).with_context(|| split_path.display().to_string())?;
    let data_dir: PathBuf = match (data, &config.data_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(Error::Config(format!("{} names no dataset; pass --data", run.display())).into()),
    };
    let dataset = Dataset::load(&data_dir)?;
    let model = Model::load(config.train.method, &config.encoder, &run.join(FINAL_CHECKPOINT))?;
    Ok(LoadedRun {
        config,
        dataset,
        split,
        model,
    })
}

fn evaluate_run(run: &LoadedRun) -> Result<EvalReport> {
    let test = run.dataset.subset(&run.split.test)?;
    let pairs = evaluation_pairs(&test, run.config.train.min_separation, run.config.seed())?;
    let clips = PreparedClips::build(&run.model.encoder, &test)?;
    let report = evaluate(
        &ModelPredictor {
            model: &run.model,
            clips: &clips,
        },
        &pairs,
    )?;
    Ok(report.with_tags(run.config.encoder.posenc, run.config.encoder.mgm_enabled))
}

pub fn eval(runs: &[PathBuf], data: Option<&Path>, out: &Path) -> Result<()> {
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let loaded = load_run(run, data)?;
        let report = evaluate_run(&loaded)?;
        println!(
            "{} posenc {} mgm {}: accuracy {:.4} f1 {:.4} over {} pairs",
            report.method,
            loaded.config.encoder.posenc,
            if loaded.config.encoder.mgm_enabled { "on" } else { "off" },
            report.accuracy,
            report.f1,
            report.n_pairs
        );
        reports.push(report);
    }
    let seed = reports_seed(runs)?;
    let meta = RunMeta::new(seed, json!({ "runs": runs }));
    render_reports(&reports, None, &meta, out)?;
    Ok(())
}

fn reports_seed(runs: &[PathBuf]) -> Result<u64> {
    Ok(RunConfig::load(&runs[0].join(CONFIG_FILE))?.seed())
}

pub fn curve(run: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let loaded = load_run(run, data)?;
    let report = evaluate_run(&loaded)?;
    let curve = SeparationCurve::from_report(&report);
    for p in &curve.points {
        let flag = if p.low_confidence { " (low confidence)" } else { "" };
        println!(
            "delta {:>3}  n {:>5}  accuracy {:.4}{flag}",
            p.delta, p.n_pairs, p.accuracy
        );
    }
    println!("spearman {:.4}", curve.spearman());
    let meta = RunMeta::new(loaded.config.seed(), json!({ "runs": [run] }));
    render_reports(&[report], Some(&curve), &meta, out)?;
    Ok(())
}

pub fn gradcheck(seeds: &[u64], out: Option<&Path>) -> Result<()> {
    let rows = gradient_suite(seeds)?;
    let mut csv = String::from("name,seed,max_rel_error,status\n");
    for r in &rows {
        let status = if r.passed { "pass" } else { "fail" };
        println!("{:<32} seed {:<3} {:.3e} {status}", r.name, r.seed, r.max_rel_error);
        csv.push_str(&format!("{},{},{:e},{status}\n", r.name, r.seed, r.max_rel_error));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(GRADCHECK_FILE);
        fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(GradcheckFailed(failed).into());
    }
    println!("{} checks passed", rows.len());
    Ok(())
}

pub fn inspect(path: &Path) -> Result<()> {
    if path.is_dir() {
        if path.join(MANIFEST_FILE).exists() {
            let data = Dataset::load(path)?;
            let clips: usize = data.sequences.iter().map(|s| s.num_clips()).sum();
            println!("dataset: {} sequences, {clips} clips", data.len());
            if let Some(s) = data.sequences.first() {
                println!("clip dims: {:?}", s.clips[0].dims());
            }
            return Ok(());
        }
        if path.join(CONFIG_FILE).exists() {
            let config = RunConfig::load(&path.join(CONFIG_FILE))?;
            println!("{}", serde_json::to_string_pretty(&config)?);
            let ckpt = path.join(FINAL_CHECKPOINT);
            if ckpt.exists() {
                print_checkpoint(&ckpt)?;
            }
            return Ok(());
        }
        return Err(Error::MissingArtifact(path.join(MANIFEST_FILE)).into());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("bock") => print_checkpoint(path),
        _ => {
            let clip = read_clip(path)?;
            println!(
                "clip {} #{}: {:?} at {} fps",
                clip.video_id,
                clip.clip_index,
                clip.dims(),
                clip.fps
            );
            Ok(())
        }
    }
}

fn print_checkpoint(path: &Path) -> Result<()> {
    let tensors = read_checkpoint(path)?;
    let total: usize = tensors.iter().map(|(_, t)| t.numel()).sum();
    println!("checkpoint: {} tensors, {total} parameters", tensors.len());
    for (name, t) in &tensors {
        println!("  {name} {:?}", t.shape());
    }
    Ok(())
}

pub fn segment(
    common: &CommonArgs,
    frames: &Path,
    fps: f64,
    video_id: &str,
    participant: &str,
    out: &Path,
    clip_seconds: Option<f64>,
) -> Result<()> {
    let config = common.resolve()?;
    let seconds = clip_seconds.unwrap_or(config.synth.clip_seconds);
    let video = read_frames_dir(frames, video_id, fps)?;
    let seq = segment_video(&video, participant, seconds, config.encoder.frames)?;
    let count = seq.num_clips();
    let mut sequences = if out.join(MANIFEST_FILE).exists() {
        Dataset::load(out)?.sequences
    } else {
        Vec::new()
    };
    sequences.push(seq);
    Dataset::new(sequences)?.write(out)?;
    println!("added {video_id} with {count} clips to {}", out.display());
    Ok(())
}
