use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{derive_seed, make_pairs, PairSample, RecoverySequence, WeakLabel};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{pair_bce, prototype_loss, Method};
use crate::tensorcore::Tape;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::log::{EpochRecord, StepRecord, TrainLog};
use super::model::{Head, Model, PreparedClips, INFERENCE_CHUNK};

/// Final model and its history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Checkpoint file written after epoch `epoch` (1-based).
pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.bock")
}

pub const FINAL_CHECKPOINT: &str = "model.bock";

/// Trains whichever method `config.method` names.
pub fn train(
    encoder: &EncoderConfig,
    config: &TrainConfig,
    train: &[&RecoverySequence],
    validation: &[&RecoverySequence],
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    match config.method {
        Method::Embedding => train_embedding(encoder, config, train, validation, out),
        Method::TtFull | Method::TtCls => train_two_tower(encoder, config, train, validation, out),
    }
}

/// Rejects pair sets whose presentation order is unbalanced, whose clips
/// coincide, or that reference a video outside `sequences`.
pub fn check_pairs(pairs: &[PairSample], sequences: &[&RecoverySequence]) -> Result<()> {
    let known: HashSet<&str> = sequences.iter().map(|s| s.video_id.as_str()).collect();
    let mut earlier = 0usize;
    for p in pairs {
        if !known.contains(p.video_id.as_str()) {
            return Err(Error::Dataset(format!("pair references unknown video {}", p.video_id)));
        }
        if p.first == p.second {
            return Err(Error::Dataset(format!(
                "pair compares clip {} of {} with itself",
                p.first, p.video_id
            )));
        }
        earlier += usize::from(p.first_is_earlier());
    }
    if 2 * earlier != pairs.len() {
        return Err(Error::Dataset(format!(
            "{earlier} of {} pairs present the earlier clip first",
            pairs.len()
        )));
    }
    Ok(())
}

struct LabeledClip<'a> {
    video_id: &'a str,
    clip_index: usize,
    label: WeakLabel,
}

fn labeled_clips<'a>(sequences: &[&'a RecoverySequence]) -> Result<Vec<LabeledClip<'a>>> {
    let mut out = Vec::new();
    for s in sequences {
        for (clip_index, label) in s.labels()?.into_iter().enumerate() {
            if label != WeakLabel::Excluded {
                out.push(LabeledClip {
                    video_id: &s.video_id,
                    clip_index,
                    label,
                });
            }
        }
    }
    Ok(out)
}

/// Every admissible ordered pair of each sequence.
fn all_pairs(sequences: &[&RecoverySequence], min_sep: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSample>> {
    let mut pairs = Vec::new();
    for s in sequences {
        pairs.extend(make_pairs(s, min_sep, s.num_clips(), None, rng)?);
    }
    Ok(pairs)
}

fn pair_accuracy(model: &Model, clips: &PreparedClips, pairs: &[PairSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let predictions = model.predict_pairs(clips, pairs)?;
    let correct = predictions
        .iter()
        .zip(pairs)
        .filter(|(q, p)| q.first_is_earlier == p.first_is_earlier())
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss at step {step}")))
    }
}

fn snapshot(encoder: &EncoderConfig, config: &TrainConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "encoder": serde_json::to_value(encoder)?,
        "train": serde_json::to_value(config)?,
    }))
}

/// Loop state shared by both training methods.
struct Run<'a> {
    config: &'a TrainConfig,
    model: Model,
    adam: AdamState,
    log: TrainLog,
    rng: ChaCha8Rng,
    step: usize,
    total_steps: usize,
    start: Instant,
    out: Option<&'a Path>,
}

impl<'a> Run<'a> {
    fn new(
        encoder: &EncoderConfig,
        config: &'a TrainConfig,
        method: Method,
        steps_per_epoch: usize,
        out: Option<&'a Path>,
    ) -> Result<Self> {
        config.validate()?;
        let model = Model::new(method, encoder)?;
        Ok(Self {
            config,
            adam: AdamState::new(&model.store),
            log: TrainLog::new(snapshot(encoder, config)?),
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            total_steps: steps_per_epoch * config.epochs,
            start: Instant::now(),
            out,
        })
    }

    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    /// Applies one Adam update and logs the step.
    fn update(&mut self, epoch: usize, loss: f64, grads: Vec<Vec<f64>>) -> Result<()> {
        check_finite(loss, self.step + 1)?;
        let lr = self.config.lr_at(self.step, self.total_steps);
        adam_step(&mut self.model.store, &grads, &mut self.adam, &self.config.adam, lr)?;
        if let Head::Prototype(p) = &self.model.head {
            p.renormalize(&mut self.model.store)?;
        }
        self.step += 1;
        let record = StepRecord {
            step: self.step,
            epoch,
            loss,
            lr,
            wall_ms: self.elapsed_ms(),
        };
        self.log.push_step(record)
    }

    fn finish_epoch(&mut self, epoch: usize, losses: &[f64], val_loss: f64, val_accuracy: f64) -> Result<()> {
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        self.log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            wall_ms: self.elapsed_ms(),
        });
        if let Some(dir) = self.out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.model.save(&dir.join(epoch_checkpoint_name(epoch)))?;
            self.log.write(dir)?;
        }
        Ok(())
    }

    fn done(self) -> Result<TrainOutcome> {
        if let Some(dir) = self.out {
            self.model.save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(TrainOutcome {
            model: self.model,
            log: self.log,
        })
    }
}

/// Trains the encoder jointly with the SOB/NoSOB prototypes on weakly labeled
/// clips. Excluded clips never enter a batch.
pub fn train_embedding(
    encoder: &EncoderConfig,
    config: &TrainConfig,
    train: &[&RecoverySequence],
    validation: &[&RecoverySequence],
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut items = labeled_clips(train)?;
    for class in [WeakLabel::Sob, WeakLabel::NoSob] {
        if !items.iter().any(|c| c.label == class) {
            return Err(Error::Dataset(format!("no {class:?} clips in the training set")));
        }
    }
    let steps_per_epoch = items.len().div_ceil(config.batch_size);
    let mut run = Run::new(encoder, config, Method::Embedding, steps_per_epoch, out)?;
    let clips = PreparedClips::build(&run.model.encoder, train)?;
    let val_clips = PreparedClips::build(&run.model.encoder, validation)?;
    let val_items = labeled_clips(validation)?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "", "validation", 0));
    let val_pairs = all_pairs(validation, config.min_separation, &mut val_rng)?;
    let Head::Prototype(protos) = run.model.head.clone() else {
        unreachable!("embedding model without prototypes")
    };

    for epoch in 1..=config.epochs {
        items.shuffle(&mut run.rng);
        let mut losses = Vec::with_capacity(steps_per_epoch);
        for batch in items.chunks(config.batch_size) {
            debug_assert!(batch.iter().all(|c| c.label != WeakLabel::Excluded));
            let refs = batch
                .iter()
                .map(|c| clips.get(c.video_id, c.clip_index))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<WeakLabel> = batch.iter().map(|c| c.label).collect();
            let mut tape = Tape::new();
            let p = run.model.store.bind(&mut tape);
            let e = run.model.encoder.embed(&mut tape, &p, &refs)?;
            let loss = prototype_loss(&mut tape, &p, &protos, e, &labels, config.repulsion)?;
            let value = tape.item(loss);
            let grads = p.grads(&tape.backward(loss)?, &run.model.store);
            drop(tape);
            run.update(epoch, value, grads)?;
            losses.push(value);
        }
        let val_loss = embedding_loss(&run.model, &val_clips, &val_items, config.repulsion)?;
        let val_accuracy = pair_accuracy(&run.model, &val_clips, &val_pairs)?;
        run.finish_epoch(epoch, &losses, val_loss, val_accuracy)?;
    }
    run.done()
}

/// Mean frozen prototype loss over labeled clips, `NaN` when there are none.
fn embedding_loss(model: &Model, clips: &PreparedClips, items: &[LabeledClip], repulsion: f64) -> Result<f64> {
    let Head::Prototype(protos) = &model.head else {
        return Err(Error::contract("prototype loss needs the embedding head"));
    };
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in items.chunks(INFERENCE_CHUNK) {
        let refs = chunk
            .iter()
            .map(|c| clips.get(c.video_id, c.clip_index))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<WeakLabel> = chunk.iter().map(|c| c.label).collect();
        let mut tape = Tape::new();
        let p = model.store.bind_frozen(&mut tape);
        let e = model.encoder.embed(&mut tape, &p, &refs)?;
        let loss = prototype_loss(&mut tape, &p, protos, e, &labels, repulsion)?;
        total += tape.item(loss) * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Trains a two-tower head with binary cross-entropy on "first clip is
/// earlier". Each epoch redraws pairs; every draw appears in both orders.
pub fn train_two_tower(
    encoder: &EncoderConfig,
    config: &TrainConfig,
    train: &[&RecoverySequence],
    validation: &[&RecoverySequence],
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if config.method == Method::Embedding {
        return Err(Error::Config("train_two_tower needs tt_full or tt_cls".into()));
    }
    let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<PairSample>> {
        let mut pairs = Vec::new();
        for s in train {
            pairs.extend(make_pairs(
                s,
                config.min_separation,
                s.num_clips(),
                config.pairs_per_sequence,
                rng,
            )?);
        }
        pairs.shuffle(rng);
        check_pairs(&pairs, train)?;
        Ok(pairs)
    };
    let pairs_per_epoch = draw(&mut ChaCha8Rng::seed_from_u64(config.seed))?.len();
    if pairs_per_epoch == 0 {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let steps_per_epoch = pairs_per_epoch.div_ceil(config.batch_size);
    let mut run = Run::new(encoder, config, config.method, steps_per_epoch, out)?;
    let clips = PreparedClips::build(&run.model.encoder, train)?;
    let val_clips = PreparedClips::build(&run.model.encoder, validation)?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "", "validation", 0));
    let mut val_pairs = Vec::new();
    for s in validation {
        val_pairs.extend(make_pairs(
            s,
            config.min_separation,
            s.num_clips(),
            config.pairs_per_sequence,
            &mut val_rng,
        )?);
    }
    check_pairs(&val_pairs, validation)?;

    for epoch in 1..=config.epochs {
        let pairs = draw(&mut run.rng)?;
        let mut losses = Vec::with_capacity(steps_per_epoch);
        for batch in pairs.chunks(config.batch_size) {
            let (a, b) = clips.pair_refs(batch)?;
            let targets: Vec<bool> = batch.iter().map(PairSample::first_is_earlier).collect();
            let mut tape = Tape::new();
            let p = run.model.store.bind(&mut tape);
            let z = run.model.pair_logits(&mut tape, &p, &a, &b)?;
            let loss = pair_bce(&mut tape, z, &targets)?;
            let value = tape.item(loss);
            let grads = p.grads(&tape.backward(loss)?, &run.model.store);
            drop(tape);
            run.update(epoch, value, grads)?;
            losses.push(value);
        }
        let val_loss = two_tower_loss(&run.model, &val_clips, &val_pairs)?;
        let val_accuracy = pair_accuracy(&run.model, &val_clips, &val_pairs)?;
        run.finish_epoch(epoch, &losses, val_loss, val_accuracy)?;
    }
    run.done()
}

/// Mean frozen BCE over `pairs`, `NaN` when there are none.
pub fn two_tower_loss(model: &Model, clips: &PreparedClips, pairs: &[PairSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(INFERENCE_CHUNK) {
        let (a, b) = clips.pair_refs(chunk)?;
        let targets: Vec<bool> = chunk.iter().map(PairSample::first_is_earlier).collect();
        let mut tape = Tape::new();
        let p = model.store.bind_frozen(&mut tape);
        let z = model.pair_logits(&mut tape, &p, &a, &b)?;
        let loss = pair_bce(&mut tape, z, &targets)?;
        total += tape.item(loss) * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Prototype cosine similarity of a trained embedding model.
pub fn prototype_cosine(model: &Model) -> Result<f64> {
    let (sob, nosob) = model
        .prototypes()
        .ok_or_else(|| Error::contract("model has no prototypes"))?;
    crate::heads::cosine_similarity(sob, nosob)
}
