use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{build_pairs, MiniBatch, TrainingSet};
use super::loss::ntxent_loss;
use crate::autodiff::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, AdamState, Graph, NamedTensor, Tensor,
};
use crate::encoder::{bind, collect_grads, forward, CloudPlan, LayerSpec, Mode, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Pairs per batch (`N`); the batch holds `2N` clouds.
    pub batch_pairs: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    /// Cosine schedule floor.
    pub min_learning_rate: f64,
    pub epochs: usize,
    pub stretch_min: f64,
    pub stretch_max: f64,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Cap on batches per epoch; by default an epoch is one pass over all segments.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 16,
            temperature: 0.05,
            learning_rate: 1e-3,
            min_learning_rate: 1e-6,
            epochs: 100,
            stretch_min: 0.5,
            stretch_max: 2.0,
            seed: 0,
            checkpoint_every: 10,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.batch_pairs < 2 {
            return bad(format!(
                "batch_pairs must be >= 2, got {}",
                self.batch_pairs
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.min_learning_rate >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.stretch_min > 0.0 && self.stretch_min <= self.stretch_max) {
            return bad(format!(
                "stretch range [{}, {}] is invalid",
                self.stretch_min, self.stretch_max
            ));
        }
        Ok(())
    }

    pub fn steps_for(&self, set_len: usize) -> usize {
        let full = set_len / self.batch_pairs;
        self.steps_per_epoch.map_or(full, |cap| cap.min(full))
    }

    /// Cosine decay from `learning_rate` to `min_learning_rate` over `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.learning_rate;
        }
        let p = (step as f64 / total as f64).min(1.0);
        self.min_learning_rate
            + 0.5
                * (self.learning_rate - self.min_learning_rate)
                * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints, the JSON-lines log and failure dumps go here.
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run with the same configuration.
    pub resume: Option<PathBuf>,
    /// Starting weights instead of a fresh seeded initialization.
    pub init: Option<ModelParams<f32>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<LogRecord>,
    pub epochs_done: usize,
}

/// Model, optimizer state and progress counters.
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn fresh(params: ModelParams<f32>) -> Self {
        let adam = AdamState::new(&params.trainable());
        Self {
            params,
            adam,
            epoch: 0,
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = self.params.named_tensors();
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            out.push(NamedTensor::new(format!("adam.m.{i}"), m));
            out.push(NamedTensor::new(format!("adam.v.{i}"), v));
        }
        out.push(NamedTensor::new(
            "meta.adam_step",
            &Tensor::scalar(self.adam.step as f32),
        ));
        out.push(NamedTensor::new(
            "meta.epoch",
            &Tensor::scalar(self.epoch as f32),
        ));
        out
    }

    pub fn from_named(spec: &LayerSpec, tensors: &[NamedTensor]) -> Result<Self> {
        let params = ModelParams::from_named(spec, tensors)?;
        let mut state = Self::fresh(params);
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
        };
        for i in 0..state.adam.m.len() {
            for (slot, key) in [(&mut state.adam.m[i], "m"), (&mut state.adam.v[i], "v")] {
                let t = find(&format!("adam.{key}.{i}"))?;
                if t.tensor.shape() != slot.shape() {
                    return Err(Error::Format(format!("adam.{key}.{i} has the wrong shape")));
                }
                *slot = t.tensor.clone();
            }
        }
        state.adam.step = find("meta.adam_step")?.tensor.item() as u64;
        state.epoch = find("meta.epoch")?.tensor.item() as usize;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(BufWriter::new(f), &self.to_named())
    }

    pub fn load(spec: &LayerSpec, path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_named(spec, &read_checkpoint(std::io::BufReader::new(f))?)
    }
}

/// RNG for one epoch; independent of what earlier epochs consumed, so resumed runs line up.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Source segments of every batch of one epoch.
pub fn epoch_plan(set_len: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..set_len).collect();
    order.shuffle(rng);
    order
        .chunks_exact(cfg.batch_pairs)
        .take(cfg.steps_for(set_len))
        .map(<[usize]>::to_vec)
        .collect()
}

/// One optimizer step on `batch`. Returns the loss before the update.
pub fn train_step(
    g: &mut Graph<f32>,
    state: &mut TrainState,
    batch: &MiniBatch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let plans = batch
        .clouds
        .iter()
        .map(|c| CloudPlan::new(&c.peaks, &state.params.spec))
        .collect::<Result<Vec<_>>>()?;
    g.reset();
    let vars = bind(g, &state.params, true);
    let (z, stats) = forward(g, &state.params, &vars, &plans, Mode::Train)?;
    let loss = ntxent_loss(g, z, cfg.temperature)?;
    let value = g.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    let mut grads = g.backward(loss)?;
    let grads = collect_grads(&mut grads, &vars, &state.params);
    g.reset();
    adam_step(
        &mut state.params.trainable_mut(),
        &grads,
        &mut state.adam,
        lr,
        &AdamConfig::default(),
    )?;
    state.params.update_running_stats(&stats)?;
    Ok(value)
}

fn dump_failure(dir: &Path, state: &TrainState, batch: &MiniBatch, epoch: usize, step: usize) {
    let _ = state.save(&dir.join("nan_dump.ckpt"));
    let info = serde_json::json!({
        "epoch": epoch,
        "step": step,
        "sources": batch.sources,
        "factors": batch.factors,
        "tracks": batch.clouds.iter().map(|c| (&c.track_id, c.segment_index)).collect::<Vec<_>>(),
    });
    let _ = fs::write(dir.join("nan_dump.json"), info.to_string());
}

/// Contrastive training loop.
pub fn train(
    set: &TrainingSet,
    spec: &LayerSpec,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if set.len() < cfg.batch_pairs {
        return Err(Error::Data(format!(
            "{} segments cannot fill a batch of {} pairs",
            set.len(),
            cfg.batch_pairs
        )));
    }
    let mut state = match (&opts.resume, &opts.init) {
        (Some(path), _) => TrainState::load(spec, path)?,
        (None, Some(p)) => TrainState::fresh(p.clone()),
        (None, None) => TrainState::fresh(ModelParams::init(spec, cfg.seed)?),
    };
    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            let f = OpenOptions::new()
                .create(true)
                .append(opts.resume.is_some())
                .write(true)
                .truncate(opts.resume.is_none())
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some(BufWriter::new(f))
        }
        None => None,
    };

    let steps = cfg.steps_for(set.len());
    let total = steps * cfg.epochs;
    let started = Instant::now();
    let mut log = Vec::new();
    let mut g = Graph::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let plan = epoch_plan(set.len(), cfg, &mut rng);
        let mut epoch_loss = 0.0;
        for (k, sources) in plan.iter().enumerate() {
            let step = epoch * steps + k;
            let lr = cfg.lr_at(step, total);
            let batch = build_pairs(set, sources, (cfg.stretch_min, cfg.stretch_max), &mut rng)?;
            let loss = match train_step(&mut g, &mut state, &batch, cfg, lr) {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => {
                    if let Some(dir) = &opts.out_dir {
                        dump_failure(dir, &state, &batch, epoch, step);
                    }
                    return Err(Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")));
                }
                Err(e) => return Err(e),
            };
            epoch_loss += loss;
            let rec = LogRecord {
                epoch,
                step,
                loss,
                lr,
                wall_time: started.elapsed().as_secs_f64(),
            };
            if let Some(w) = log_file.as_mut() {
                serde_json::to_writer(&mut *w, &rec).map_err(|e| Error::Format(e.to_string()))?;
                w.write_all(b"\n")?;
            }
            log.push(rec);
        }
        state.epoch += 1;
        log::info!(
            "epoch {} mean loss {:.4}",
            state.epoch,
            epoch_loss / plan.len().max(1) as f64
        );
        if let Some(w) = log_file.as_mut() {
            w.flush()?;
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                state.save(&dir.join(format!("epoch_{:04}.ckpt", state.epoch)))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        state.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        params: state.params,
        log,
        epochs_done: state.epoch,
    })
}
