//! The optimization loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{Checkpoint, Dataset, DatasetKind};
use crate::diffusion::Diffusion;
use crate::error::{Error, Result};
use crate::optim::{Adam, DEFAULT_LR};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::unet::{UNet, UNetConfig, GROUPS};

/// Rng stream ids. Each purpose draws from its own stream so changing one
/// (say `p_uncond`) leaves the others untouched.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const TIMESTEP: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const LABEL_DROPOUT: u64 = 4;
}

const STREAM_NAMES: [(&str, u64); 4] = [
    ("shuffle", streams::SHUFFLE),
    ("timestep", streams::TIMESTEP),
    ("noise", streams::NOISE),
    ("label_dropout", streams::LABEL_DROPOUT),
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,step,loss,wallclock_s";
pub const LATEST_CHECKPOINT: &str = "checkpoint.mdif";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub timesteps: usize,
    pub dataset: DatasetKind,
    pub conditional: bool,
    /// Probability of replacing a label by the null label during
    /// conditional training.
    pub p_uncond: f64,
    pub seed: u64,
    /// In epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
    pub model_channels: usize,
    pub depth_extension: bool,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: DEFAULT_LR,
            timesteps: 300,
            dataset: DatasetKind::Mnist,
            conditional: false,
            p_uncond: 0.1,
            seed: 0,
            checkpoint_every: 10,
            out_dir: None,
            model_channels: 128,
            depth_extension: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::invalid(format!("p_uncond must be in [0, 1), got {}", self.p_uncond)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("grad clip must be positive, got {c}")));
            }
        }
        if self.model_channels == 0 || self.model_channels % GROUPS != 0 {
            return Err(Error::invalid(format!(
                "model channels must be a positive multiple of {GROUPS}, got {}",
                self.model_channels
            )));
        }
        Ok(())
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            io_channels: self.dataset.channels(),
            model_channels: self.model_channels,
            class_count: self.conditional.then(|| self.dataset.classes()),
            depth_extension: self.depth_extension,
        }
    }

    /// `key=value` pairs stored in checkpoints and printed by the CLI.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("dataset", self.dataset.name().to_string()),
            ("conditional", self.conditional.to_string()),
            ("p_uncond", self.p_uncond.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("out_dir", opt(self.out_dir.as_ref().map(|p| p.display().to_string()))),
            ("model_channels", self.model_channels.to_string()),
            ("depth_extension", self.depth_extension.to_string()),
            ("grad_clip", opt(self.grad_clip.map(|c| c.to_string()))),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub mean_loss: f64,
    pub wallclock_s: f64,
}

pub struct Trainer<S: Scalar> {
    config: TrainConfig,
    diffusion: Diffusion,
    model: UNet<S>,
    optimizer: Adam,
    shuffle_rng: Rng,
    timestep_rng: Rng,
    noise_rng: Rng,
    dropout_rng: Rng,
    epochs_done: usize,
    started: Instant,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let diffusion = Diffusion::linear(config.timesteps)?;
        let model = UNet::new(config.unet_config(), &mut Rng::with_stream(config.seed, streams::INIT))?;
        let optimizer = Adam::new(&model.parameters(), config.learning_rate).with_grad_clip(config.grad_clip);
        let rng = |stream| Rng::with_stream(config.seed, stream);
        Ok(Trainer {
            shuffle_rng: rng(streams::SHUFFLE),
            timestep_rng: rng(streams::TIMESTEP),
            noise_rng: rng(streams::NOISE),
            dropout_rng: rng(streams::LABEL_DROPOUT),
            config,
            diffusion,
            model,
            optimizer,
            epochs_done: 0,
            started: Instant::now(),
        })
    }

    /// Continues from a training checkpoint: weights, optimizer moments,
    /// rng positions and epoch counter. `config` supplies the run settings
    /// and must agree with the checkpoint's model and schedule.
    pub fn resume(config: TrainConfig, checkpoint: &Checkpoint) -> Result<Self> {
        config.validate()?;
        checkpoint.check_schedule(config.timesteps)?;
        if checkpoint.unet != config.unet_config() {
            return Err(Error::invalid(format!(
                "checkpoint model {:?} does not match the requested {:?}",
                checkpoint.unet,
                config.unet_config()
            )));
        }
        let model = checkpoint.to_model::<S>()?;
        let params = model.parameters();
        let optimizer = match &checkpoint.optimizer {
            Some(state) => Adam::from_state(&params, config.learning_rate, state.clone())?,
            None => Adam::new(&params, config.learning_rate),
        }
        .with_grad_clip(config.grad_clip);
        let rng = |name: &str, stream| {
            checkpoint
                .rng_state(name)
                .map(Rng::from_state)
                .unwrap_or_else(|| Rng::with_stream(config.seed, stream))
        };
        Ok(Trainer {
            shuffle_rng: rng("shuffle", streams::SHUFFLE),
            timestep_rng: rng("timestep", streams::TIMESTEP),
            noise_rng: rng("noise", streams::NOISE),
            dropout_rng: rng("label_dropout", streams::LABEL_DROPOUT),
            diffusion: Diffusion::linear(config.timesteps)?,
            config,
            model,
            optimizer,
            epochs_done: checkpoint.epoch as usize,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &UNet<S> {
        &self.model
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn steps_done(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// Full training state, including optimizer moments and rng positions.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, self.config.timesteps);
        ck.epoch = self.epochs_done as u64;
        ck.step = self.steps_done();
        ck.meta = self.config.to_pairs();
        let rngs = [&self.shuffle_rng, &self.timestep_rng, &self.noise_rng, &self.dropout_rng];
        ck.rng = STREAM_NAMES
            .iter()
            .zip(rngs)
            .map(|((name, _), rng)| (name.to_string(), rng.state()))
            .collect();
        ck.optimizer = Some(self.optimizer.state().clone());
        ck
    }

    /// One optimizer step on a normalized batch. Returns the loss.
    pub fn train_step(&mut self, x0: &crate::tensor::Tensor<S>, labels: &[usize]) -> Result<f64> {
        let batch = x0.shape()[0];
        let t = self.diffusion.sample_timesteps(&mut self.timestep_rng, batch);
        let labels = match self.model.config().null_label() {
            Some(null) => Some(
                labels
                    .iter()
                    .map(|&l| if self.dropout_rng.bernoulli(self.config.p_uncond) { null } else { l })
                    .collect::<Vec<_>>(),
            ),
            None => None,
        };
        self.model.zero_grad();
        let loss = self
            .diffusion
            .train_loss(&self.model, x0, &t, &mut self.noise_rng, labels.as_deref())?;
        let value = loss.item().to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: value,
                epoch: self.epochs_done + 1,
                step: self.steps_done() + 1,
            });
        }
        loss.backward()?;
        self.optimizer.step(&self.model.parameters())?;
        Ok(value)
    }

    /// One pass over `data` in a freshly shuffled order; the last batch may
    /// be short.
    pub fn train_epoch(&mut self, data: &Dataset, on_step: &mut dyn FnMut(StepInfo)) -> Result<EpochStats> {
        let [_, h, w] = data.image_shape();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!("image extents {h}x{w} are not divisible by 4")));
        }
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let order = data.epoch_order(&mut self.shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for indices in order.chunks(self.config.batch_size) {
            let (x0, labels) = data.batch::<S>(indices)?;
            let loss = self.train_step(&x0, &labels)?;
            total += loss;
            batches += 1;
            on_step(StepInfo { epoch: self.epochs_done + 1, step: self.steps_done(), loss });
        }
        self.epochs_done += 1;
        Ok(EpochStats {
            epoch: self.epochs_done,
            step: self.steps_done(),
            mean_loss: total / batches as f64,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config.epochs` epochs are done, appending to the
    /// metrics log and writing checkpoints when an output directory is set.
    /// Returns the per-epoch statistics of this call.
    pub fn run(
        &mut self,
        data: &Dataset,
        on_epoch: &mut dyn FnMut(&EpochStats),
        on_step: &mut dyn FnMut(StepInfo),
    ) -> Result<Vec<EpochStats>> {
        if data.kind() != self.config.dataset {
            return Err(Error::invalid(format!(
                "dataset is {} but the config names {}",
                data.kind(),
                self.config.dataset
            )));
        }
        let out_dir = self.config.out_dir.clone();
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut history = Vec::new();
        while self.epochs_done < self.config.epochs {
            let stats = self.train_epoch(data, on_step)?;
            on_epoch(&stats);
            if let Some(dir) = &out_dir {
                append_metrics(dir, &stats)?;
                let every = self.config.checkpoint_every;
                let last = self.epochs_done == self.config.epochs;
                if last || (every > 0 && self.epochs_done % every == 0) {
                    let ck = self.checkpoint();
                    ck.save(dir.join(format!("checkpoint_epoch{:04}.mdif", self.epochs_done)))?;
                    ck.save(dir.join(LATEST_CHECKPOINT))?;
                }
            }
            history.push(stats);
        }
        Ok(history)
    }
}

fn append_metrics(dir: &Path, stats: &EpochStats) -> Result<()> {
    let path = dir.join(METRICS_FILE);
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{METRICS_HEADER}")?;
    }
    writeln!(file, "{},{},{},{:.3}", stats.epoch, stats.step, stats.mean_loss, stats.wallclock_s)?;
    Ok(())
}
