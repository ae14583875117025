//! Fine-tuning the shared layers so mask positions predict future tokens,
//! with the skipped band frozen.

mod corpus;
mod loss;
mod mask;
mod optim;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{derive_seed, Exec};
use crate::kernels::Real;
use crate::model::{
    load_model, read_tensor_file, save_model, write_tensor_file, Model, NamedTensor, Precision,
    SkipSpec, TokenId,
};

pub use corpus::{gen_corpus, SynthCorpus, MAX_SUCCESSORS};
pub use loss::{s3d_gradients, s3d_loss};
pub use mask::{mask_sequence, sample_masks, MaskedBatch, MaskedSequence};
pub use optim::{adamw_step, adamw_update, AdamState, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mask_rate: Real,
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub learning_rate: Real,
    /// Linear warm-up length in steps; 0 disables it.
    pub warmup_steps: usize,
    pub adamw: AdamW,
    pub seed: u64,
    pub skip: SkipSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            batch_size: 8,
            seq_len: 32,
            steps: 500,
            learning_rate: 1e-3,
            warmup_steps: 50,
            adamw: AdamW::default(),
            seed: 0,
            skip: SkipSpec::EMPTY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return invalid(format!("mask_rate {} is not in (0, 1)", self.mask_rate));
        }
        if self.batch_size == 0 || self.seq_len < 2 {
            return invalid("batch_size must be positive and seq_len at least 2");
        }
        if self.seq_len > model.config().max_seq_len {
            return invalid("seq_len exceeds the model's max_seq_len");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning_rate must be positive");
        }
        self.skip.validate(model.config().n_layers)
    }

    /// Learning rate at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> Real {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as Real / self.warmup_steps as Real).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    /// `None` when every sampled sequence had an empty decode set.
    pub loss: Option<Real>,
}

/// Checkpoint sidecar, stored next to the weights and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub adam_step: u64,
    pub weights_file: String,
    pub optimizer_file: String,
    pub config: TrainConfig,
    /// Each step's batch is drawn from a generator seeded by
    /// `derive_seed(seed, step)`, so these two values are the full state.
    pub rng: RngState,
    pub losses: Vec<StepLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_step: usize,
}

const WEIGHTS_FILE: &str = "weights.s3dw";
const OPTIMIZER_FILE: &str = "optimizer.s3dw";
const META_FILE: &str = "checkpoint.json";

/// Stateful training loop over a token stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    state: AdamState,
    config: TrainConfig,
    step: usize,
    losses: Vec<StepLoss>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate(&model)?;
        let state = AdamState::new(model.weights());
        Ok(Self {
            model,
            state,
            config,
            step: 0,
            losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn losses(&self) -> &[StepLoss] {
        &self.losses
    }

    /// The batch used at `step`: random windows of the stream, each masked
    /// with its own seed.
    pub fn batch_for_step(&self, stream: &[TokenId], step: usize) -> Result<MaskedBatch> {
        let c = &self.config;
        if stream.len() < c.seq_len {
            return invalid(format!(
                "corpus of {} tokens is shorter than seq_len {}",
                stream.len(),
                c.seq_len
            ));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(c.seed, step as u64));
        let sequences = (0..c.batch_size)
            .map(|_| {
                let start = rng.random_range(0..=stream.len() - c.seq_len);
                let seed = rng.random::<u64>();
                mask_sequence(
                    &stream[start..start + c.seq_len],
                    c.mask_rate,
                    self.model.config().mask_token_id,
                    seed,
                )
            })
            .collect::<Result<_>>()?;
        Ok(MaskedBatch { sequences })
    }

    /// One optimizer step. Returns the pre-update loss, or `None` if the
    /// batch had nothing to train.
    pub fn train_step(&mut self, stream: &[TokenId], exec: Exec) -> Result<Option<Real>> {
        let step = self.step;
        let batch = self.batch_for_step(stream, step)?;
        let skip = self.config.skip;
        if batch.targets() == 0 {
            log::warn!("step {step}: empty decode set, batch skipped");
            self.step += 1;
            self.losses.push(StepLoss { step, loss: None });
            return Ok(None);
        }
        let (loss, grads) = s3d_gradients(&self.model, skip, &batch, exec)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let lr = self.config.lr_at(step);
        adamw_step(
            self.model.weights_mut(),
            &grads,
            &mut self.state,
            skip,
            lr,
            &self.config.adamw,
        )?;
        if self.model.weights().tensors().iter().any(|(_, t)| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged { step, loss });
        }
        self.step += 1;
        self.losses.push(StepLoss {
            step,
            loss: Some(loss),
        });
        log::debug!("step {step} loss {loss:.6} lr {lr:.3e}");
        Ok(Some(loss))
    }

    /// Trains until `config.steps` steps have been taken, calling
    /// `after_step` after each one.
    pub fn run<F>(&mut self, stream: &[TokenId], exec: Exec, mut after_step: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while self.step < self.config.steps {
            self.train_step(stream, exec)?;
            after_step(self)?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_model(dir.join(WEIGHTS_FILE), &self.model, Precision::F64)?;
        let mut moments = Vec::new();
        for (prefix, w) in [("m", &self.state.m), ("v", &self.state.v)] {
            for (info, data) in w.tensors() {
                moments.push(NamedTensor {
                    name: format!("{prefix}.{}", info.name),
                    shape: info.shape,
                    data: data.to_vec(),
                });
            }
        }
        write_tensor_file(
            BufWriter::new(File::create(dir.join(OPTIMIZER_FILE))?),
            serde_json::json!({ "adam_step": self.state.step }),
            &moments,
            Precision::F64,
        )?;
        let meta = CheckpointMeta {
            step: self.step,
            adam_step: self.state.step,
            weights_file: WEIGHTS_FILE.into(),
            optimizer_file: OPTIMIZER_FILE.into(),
            config: self.config.clone(),
            rng: RngState {
                seed: self.config.seed,
                next_step: self.step,
            },
            losses: self.losses.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(META_FILE))?), &meta)?;
        Ok(())
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`]. `steps`
    /// overrides the target step count when given.
    pub fn load_checkpoint(dir: impl AsRef<Path>, steps: Option<usize>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CheckpointMeta =
            serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        let model = load_model(dir.join(&meta.weights_file))?;
        let file = read_tensor_file(BufReader::new(File::open(dir.join(&meta.optimizer_file))?))?;
        let mut state = AdamState::new(model.weights());
        state.step = meta.adam_step;
        let mut by_name: std::collections::BTreeMap<String, Vec<Real>> =
            file.tensors.into_iter().map(|t| (t.name, t.data)).collect();
        for (prefix, w) in [("m", &mut state.m), ("v", &mut state.v)] {
            for (info, slot) in w.tensors_mut() {
                let name = format!("{prefix}.{}", info.name);
                match by_name.remove(&name) {
                    Some(data) if data.len() == slot.len() => slot.copy_from_slice(&data),
                    _ => return Err(Error::Format(format!("optimizer tensor {name} missing or misshapen"))),
                }
            }
        }
        let mut config = meta.config;
        if let Some(s) = steps {
            config.steps = s;
        }
        config.validate(&model)?;
        Ok(Self {
            model,
            state,
            config,
            step: meta.step,
            losses: meta.losses,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub losses: Vec<StepLoss>,
}

/// Runs `config.steps` steps from scratch.
pub fn train(model: Model, stream: &[TokenId], config: TrainConfig, exec: Exec) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, config)?;
    t.run(stream, exec, |_| Ok(()))?;
    Ok(TrainOutcome {
        losses: t.losses.clone(),
        model: t.into_model(),
    })
}
