//! Batching, the fixed-step training loop and run directories.

mod batch;
mod run;

pub use batch::{epoch_batches, make_batches, Batch, BatchStream, EncodedPair};
pub use run::{parse_run_config, RunDir, RunLogger, RunMetadata};

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Adam, AdamConfig, Graph};

/// Step budgets per dataset, shared by the seq2seq and iterative runs.
pub const PRESETS: &[(&str, u64)] = &[
    ("pcfg-iid", 33_325),
    ("pcfg-prod", 27_049),
    ("pcfg-syst", 31_458),
    ("cartesian-row", 4_688),
    ("cartesian-token", 14_077),
    ("cfq", 53_318),
];

pub fn preset_steps(name: &str) -> Result<u64> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, s)| s)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset {name:?}; known: {}", names.join(", ")))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub total_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Batch pairs of similar length together. Off by default.
    pub length_buckets: bool,
    pub adam: AdamConfig,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            total_steps: 1000,
            batch_size: 64,
            seed: 0,
            checkpoint_every: 1000,
            length_buckets: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("total_steps and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let a = &self.adam;
        format!(
            "total_steps = {}\nbatch_size = {}\nseed = {}\ncheckpoint_every = {}\nlength_buckets = {}\nbeta1 = {}\nbeta2 = {}\n\
             adam_eps = {}\nwarmup_steps = {}\nlr_scale = {}\n",
            self.total_steps,
            self.batch_size,
            self.seed,
            self.checkpoint_every,
            self.length_buckets as u8,
            a.beta1,
            a.beta2,
            a.eps,
            a.warmup_steps,
            a.lr_scale
        )
    }

    /// Sets one key; returns false for keys that are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "total_steps" => self.total_steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "length_buckets" => self.length_buckets = num::<u8>(key, value)? != 0,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "warmup_steps" => self.adam.warmup_steps = num(key, value)?,
            "lr_scale" => self.adam.lr_scale = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Loss after each optimizer step, `(step, loss)` with steps counted from 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory(pub Vec<(u64, f64)>);

impl LossHistory {
    pub fn last(&self) -> Option<f64> {
        self.0.last().map(|&(_, l)| l)
    }
}

impl fmt::Display for LossHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, l) in &self.0 {
            writeln!(f, "{s},{l}")?;
        }
        Ok(())
    }
}

/// Mixes a run seed with a counter into an independent stream seed.
pub(crate) fn derive_seed(seed: u64, salt: u64, counter: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DROPOUT_SALT: u64 = 2;

/// Optional hooks around each optimizer step.
pub trait TrainObserver {
    fn on_step(&mut self, _step: u64, _loss: f64) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: u64, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Training state that can be checkpointed and resumed.
pub struct Trainer {
    pub model: Transformer<f32>,
    pub optimizer: Adam<f32>,
    pub plan: TrainPlan,
    stream: BatchStream,
}

impl Trainer {
    pub fn new(model: Transformer<f32>, plan: TrainPlan, data: Vec<EncodedPair>) -> Result<Self> {
        plan.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let vocab = model.config.vocab_size;
        for p in &data {
            if let Some(&id) = p.src.iter().chain(&p.tgt).find(|&&id| id >= vocab) {
                return Err(Error::BadTokenId { id, size: vocab });
            }
        }
        let mut adam = plan.adam;
        adam.d_model = model.config.d_model;
        let optimizer = Adam::new(adam, &model.params);
        let stream = BatchStream::new(data, plan.batch_size, plan.seed).with_length_buckets(plan.length_buckets);
        Ok(Trainer {
            model,
            optimizer,
            plan: TrainPlan { adam, ..plan },
            stream,
        })
    }

    /// Restores parameters and optimizer moments; the batch stream is
    /// positioned by the checkpoint's step.
    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_params(&mut self.model.params)?;
        self.optimizer = ckpt.restore_optimizer(self.plan.adam, &self.model.params)?;
        if self.optimizer.step_count() != ckpt.step {
            return Err(Error::Checkpoint("optimizer step disagrees with checkpoint step".into()));
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step_count()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            self.model.config.to_text(),
            self.step_count(),
            &self.model.params,
            Some(&self.optimizer),
        )
    }

    /// One optimizer step on the next batch; returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.step_count();
        let batch = self.stream.batch_for_step(step);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.plan.seed, DROPOUT_SALT, step));
        let pairs: Vec<(&[usize], &[usize])> = (0..batch.len()).map(|i| (batch.src_row(i), batch.tgt_row(i))).collect();
        let mut g = Graph::new();
        let loss = self
            .model
            .loss(&mut g, &pairs, Some(&mut rng as &mut dyn RngCore))
            .map_err(|e| if e.is_numerical() { Error::NonFiniteLoss(step + 1) } else { e })?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(step + 1));
        }
        g.backward(loss, &mut self.model.params)?;
        if self.model.params.iter().any(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::NonFiniteLoss(step + 1));
        }
        self.optimizer.step(&mut self.model.params);
        Ok(value)
    }

    /// Runs until `plan.total_steps` optimizer steps have been taken.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<LossHistory> {
        let mut history = LossHistory::default();
        while self.step_count() < self.plan.total_steps {
            let loss = self.step()?;
            let s = self.step_count();
            history.0.push((s, loss));
            observer.on_step(s, loss)?;
            let every = self.plan.checkpoint_every;
            if (every > 0 && s % every == 0) || s == self.plan.total_steps {
                observer.on_checkpoint(s, &self.checkpoint())?;
            }
        }
        Ok(history)
    }
}

/// Trains `model` for `plan.total_steps` steps without writing anything.
pub fn train(model: Transformer<f32>, plan: TrainPlan, data: Vec<EncodedPair>) -> Result<(Transformer<f32>, LossHistory)> {
    let mut t = Trainer::new(model, plan, data)?;
    let h = t.run(&mut ())?;
    Ok((t.model, h))
}
