//! Stochastic-gradient training of the dynamics model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_training_batch, DataSplit, Dataset};
use crate::model::{save_checkpoint, Checkpoint, DynamicsModel, ModelConfig, TerrainMode, TrainingSample};
use crate::nn::Adam;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Target window length `N`.
    pub target_len: usize,
    /// Context sizes are drawn from `U{0..context_k_max}`.
    pub context_k_max: usize,
    pub lambda_kl: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Validation interval in steps (0 disables periodic validation).
    pub val_every: usize,
    /// Number of fixed validation samples.
    pub val_samples: usize,
    /// Checkpoint interval in steps (0: only the final checkpoint).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("target_len and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return Err(Error::Config("lambda_kl must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    /// Mean negative ELBO on the fixed validation samples.
    pub loss: f64,
    /// Root-mean-square one-step position error in metres, with `β` set to
    /// the context-only belief mean.
    pub one_step_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DynamicsModel,
    /// Training loss after each step.
    pub losses: Vec<f64>,
    pub validation: Vec<ValidationRecord>,
}

/// Fixed validation samples drawn from the validation settings (or, if there
/// are none, from the training settings).
pub fn validation_samples(cfg: &TrainConfig, data: &Dataset) -> Result<Vec<TrainingSample>> {
    let mut pool = data.split(DataSplit::Val);
    if pool.is_empty() {
        pool = data.split(DataSplit::Train);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    sample_training_batch(&pool, cfg.val_samples.max(1), cfg.target_len, cfg.context_k_max, &mut rng)
}

/// Root-mean-square error of one-step position predictions from ground-truth
/// states. Read-only with respect to the model.
pub fn one_step_rmse(model: &DynamicsModel, samples: &[TrainingSample]) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for s in samples {
        let beta = model.encode_context(&s.context).mean;
        for n in 0..s.actions.len() {
            let x = &s.observations[n];
            let u = std::slice::from_ref(&s.actions[n]);
            let pred = match model.terrain_mode() {
                TerrainMode::Lookup => model.predict_with_features(x, &s.features[n..=n], u, &beta)?,
                TerrainMode::ObservedConcat => model.predict_rollout(x, s.features[n], u, &beta, None)?,
            };
            let p = pred.means[0].position();
            let t = s.observations[n + 1].position();
            sq += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
            count += 1;
        }
    }
    Ok((sq / count.max(1) as f64).sqrt())
}

/// Mean negative ELBO on fixed samples, with a fixed reparameterisation seed.
pub fn validation_loss(model: &DynamicsModel, cfg: &TrainConfig, samples: &[TrainingSample]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    Ok(model.elbo_loss(samples, cfg.lambda_kl, &mut rng, false)?.loss)
}

/// Trains a fresh model. Checkpoints `step_XXXXXXX.ckpt` and `final.ckpt` are
/// written into `checkpoint_dir` when given.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = DynamicsModel::new(model_cfg.clone(), cfg.seed)?;
    let train_pool = data.split(DataSplit::Train);
    if train_pool.is_empty() {
        return Err(Error::InvalidInput("dataset has no training settings".into()));
    }
    let val = validation_samples(cfg, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(model.n_params(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut validation = Vec::new();
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let validate = |model: &DynamicsModel, step: usize| -> Result<ValidationRecord> {
        Ok(ValidationRecord {
            step,
            loss: validation_loss(model, cfg, &val)?,
            one_step_rmse: one_step_rmse(model, &val)?,
        })
    };
    for step in 0..cfg.total_steps {
        let batch = sample_training_batch(&train_pool, cfg.batch_size, cfg.target_len, cfg.context_k_max, &mut rng)?;
        let out = model
            .elbo_loss(&batch, cfg.lambda_kl, &mut rng, true)
            .map_err(|e| match e {
                Error::Numeric { detail, .. } => Error::Numeric { step, detail },
                other => other,
            })?;
        opt.step(&mut model.params.values, &out.grads);
        losses.push(out.loss);
        let done = step + 1;
        if cfg.val_every > 0 && done % cfg.val_every == 0 {
            let rec = validate(&model, done)?;
            log::info!(
                "step {done}: train loss {:.4}, val loss {:.4}, one-step rmse {:.2} mm",
                out.loss,
                rec.loss,
                1e3 * rec.one_step_rmse
            );
            validation.push(rec);
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    step: done as u64,
                };
                save_checkpoint(&ckpt, &dir.join(format!("step_{done:07}.ckpt")))?;
            }
        }
    }
    if validation.last().is_none_or(|r| r.step != cfg.total_steps) {
        validation.push(validate(&model, cfg.total_steps)?);
    }
    if let Some(dir) = checkpoint_dir {
        let ckpt = Checkpoint {
            model: model.clone(),
            step: cfg.total_steps as u64,
        };
        save_checkpoint(&ckpt, &dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        losses,
        validation,
    })
}

/// Trailing moving average with window `w` (entries from index `w − 1` on).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - w + 1);
    let mut acc: f64 = xs[..w].iter().sum();
    out.push(acc / w as f64);
    for i in w..xs.len() {
        acc += xs[i] - xs[i - w];
        out.push(acc / w as f64);
    }
    out
}
