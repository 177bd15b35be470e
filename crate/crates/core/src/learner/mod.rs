//! Behaviour cloning: a small feed-forward policy trained by full-batch Adam
//! on a mean-squared action error.

mod mlp;
mod model;

pub use mlp::{Activation, Adam, AdamConfig, Grads, Mlp, Scalar};
pub use model::{load_model, parse_model, store_model, model_to_text, MlpPolicy, ModelHeader, PolicyModel, MODEL_VERSION};

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split, DatasetError, DemoSet};
use crate::sim::{ACTION_DIM, OBSERVATION_DIM};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model file error: {0}")]
    Format(String),
    #[error("model expects {expected:?} but was built for {found:?}")]
    Incompatible { expected: [usize; 2], found: [usize; 2] },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-feature input scaling applied before the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub scale: [f64; OBSERVATION_DIM],
}

/// Index of the altitude component in the observation vector.
pub const ALTITUDE_INDEX: usize = 4;

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer { scale: [1.0; OBSERVATION_DIM] };

    /// Divide the altitude by the flight ceiling; image quantities and
    /// normalized velocities are already O(1).
    pub fn altitude(z_max: f64) -> Self {
        let mut scale = [1.0; OBSERVATION_DIM];
        scale[ALTITUDE_INDEX] = z_max;
        Self { scale }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(LearnError::Config("normalizer scales must be positive".into()))
        }
    }

    pub fn apply(&self, state: &[f64; OBSERVATION_DIM]) -> [f64; OBSERVATION_DIM] {
        std::array::from_fn(|i| state[i] / self.scale[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Fraction of samples used for training; the rest is validation.
    pub train_ratio: f64,
    pub seed: u64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    /// Mini-batch size; `None` trains on the full batch each epoch.
    pub batch_size: Option<usize>,
    pub normalizer: Normalizer,
    /// Evaluate the validation loss every this many epochs (and at the last).
    pub validation_every: usize,
    /// Log a progress line every this many epochs (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 300],
            epochs: 10_000,
            adam: AdamConfig::default(),
            train_ratio: 0.67,
            seed: 0,
            init_scale: 1e-4,
            batch_size: None,
            normalizer: Normalizer::altitude(3.0),
            validation_every: 10,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || self.adam.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if self.validation_every == 0 {
            return bad("validation_every must be positive");
        }
        self.normalizer.validate()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(OBSERVATION_DIM).chain(self.hidden.iter().copied()).chain([ACTION_DIM]).collect()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-epoch losses. Validation is `None` on epochs where it was not
/// evaluated or when there is no validation split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<Option<f64>>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for (i, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            let v = v.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{t},{v}", i + 1);
        }
        out
    }

    pub fn final_train(&self) -> Option<f64> {
        self.train.last().copied()
    }
}

pub struct TrainOutcome {
    pub model: PolicyModel,
    pub history: LossHistory,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub seconds: f64,
}

/// Stack states (normalized) and actions into `f32` matrices.
pub fn to_matrices(d: &DemoSet, norm: &Normalizer) -> (Array2<f32>, Array2<f32>) {
    let n = d.len();
    let mut x = Array2::zeros((n, OBSERVATION_DIM));
    let mut y = Array2::zeros((n, ACTION_DIM));
    for (i, s) in d.samples.iter().enumerate() {
        for (j, v) in norm.apply(&s.state).iter().enumerate() {
            x[[i, j]] = *v as f32;
        }
        for (j, v) in s.action.iter().enumerate() {
            y[[i, j]] = *v as f32;
        }
    }
    (x, y)
}

/// Train on a seeded split of `data`; deterministic for a given config.
///
/// With `train_ratio = 1.0` every sample is used for training and no
/// validation loss is reported.
pub fn train(data: &DemoSet, cfg: &TrainConfig) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(DatasetError::Empty.into());
    }
    let started = Instant::now();
    let (train_set, val_set) = if cfg.train_ratio >= 1.0 {
        (data.clone(), None)
    } else {
        let (t, v) = split(data, cfg.train_ratio, cfg.seed)?;
        if t.is_empty() {
            return Err(LearnError::Config("training split is empty".into()));
        }
        (t, (!v.is_empty()).then_some(v))
    };
    let (x, y) = to_matrices(&train_set, &cfg.normalizer);
    let val = val_set.as_ref().map(|v| to_matrices(v, &cfg.normalizer));

    let mut net: Mlp<f32> = Mlp::new(&cfg.dims(), Activation::Relu, Activation::Tanh, cfg.init_scale, cfg.seed)?;
    let mut opt = Adam::new(&net, cfg.adam);
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for epoch in 1..=cfg.epochs {
        let loss = match cfg.batch_size {
            None => {
                let (loss, g) = net.loss_and_grad(x.view(), y.view());
                check_loss(loss as f64, epoch)?;
                opt.step(&mut net, &g).map_err(|_| LearnError::Diverged { epoch, loss: loss as f64 })?;
                loss as f64
            }
            Some(b) => {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for chunk in order.chunks(b) {
                    let xb = x.select(Axis(0), chunk);
                    let yb = y.select(Axis(0), chunk);
                    let (loss, g) = net.loss_and_grad(xb.view(), yb.view());
                    check_loss(loss as f64, epoch)?;
                    opt.step(&mut net, &g).map_err(|_| LearnError::Diverged { epoch, loss: loss as f64 })?;
                    total += loss as f64 * chunk.len() as f64;
                }
                total / x.nrows() as f64
            }
        };
        let vloss = val
            .as_ref()
            .filter(|_| epoch % cfg.validation_every == 0 || epoch == cfg.epochs)
            .map(|(vx, vy)| net.loss(vx.view(), vy.view()) as f64);
        history.train.push(loss);
        history.validation.push(vloss);
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            log::info!("epoch {epoch}: train {loss:.6e} validation {vloss:?}");
        }
    }
    let header = ModelHeader {
        version: MODEL_VERSION,
        dims: cfg.dims(),
        hidden_activation: Activation::Relu,
        output_activation: Activation::Tanh,
        normalizer: cfg.normalizer,
        seed: cfg.seed,
        epochs: cfg.epochs,
        dataset_fingerprint: data.fingerprint(),
        config_fingerprint: cfg.fingerprint(),
        provenance: data.header.provenance,
        subtasks: data.header.subtasks.clone(),
        scenario_fingerprint: None,
    };
    Ok(TrainOutcome {
        model: PolicyModel::new(header, net)?,
        history,
        train_samples: x.nrows(),
        validation_samples: val.as_ref().map_or(0, |(vx, _)| vx.nrows()),
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn check_loss(loss: f64, epoch: usize) -> Result<(), LearnError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(LearnError::Diverged { epoch, loss })
    }
}
