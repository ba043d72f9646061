use serde::{Deserialize, Serialize};

use super::params::{Parameters, Trainable};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Which learned model a config or checkpoint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pop,
    /// PoP over one-hot linguistic inputs.
    Trpop,
    Pipeline,
}

impl ModelKind {
    pub fn default_epochs(self) -> usize {
        match self {
            ModelKind::Pop => 14,
            ModelKind::Trpop => 36,
            ModelKind::Pipeline => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pop => "pop",
            ModelKind::Trpop => "trpop",
            ModelKind::Pipeline => "pipeline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pop" => Ok(ModelKind::Pop),
            "trpop" => Ok(ModelKind::Trpop),
            "pipeline" => Ok(ModelKind::Pipeline),
            other => Err(Error::config(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Reshuffle the examples at the start of every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_model(ModelKind::Pop)
    }
}

impl TrainConfig {
    pub fn for_model(kind: ModelKind) -> Self {
        TrainConfig {
            lr0: 0.09,
            momentum: 0.09,
            decay: 1e-4,
            epochs: kind.default_epochs(),
            seed: 0,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("lr0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::config("decay must be non-negative"));
        }
        Ok(())
    }
}

/// Online SGD with heavy-ball momentum and `lr0 / (1 + decay·u)` decay,
/// `u` counting completed updates.
#[derive(Debug, Clone)]
pub struct Sgd<P> {
    lr0: f64,
    momentum: f64,
    decay: f64,
    updates: u64,
    velocity: P,
}

impl<P: Parameters> Sgd<P> {
    pub fn new(config: &TrainConfig, params: &P) -> Self {
        Sgd {
            lr0: config.lr0,
            momentum: config.momentum,
            decay: config.decay,
            updates: 0,
            velocity: params.zeros_like(),
        }
    }

    /// Learning rate for the next update.
    pub fn lr(&self) -> f64 {
        lr_at(self.lr0, self.decay, self.updates)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn step(&mut self, params: &mut P, grad: &P) {
        let lr = self.lr();
        let m = self.momentum;
        for ((p, v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.velocity.tensors_mut())
            .zip(grad.tensors())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = m * *v - lr * g;
                *p += *v;
            }
        }
        self.updates += 1;
    }
}

pub fn lr_at(lr0: f64, decay: f64, update: u64) -> f64 {
    lr0 / (1.0 + decay * update as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch, each loss taken just before its update.
    pub epoch_loss: Vec<f64>,
    /// Mean validation loss after each epoch (empty without a validation set).
    pub val_loss: Vec<f64>,
    pub updates: u64,
    pub final_lr: f64,
}

/// Trains `params` in place by online SGD. A non-finite loss aborts with the
/// offending example id.
pub fn train<M: Trainable>(
    params: &mut M,
    data: &[M::Example],
    val: Option<&[M::Example]>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let mut sgd = Sgd::new(config, params);
    let mut log = TrainLog {
        final_lr: sgd.lr(),
        ..TrainLog::default()
    };
    if config.epochs == 0 {
        return Ok(log);
    }
    if data.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for &i in &order {
            let example = &data[i];
            let (loss, grad) = params.loss_and_grad(example)?;
            if !loss.is_finite() {
                log::error!(
                    "non-finite loss {loss} on `{}` at epoch {epoch}, update {}",
                    M::example_id(example),
                    sgd.updates()
                );
                return Err(Error::NonFiniteLoss {
                    example_id: M::example_id(example).to_string(),
                    loss,
                    epoch,
                    update: sgd.updates(),
                });
            }
            total += loss;
            sgd.step(params, &grad);
        }
        let mean = total / data.len() as f64;
        log.epoch_loss.push(mean);
        if let Some(val) = val.filter(|v| !v.is_empty()) {
            let mut vt = 0.0;
            for ex in val {
                vt += params.loss(ex)?;
            }
            log.val_loss.push(vt / val.len() as f64);
        }
        log::info!(
            "epoch {}/{}: train loss {mean:.5}{}",
            epoch + 1,
            config.epochs,
            log.val_loss.last().map_or(String::new(), |v| format!(", val loss {v:.5}"))
        );
    }
    log.updates = sgd.updates();
    log.final_lr = sgd.lr();
    Ok(log)
}
