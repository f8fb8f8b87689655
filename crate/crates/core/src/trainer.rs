//! Stochastic gradient ascent on the potential value function.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::devices::StorageFleet;
use crate::error::{Error, Result};
use crate::exogenous::sample_initial;
use crate::game::{Game, GameState, RewardMode};
use crate::gradient::{estimate, sample_horizon, GradEstimate, NoiseStreams};
use crate::linalg::norm;
use crate::policy::{init_params, PolicyMode, PolicyParams};
use crate::rng::{stream, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub beta: f64,
    pub n_train: usize,
    pub n_batch: usize,
    pub mode: RewardMode,
    pub w: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            beta: 0.001,
            n_train: 500,
            n_batch: 1,
            mode: RewardMode::Eq,
            w: 0.75,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::argument(format!("train.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::argument(format!("train.beta must be a finite nonnegative step, got {}", self.beta)));
        }
        if self.n_train == 0 || self.n_batch == 0 {
            return Err(Error::argument("train.n_train and train.n_batch must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::argument(format!("train.w must lie in [0, 1], got {}", self.w)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Batch mean of `Φ̂` at the pre-update parameters.
    pub value: f64,
    /// Norm of the batch-mean gradient.
    pub grad_norm: f64,
    /// Norm of the parameters after the update.
    pub theta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub mode: RewardMode,
    pub w: f64,
    pub seed: u64,
    /// Training ran on the zero-impedance network.
    pub zero_impedance: bool,
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Mean training value over the last `window` iterations.
    pub fn trailing_mean(&self, window: usize) -> f64 {
        let n = self.records.len().min(window.max(1));
        if n == 0 {
            return f64::NAN;
        }
        self.records[self.records.len() - n..].iter().map(|r| r.value).sum::<f64>() / n as f64
    }

    /// Mean training value over the first `window` iterations.
    pub fn leading_mean(&self, window: usize) -> f64 {
        let n = self.records.len().min(window.max(1));
        if n == 0 {
            return f64::NAN;
        }
        self.records[..n].iter().map(|r| r.value).sum::<f64>() / n as f64
    }
}

/// `d_i ~ U(0, d_max,i)` independently, exogenous state from its own sampler.
pub fn sample_initial_state<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> GameState {
    let d = game.specs().iter().map(|s| rng.random_range(0.0..=s.d_max)).collect();
    let exo = sample_initial(game.exo_config(), game.exo_nodes(), rng);
    GameState {
        fleet: StorageFleet {
            d,
            specs: game.specs().to_vec(),
        },
        exo,
    }
}

/// The game a mode trains on: the configured weight, and for UN the
/// zero-impedance network.
pub fn training_game(game: &Game, mode: RewardMode, w: f64) -> Result<Game> {
    let g = game.with_weight(w)?;
    Ok(if mode == RewardMode::Un { g.zero_impedance() } else { g })
}

/// One gradient sample for batch member `member` of iteration `iteration`;
/// a pure function of `(seed, iteration, member, θ)`.
pub fn sample_gradient(game: &Game, theta: &PolicyParams, cfg: &TrainConfig, iteration: usize, member: usize) -> Result<GradEstimate> {
    let mut rng = stream(cfg.seed, Purpose::Train, &[iteration as u64, member as u64]);
    let s0 = sample_initial_state(game, &mut rng);
    let horizon = sample_horizon(cfg.gamma, &mut rng)?;
    let streams = NoiseStreams::sample(game, horizon + 1, &mut rng)?;
    estimate(game, theta, &s0, horizon, &streams, PolicyMode::Stochastic, cfg.mode)
}

/// Serial training.
pub fn train(game: &Game, cfg: &TrainConfig) -> Result<(PolicyParams, TrainLog)> {
    train_with(game, cfg, |n, f| (0..n).map(f).collect())
}

/// Training with a caller-supplied batch map. `map(n, f)` must return
/// `[f(0), …, f(n-1)]` in order; it may evaluate them concurrently.
pub fn train_with<M>(game: &Game, cfg: &TrainConfig, mut map: M) -> Result<(PolicyParams, TrainLog)>
where
    M: FnMut(usize, &(dyn Fn(usize) -> Result<GradEstimate> + Sync)) -> Vec<Result<GradEstimate>>,
{
    cfg.validate()?;
    let game = training_game(game, cfg.mode, cfg.w)?;
    let mut theta = init_params(game.n_agents(), game.exo_config().tau)?;
    let mut records = Vec::with_capacity(cfg.n_train);
    for iteration in 0..cfg.n_train {
        let current = theta.clone();
        let sample = |member: usize| sample_gradient(&game, &current, cfg, iteration, member);
        let estimates = map(cfg.n_batch, &sample);
        if estimates.len() != cfg.n_batch {
            return Err(Error::argument(format!(
                "batch map returned {} estimates for a batch of {}",
                estimates.len(),
                cfg.n_batch
            )));
        }
        let mut grad = vec![0.0; theta.theta.len()];
        let mut value = 0.0;
        for est in estimates {
            let est = est?;
            value += est.value;
            for (g, e) in grad.iter_mut().zip(&est.grad) {
                *g += e;
            }
        }
        let scale = 1.0 / cfg.n_batch as f64;
        value *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }
        for (t, g) in theta.theta.iter_mut().zip(&grad) {
            *t += cfg.beta * g;
        }
        if theta.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }
        records.push(TrainRecord {
            iteration,
            value,
            grad_norm: norm(&grad),
            theta_norm: theta.norm(),
        });
    }
    Ok((
        theta,
        TrainLog {
            mode: cfg.mode,
            w: cfg.w,
            seed: cfg.seed,
            zero_impedance: game.is_lossless(),
            records,
        },
    ))
}
