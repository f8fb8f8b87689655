//! Coupled LMP and inelastic-demand process.
//!
//! Each node `i ∈ {0} ∪ N` carries `α_i = [cos, sin, r_1, …, r_τ]`: a unit
//! phasor rotating once per period plus a τ-slot shift register holding the
//! most recent noise draws (`r_1` newest). Node 0 drives the LMP, the others
//! drive their own inelastic demand through `m = [1, 0, σ_ξ 1_τ]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::netmodel::Load;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExoConfig {
    /// Noise memory length.
    pub tau: usize,
    /// Sinusoid amplitude factor.
    pub kappa: f64,
    /// Noise standard-deviation factor.
    pub sigma_xi: f64,
    /// Cross-node noise correlation.
    pub z: f64,
    /// Mean LMP.
    pub lambda_star: f64,
    /// Demand phase lead over the LMP, hours.
    pub delta_min: f64,
    pub delta_max: f64,
    pub period_hours: f64,
}

impl Default for ExoConfig {
    fn default() -> Self {
        ExoConfig {
            tau: 3,
            kappa: 0.5,
            sigma_xi: 0.1,
            z: 0.9,
            lambda_star: 1.0,
            delta_min: 3.0,
            delta_max: 9.0,
            period_hours: 24.0,
        }
    }
}

impl ExoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::argument("tau must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.z) {
            return Err(Error::argument(format!("noise correlation z must lie in [0, 1], got {}", self.z)));
        }
        if !(self.delta_min <= self.delta_max) {
            return Err(Error::argument("delta_min must not exceed delta_max"));
        }
        if !(self.period_hours > 0.0) {
            return Err(Error::argument("period_hours must be positive"));
        }
        Ok(())
    }

    /// Length of each node's state, `2 + τ`.
    pub fn state_dim(&self) -> usize {
        2 + self.tau
    }

    /// Rotation per one-hour step.
    pub fn step_angle(&self) -> f64 {
        2.0 * PI / self.period_hours
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExoState {
    /// Row-major `(|N| + 1) × (2 + τ)`; row 0 drives the LMP.
    alpha: Vec<f64>,
    dim: usize,
    /// Per-node phase offsets in hours, `δ_0 = 0`.
    pub phase_offsets: Vec<f64>,
}

impl ExoState {
    /// State with `α_i = [cos(2π(t0+δ_i)/T), sin(·), 0, …]`.
    pub fn from_phase(cfg: &ExoConfig, t0: f64, phase_offsets: Vec<f64>) -> Self {
        let dim = cfg.state_dim();
        let mut alpha = vec![0.0; phase_offsets.len() * dim];
        for (i, delta) in phase_offsets.iter().enumerate() {
            let angle = 2.0 * PI * (t0 + delta) / cfg.period_hours;
            alpha[i * dim] = libm::cos(angle);
            alpha[i * dim + 1] = libm::sin(angle);
        }
        ExoState {
            alpha,
            dim,
            phase_offsets,
        }
    }

    pub fn node_count(&self) -> usize {
        self.alpha.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.alpha[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    /// In-place version of [`step`].
    pub fn advance(&mut self, xi: &[f64], cfg: &ExoConfig) -> Result<()> {
        check_len("xi", self.node_count(), xi.len())?;
        check_len("exogenous state dimension", cfg.state_dim(), self.dim)?;
        let (s, c) = libm::sincos(cfg.step_angle());
        for (i, &noise) in xi.iter().enumerate() {
            let row = self.row_mut(i);
            let (a, b) = (row[0], row[1]);
            row[0] = c * a - s * b;
            row[1] = s * a + c * b;
            row.copy_within(2..row.len() - 1, 3);
            row[2] = noise;
        }
        Ok(())
    }
}

/// Draw `t0 ~ U(0, 23)` and `δ_i ~ U(δ_min, δ_max)` (with `δ_0 = 0`).
pub fn sample_initial<R: Rng + ?Sized>(cfg: &ExoConfig, n_nodes: usize, rng: &mut R) -> ExoState {
    let t0 = rng.random_range(0.0..=23.0);
    let mut offsets = Vec::with_capacity(n_nodes);
    offsets.push(0.0);
    for _ in 1..n_nodes {
        offsets.push(if cfg.delta_min < cfg.delta_max {
            rng.random_range(cfg.delta_min..cfg.delta_max)
        } else {
            cfg.delta_min
        });
    }
    ExoState::from_phase(cfg, t0, offsets)
}

/// One joint draw `ξ ~ N(0, z 11ᵀ + (1 - z) I)` over `n_nodes` entries.
///
/// Uses the one-factor square root `[√z 1, √(1-z) I]`, which is exact for the
/// whole range `z ∈ [0, 1]` including the singular `z = 1` case.
pub fn sample_noise<R: Rng + ?Sized>(cfg: &ExoConfig, n_nodes: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&cfg.z) {
        return Err(Error::argument(format!("noise correlation z must lie in [0, 1], got {}", cfg.z)));
    }
    let common: f64 = StandardNormal.sample(rng);
    let (a, b) = (libm::sqrt(cfg.z), libm::sqrt(1.0 - cfg.z));
    Ok((0..n_nodes)
        .map(|_| {
            let own: f64 = StandardNormal.sample(rng);
            a * common + b * own
        })
        .collect())
}

pub fn step(state: &ExoState, xi: &[f64], cfg: &ExoConfig) -> Result<ExoState> {
    let mut next = state.clone();
    next.advance(xi, cfg)?;
    Ok(next)
}

/// LMP and inelastic demand read off the exogenous state.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub lambda: f64,
    pub pbar: Vec<f64>,
    pub qbar: Vec<f64>,
}

/// `mᵀ α_i = α_i[0] + σ_ξ Σ_k r_k`.
pub fn shape(row: &[f64], cfg: &ExoConfig) -> f64 {
    row[0] + cfg.sigma_xi * row[2..].iter().sum::<f64>()
}

pub fn measure(state: &ExoState, cfg: &ExoConfig, nominal_load: &[Load]) -> Result<Measurement> {
    check_len("nominal_load", state.node_count() - 1, nominal_load.len())?;
    let lambda = cfg.lambda_star * (1.0 + cfg.kappa * shape(state.row(0), cfg));
    let (pbar, qbar) = nominal_load
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let f = 1.0 + cfg.kappa * shape(state.row(k + 1), cfg);
            (l.p * f, l.q * f)
        })
        .unzip();
    Ok(Measurement { lambda, pbar, qbar })
}
