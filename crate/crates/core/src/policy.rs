//! Affine Gaussian local policies.
//!
//! Agent `i` acts on its own state of charge, its own exogenous state and the
//! LMP driver only:
//! `a_i = θ_i^d d_i + Θ_i^{αi} α_i + Θ_i^{α0} α_0 + θ_i^0 + η_i`.
//!
//! Per-agent block layout inside the flat vector (row-major matrices):
//! `[θ^d (2) | Θ^{αi} (2×k) | Θ^{α0} (2×k) | θ^0 (2)]` with `k = 2 + τ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub n_agents: usize,
    pub tau: usize,
}

impl PolicyLayout {
    pub fn state_dim(&self) -> usize {
        2 + self.tau
    }

    pub fn per_agent(&self) -> usize {
        2 + 4 * self.state_dim() + 2
    }

    pub fn len(&self) -> usize {
        self.n_agents * self.per_agent()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn agent_range(&self, agent: usize) -> core::ops::Range<usize> {
        let k = self.per_agent();
        agent * k..(agent + 1) * k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Add the Gaussian exploration noise η.
    Stochastic,
    /// η = 0.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layout: PolicyLayout,
    pub theta: Vec<f64>,
}

/// One agent's parameter blocks, unpacked.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPolicy {
    pub soc: [f64; 2],
    /// 2 × (2+τ), row-major.
    pub local: Vec<f64>,
    /// 2 × (2+τ), row-major.
    pub root: Vec<f64>,
    pub bias: [f64; 2],
}

pub fn init_params(n_agents: usize, tau: usize) -> Result<PolicyParams> {
    if n_agents == 0 {
        return Err(Error::argument("a policy needs at least one agent"));
    }
    let layout = PolicyLayout { n_agents, tau };
    Ok(PolicyParams {
        layout,
        theta: vec![0.0; layout.len()],
    })
}

impl PolicyParams {
    pub fn from_vec(layout: PolicyLayout, theta: Vec<f64>) -> Result<Self> {
        check_len("policy parameters", layout.len(), theta.len())?;
        Ok(PolicyParams { layout, theta })
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent < self.layout.n_agents {
            Ok(())
        } else {
            Err(Error::argument(format!(
                "agent {agent} out of range for {} agents",
                self.layout.n_agents
            )))
        }
    }

    pub fn unpack(&self, agent: usize) -> Result<AgentPolicy> {
        self.check_agent(agent)?;
        let k = self.layout.state_dim();
        let block = &self.theta[self.layout.agent_range(agent)];
        Ok(AgentPolicy {
            soc: [block[0], block[1]],
            local: block[2..2 + 2 * k].to_vec(),
            root: block[2 + 2 * k..2 + 4 * k].to_vec(),
            bias: [block[2 + 4 * k], block[3 + 4 * k]],
        })
    }

    pub fn pack(&mut self, agent: usize, blocks: &AgentPolicy) -> Result<()> {
        self.check_agent(agent)?;
        let k = self.layout.state_dim();
        check_len("local block", 2 * k, blocks.local.len())?;
        check_len("root block", 2 * k, blocks.root.len())?;
        let range = self.layout.agent_range(agent);
        let block = &mut self.theta[range];
        block[..2].copy_from_slice(&blocks.soc);
        block[2..2 + 2 * k].copy_from_slice(&blocks.local);
        block[2 + 2 * k..2 + 4 * k].copy_from_slice(&blocks.root);
        block[2 + 4 * k..].copy_from_slice(&blocks.bias);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.theta)
    }

    /// Raw (unprojected) action of `agent`.
    pub fn act(
        &self,
        agent: usize,
        d: f64,
        alpha_local: &[f64],
        alpha_root: &[f64],
        eta: [f64; 2],
        mode: PolicyMode,
    ) -> Result<[f64; 2]> {
        self.check_agent(agent)?;
        let k = self.layout.state_dim();
        check_len("local exogenous state", k, alpha_local.len())?;
        check_len("root exogenous state", k, alpha_root.len())?;
        let block = &self.theta[self.layout.agent_range(agent)];
        let mut a = [0.0; 2];
        for (r, out) in a.iter_mut().enumerate() {
            let local = &block[2 + r * k..2 + (r + 1) * k];
            let root = &block[2 + 2 * k + r * k..2 + 2 * k + (r + 1) * k];
            *out = block[r] * d
                + crate::linalg::dot(local, alpha_local)
                + crate::linalg::dot(root, alpha_root)
                + block[2 + 4 * k + r];
            if mode == PolicyMode::Stochastic {
                *out += eta[r];
            }
        }
        Ok(a)
    }
}

/// Accumulate `(∂a/∂θ_i)ᵀ g` into `grad`, i.e. the vector-Jacobian product of
/// the affine map for one agent.
pub(crate) fn accumulate_vjp(
    layout: &PolicyLayout,
    grad: &mut [f64],
    agent: usize,
    g: [f64; 2],
    d: f64,
    alpha_local: &[f64],
    alpha_root: &[f64],
) {
    let k = layout.state_dim();
    let block = &mut grad[layout.agent_range(agent)];
    for r in 0..2 {
        block[r] += g[r] * d;
        for c in 0..k {
            block[2 + r * k + c] += g[r] * alpha_local[c];
            block[2 + 2 * k + r * k + c] += g[r] * alpha_root[c];
        }
        block[2 + 4 * k + r] += g[r];
    }
}

/// `∂a/∂d = θ^d`.
pub(crate) fn soc_gain(params: &PolicyParams, agent: usize) -> [f64; 2] {
    let start = params.layout.agent_range(agent).start;
    [params.theta[start], params.theta[start + 1]]
}

/// `η_i ~ N(0, diag(σ_p², σ_q²))` for each agent.
pub fn sample_policy_noise<R: Rng + ?Sized>(std_devs: &[[f64; 2]], rng: &mut R) -> Vec<[f64; 2]> {
    std_devs
        .iter()
        .map(|s| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            [s[0] * a, s[1] * b]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHA: [f64; 5] = [0.3, -0.7, 0.1, 0.2, -0.4];

    #[test]
    fn layout_lengths() {
        assert_eq!(init_params(15, 3).unwrap().theta.len(), 360);
        assert_eq!(init_params(1, 3).unwrap().theta.len(), 24);
        assert!(init_params(0, 3).is_err());
        let p = init_params(2, 3).unwrap();
        assert_eq!(p.unpack(1).unwrap().bias, [0.0, 0.0]);
    }

    #[test]
    fn zero_policy_is_idle_or_pure_noise() {
        let p = init_params(2, 3).unwrap();
        assert_eq!(p.act(0, 2.0, &ALPHA, &ALPHA, [0.4, -0.2], PolicyMode::Deterministic).unwrap(), [0.0, 0.0]);
        assert_eq!(p.act(0, 2.0, &ALPHA, &ALPHA, [0.4, -0.2], PolicyMode::Stochastic).unwrap(), [0.4, -0.2]);
        assert!(p.act(2, 2.0, &ALPHA, &ALPHA, [0.0; 2], PolicyMode::Stochastic).is_err());
    }

    #[test]
    fn bias_only_policy() {
        let mut p = init_params(2, 3).unwrap();
        let mut blocks = p.unpack(1).unwrap();
        blocks.bias = [0.3, -0.1];
        p.pack(1, &blocks).unwrap();
        for d in [0.0, 1.0, 5.0] {
            assert_eq!(p.act(1, d, &ALPHA, &[1.0; 5], [9.0; 2], PolicyMode::Deterministic).unwrap(), [0.3, -0.1]);
        }
        assert_eq!(p.act(0, 1.0, &ALPHA, &ALPHA, [0.0; 2], PolicyMode::Deterministic).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let layout = PolicyLayout { n_agents: 3, tau: 2 };
        let theta: Vec<f64> = (0..layout.len()).map(|i| i as f64 * 0.5 - 3.0).collect();
        let p = PolicyParams::from_vec(layout, theta).unwrap();
        let mut q = init_params(3, 2).unwrap();
        for a in 0..3 {
            q.pack(a, &p.unpack(a).unwrap()).unwrap();
        }
        assert_eq!(p, q);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let layout = PolicyLayout { n_agents: 2, tau: 3 };
        let theta: Vec<f64> = (0..layout.len()).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let p = PolicyParams::from_vec(layout, theta).unwrap();
        let root = [0.9, 0.1, -0.2, 0.0, 0.3];
        let g = [0.7, -1.3];
        let mut grad = vec![0.0; layout.len()];
        accumulate_vjp(&layout, &mut grad, 1, g, 1.7, &ALPHA, &root);
        let h = 1e-6;
        for j in 0..layout.len() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp.theta[j] += h;
            pm.theta[j] -= h;
            let ap = pp.act(1, 1.7, &ALPHA, &root, [0.0; 2], PolicyMode::Deterministic).unwrap();
            let am = pm.act(1, 1.7, &ALPHA, &root, [0.0; 2], PolicyMode::Deterministic).unwrap();
            let fd = (g[0] * (ap[0] - am[0]) + g[1] * (ap[1] - am[1])) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-8, "coordinate {j}");
        }
        assert!(grad[..layout.per_agent()].iter().all(|&v| v == 0.0));
    }
}
