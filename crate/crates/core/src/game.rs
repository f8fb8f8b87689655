//! The stochastic game: joint state, stage rewards under nodal pricing, the
//! potential `φ = Σu − C̃`, social welfare, and the transition.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::devices::{project_with_jacobian, step_soc, DeviceConfig, Projection, StorageFleet, StorageSpec, Utility, ZeroUtility};
use crate::error::{check_len, Error, Result};
use crate::exogenous::{measure, ExoConfig, ExoState};
use crate::netmodel::{build_sensitivities, Network, Sensitivities};
use crate::powerflow::{self, FlowSolution, PriceVector};

/// Which stage objective a policy is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardMode {
    /// Equilibrium: the potential `φ`.
    #[serde(rename = "EQ")]
    Eq,
    /// Social optimum: welfare `Σu − C`.
    #[serde(rename = "SO")]
    So,
    /// Uniform pricing: the potential of the zero-impedance game.
    #[serde(rename = "UN")]
    Un,
}

impl RewardMode {
    pub fn label(self) -> &'static str {
        match self {
            RewardMode::Eq => "EQ",
            RewardMode::So => "SO",
            RewardMode::Un => "UN",
        }
    }
}

impl core::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EQ" => Ok(RewardMode::Eq),
            "SO" => Ok(RewardMode::So),
            "UN" => Ok(RewardMode::Un),
            _ => Err(Error::argument(format!("unknown reward mode '{s}' (expected EQ, SO or UN)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Game {
    network: Network,
    sens: Sensitivities,
    /// Node number (1-based) of each prosumer.
    agents: Vec<usize>,
    specs: Vec<StorageSpec>,
    eta_std: Vec<[f64; 2]>,
    exo: ExoConfig,
    w: f64,
    utility: Arc<dyn Utility>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub fleet: StorageFleet,
    pub exo: ExoState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    /// Net nodal loads, indexed by node − 1.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub pbar: Vec<f64>,
    pub qbar: Vec<f64>,
    /// Projected storage consumption per agent.
    pub storage: Vec<[f64; 2]>,
    pub flows: FlowSolution,
    pub prices: PriceVector,
    pub utilities: Vec<f64>,
    /// Per-agent rewards `U_i = u_i − p_i μ_p,i − q_i μ_q,i`.
    pub rewards: Vec<f64>,
    pub cost: f64,
    pub potential_cost: f64,
    pub phi: f64,
    pub welfare: f64,
    /// Computed on a network with every impedance zero.
    pub lossless: bool,
}

/// Stage outcome plus what the adjoint pass needs.
pub(crate) struct StageAdjoint {
    pub outcome: StageOutcome,
    pub projections: Vec<Projection>,
    /// Per agent `(∂obj/∂d, ∂obj/∂p̃, ∂obj/∂q̃)` holding the projections fixed.
    pub objective_grad: Vec<[f64; 3]>,
    pub objective: f64,
}

impl Game {
    /// One prosumer on every bus with nonzero nominal load.
    pub fn new(network: Network, exo: ExoConfig, devices: &DeviceConfig, w: f64) -> Result<Self> {
        exo.validate()?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::argument(format!("voltage weight w must lie in [0, 1], got {w}")));
        }
        let agents = network.loaded_nodes();
        if agents.is_empty() {
            return Err(Error::argument("network has no loaded buses to host prosumers"));
        }
        let specs = agents
            .iter()
            .map(|&k| StorageSpec::from_nominal(network.nominal_load[k - 1], devices))
            .collect::<Result<Vec<_>>>()?;
        let eta_std = agents
            .iter()
            .map(|&k| {
                let l = network.nominal_load[k - 1];
                [l.p.abs(), l.q.abs()]
            })
            .collect();
        let sens = build_sensitivities(&network);
        Ok(Game {
            network,
            sens,
            agents,
            specs,
            eta_std,
            exo,
            w,
            utility: Arc::new(ZeroUtility),
        })
    }

    pub fn with_utility(mut self, utility: Arc<dyn Utility>) -> Self {
        self.utility = utility;
        self
    }

    pub fn with_weight(&self, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::argument(format!("voltage weight w must lie in [0, 1], got {w}")));
        }
        let mut g = self.clone();
        g.w = w;
        Ok(g)
    }

    /// Same prosumers and exogenous process on a network with `r = x = 0`.
    pub fn zero_impedance(&self) -> Game {
        let network = self.network.zero_impedance();
        let sens = build_sensitivities(&network);
        Game {
            network,
            sens,
            ..self.clone()
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn sensitivities(&self) -> &Sensitivities {
        &self.sens
    }

    pub fn agents(&self) -> &[usize] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn specs(&self) -> &[StorageSpec] {
        &self.specs
    }

    pub fn policy_noise_std(&self) -> &[[f64; 2]] {
        &self.eta_std
    }

    pub fn exo_config(&self) -> &ExoConfig {
        &self.exo
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn v0(&self) -> f64 {
        self.network.v0
    }

    pub fn is_lossless(&self) -> bool {
        self.network.is_lossless()
    }

    /// Number of exogenous rows, `|N| + 1`.
    pub fn exo_nodes(&self) -> usize {
        self.network.node_count + 1
    }

    pub fn policy_layout(&self) -> crate::policy::PolicyLayout {
        crate::policy::PolicyLayout {
            n_agents: self.n_agents(),
            tau: self.exo.tau,
        }
    }

    fn check_state(&self, state: &GameState, actions: &[[f64; 2]]) -> Result<()> {
        check_len("actions", self.n_agents(), actions.len())?;
        if actions.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::argument("non-finite storage action"));
        }
        check_len("state of charge", self.n_agents(), state.fleet.d.len())?;
        check_len("exogenous rows", self.exo_nodes(), state.exo.node_count())
    }

    pub fn stage(&self, state: &GameState, actions: &[[f64; 2]]) -> Result<StageOutcome> {
        Ok(self.stage_adjoint(state, actions, RewardMode::Eq)?.outcome)
    }

    pub(crate) fn stage_adjoint(&self, state: &GameState, actions: &[[f64; 2]], mode: RewardMode) -> Result<StageAdjoint> {
        self.check_state(state, actions)?;
        let v0 = self.v0();
        let m = measure(&state.exo, &self.exo, &self.network.nominal_load)?;
        let projections: Vec<Projection> = actions
            .iter()
            .zip(&state.fleet.d)
            .zip(&self.specs)
            .map(|((&a, &d), spec)| project_with_jacobian(a, d, spec))
            .collect();
        let (mut p, mut q) = (m.pbar.clone(), m.qbar.clone());
        for (&k, proj) in self.agents.iter().zip(&projections) {
            p[k - 1] += proj.value[0];
            q[k - 1] += proj.value[1];
        }
        let flows = powerflow::solve(&self.sens, &p, &q, v0)?;
        let prices = powerflow::prices_from_solution(&self.sens, &flows, &p, &q, m.lambda, self.w, v0);
        let cost = powerflow::dso_cost(&flows, &p, m.lambda, self.w, v0)?;
        let potential_cost = cost + powerflow::self_adjustment(&self.sens, &p, &q, m.lambda, self.w);

        let mut utilities = Vec::with_capacity(self.n_agents());
        let mut rewards = Vec::with_capacity(self.n_agents());
        let mut objective_grad = Vec::with_capacity(self.n_agents());
        for (i, (&k, proj)) in self.agents.iter().zip(&projections).enumerate() {
            let d = state.fleet.d[i];
            let [ps, qs] = proj.value;
            let u = self.utility.value(i, d, ps, qs);
            let [du_dd, du_dp, du_dq] = self.utility.gradient(i, d, ps, qs);
            let (pk, qk) = (p[k - 1], q[k - 1]);
            utilities.push(u);
            rewards.push(u - pk * prices.mu_p[k - 1] - qk * prices.mu_q[k - 1]);
            let (mut gp, mut gq) = (prices.mu_p[k - 1], prices.mu_q[k - 1]);
            if mode != RewardMode::So {
                let [a, c, b] = powerflow::self_block(&self.sens, k - 1, m.lambda, self.w);
                gp += 2.0 * (a * pk + b * qk);
                gq += 2.0 * (b * pk + c * qk);
            }
            objective_grad.push([du_dd, du_dp - gp, du_dq - gq]);
        }
        let total_u: f64 = utilities.iter().sum();
        let outcome = StageOutcome {
            p,
            q,
            pbar: m.pbar,
            qbar: m.qbar,
            storage: projections.iter().map(|pr| pr.value).collect(),
            flows,
            prices,
            utilities,
            rewards,
            cost,
            potential_cost,
            phi: total_u - potential_cost,
            welfare: total_u - cost,
            lossless: self.is_lossless(),
        };
        let objective = stage_objective(&outcome, mode)?;
        Ok(StageAdjoint {
            outcome,
            projections,
            objective_grad,
            objective,
        })
    }

    /// Next state; a pure function of `(state, actions, xi)`.
    pub fn transition(&self, state: &GameState, actions: &[[f64; 2]], xi: &[f64]) -> Result<GameState> {
        self.check_state(state, actions)?;
        let mut next = state.clone();
        for (i, (&a, spec)) in actions.iter().zip(&self.specs).enumerate() {
            let d = state.fleet.d[i];
            let [ps, _] = crate::devices::project(a, d, spec);
            next.fleet.d[i] = step_soc(d, ps, spec);
        }
        next.exo.advance(xi, &self.exo)?;
        Ok(next)
    }

    pub fn idle_actions(&self) -> Vec<[f64; 2]> {
        alloc::vec![[0.0; 2]; self.n_agents()]
    }
}

pub fn stage_objective(outcome: &StageOutcome, mode: RewardMode) -> Result<f64> {
    match mode {
        RewardMode::Eq => Ok(outcome.phi),
        RewardMode::So => Ok(outcome.welfare),
        RewardMode::Un if outcome.lossless => Ok(outcome.phi),
        RewardMode::Un => Err(Error::argument(
            "UN objective requested for an outcome computed on a network with impedance",
        )),
    }
}
