//! Reverse-mode gradient of the rollout value `Φ̂ = Σ_{t=0}^{H} obj(s^t, a^t)`
//! along the reparameterized trajectory, with hand-written per-stage adjoints.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::devices::{step_soc, Projection};
use crate::error::{check_len, Error, Result};
use crate::exogenous::{sample_noise, ExoState};
use crate::game::{Game, GameState, RewardMode};
use crate::policy::{accumulate_vjp, sample_policy_noise, soc_gain, PolicyMode, PolicyParams};

/// Exogenous and policy noise consumed by one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStreams {
    /// `xi[t]` drives the transition out of step `t`; one entry per exogenous row.
    pub xi: Vec<Vec<f64>>,
    /// `eta[t][i]` is agent `i`'s policy noise at step `t`.
    pub eta: Vec<Vec<[f64; 2]>>,
}

impl NoiseStreams {
    /// Streams for `steps` stages. Draw order is stage by stage, η before ξ,
    /// so a longer draw from the same generator extends a shorter one.
    pub fn sample<R: Rng + ?Sized>(game: &Game, steps: usize, rng: &mut R) -> Result<Self> {
        let mut xi = Vec::with_capacity(steps);
        let mut eta = Vec::with_capacity(steps);
        for _ in 0..steps {
            eta.push(sample_policy_noise(game.policy_noise_std(), rng));
            xi.push(sample_noise(game.exo_config(), game.exo_nodes(), rng)?);
        }
        Ok(NoiseStreams { xi, eta })
    }

    pub fn steps(&self) -> usize {
        self.eta.len().min(self.xi.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct TapeStep {
    d: Vec<f64>,
    exo: ExoState,
    projections: Vec<Projection>,
    objective_grad: Vec<[f64; 3]>,
    objective: f64,
}

/// Everything the backward pass needs from a forward rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTape {
    steps: Vec<TapeStep>,
    theta: Vec<f64>,
    mode: RewardMode,
}

impl RolloutTape {
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    /// Stage objectives `obj_t`, `t = 0..=H`.
    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }

    /// State-of-charge trajectory, one vector per stage.
    pub fn soc_trajectory(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.d.clone()).collect()
    }

    /// Projected storage actions per stage.
    pub fn storage_trajectory(&self) -> Vec<Vec<[f64; 2]>> {
        self.steps
            .iter()
            .map(|s| s.projections.iter().map(|p| p.value).collect())
            .collect()
    }

    /// Smallest distance of any raw action to a switching surface of the projection.
    pub fn min_kink_distance(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.projections.iter().map(|p| p.kink_distance))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub value: f64,
    pub horizon: usize,
}

/// `H ~ Geometric(1 − γ)` on `{0, 1, 2, …}`.
pub fn sample_horizon<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::argument(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let geo = Geometric::new(1.0 - gamma).map_err(|e| Error::argument(format!("{e}")))?;
    Ok(geo.sample(rng) as usize)
}

/// Forward pass over stages `0..=horizon`.
pub fn rollout_value(
    game: &Game,
    theta: &PolicyParams,
    s0: &GameState,
    horizon: usize,
    streams: &NoiseStreams,
    policy_mode: PolicyMode,
    mode: RewardMode,
) -> Result<(f64, RolloutTape)> {
    if theta.layout != game.policy_layout() {
        return Err(Error::argument(format!(
            "policy layout {:?} does not match the game's {:?}",
            theta.layout,
            game.policy_layout()
        )));
    }
    if streams.eta.len() < horizon + 1 || streams.xi.len() < horizon {
        return Err(Error::argument(format!(
            "noise streams hold {} policy and {} exogenous draws, horizon {horizon} needs {} and {horizon}",
            streams.eta.len(),
            streams.xi.len(),
            horizon + 1
        )));
    }
    let agents = game.agents();
    let mut state = s0.clone();
    let mut value = 0.0;
    let mut steps = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let eta = &streams.eta[t];
        check_len("policy noise", agents.len(), eta.len())?;
        let root = state.exo.row(0);
        let actions = agents
            .iter()
            .enumerate()
            .map(|(i, &k)| theta.act(i, state.fleet.d[i], state.exo.row(k), root, eta[i], policy_mode))
            .collect::<Result<Vec<_>>>()?;
        let stage = game.stage_adjoint(&state, &actions, mode)?;
        value += stage.objective;
        let record = TapeStep {
            d: state.fleet.d.clone(),
            exo: state.exo.clone(),
            projections: stage.projections,
            objective_grad: stage.objective_grad,
            objective: stage.objective,
        };
        if t < horizon {
            for (i, (proj, spec)) in record.projections.iter().zip(game.specs()).enumerate() {
                state.fleet.d[i] = step_soc(state.fleet.d[i], proj.value[0], spec);
            }
            state.exo.advance(&streams.xi[t], game.exo_config())?;
        }
        steps.push(record);
    }
    Ok((
        value,
        RolloutTape {
            steps,
            theta: theta.theta.clone(),
            mode,
        },
    ))
}

/// Reverse sweep: exact gradient of the taped `Φ̂` with respect to `θ`.
pub fn backward(game: &Game, tape: &RolloutTape, theta: &PolicyParams) -> Result<GradEstimate> {
    if tape.theta != theta.theta || theta.layout != game.policy_layout() {
        return Err(Error::argument("tape was recorded with different policy parameters"));
    }
    let agents = game.agents();
    let n = agents.len();
    let mut grad = vec![0.0; theta.theta.len()];
    // adjoint of d^{t+1}
    let mut g_next = vec![0.0; n];
    let gains: Vec<[f64; 2]> = (0..n).map(|i| soc_gain(theta, i)).collect();
    for step in tape.steps.iter().rev() {
        check_len("taped agents", n, step.projections.len())?;
        let root = step.exo.row(0);
        for (i, &k) in agents.iter().enumerate() {
            let proj = &step.projections[i];
            let [dobj_dd, dobj_dp, dobj_dq] = step.objective_grad[i];
            // d' = d + p̃ feeds the next stage through the real component
            let gv = [dobj_dp + g_next[i], dobj_dq];
            let ga = [
                proj.d_action[0][0] * gv[0] + proj.d_action[1][0] * gv[1],
                proj.d_action[0][1] * gv[0] + proj.d_action[1][1] * gv[1],
            ];
            accumulate_vjp(&theta.layout, &mut grad, i, ga, step.d[i], step.exo.row(k), root);
            g_next[i] += dobj_dd + proj.d_soc[0] * gv[0] + proj.d_soc[1] * gv[1] + gains[i][0] * ga[0] + gains[i][1] * ga[1];
        }
    }
    Ok(GradEstimate {
        grad,
        value: tape.steps.iter().map(|s| s.objective).sum(),
        horizon: tape.horizon(),
    })
}

/// Forward and backward in one call.
pub fn estimate(
    game: &Game,
    theta: &PolicyParams,
    s0: &GameState,
    horizon: usize,
    streams: &NoiseStreams,
    policy_mode: PolicyMode,
    mode: RewardMode,
) -> Result<GradEstimate> {
    let (_, tape) = rollout_value(game, theta, s0, horizon, streams, policy_mode, mode)?;
    backward(game, &tape, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::DeviceConfig;
    use crate::exogenous::ExoConfig;
    use crate::netmodel::{parse_case, scale_loads};
    use crate::policy::init_params;
    use crate::rng::{stream, Purpose};
    use crate::trainer::sample_initial_state;
    use crate::verify::random_game;
    use rand_distr::StandardNormal;

    fn case18() -> Game {
        let net = scale_loads(&parse_case(crate::CASE18).unwrap(), 3.0).unwrap();
        Game::new(net, ExoConfig::default(), &DeviceConfig::default(), 0.75).unwrap()
    }

    fn random_theta<R: Rng>(game: &Game, scale: f64, rng: &mut R) -> PolicyParams {
        let layout = game.policy_layout();
        let theta = (0..layout.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect::<Vec<f64>>();
        PolicyParams::from_vec(layout, theta).unwrap()
    }

    #[test]
    fn zero_horizon_is_one_stage() {
        let g = case18();
        let mut rng = stream(1, Purpose::Verify, &[]);
        let s0 = sample_initial_state(&g, &mut rng);
        let theta = random_theta(&g, 0.05, &mut rng);
        let streams = NoiseStreams::sample(&g, 1, &mut rng).unwrap();
        let (value, _) = rollout_value(&g, &theta, &s0, 0, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap();
        let actions: Vec<[f64; 2]> = g
            .agents()
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                theta
                    .act(i, s0.fleet.d[i], s0.exo.row(k), s0.exo.row(0), streams.eta[0][i], PolicyMode::Stochastic)
                    .unwrap()
            })
            .collect();
        assert_eq!(value, g.stage(&s0, &actions).unwrap().phi);
    }

    #[test]
    fn value_matches_simple_loop() {
        let g = case18();
        let mut rng = stream(2, Purpose::Verify, &[]);
        let s0 = sample_initial_state(&g, &mut rng);
        let theta = random_theta(&g, 0.05, &mut rng);
        let h = 40;
        let streams = NoiseStreams::sample(&g, h + 1, &mut rng).unwrap();
        for mode in [RewardMode::Eq, RewardMode::So] {
            let (value, tape) = rollout_value(&g, &theta, &s0, h, &streams, PolicyMode::Stochastic, mode).unwrap();
            let mut state = s0.clone();
            let mut sum = 0.0;
            for t in 0..=h {
                let actions: Vec<[f64; 2]> = g
                    .agents()
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| {
                        theta
                            .act(i, state.fleet.d[i], state.exo.row(k), state.exo.row(0), streams.eta[t][i], PolicyMode::Stochastic)
                            .unwrap()
                    })
                    .collect();
                let out = g.stage(&state, &actions).unwrap();
                sum += if mode == RewardMode::Eq { out.phi } else { out.welfare };
                state = g.transition(&state, &actions, &streams.xi[t]).unwrap();
            }
            assert!((value - sum).abs() <= 1e-12 * sum.abs().max(1.0));
            assert_eq!(tape.horizon(), h);
        }
    }

    #[test]
    fn idle_policy_without_demand_is_worth_nothing() {
        let mut exo = ExoConfig::default();
        exo.kappa = 1.0;
        exo.sigma_xi = 0.0;
        let net = scale_loads(&parse_case(crate::CASE18).unwrap(), 3.0).unwrap();
        let g = Game::new(net, exo, &DeviceConfig::default(), 0.5).unwrap();
        let mut rng = stream(3, Purpose::Verify, &[]);
        let mut s0 = sample_initial_state(&g, &mut rng);
        // t0 = 12 for every row puts the shape at -1, so demand and the LMP vanish
        s0.exo = ExoState::from_phase(g.exo_config(), 12.0, vec![0.0; g.exo_nodes()]);
        let streams = NoiseStreams::sample(&g, 1, &mut rng).unwrap();
        let theta = init_params(g.n_agents(), 3).unwrap();
        let (v, _) = rollout_value(&g, &theta, &s0, 0, &streams, PolicyMode::Deterministic, RewardMode::Eq).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn stream_exhaustion_and_mismatch_are_errors() {
        let g = case18();
        let mut rng = stream(4, Purpose::Verify, &[]);
        let s0 = sample_initial_state(&g, &mut rng);
        let theta = init_params(g.n_agents(), 3).unwrap();
        let streams = NoiseStreams::sample(&g, 3, &mut rng).unwrap();
        assert!(rollout_value(&g, &theta, &s0, 3, &streams, PolicyMode::Stochastic, RewardMode::Eq).is_err());
        let (_, tape) = rollout_value(&g, &theta, &s0, 2, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap();
        let other = random_theta(&g, 0.1, &mut rng);
        assert!(backward(&g, &tape, &other).is_err());
        assert!(rollout_value(&g, &init_params(3, 3).unwrap(), &s0, 0, &streams, PolicyMode::Stochastic, RewardMode::Eq).is_err());
        assert!(rollout_value(&g, &theta, &s0, 0, &streams, PolicyMode::Stochastic, RewardMode::Un).is_err());
    }

    #[test]
    fn bias_gradient_at_one_interior_stage() {
        let g = case18();
        let mut rng = stream(5, Purpose::Verify, &[]);
        let s0 = sample_initial_state(&g, &mut rng);
        let theta = init_params(g.n_agents(), 3).unwrap();
        let streams = NoiseStreams::sample(&g, 1, &mut rng).unwrap();
        let est = estimate(&g, &theta, &s0, 0, &streams, PolicyMode::Deterministic, RewardMode::Eq).unwrap();
        let stage = g.stage_adjoint(&s0, &g.idle_actions(), RewardMode::Eq).unwrap();
        let layout = theta.layout;
        for i in 0..g.n_agents() {
            let r = layout.agent_range(i);
            let bias = &est.grad[r.end - 2..r.end];
            assert_eq!(bias, &stage.objective_grad[i][1..]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(6, Purpose::Verify, &[]);
        let mut checked = 0;
        while checked < 25 {
            let g = random_game(&mut rng, 4, 2).unwrap();
            let s0 = sample_initial_state(&g, &mut rng);
            let theta = random_theta(&g, 0.3, &mut rng);
            let h = rng.random_range(0..=10);
            let streams = NoiseStreams::sample(&g, h + 1, &mut rng).unwrap();
            let (value, tape) = rollout_value(&g, &theta, &s0, h, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap();
            if tape.min_kink_distance() < 1e-3 {
                continue;
            }
            checked += 1;
            let est = backward(&g, &tape, &theta).unwrap();
            let eps = 1e-5;
            for j in 0..theta.theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp.theta[j] += eps;
                tm.theta[j] -= eps;
                let (vp, _) = rollout_value(&g, &tp, &s0, h, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap();
                let (vm, _) = rollout_value(&g, &tm, &s0, h, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap();
                let fd = (vp - vm) / (2.0 * eps);
                let scale = fd.abs().max(est.grad[j].abs()).max(1e-6 * (1.0 + value.abs()));
                assert!((fd - est.grad[j]).abs() <= 1e-4 * scale, "coordinate {j}: fd {fd} vs {}", est.grad[j]);
            }
        }
    }

    #[test]
    fn radial_direction_is_flat_when_saturated() {
        let g = case18();
        let mut rng = stream(7, Purpose::Verify, &[]);
        let s0 = sample_initial_state(&g, &mut rng);
        let mut theta = init_params(g.n_agents(), 3).unwrap();
        // reactive-only bias far outside the disc: clip inactive, radial scaling active
        let layout = theta.layout;
        for i in 0..g.n_agents() {
            let r = layout.agent_range(i);
            theta.theta[r.end - 1] = 50.0 * g.specs()[i].b;
        }
        let streams = NoiseStreams::sample(&g, 1, &mut rng).unwrap();
        let est = estimate(&g, &theta, &s0, 0, &streams, PolicyMode::Deterministic, RewardMode::Eq).unwrap();
        for i in 0..g.n_agents() {
            let r = layout.agent_range(i);
            assert!(est.grad[r.end - 1].abs() < 1e-12);
        }
    }

    #[test]
    fn horizon_distribution() {
        let mut rng = stream(8, Purpose::Verify, &[]);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_horizon(0.99, &mut rng).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((mean - 99.0).abs() < 3.0, "mean {mean}");
        assert!((0..1000).all(|_| sample_horizon(1e-9, &mut rng).unwrap() == 0));
        assert!(sample_horizon(1.0, &mut rng).is_err());
        assert!(sample_horizon(0.0, &mut rng).is_err());
    }

    #[test]
    fn rollouts_are_bit_reproducible() {
        let g = case18();
        let run = || {
            let mut rng = stream(9, Purpose::Verify, &[]);
            let s0 = sample_initial_state(&g, &mut rng);
            let theta = random_theta(&g, 0.05, &mut rng);
            let streams = NoiseStreams::sample(&g, 31, &mut rng).unwrap();
            estimate(&g, &theta, &s0, 30, &streams, PolicyMode::Stochastic, RewardMode::Eq).unwrap()
        };
        assert_eq!(run(), run());
    }
}
