//! Numerical checks of the potential-game structure and of the gradient
//! engine. Each check returns one [`VerifyEntry`]; [`run_all`] bundles them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::devices::{project, step_soc, DeviceConfig, StorageSpec};
use crate::error::Result;
use crate::exogenous::{sample_noise, ExoConfig};
use crate::game::{Game, GameState, RewardMode, StageOutcome};
use crate::gradient::{backward, rollout_value, sample_horizon, NoiseStreams};
use crate::netmodel::{build_sensitivities, Edge, Load, Network, Sensitivities};
use crate::policy::{PolicyMode, PolicyParams};
use crate::powerflow;
use crate::rng::{stream, Purpose};
use crate::trainer::sample_initial_state;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub name: String,
    pub samples: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VerifyEntry {
    fn new(name: &str, samples: usize, max_abs_error: f64, max_rel_error: f64, tolerance: f64) -> Self {
        VerifyEntry {
            name: name.into(),
            samples,
            max_abs_error,
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
            note: None,
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub entries: Vec<VerifyEntry>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&VerifyEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// How the stagewise check builds the potential it compares against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialForm {
    /// `Σu − C̃` as the game computes it.
    Exact,
    /// `Σu − C`, i.e. the market-power adjustment left out.
    DropAdjustment,
    /// `Σu − C̃` with every line impedance scaled by the factor.
    PerturbedImpedance(f64),
}

/// Deliberately broken variants for exercising the checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    DropAdjustment,
    PerturbedImpedance,
    CoupledTransition,
}

fn random_actions<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> Vec<[f64; 2]> {
    game.specs()
        .iter()
        .map(|s| [rng.random_range(-1.5..1.5) * s.b, rng.random_range(-1.5..1.5) * s.b])
        .collect()
}

/// Initial state pushed a few random steps forward, so the shift registers hold noise.
pub fn burned_in_state<R: Rng + ?Sized>(game: &Game, steps: usize, rng: &mut R) -> Result<GameState> {
    let mut s = sample_initial_state(game, rng);
    for _ in 0..steps {
        let a = random_actions(game, rng);
        let xi = sample_noise(game.exo_config(), game.exo_nodes(), rng)?;
        s = game.transition(&s, &a, &xi)?;
    }
    Ok(s)
}

struct PotentialEval {
    form: PotentialForm,
    perturbed: Option<Sensitivities>,
}

impl PotentialEval {
    fn new(game: &Game, form: PotentialForm) -> Self {
        let perturbed = match form {
            PotentialForm::PerturbedImpedance(f) => {
                let mut net = game.network().clone();
                for e in &mut net.edges {
                    e.r *= f;
                    e.x *= f;
                }
                Some(build_sensitivities(&net))
            }
            _ => None,
        };
        PotentialEval { form, perturbed }
    }

    fn phi(&self, game: &Game, out: &StageOutcome) -> Result<f64> {
        let total_u: f64 = out.utilities.iter().sum();
        Ok(match self.form {
            PotentialForm::Exact => out.phi,
            PotentialForm::DropAdjustment => total_u - out.cost,
            PotentialForm::PerturbedImpedance(_) => {
                let sens = self.perturbed.as_ref().expect("built with the form");
                total_u - powerflow::potential_cost(sens, &out.p, &out.q, out.prices.lambda, game.w(), game.v0())?
            }
        })
    }
}

/// Unilateral deviations of one agent in `(d_i, a_i)` change its reward by
/// exactly the change in the potential.
pub fn check_stagewise<R: Rng + ?Sized>(game: &Game, n_samples: usize, rng: &mut R, form: PotentialForm) -> Result<VerifyEntry> {
    let eval = PotentialEval::new(game, form);
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let s = burned_in_state(game, 4, rng)?;
        let a = random_actions(game, rng);
        let i = rng.random_range(0..game.n_agents());
        let mut s2 = s.clone();
        s2.fleet.d[i] = rng.random_range(0.0..=game.specs()[i].d_max);
        let mut a2 = a.clone();
        a2[i] = random_actions(game, rng)[i];
        let (o1, o2) = (game.stage(&s, &a)?, game.stage(&s2, &a2)?);
        let du = o2.rewards[i] - o1.rewards[i];
        let dphi = eval.phi(game, &o2)? - eval.phi(game, &o1)?;
        let err = (du - dphi).abs();
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / dphi.abs().max(1.0));
    }
    let name = match form {
        PotentialForm::Exact => "stagewise potential",
        PotentialForm::DropAdjustment => "stagewise potential (adjustment dropped)",
        PotentialForm::PerturbedImpedance(_) => "stagewise potential (impedance perturbed)",
    };
    Ok(VerifyEntry::new(name, n_samples, max_abs, max_rel, 1e-9))
}

/// Closed-form gradients of both sides of the quadratic partition identity
/// with respect to block `block`: `(E_i (Q+Qᵀ)(I + E_iᵀE_i) v, E_i (Q+Qᵀ) v + (Q_ii + Q_iiᵀ) v_i)`.
pub fn partition_identity_sides(v: &[f64], q: &[f64], labels: &[usize], block: usize) -> (Vec<f64>, Vec<f64>) {
    let l = v.len();
    let s = |r: usize, c: usize| q[r * l + c] + q[c * l + r];
    let idx: Vec<usize> = (0..l).filter(|&j| labels[j] == block).collect();
    let lhs = idx
        .iter()
        .map(|&r| (0..l).map(|c| s(r, c) * if labels[c] == block { 2.0 * v[c] } else { v[c] }).sum())
        .collect();
    let rhs = idx
        .iter()
        .map(|&r| {
            let full: f64 = (0..l).map(|c| s(r, c) * v[c]).sum();
            let own: f64 = idx.iter().map(|&c| s(r, c) * v[c]).sum();
            full + own
        })
        .collect();
    (lhs, rhs)
}

/// Scalar forms `v_iᵀ ∇_{v_i}(vᵀQv)` and `vᵀQv + Σ_j v_jᵀ Q_jj v_j`.
fn partition_identity_scalars(v: &[f64], q: &[f64], labels: &[usize], block: usize) -> (f64, f64) {
    let l = v.len();
    let mut quad = 0.0;
    let mut own = 0.0;
    let mut inner = 0.0;
    for r in 0..l {
        let mut grad_r = 0.0;
        for c in 0..l {
            let term = v[r] * q[r * l + c] * v[c];
            quad += term;
            if labels[r] == labels[c] {
                own += term;
            }
            grad_r += (q[r * l + c] + q[c * l + r]) * v[c];
        }
        if labels[r] == block {
            inner += v[r] * grad_r;
        }
    }
    (inner, quad + own)
}

pub fn check_partition_identity<R: Rng + ?Sized>(n_samples: usize, max_dim: usize, rng: &mut R) -> VerifyEntry {
    let max_dim = max_dim.max(2);
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    // both scalar forms are quadratic, so central differences are exact up to rounding
    let h = 0.125;
    for _ in 0..n_samples {
        let l = rng.random_range(2..=max_dim);
        let v: Vec<f64> = (0..l).map(|_| StandardNormal.sample(rng)).collect();
        let q: Vec<f64> = (0..l * l).map(|_| StandardNormal.sample(rng)).collect();
        let n_blocks = rng.random_range(1..=l);
        let labels: Vec<usize> = (0..l).map(|_| rng.random_range(0..n_blocks)).collect();
        let block = labels[rng.random_range(0..l)];
        let (lhs, rhs) = partition_identity_sides(&v, &q, &labels, block);
        let idx: Vec<usize> = (0..l).filter(|&j| labels[j] == block).collect();
        for (n, &j) in idx.iter().enumerate() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[j] += h;
            vm[j] -= h;
            let (lp, rp) = partition_identity_scalars(&vp, &q, &labels, block);
            let (lm, rm) = partition_identity_scalars(&vm, &q, &labels, block);
            let fd = [(lp - lm) / (2.0 * h), (rp - rm) / (2.0 * h)];
            for (a, b) in [(lhs[n], rhs[n]), (lhs[n], fd[0]), (rhs[n], fd[1]), (fd[0], fd[1])] {
                let err = (a - b).abs();
                max_abs = max_abs.max(err);
                max_rel = max_rel.max(err / b.abs().max(1.0));
            }
        }
    }
    VerifyEntry::new("partition identity", n_samples, max_abs, max_rel, 1e-10)
}

/// Next-state components other than agent `i`'s state of charge do not
/// react to `(d_i, a_i)`. Exact (bitwise) comparison.
pub fn check_transition_independence_with<R, T>(game: &Game, n_samples: usize, rng: &mut R, transition: T) -> Result<VerifyEntry>
where
    R: Rng + ?Sized,
    T: Fn(&Game, &GameState, &[[f64; 2]], &[f64]) -> Result<GameState>,
{
    let mut max_abs = 0.0f64;
    let mut mismatches = 0usize;
    for n in 0..n_samples {
        let s = burned_in_state(game, 4, rng)?;
        let a = random_actions(game, rng);
        let xi = sample_noise(game.exo_config(), game.exo_nodes(), rng)?;
        let i = n % game.n_agents();
        let mut s2 = s.clone();
        s2.fleet.d[i] = rng.random_range(0.0..=game.specs()[i].d_max);
        let mut a2 = a.clone();
        a2[i] = random_actions(game, rng)[i];
        let (t1, t2) = (transition(game, &s, &a, &xi)?, transition(game, &s2, &a2, &xi)?);
        let others = (0..game.n_agents()).filter(|&j| j != i).map(|j| (t1.fleet.d[j], t2.fleet.d[j]));
        let exo = t1.exo.as_slice().iter().copied().zip(t2.exo.as_slice().iter().copied());
        for (x, y) in others.chain(exo) {
            if x.to_bits() != y.to_bits() {
                mismatches += 1;
                max_abs = max_abs.max((x - y).abs());
            }
        }
    }
    let entry = VerifyEntry::new("transition independence", n_samples, max_abs, if mismatches > 0 { max_abs.max(f64::MIN_POSITIVE) } else { 0.0 }, 0.0);
    Ok(if mismatches > 0 { entry.with_note(format!("{mismatches} components differ")) } else { entry })
}

pub fn check_transition_independence<R: Rng + ?Sized>(game: &Game, n_samples: usize, rng: &mut R) -> Result<VerifyEntry> {
    check_transition_independence_with(game, n_samples, rng, |g, s, a, xi| g.transition(s, a, xi))
}

/// A transition that leaks agent 0's state of charge into agent 1's update.
pub fn coupled_transition(game: &Game, s: &GameState, a: &[[f64; 2]], xi: &[f64]) -> Result<GameState> {
    let mut next = game.transition(s, a, xi)?;
    if next.fleet.d.len() > 1 {
        let spec = game.specs()[1];
        next.fleet.d[1] = (next.fleet.d[1] + 1e-3 * s.fleet.d[0]).min(spec.d_max);
    }
    Ok(next)
}

pub fn policy_locality_entry() -> VerifyEntry {
    VerifyEntry::new("policy locality", 0, 0.0, 0.0, 0.0)
        .with_note("structural: an agent's action reads only its own state of charge, its own exogenous row and the LMP driver row")
}

/// Small random radial feeder with a prosumer on every bus.
pub fn random_game<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize, tau: usize) -> Result<Game> {
    let n = rng.random_range(1..=max_nodes.max(1));
    let edges = (1..=n)
        .map(|k| Edge {
            from: rng.random_range(0..k),
            to: k,
            r: rng.random_range(0.01..0.3),
            x: rng.random_range(0.01..0.3),
        })
        .collect();
    let loads = (0..n)
        .map(|_| Load {
            p: rng.random_range(0.05..0.5),
            q: rng.random_range(0.0..0.3),
        })
        .collect();
    let net = Network::new(n, edges, 1.0, loads)?;
    let exo = ExoConfig { tau, ..Default::default() };
    Game::new(net, exo, &DeviceConfig::default(), rng.random_range(0.0..=1.0))
}

/// Backward pass against central differences on random small games.
/// Rollouts whose raw actions pass within `kink_margin` of a projection kink
/// are redrawn.
pub fn check_gradient<R: Rng + ?Sized>(n_configs: usize, coords: usize, kink_margin: f64, rng: &mut R) -> Result<VerifyEntry> {
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    let mut redrawn = 0usize;
    let eps = 1e-5;
    let mut done = 0;
    while done < n_configs {
        let g = random_game(rng, 4, 2)?;
        let s0 = sample_initial_state(&g, rng);
        let layout = g.policy_layout();
        let theta: Vec<f64> = (0..layout.len()).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            0.3 * z
        }).collect();
        let theta = PolicyParams::from_vec(layout, theta)?;
        let h = rng.random_range(0..=10);
        let streams = NoiseStreams::sample(&g, h + 1, rng)?;
        let mode = if rng.random_bool(0.5) { RewardMode::Eq } else { RewardMode::So };
        let (value, tape) = rollout_value(&g, &theta, &s0, h, &streams, PolicyMode::Stochastic, mode)?;
        if tape.min_kink_distance() < kink_margin {
            redrawn += 1;
            continue;
        }
        done += 1;
        let est = backward(&g, &tape, &theta)?;
        for _ in 0..coords.min(layout.len()) {
            let j = rng.random_range(0..layout.len());
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp.theta[j] += eps;
            tm.theta[j] -= eps;
            let (vp, _) = rollout_value(&g, &tp, &s0, h, &streams, PolicyMode::Stochastic, mode)?;
            let (vm, _) = rollout_value(&g, &tm, &s0, h, &streams, PolicyMode::Stochastic, mode)?;
            let fd = (vp - vm) / (2.0 * eps);
            let err = (fd - est.grad[j]).abs();
            let scale = fd.abs().max(est.grad[j].abs()).max(1e-6 * (1.0 + value.abs()));
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / scale);
        }
    }
    Ok(VerifyEntry::new("gradient vs finite differences", n_configs, max_abs, max_rel, 1e-4)
        .with_note(format!("{redrawn} kink-adjacent configurations redrawn")))
}

/// Result of the geometric-horizon Monte Carlo on a frozen trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheck {
    pub mc_mean: f64,
    pub std_error: f64,
    pub discounted_sum: f64,
}

impl EstimatorCheck {
    pub fn z_score(&self) -> f64 {
        (self.mc_mean - self.discounted_sum) / self.std_error
    }
}

/// `E[Σ_{t≤H} obj_t]` over `H ~ Geometric(1−γ)` against `Σ_t γ^t obj_t` on
/// one frozen trajectory of length `length`.
pub fn estimator_check<R: Rng + ?Sized>(game: &Game, theta: &PolicyParams, gamma: f64, length: usize, draws: usize, rng: &mut R) -> Result<EstimatorCheck> {
    let s0 = sample_initial_state(game, rng);
    let streams = NoiseStreams::sample(game, length, rng)?;
    let (_, tape) = rollout_value(game, theta, &s0, length - 1, &streams, PolicyMode::Stochastic, RewardMode::Eq)?;
    let obj = tape.objectives();
    let mut prefix = Vec::with_capacity(length);
    let mut acc = 0.0;
    for &o in &obj {
        acc += o;
        prefix.push(acc);
    }
    let mut discount = 1.0;
    let mut discounted_sum = 0.0;
    for &o in &obj {
        discounted_sum += discount * o;
        discount *= gamma;
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let h = sample_horizon(gamma, rng)?.min(length - 1);
        sum += prefix[h];
        sum_sq += prefix[h] * prefix[h];
    }
    let n = draws as f64;
    let mc_mean = sum / n;
    let var = (sum_sq / n - mc_mean * mc_mean) * n / (n - 1.0);
    Ok(EstimatorCheck {
        mc_mean,
        std_error: libm::sqrt(var / n),
        discounted_sum,
    })
}

pub fn check_estimator<R: Rng + ?Sized>(game: &Game, theta: &PolicyParams, draws: usize, rng: &mut R) -> Result<VerifyEntry> {
    let c = estimator_check(game, theta, 0.99, 1000, draws, rng)?;
    let err = (c.mc_mean - c.discounted_sum).abs();
    Ok(VerifyEntry::new("geometric-horizon estimator", draws, err, err / c.std_error, 3.0)
        .with_note(format!("relative error measured in standard errors ({:.4e})", c.std_error)))
}

/// Projection feasibility on random raw actions and states of charge.
pub fn check_projection<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> VerifyEntry {
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let spec = StorageSpec {
            d_max: rng.random_range(0.01..10.0),
            b: rng.random_range(0.01..5.0),
        };
        let d = rng.random_range(0.0..=spec.d_max);
        let a = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        let [p, q] = project(a, d, &spec);
        let box_violation = (-d - p).max(p - (spec.d_max - d)).max(0.0);
        let disc_violation = (libm::sqrt(p * p + q * q) - spec.b).max(0.0) / spec.b;
        let next = step_soc(d, p, &spec);
        let soc_violation = (-next).max(next - spec.d_max).max(0.0);
        worst = worst.max(box_violation).max(disc_violation).max(soc_violation);
    }
    VerifyEntry::new("projection feasibility", n_samples, worst, worst, 1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub stagewise_samples: usize,
    pub partition_samples: usize,
    pub transition_samples: usize,
    pub gradient_configs: usize,
    pub estimator_draws: usize,
    pub projection_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            fault: None,
            stagewise_samples: 1000,
            partition_samples: 100,
            transition_samples: 200,
            gradient_configs: 100,
            estimator_draws: 10_000,
            projection_samples: 100_000,
        }
    }
}

/// Every check, each on its own random stream.
pub fn run_all(game: &Game, theta: &PolicyParams, opts: &VerifyOptions) -> Result<VerifyReport> {
    let rng = |k: u64| stream(opts.seed, Purpose::Verify, &[k]);
    let form = match opts.fault {
        Some(Fault::DropAdjustment) => PotentialForm::DropAdjustment,
        Some(Fault::PerturbedImpedance) => PotentialForm::PerturbedImpedance(1.05),
        _ => PotentialForm::Exact,
    };
    let mut entries = vec![check_stagewise(game, opts.stagewise_samples, &mut rng(1), form)?];
    let mut lossless = check_stagewise(&game.zero_impedance(), opts.stagewise_samples, &mut rng(2), PotentialForm::Exact)?;
    lossless.name = "stagewise potential (zero impedance)".into();
    entries.push(lossless);
    entries.push(check_partition_identity(opts.partition_samples, 8, &mut rng(3)));
    entries.push(if opts.fault == Some(Fault::CoupledTransition) {
        check_transition_independence_with(game, opts.transition_samples, &mut rng(4), coupled_transition)?
    } else {
        check_transition_independence(game, opts.transition_samples, &mut rng(4))?
    });
    entries.push(policy_locality_entry());
    entries.push(check_gradient(opts.gradient_configs, 20, 1e-6, &mut rng(5))?);
    entries.push(check_estimator(game, theta, opts.estimator_draws, &mut rng(6))?);
    entries.push(check_projection(opts.projection_samples, &mut rng(7)));
    Ok(VerifyReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{parse_case, scale_loads};
    use crate::policy::init_params;

    fn case18() -> Game {
        let net = scale_loads(&parse_case(crate::CASE18).unwrap(), 3.0).unwrap();
        Game::new(net, ExoConfig::default(), &DeviceConfig::default(), 0.75).unwrap()
    }

    #[test]
    fn stagewise_holds_and_mutations_fail() {
        let g = case18();
        let mut rng = stream(1, Purpose::Verify, &[]);
        let e = check_stagewise(&g, 300, &mut rng, PotentialForm::Exact).unwrap();
        assert!(e.passed, "{e:?}");
        let e = check_stagewise(&g, 50, &mut rng, PotentialForm::DropAdjustment).unwrap();
        assert!(!e.passed && e.max_rel_error > 1e-6, "{e:?}");
        let e = check_stagewise(&g, 50, &mut rng, PotentialForm::PerturbedImpedance(1.05)).unwrap();
        assert!(!e.passed, "{e:?}");
        let e = check_stagewise(&g.zero_impedance(), 200, &mut rng, PotentialForm::Exact).unwrap();
        assert!(e.max_abs_error <= 1e-14, "{e:?}");
    }

    #[test]
    fn partition_identity_hand_cases() {
        let q = [1.0, 0.0, 0.0, 1.0];
        let v = [0.7, -1.3];
        let (lhs, rhs) = partition_identity_sides(&v, &q, &[0, 1], 1);
        assert_eq!(lhs, vec![4.0 * v[1]]);
        assert_eq!(rhs, vec![4.0 * v[1]]);
        let skew = [0.0, 2.0, -2.0, 0.0];
        let (lhs, rhs) = partition_identity_sides(&v, &skew, &[0, 0], 0);
        assert!(lhs.iter().chain(&rhs).all(|&x| x == 0.0));
        let e = check_partition_identity(100, 8, &mut stream(2, Purpose::Verify, &[]));
        assert!(e.passed, "{e:?}");
    }

    #[test]
    fn transition_independence_and_mutation() {
        let g = case18();
        let mut rng = stream(3, Purpose::Verify, &[]);
        let e = check_transition_independence(&g, 200, &mut rng).unwrap();
        assert!(e.passed && e.max_abs_error == 0.0);
        let e = check_transition_independence_with(&g, 50, &mut rng, coupled_transition).unwrap();
        assert!(!e.passed);
        let single = random_game(&mut stream(0, Purpose::Verify, &[]), 1, 3).unwrap();
        assert_eq!(single.n_agents(), 1);
        assert!(check_transition_independence(&single, 20, &mut rng).unwrap().passed);
    }

    #[test]
    fn projection_suite() {
        assert!(check_projection(10_000, &mut stream(4, Purpose::Verify, &[])).passed);
    }

    #[test]
    fn estimator_is_unbiased_on_a_frozen_trajectory() {
        let g = case18();
        let theta = init_params(g.n_agents(), 3).unwrap();
        let e = check_estimator(&g, &theta, 10_000, &mut stream(5, Purpose::Verify, &[])).unwrap();
        assert!(e.passed, "{e:?}");
    }

    #[test]
    fn gradient_suite_small() {
        let e = check_gradient(20, 20, 1e-6, &mut stream(6, Purpose::Verify, &[])).unwrap();
        assert!(e.passed, "{e:?}");
    }
}
