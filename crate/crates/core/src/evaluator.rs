//! Policy evaluation with common random numbers, EQ/SO/UN comparison and the
//! multi-day demo trace.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, GameState};
use crate::gradient::NoiseStreams;
use crate::policy::{init_params, PolicyMode, PolicyParams};
use crate::rng::{fingerprint, stream, Purpose};
use crate::trainer::sample_initial_state;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub w: f64,
    pub seed: u64,
    pub policy_mode: PolicyMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_rollouts: 50,
            horizon: 500,
            gamma: 0.99,
            w: 0.75,
            seed: 0,
            policy_mode: PolicyMode::Stochastic,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 || self.horizon == 0 {
            return Err(Error::argument("eval.n_rollouts and eval.horizon must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::argument(format!("eval.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::argument(format!("eval.w must lie in [0, 1], got {}", self.w)));
        }
        Ok(())
    }

    /// `γ^horizon`, the weight of the truncated tail relative to one step.
    pub fn tail_weight(&self) -> f64 {
        libm::pow(self.gamma, self.horizon as f64)
    }
}

/// Summary of one truncated discounted rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub discounted_welfare: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub mean_losses_fraction: f64,
    pub max_abs_welfare: f64,
    /// Fingerprint of the exogenous noise consumed.
    pub xi_fingerprint: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub rollout: usize,
    /// `W^θ − W⁰` on this rollout's noise.
    pub adjusted: f64,
    pub welfare: f64,
    pub baseline: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub mean_losses_fraction: f64,
    pub xi_fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub rollouts: Vec<RolloutRecord>,
    pub mean_adjusted: f64,
    pub mean_losses_fraction: f64,
    /// Bound on the discarded tail: `γ^horizon / (1 − γ) · max_t |welfare_t|`.
    pub tail_bound: f64,
    /// The same bound relative to the largest per-rollout |W^θ|.
    pub tail_fraction: f64,
}

impl EvalReport {
    pub fn adjusted(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.adjusted).collect()
    }

    /// Combined fingerprint of every rollout's exogenous noise.
    pub fn xi_fingerprint(&self) -> u64 {
        let bits: Vec<f64> = self.rollouts.iter().map(|r| f64::from_bits(r.xi_fingerprint)).collect();
        fingerprint(bits.iter())
    }
}

/// Discounted welfare of `theta` from `s0`, always on `game`'s own network.
pub fn simulate(
    game: &Game,
    theta: &PolicyParams,
    s0: &GameState,
    streams: &NoiseStreams,
    policy_mode: PolicyMode,
    horizon: usize,
    gamma: f64,
) -> Result<RolloutSummary> {
    if theta.layout != game.policy_layout() {
        return Err(Error::argument(format!(
            "policy layout {:?} does not match the game's {:?}",
            theta.layout,
            game.policy_layout()
        )));
    }
    if streams.steps() < horizon {
        return Err(Error::argument(format!("noise streams cover {} of {horizon} steps", streams.steps())));
    }
    let agents = game.agents();
    let mut state = s0.clone();
    let mut discount = 1.0;
    let mut summary = RolloutSummary {
        discounted_welfare: 0.0,
        v_min: f64::INFINITY,
        v_max: f64::NEG_INFINITY,
        mean_losses_fraction: 0.0,
        max_abs_welfare: 0.0,
        xi_fingerprint: fingerprint(streams.xi[..horizon].iter().flatten()),
    };
    for t in 0..horizon {
        let root = state.exo.row(0);
        let actions = agents
            .iter()
            .enumerate()
            .map(|(i, &k)| theta.act(i, state.fleet.d[i], state.exo.row(k), root, streams.eta[t][i], policy_mode))
            .collect::<Result<Vec<_>>>()?;
        let out = game.stage(&state, &actions)?;
        summary.discounted_welfare += discount * out.welfare;
        summary.max_abs_welfare = summary.max_abs_welfare.max(out.welfare.abs());
        for &v in &out.flows.v {
            summary.v_min = summary.v_min.min(v);
            summary.v_max = summary.v_max.max(v);
        }
        summary.mean_losses_fraction += out.flows.losses_fraction(&out.p);
        discount *= gamma;
        if t + 1 < horizon {
            state = game.transition(&state, &actions, &streams.xi[t])?;
        }
    }
    summary.mean_losses_fraction /= horizon as f64;
    Ok(summary)
}

/// Initial state and noise of evaluation rollout `k`; depends on `(seed, k)` only.
pub fn rollout_inputs(game: &Game, cfg: &EvalConfig, k: usize) -> Result<(GameState, NoiseStreams)> {
    let mut rng = stream(cfg.seed, Purpose::Eval, &[k as u64]);
    let s0 = sample_initial_state(game, &mut rng);
    let streams = NoiseStreams::sample(game, cfg.horizon, &mut rng)?;
    Ok((s0, streams))
}

fn evaluate_rollout(game: &Game, theta: &PolicyParams, idle: &PolicyParams, cfg: &EvalConfig, k: usize) -> Result<(RolloutRecord, f64)> {
    let (s0, streams) = rollout_inputs(game, cfg, k)?;
    let run = simulate(game, theta, &s0, &streams, cfg.policy_mode, cfg.horizon, cfg.gamma)?;
    let base = simulate(game, idle, &s0, &streams, PolicyMode::Deterministic, cfg.horizon, cfg.gamma)?;
    Ok((
        RolloutRecord {
            rollout: k,
            adjusted: run.discounted_welfare - base.discounted_welfare,
            welfare: run.discounted_welfare,
            baseline: base.discounted_welfare,
            v_min: run.v_min,
            v_max: run.v_max,
            mean_losses_fraction: run.mean_losses_fraction,
            xi_fingerprint: run.xi_fingerprint,
        },
        run.max_abs_welfare,
    ))
}

pub fn evaluate(theta: &PolicyParams, game: &Game, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_with(theta, game, cfg, |n, f| (0..n).map(f).collect())
}

/// `map(n, f)` must return `[f(0), …, f(n-1)]` in order.
pub fn evaluate_with<M>(theta: &PolicyParams, game: &Game, cfg: &EvalConfig, mut map: M) -> Result<EvalReport>
where
    M: FnMut(usize, &(dyn Fn(usize) -> Result<(RolloutRecord, f64)> + Sync)) -> Vec<Result<(RolloutRecord, f64)>>,
{
    cfg.validate()?;
    let game = game.with_weight(cfg.w)?;
    let idle = init_params(game.n_agents(), game.exo_config().tau)?;
    let one = |k: usize| evaluate_rollout(&game, theta, &idle, cfg, k);
    let results = map(cfg.n_rollouts, &one);
    if results.len() != cfg.n_rollouts {
        return Err(Error::argument(format!(
            "rollout map returned {} results for {} rollouts",
            results.len(),
            cfg.n_rollouts
        )));
    }
    let mut rollouts = Vec::with_capacity(cfg.n_rollouts);
    let mut step_bound: f64 = 0.0;
    for r in results {
        let (rec, bound) = r?;
        step_bound = step_bound.max(bound);
        rollouts.push(rec);
    }
    let n = rollouts.len() as f64;
    let mean_adjusted = rollouts.iter().map(|r| r.adjusted).sum::<f64>() / n;
    let mean_losses_fraction = rollouts.iter().map(|r| r.mean_losses_fraction).sum::<f64>() / n;
    let tail_bound = cfg.tail_weight() / (1.0 - cfg.gamma) * step_bound;
    let scale = rollouts.iter().map(|r| r.welfare.abs()).fold(0.0, f64::max);
    Ok(EvalReport {
        config: cfg.clone(),
        rollouts,
        mean_adjusted,
        mean_losses_fraction,
        tail_bound,
        tail_fraction: if scale > 0.0 { tail_bound / scale } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub label: String,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub first: String,
    pub second: String,
    /// Difference of mean adjusted welfare, `first − second`.
    pub gap: f64,
    /// Gap relative to `|second|`.
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub policies: Vec<PolicySummary>,
    pub gaps: Vec<Gap>,
    /// `(SO − EQ) / (EQ − UN)` when all three labels are present.
    pub poa_ratio: Option<f64>,
}

impl ComparisonTable {
    pub fn mean(&self, label: &str) -> Option<f64> {
        self.policies.iter().find(|p| p.label == label).map(|p| p.mean)
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(label: &str, report: &EvalReport) -> PolicySummary {
    let mut v = report.adjusted();
    v.sort_by(f64::total_cmp);
    PolicySummary {
        label: label.into(),
        mean: report.mean_adjusted,
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

/// Compare reports produced on identical noise.
pub fn compare(reports: &[(&str, &EvalReport)]) -> Result<ComparisonTable> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::argument("nothing to compare"));
    };
    for (label, r) in reports {
        if r.config.seed != first.config.seed
            || r.config.n_rollouts != first.config.n_rollouts
            || r.config.horizon != first.config.horizon
            || r.config.gamma != first.config.gamma
            || r.config.w != first.config.w
            || r.xi_fingerprint() != first.xi_fingerprint()
        {
            return Err(Error::argument(format!(
                "report '{label}' was not produced with the same evaluation settings and noise"
            )));
        }
    }
    let policies: Vec<PolicySummary> = reports.iter().map(|(l, r)| summarize(l, r)).collect();
    let mut gaps = Vec::new();
    for (i, a) in policies.iter().enumerate() {
        for b in &policies[i + 1..] {
            gaps.push(Gap {
                first: a.label.clone(),
                second: b.label.clone(),
                gap: a.mean - b.mean,
                relative: if b.mean != 0.0 { (a.mean - b.mean) / b.mean.abs() } else { 0.0 },
            });
        }
    }
    let find = |l: &str| policies.iter().find(|p| p.label.eq_ignore_ascii_case(l)).map(|p| p.mean);
    let poa_ratio = match (find("EQ"), find("SO"), find("UN")) {
        (Some(eq), Some(so), Some(un)) => Some((so - eq) / (eq - un)),
        _ => None,
    };
    Ok(ComparisonTable { policies, gaps, poa_ratio })
}

/// One value of the demo trace. `node` 0 marks a system-wide series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub t: usize,
    pub node: usize,
    pub series: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoTrace {
    pub steps: usize,
    pub v0: f64,
    pub rows: Vec<DemoRow>,
}

pub const DEMO_SERIES: [&str; 9] = [
    "pbar",
    "qbar",
    "p_storage",
    "q_storage",
    "mu_p",
    "mu_q",
    "voltage",
    "lmp",
    "losses_fraction",
];

impl DemoTrace {
    pub fn series<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a DemoRow> + 'a {
        self.rows.iter().filter(move |r| r.series == name)
    }

    /// `(min, max)` of a series, NaN-free.
    pub fn range(&self, name: &str) -> (f64, f64) {
        self.series(name)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.value), hi.max(r.value)))
    }

    pub fn max_voltage_deviation(&self) -> f64 {
        self.series("voltage").map(|r| (r.value - self.v0).abs()).fold(0.0, f64::max)
    }
}

/// Deterministic (`η = 0`) rollout of `24 · days` hourly steps.
pub fn demo(theta: &PolicyParams, game: &Game, days: usize, seed: u64) -> Result<DemoTrace> {
    let steps = days * 24;
    let mut rng = stream(seed, Purpose::Demo, &[]);
    let mut state = sample_initial_state(game, &mut rng);
    let streams = NoiseStreams::sample(game, steps, &mut rng)?;
    let agents = game.agents();
    if theta.layout != game.policy_layout() {
        return Err(Error::argument("policy layout does not match the game"));
    }
    let mut rows = Vec::new();
    for t in 0..steps {
        let root = state.exo.row(0);
        let actions = agents
            .iter()
            .enumerate()
            .map(|(i, &k)| theta.act(i, state.fleet.d[i], state.exo.row(k), root, [0.0; 2], PolicyMode::Deterministic))
            .collect::<Result<Vec<_>>>()?;
        let out = game.stage(&state, &actions)?;
        let mut push = |node: usize, series: &'static str, value: f64| rows.push(DemoRow { t, node, series, value });
        for (i, &k) in agents.iter().enumerate() {
            push(k, "pbar", out.pbar[k - 1]);
            push(k, "qbar", out.qbar[k - 1]);
            push(k, "p_storage", out.storage[i][0]);
            push(k, "q_storage", out.storage[i][1]);
            push(k, "mu_p", out.prices.mu_p[k - 1]);
            push(k, "mu_q", out.prices.mu_q[k - 1]);
        }
        for (k, &v) in out.flows.v.iter().enumerate() {
            push(k + 1, "voltage", v);
        }
        push(0, "lmp", out.prices.lambda);
        push(0, "losses_fraction", out.flows.losses_fraction(&out.p));
        if t + 1 < steps {
            state = game.transition(&state, &actions, &streams.xi[t])?;
        }
    }
    Ok(DemoTrace {
        steps,
        v0: game.v0(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::DeviceConfig;
    use crate::exogenous::ExoConfig;
    use crate::netmodel::{parse_case, scale_loads};

    fn case18() -> Game {
        let net = scale_loads(&parse_case(crate::CASE18).unwrap(), 3.0).unwrap();
        Game::new(net, ExoConfig::default(), &DeviceConfig::default(), 0.75).unwrap()
    }

    fn small_cfg(mode: PolicyMode) -> EvalConfig {
        EvalConfig {
            n_rollouts: 4,
            horizon: 60,
            seed: 5,
            policy_mode: mode,
            ..Default::default()
        }
    }

    fn bias_policy(game: &Game, p: f64) -> PolicyParams {
        let mut theta = init_params(game.n_agents(), 3).unwrap();
        for i in 0..game.n_agents() {
            let end = theta.layout.agent_range(i).end;
            theta.theta[end - 2] = p * game.specs()[i].b;
        }
        theta
    }

    #[test]
    fn idle_policy_has_zero_adjusted_welfare() {
        let g = case18();
        let idle = init_params(g.n_agents(), 3).unwrap();
        let r = evaluate(&idle, &g, &small_cfg(PolicyMode::Deterministic)).unwrap();
        assert_eq!(r.rollouts.len(), 4);
        assert!(r.rollouts.iter().all(|x| x.adjusted == 0.0));
        assert_eq!(r.mean_adjusted, 0.0);
    }

    #[test]
    fn common_random_numbers_across_policies() {
        let g = case18();
        let a = evaluate(&init_params(g.n_agents(), 3).unwrap(), &g, &small_cfg(PolicyMode::Stochastic)).unwrap();
        let b = evaluate(&bias_policy(&g, 0.3), &g, &small_cfg(PolicyMode::Stochastic)).unwrap();
        assert_eq!(a.xi_fingerprint(), b.xi_fingerprint());
        for (x, y) in a.rollouts.iter().zip(&b.rollouts) {
            assert_eq!(x.baseline, y.baseline);
            assert_eq!(x.xi_fingerprint, y.xi_fingerprint);
        }
        let c = evaluate(&init_params(g.n_agents(), 3).unwrap(), &g, &EvalConfig { seed: 6, ..small_cfg(PolicyMode::Stochastic) }).unwrap();
        assert_ne!(a.xi_fingerprint(), c.xi_fingerprint());
        assert!(compare(&[("a", &a), ("c", &c)]).is_err());
    }

    #[test]
    fn tail_weight_is_small_at_defaults() {
        assert!(EvalConfig::default().tail_weight() < 0.01);
    }

    #[test]
    fn identical_reports_have_zero_gaps() {
        let g = case18();
        let r = evaluate(&bias_policy(&g, 0.2), &g, &small_cfg(PolicyMode::Deterministic)).unwrap();
        let t = compare(&[("EQ", &r), ("SO", &r), ("UN", &r)]).unwrap();
        assert!(t.gaps.iter().all(|g| g.gap == 0.0));
        assert_eq!(t.policies.len(), 3);
        assert!(t.poa_ratio.unwrap().is_nan());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn poa_ratio_from_means() {
        let g = case18();
        let base = evaluate(&bias_policy(&g, 0.0), &g, &small_cfg(PolicyMode::Deterministic)).unwrap();
        let shift = |delta: f64| {
            let mut r = base.clone();
            r.mean_adjusted += delta;
            r
        };
        let (eq, so, un) = (shift(10.0), shift(11.0), shift(5.0));
        let t = compare(&[("EQ", &eq), ("SO", &so), ("UN", &un)]).unwrap();
        assert!((t.poa_ratio.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(t.mean("SO"), Some(11.0));
    }

    #[test]
    fn demo_of_idle_policy() {
        let g = case18();
        let idle = init_params(g.n_agents(), 3).unwrap();
        let trace = demo(&idle, &g, 4, 1).unwrap();
        assert_eq!(trace.steps, 96);
        assert!(trace.series("p_storage").chain(trace.series("q_storage")).all(|r| r.value == 0.0));
        assert_eq!(trace.series("lmp").count(), 96);
        assert_eq!(trace.series("voltage").count(), 96 * 17);
        for name in DEMO_SERIES {
            assert!(trace.series(name).count() > 0, "{name}");
        }
        let (lo, hi) = trace.range("losses_fraction");
        assert!(lo > 0.0 && hi < 0.2);
        assert_eq!(trace, demo(&idle, &g, 4, 1).unwrap());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let g = case18();
        assert!(evaluate(&init_params(3, 3).unwrap(), &g, &small_cfg(PolicyMode::Stochastic)).is_err());
        assert!(demo(&init_params(3, 3).unwrap(), &g, 1, 0).is_err());
    }
}
