//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dlmp_core::evaluator::{self, compare, EvalReport};
use dlmp_core::netmodel::{parse_case, scale_loads};
use dlmp_core::policy::init_params;
use dlmp_core::trainer::{self, TrainLog};
use dlmp_core::verify::{run_all, Fault, VerifyOptions};
use dlmp_core::{Error as CoreError, PolicyMode, PolicyParams, RewardMode, VerifyReport};

use crate::artifacts::{self, num, PolicyFile, PolicyMeta};
use crate::config::LoadedConfig;
use crate::parallel;

/// Failure classes, mapped onto the process exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input files (exit 2).
    Usage(anyhow::Error),
    /// A check failed or a computation went wrong (exit 1).
    Check(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) => 1,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

fn check(e: anyhow::Error) -> Failure {
    Failure::Check(e)
}

#[derive(Parser, Debug)]
#[command(name = "dlmp", version, about = "Nodal-pricing storage market on radial distribution feeders")]
pub struct Cli {
    /// Worker threads for batch and rollout parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Serial execution; output files are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a joint policy by stochastic gradient ascent.
    Train(TrainArgs),
    /// Evaluate policies on common random numbers and compare them.
    Eval(EvalArgs),
    /// Multi-day deterministic rollout of one policy.
    Demo(DemoArgs),
    /// Run the numerical verification suite.
    Verify(VerifyArgs),
    /// Inspect a MATPOWER case file.
    Parse(ParseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "EQ", alias = "eq")]
    Eq,
    #[value(name = "SO", alias = "so")]
    So,
    #[value(name = "UN", alias = "un")]
    Un,
}

impl From<ModeArg> for RewardMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Eq => RewardMode::Eq,
            ModeArg::So => RewardMode::So,
            ModeArg::Un => RewardMode::Un,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyModeArg {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    DropAdjustment,
    PerturbedImpedance,
    CoupledTransition,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub config: PathBuf,
    #[arg(long = "policy", required = true, num_args = 1..)]
    pub policies: Vec<PathBuf>,
    /// Comma-separated labels, one per policy.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub n_rollouts: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub policy_mode: Option<PolicyModeArg>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    pub config: PathBuf,
    /// Policy file; the idle policy when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub days: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    pub case_file: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub load_scale: f64,
    /// Print the network as JSON instead of a summary.
    #[arg(long)]
    pub json: bool,
}

/// Parse `args` and run; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Check(e) => eprintln!("error: {e:#}"),
            }
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CmdResult {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    let pool = parallel::pool(threads).map_err(usage)?;
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Demo(a) => cmd_demo(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Parse(a) => cmd_parse(a),
    })
}

fn core_failure(e: anyhow::Error) -> Failure {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::NonFinite { .. }) => check(e),
        Some(_) => usage(e),
        None => check(e),
    }
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(usage)
}

/// `0.75` → `0.75`, `1` → `1`.
fn fmt_w(w: f64) -> String {
    format!("{w}")
}

fn train_comments(cfg: &LoadedConfig, log: &TrainLog) -> Vec<String> {
    vec![
        format!("dlmp train config_sha256={} seed={}", cfg.sha256, log.seed),
        format!("mode={} w={} zero_impedance={}", log.mode, num(log.w), log.zero_impedance),
    ]
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cfg = LoadedConfig::load(&a.config).map_err(usage)?;
    let mut tc = cfg.config.train.clone();
    if let Some(m) = a.mode {
        tc.mode = m.into();
    }
    if let Some(w) = a.w {
        tc.w = w;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(n) = a.n_train {
        tc.n_train = n;
    }
    tc.validate().map_err(|e| usage(e.into()))?;
    let game = cfg.game().map_err(usage)?;
    let (theta, log) = trainer::train_with(&game, &tc, parallel::ordered_map).map_err(|e| core_failure(e.into()))?;
    let dir = cfg.output_dir(a.output_dir.as_deref());
    prepare_dir(&dir)?;
    let stem = format!("{}_w{}_s{}", tc.mode.label().to_lowercase(), fmt_w(tc.w), tc.seed);
    let policy = PolicyFile {
        layout: theta.layout,
        theta: theta.theta,
        meta: Some(PolicyMeta {
            config_sha256: cfg.sha256.clone(),
            seed: tc.seed,
            mode: tc.mode,
            w: tc.w,
            zero_impedance: log.zero_impedance,
        }),
    };
    let policy_path = dir.join(format!("{stem}.policy.json"));
    let log_path = dir.join(format!("{stem}.train.csv"));
    policy.write(&policy_path).map_err(check)?;
    artifacts::write_train_log(&log_path, &train_comments(&cfg, &log), &log).map_err(check)?;
    println!(
        "trained {} (w={}, seed={}) for {} iterations; mean value over the last 100: {:.6}",
        tc.mode,
        fmt_w(tc.w),
        tc.seed,
        tc.n_train,
        log.trailing_mean(100)
    );
    println!("wrote {} and {}", policy_path.display(), log_path.display());
    Ok(())
}

fn label_for(path: &Path, file: &PolicyFile) -> String {
    match &file.meta {
        Some(m) => m.mode.label().to_string(),
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".policy").to_string())
            .unwrap_or_else(|| "policy".into()),
    }
}

fn load_policy(path: &Path, layout_hint: &dlmp_core::Game) -> Result<(PolicyFile, PolicyParams), Failure> {
    let file = PolicyFile::read(path).map_err(usage)?;
    let params = file.params().map_err(usage)?;
    if params.layout != layout_hint.policy_layout() {
        return Err(check(anyhow!(
            "policy {} has layout {:?}, the configured game needs {:?}",
            path.display(),
            params.layout,
            layout_hint.policy_layout()
        )));
    }
    Ok((file, params))
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let cfg = LoadedConfig::load(&a.config).map_err(usage)?;
    let mut ec = cfg.config.eval.clone();
    if let Some(s) = a.seed {
        ec.seed = s;
    }
    if let Some(w) = a.w {
        ec.w = w;
    }
    if let Some(n) = a.n_rollouts {
        ec.n_rollouts = n;
    }
    if let Some(h) = a.horizon {
        ec.horizon = h;
    }
    if let Some(m) = a.policy_mode {
        ec.policy_mode = match m {
            PolicyModeArg::Stochastic => PolicyMode::Stochastic,
            PolicyModeArg::Deterministic => PolicyMode::Deterministic,
        };
    }
    ec.validate().map_err(|e| usage(e.into()))?;
    if !a.labels.is_empty() && a.labels.len() != a.policies.len() {
        return Err(usage(anyhow!("{} labels given for {} policies", a.labels.len(), a.policies.len())));
    }
    let game = cfg.game().map_err(usage)?;
    let dir = cfg.output_dir(a.output_dir.as_deref());
    prepare_dir(&dir)?;
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for (n, path) in a.policies.iter().enumerate() {
        let (file, params) = load_policy(path, &game)?;
        let label = a.labels.get(n).cloned().unwrap_or_else(|| label_for(path, &file));
        let report = evaluator::evaluate_with(&params, &game, &ec, parallel::ordered_map).map_err(|e| core_failure(e.into()))?;
        let comments = vec![
            format!("dlmp eval config_sha256={} seed={}", cfg.sha256, ec.seed),
            format!(
                "label={label} policy_mode={:?} w={} n_rollouts={} horizon={} gamma={}",
                ec.policy_mode,
                num(ec.w),
                ec.n_rollouts,
                ec.horizon,
                num(ec.gamma)
            ),
            format!(
                "mean_adjusted={} mean_losses_fraction={} tail_bound={} tail_fraction={}",
                num(report.mean_adjusted),
                num(report.mean_losses_fraction),
                num(report.tail_bound),
                num(report.tail_fraction)
            ),
        ];
        let out = dir.join(format!("{}.eval.csv", label.to_lowercase()));
        artifacts::write_eval_report(&out, &comments, &report).map_err(check)?;
        println!("{label}: mean adjusted welfare {:.6} over {} rollouts -> {}", report.mean_adjusted, ec.n_rollouts, out.display());
        reports.push((label, report));
    }
    if reports.len() > 1 {
        let refs: Vec<(&str, &EvalReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
        let table = compare(&refs).map_err(|e| check(e.into()))?;
        let out = dir.join("comparison.csv");
        let comments = vec![format!("dlmp eval comparison config_sha256={} seed={}", cfg.sha256, ec.seed)];
        artifacts::write_comparison(&out, &comments, &table).map_err(check)?;
        for g in &table.gaps {
            println!("{} - {}: {:.6} ({:+.2}%)", g.first, g.second, g.gap, 100.0 * g.relative);
        }
        if let Some(r) = table.poa_ratio {
            println!("(SO - EQ) / (EQ - UN) = {r:.6}");
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_demo(a: &DemoArgs) -> CmdResult {
    let cfg = LoadedConfig::load(&a.config).map_err(usage)?;
    let w = a.w.unwrap_or(cfg.config.train.w);
    let game = cfg.game().and_then(|g| Ok(g.with_weight(w)?)).map_err(usage)?;
    let (params, stem) = match &a.policy {
        Some(p) => {
            let (_, params) = load_policy(p, &game)?;
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().trim_end_matches(".policy").to_string())
                .unwrap_or_else(|| "policy".into());
            (params, stem)
        }
        None => (
            init_params(game.n_agents(), game.exo_config().tau).map_err(|e| usage(e.into()))?,
            "idle".to_string(),
        ),
    };
    let seed = a.seed.unwrap_or(cfg.config.eval.seed);
    let trace = evaluator::demo(&params, &game, a.days, seed).map_err(|e| core_failure(e.into()))?;
    let dir = cfg.output_dir(a.output_dir.as_deref());
    prepare_dir(&dir)?;
    let out = dir.join(format!("{stem}.demo.csv"));
    let comments = vec![
        format!("dlmp demo config_sha256={} seed={seed}", cfg.sha256),
        format!("days={} w={} v0={} node=0 marks system-wide series", a.days, num(w), num(trace.v0)),
    ];
    artifacts::write_demo(&out, &comments, &trace).map_err(check)?;
    let (lo, hi) = trace.range("losses_fraction");
    println!(
        "{} steps; max |v - v0| = {:.4}; losses fraction in [{:.4}, {:.4}] -> {}",
        trace.steps,
        trace.max_voltage_deviation(),
        lo,
        hi,
        out.display()
    );
    Ok(())
}

fn print_report(report: &VerifyReport) {
    println!("{:<44} {:>8} {:>12} {:>12} {:>10}  result", "check", "samples", "max abs", "max rel", "tol");
    for e in &report.entries {
        println!(
            "{:<44} {:>8} {:>12.3e} {:>12.3e} {:>10.1e}  {}{}",
            e.name,
            e.samples,
            e.max_abs_error,
            e.max_rel_error,
            e.tolerance,
            if e.passed { "pass" } else { "FAIL" },
            e.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
        );
    }
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let cfg = LoadedConfig::load(&a.config).map_err(usage)?;
    let game = cfg.game().map_err(usage)?;
    let theta = init_params(game.n_agents(), game.exo_config().tau).map_err(|e| usage(e.into()))?;
    let opts = VerifyOptions {
        seed: a.seed,
        fault: a.inject_fault.map(|f| match f {
            FaultArg::DropAdjustment => Fault::DropAdjustment,
            FaultArg::PerturbedImpedance => Fault::PerturbedImpedance,
            FaultArg::CoupledTransition => Fault::CoupledTransition,
        }),
        ..Default::default()
    };
    let report = run_all(&game, &theta, &opts).map_err(|e| check(e.into()))?;
    print_report(&report);
    let dir = cfg.output_dir(a.output_dir.as_deref());
    prepare_dir(&dir)?;
    let out = dir.join("verify.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| check(e.into()))?;
    text.push('\n');
    fs::write(&out, text).with_context(|| format!("cannot write {}", out.display())).map_err(check)?;
    if report.all_passed() {
        println!("all checks passed -> {}", out.display());
        Ok(())
    } else {
        let failed: Vec<&str> = report.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
        Err(check(anyhow!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_parse(a: &ParseArgs) -> CmdResult {
    let text = fs::read_to_string(&a.case_file)
        .with_context(|| format!("cannot read network file {}", a.case_file.display()))
        .map_err(usage)?;
    let net = parse_case(&text)
        .with_context(|| format!("in network file {}", a.case_file.display()))
        .map_err(usage)?;
    let net = scale_loads(&net, a.load_scale).map_err(|e| usage(e.into()))?;
    let text = if a.json {
        serde_json::to_string_pretty(&net).map_err(|e| check(e.into()))?
    } else {
        net.to_string()
    };
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(check(e.into())),
        _ => Ok(()),
    }
}
