//! `missionmac` command-line tool.

mod out;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use missionmac::closed_form::{delay_bound_protocol1, delay_bound_protocol2, DelayBound};
use missionmac::config::{build_protocol, Config, ProtocolKind, RuleKind, RuleSpec};
use missionmac::dcf::{dcf_throughput, derive_durations, SlotDurations};
use missionmac::markov::{analyze, AggregateChain};
use missionmac::optimizer::{solve, Objective, OptProblem};
use missionmac::protocol::{MissionLength, OnePeriodRule};
use missionmac::report::{fmt_sig, CsvTable};
use missionmac::reproduce::{reproduce, ReproduceOptions, Target};
use missionmac::simulator::{
    run_concurrent, run_missions, run_normal, run_protocol3_cap, write_trace, Concurrency, ConcurrentSettings,
    SimConfig, RNG_NAME,
};

use out::Output;

#[derive(Parser)]
#[command(
    name = "missionmac",
    version,
    about = "Memory-based slotted-Aloha protocols with critical missions"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $MISSIONMAC_OUT_DIR, then the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact normal-phase metrics of a rule or protocol.
    Analyze(AnalyzeArgs),
    /// Maximize throughput at a fixed short-term fairness level.
    Optimize(OptimizeArgs),
    /// Monte Carlo simulation of the normal phase and of missions.
    Simulate(SimulateArgs),
    /// Regenerate a published table or figure series as CSV.
    Reproduce(ReproduceArgs),
    /// Evaluate a rule over a grid of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct RuleArgs {
    /// Number of users.
    #[arg(long)]
    n: Option<usize>,
    /// Short-term fairness level.
    #[arg(long)]
    theta: Option<f64>,
    /// tilde, two, one, memoryless, alternating, custom or optimal.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    /// Transmission probability of a memoryless rule.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    idle: Option<f64>,
    #[arg(long)]
    busy: Option<f64>,
    #[arg(long)]
    success: Option<f64>,
    #[arg(long)]
    failure: Option<f64>,
    /// rule, memoryless, 1, 2 or 3.
    #[arg(long)]
    protocol: Option<String>,
    /// Failure limit of protocol 3.
    #[arg(long)]
    m: Option<usize>,
    /// Objective of `--rule optimal`: slotted or dcf.
    #[arg(long)]
    env: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    rule: RuleArgs,
    /// Also write the aggregate chain (transition matrix and stationary law).
    #[arg(long)]
    chain: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    /// pnorm1 (slotted Aloha) or pnorm2 (slot durations).
    #[arg(long, default_value = "pnorm1")]
    problem: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// Fix f(busy) = 0.
    #[arg(long)]
    busy_zero: bool,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    rule: RuleArgs,
    /// Measured slots per replication.
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    warm_up: Option<u64>,
    /// Missions per replication.
    #[arg(long)]
    missions: Option<usize>,
    /// Normal slots between missions.
    #[arg(long)]
    gap: Option<u64>,
    /// Packets per mission.
    #[arg(long)]
    packets: Option<u32>,
    /// off, fcfs, sharing or handshake.
    #[arg(long)]
    concurrency: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Missions per concurrent episode.
    #[arg(long, default_value_t = 2)]
    episode_missions: usize,
    /// Also check the protocol 3 capture cap with this `m`.
    #[arg(long)]
    cap: Option<usize>,
    /// Write a slot trace of this many slots.
    #[arg(long)]
    trace: Option<u64>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// table1, table2, table4, fig1, fig4, fig5, fig6, fig7, fig8 or all.
    target: String,
    /// Missions per replication for simulated series.
    #[arg(long)]
    missions: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    rule: RuleArgs,
    /// Swept parameter: theta, n, idle, busy, success, failure or p.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    use missionmac::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidParameter(_)
            | E::ProbabilityOutOfRange { .. }
            | E::Config(_)
            | E::Unsupported(_)
            | E::BusyNotZero(_)
            | E::CaptureNotGuaranteed(_)
            | E::WindowLength { .. }
            | E::UserOutOfRange { .. }
            | E::ChainTooLarge { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Ctx {
    config: Config,
    seed: u64,
    out: Output,
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(1);
    let ctx = Ctx {
        config,
        seed,
        out: Output::new(cli.out)?,
    };
    match cli.command {
        Command::Analyze(a) => cmd_analyze(ctx, a),
        Command::Optimize(a) => cmd_optimize(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
        Command::Reproduce(a) => cmd_reproduce(ctx, a),
        Command::Sweep(a) => cmd_sweep(ctx, a),
    }
}

fn parse<T: std::str::FromStr<Err = missionmac::Error>>(s: &str) -> Result<T> {
    Ok(s.parse::<T>()?)
}

fn durations(config: &Config) -> Result<SlotDurations> {
    Ok(derive_durations(&config.dcf.unwrap_or_default())?)
}

/// Rule, protocol and their settings after merging flags over the file.
struct Resolved {
    spec: RuleSpec,
    protocol_kind: ProtocolKind,
    m: usize,
    durations: SlotDurations,
}

impl Resolved {
    fn new(config: &Config, a: &RuleArgs) -> Result<Self> {
        let r = &config.rule;
        let n =
            a.n.or(config.n)
                .ok_or_else(|| usage("number of users is required (--n)"))?;
        let protocol_kind = parse::<ProtocolKind>(
            a.protocol
                .as_deref()
                .or(config.protocol.kind.as_deref())
                .unwrap_or("rule"),
        )?;
        let kind = parse::<RuleKind>(a.rule.as_deref().or(r.kind.as_deref()).unwrap_or("optimal"))?;
        let probs = [
            a.idle.or(r.idle),
            a.busy.or(r.busy),
            a.success.or(r.success),
            a.failure.or(r.failure),
        ];
        if kind != RuleKind::Custom && probs.iter().any(Option::is_some) {
            return Err(usage("--idle/--busy/--success/--failure need --rule custom"));
        }
        let d = durations(config)?;
        let objective = match a.env.as_deref().unwrap_or("slotted") {
            "slotted" => Objective::SlottedAloha,
            "dcf" => Objective::Dcf(d),
            other => return Err(usage(format!("unknown environment `{other}`"))),
        };
        let theta = a.theta.or(config.theta).unwrap_or(0.1);
        Ok(Self {
            spec: RuleSpec {
                kind,
                users: n,
                theta,
                eta: a.eta.or(r.eta).unwrap_or(1.0 / theta),
                p: a.p.or(r.p),
                probs,
                busy_zero: protocol_kind.is_mission_aware(),
                objective,
                settings: config.optimizer.settings(),
            },
            protocol_kind,
            m: a.m.or(config.protocol.m).unwrap_or(5),
            durations: d,
        })
    }

    fn rule(&self) -> Result<OnePeriodRule> {
        Ok(self.spec.build()?)
    }
}

fn push_rule(out: &mut Output, rule: &OnePeriodRule) {
    for (name, v) in ["idle", "busy", "success", "failure"].iter().zip(rule.as_array()) {
        out.kv(format!("f_{name}"), fmt_sig(v));
    }
}

fn push_bound(out: &mut Output, prefix: &str, b: &DelayBound) {
    out.kv(format!("{prefix}_delay_bound"), fmt_sig(b.total));
    out.kv(format!("{prefix}_bound_after_idle"), fmt_sig(b.idle));
    out.kv(format!("{prefix}_bound_after_success_other"), fmt_sig(b.success_other));
}

fn mission_bound(kind: ProtocolKind, rule: &OnePeriodRule, n: usize) -> Option<DelayBound> {
    match kind {
        ProtocolKind::P1 => delay_bound_protocol1(rule, n).ok(),
        ProtocolKind::P2 => delay_bound_protocol2(rule, n).ok(),
        _ => None,
    }
}

fn cmd_analyze(mut ctx: Ctx, a: AnalyzeArgs) -> Result<()> {
    let res = Resolved::new(&ctx.config, &a.rule)?;
    let n = res.spec.users;
    let rule = res.rule()?;
    let protocol = build_protocol(res.protocol_kind, rule, res.m)?;
    let metrics = analyze(&protocol, n)?;
    let out = &mut ctx.out;
    out.kv("n", n);
    out.kv("theta", fmt_sig(res.spec.theta));
    push_rule(out, &rule);
    out.extend(metrics.to_key_values());
    out.kv("dcf_throughput", fmt_sig(dcf_throughput(&rule, n, &res.durations)?));
    if let Some(b) = mission_bound(res.protocol_kind, &rule, n) {
        push_bound(out, "protocol", &b);
    }
    if a.chain {
        let chain = AggregateChain::build(&rule, n)?;
        out.write("chain.csv", |w| Ok(chain.write_csv(w)?))?;
    }
    ctx.out.finish("analyze.txt")
}

fn cmd_optimize(mut ctx: Ctx, a: OptimizeArgs) -> Result<()> {
    let config = &ctx.config;
    let n =
        a.n.or(config.n)
            .ok_or_else(|| usage("number of users is required (--n)"))?;
    let theta = a.theta.or(config.theta).unwrap_or(0.1);
    let mut problem = match a.problem.as_str() {
        "pnorm1" => OptProblem::pnorm1(n, theta),
        "pnorm2" => OptProblem::pnorm2(n, theta, durations(config)?),
        other => return Err(usage(format!("unknown problem `{other}`, expected pnorm1 or pnorm2"))),
    }
    .with_busy_zero(a.busy_zero);
    problem.settings = config.optimizer.settings();
    if let Some(g) = a.grid_step {
        problem.settings.grid_step = g;
    }
    if let Some(s) = a.starts {
        problem.settings.starts = s;
    }
    let r = solve(&problem)?;
    let out = &mut ctx.out;
    out.kv("problem", &a.problem);
    out.kv("n", n);
    out.kv("theta", fmt_sig(theta));
    out.kv("busy_zero", a.busy_zero);
    push_rule(out, &r.rule);
    out.kv("throughput", fmt_sig(r.objective));
    out.kv(
        "slotted_throughput",
        fmt_sig(Objective::SlottedAloha.evaluate(&r.rule, n)?),
    );
    out.kv("constraint_residual", fmt_sig(r.constraint_residual(n, theta)));
    out.kv("iterations", r.iterations);
    ctx.out.finish("optimize.txt")
}

fn cmd_simulate(mut ctx: Ctx, a: SimulateArgs) -> Result<()> {
    let res = Resolved::new(&ctx.config, &a.rule)?;
    let n = res.spec.users;
    let rule = res.rule()?;
    let protocol = build_protocol(res.protocol_kind, rule, res.m)?;
    let s = &ctx.config.sim;
    let mut cfg = SimConfig::new(protocol, n);
    cfg.seed = ctx.seed;
    cfg.slots = a.slots.or(s.slots).unwrap_or(cfg.slots);
    cfg.replications = a.replications.or(s.replications).unwrap_or(cfg.replications);
    cfg.warm_up = a.warm_up.or(s.warm_up).unwrap_or(cfg.warm_up);
    cfg.mission_count = a.missions.or(s.missions).unwrap_or(cfg.mission_count);
    cfg.mission_gap = a.gap.or(s.gap).unwrap_or(cfg.mission_gap);
    cfg.missions = ctx.config.mission_model()?;
    if let Some(packets) = a.packets {
        cfg.missions.length = MissionLength::Fixed { packets };
    }
    cfg.concurrency = match &a.concurrency {
        Some(c) => parse::<Concurrency>(c)?,
        None => s.concurrency.unwrap_or_default(),
    };
    if cfg.concurrency != Concurrency::Off && !res.protocol_kind.is_mission_aware() {
        return Err(usage("concurrent missions need --protocol 1, 2 or 3"));
    }
    if a.cap.is_some() && !res.protocol_kind.is_mission_aware() {
        return Err(usage("--cap needs --protocol 1, 2 or 3"));
    }

    let out = &mut ctx.out;
    out.kv("n", n);
    out.kv("seed", cfg.seed);
    out.kv("rng", RNG_NAME);
    out.kv("replications", cfg.replications);
    push_rule(out, &rule);

    if cfg.concurrency == Concurrency::Off {
        let normal = run_normal(&cfg)?;
        out.kv("measured_slots", normal.measured_slots);
        out.kv("total_throughput", fmt_sig(normal.metrics.total_throughput));
        out.kv("total_throughput_std_err", fmt_sig(normal.throughput_std_err));
        out.kv("fairness", fmt_sig(normal.metrics.fairness));
        for (i, t) in normal.metrics.per_user_throughput.iter().enumerate() {
            out.kv(format!("throughput_user_{i}"), fmt_sig(*t));
        }
        out.kv("inconsistent_slots", normal.inconsistent_slots);
        if res.protocol_kind.is_mission_aware() {
            let m = run_missions(&cfg)?;
            out.kv("missions", m.samples.len());
            out.kv("mean_delay", fmt_sig(m.delay.mean));
            out.kv("mean_delay_std_err", fmt_sig(m.delay.std_err));
            out.kv("max_delay", fmt_sig(m.delay.max));
            out.kv("capture_violations", m.capture_violations);
            out.kv("max_first_success", m.max_first_success);
            for c in &m.by_class {
                out.kv(format!("delay_{}", c.label.replace('-', "_")), fmt_sig(c.delay.mean));
            }
            if let Some(b) = mission_bound(res.protocol_kind, &rule, n) {
                push_bound(out, "protocol", &b);
            }
            out.write("delays.csv", |w| Ok(m.write_samples(w)?))?;
        }
    } else {
        let settings = ConcurrentSettings {
            episodes: a
                .episodes
                .or(s.episodes)
                .unwrap_or(ConcurrentSettings::default().episodes),
            missions_per_episode: a.episode_missions,
            ..ConcurrentSettings::default()
        };
        let r = run_concurrent(&cfg, &settings)?;
        out.kv("concurrency", a.concurrency.as_deref().unwrap_or("config"));
        out.kv("episodes", r.episodes);
        out.kv("missions", r.missions.len());
        out.kv("mean_delay", fmt_sig(r.delay.mean));
        out.kv("total_throughput", fmt_sig(r.metrics.total_throughput));
        out.kv("order_violations", r.order_violations);
        out.kv("shared_slots", r.shared_slots);
        out.kv("alternation_violations", r.alternation_violations);
        out.kv("signal_failures", r.signal_failures);
        out.kv("normal_captures", r.normal_captures);
        let mut table = CsvTable::new([
            "episode",
            "user",
            "x",
            "arrival",
            "first_success",
            "completion",
            "delay",
            "start_class",
        ]);
        for m in &r.missions {
            table.push(vec![
                m.episode.to_string(),
                m.user.to_string(),
                m.x.to_string(),
                m.arrival.to_string(),
                m.first_success.to_string(),
                m.completion.to_string(),
                m.delay().to_string(),
                m.start.label(),
            ]);
        }
        out.write("concurrent.csv", |w| Ok(table.write(w)?))?;
    }
    if let Some(m) = a.cap {
        let r = run_protocol3_cap(&cfg, m)?;
        out.kv("cap_m", r.m);
        out.kv("cap_max_first_success", r.max_first_success);
        out.kv("cap_adversarial_max_first_success", r.adversarial_max_first_success);
        out.kv("cap_within", r.within_cap());
        out.kv("cap_throughput_protocol1", fmt_sig(r.throughput_protocol1));
        out.kv("cap_throughput_protocol3", fmt_sig(r.throughput_protocol3));
    }
    if let Some(slots) = a.trace {
        out.write("trace.csv", |w| Ok(write_trace(&cfg, slots, w)?))?;
    }
    ctx.out.finish("simulate.txt")
}

fn cmd_reproduce(mut ctx: Ctx, a: ReproduceArgs) -> Result<()> {
    let targets: Vec<Target> = if a.target == "all" {
        Target::ALL.to_vec()
    } else {
        vec![a.target.parse::<Target>().map_err(|e| usage(e.to_string()))?]
    };
    let d = ReproduceOptions::default();
    let opts = ReproduceOptions {
        seed: ctx.seed,
        missions: a.missions.or(ctx.config.sim.missions).unwrap_or(d.missions),
        replications: a.replications.or(ctx.config.sim.replications).unwrap_or(d.replications),
        dcf: ctx.config.dcf.unwrap_or_default(),
    };
    for t in targets {
        let table = reproduce(t, &opts).with_context(|| format!("reproducing {t}"))?;
        ctx.out.kv(format!("{t}_rows"), table.rows.len());
        ctx.out.write(&format!("{t}.csv"), |w| Ok(table.write(w)?))?;
    }
    ctx.out.finish("reproduce.txt")
}

fn cmd_sweep(mut ctx: Ctx, a: SweepArgs) -> Result<()> {
    let mut base = a.rule.clone();
    if a.param == "n" && base.n.is_none() && ctx.config.n.is_none() {
        base.n = Some(2);
    }
    if a.values.is_empty() {
        bail!(usage("--values needs at least one value"));
    }
    let cells: Vec<RuleArgs> = a
        .values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            match a.param.as_str() {
                "theta" => c.theta = Some(v),
                "n" if v >= 2.0 && v.fract() == 0.0 => c.n = Some(v as usize),
                "idle" => c.idle = Some(v),
                "busy" => c.busy = Some(v),
                "success" => c.success = Some(v),
                "failure" => c.failure = Some(v),
                "p" => c.p = Some(v),
                other => return Err(usage(format!("cannot sweep `{other}` over {v}"))),
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let resolved: Vec<Resolved> = cells
        .iter()
        .map(|c| Resolved::new(&ctx.config, c))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = resolved
        .par_iter()
        .zip(&a.values)
        .map(|(res, &v)| {
            let n = res.spec.users;
            let rule = res.rule()?;
            let bound = |k| mission_bound(k, &rule, n).map(|b| fmt_sig(b.total)).unwrap_or_default();
            let mut row = vec![fmt_sig(v), n.to_string()];
            row.extend(rule.as_array().iter().map(|&p| fmt_sig(p)));
            row.push(fmt_sig(Objective::SlottedAloha.evaluate(&rule, n)?));
            row.push(fmt_sig(dcf_throughput(&rule, n, &res.durations)?));
            row.push(fmt_sig(rule.fairness(n)));
            row.push(bound(ProtocolKind::P1));
            row.push(bound(ProtocolKind::P2));
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new([
        a.param.as_str(),
        "N",
        "f_idle",
        "f_busy",
        "f_success",
        "f_failure",
        "throughput",
        "dcf_throughput",
        "fairness",
        "bound_P1",
        "bound_P2",
    ]);
    for r in rows {
        table.push(r);
    }
    ctx.out.kv("param", &a.param);
    ctx.out.kv("cells", table.rows.len());
    ctx.out.write("sweep.csv", |w| Ok(table.write(w)?))?;
    ctx.out.finish("sweep.txt")
}
