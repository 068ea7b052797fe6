use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rayon::prelude::*;

use super::engine::{arrival_rng, decision_rng, Engine, SlotRecord};
use super::normal::run_normal;
use super::stats::{RunTracker, Summary};
use super::{Concurrency, SimConfig};
use crate::error::{Error, Result};
use crate::markov::MetricsReport;
use crate::protocol::{protocol1, protocol2, protocol3, ArrivalTrigger, ChannelState, Protocol, Situation, WindowView};

/// Longest a single mission may run before the simulation gives up.
const MISSION_SLOT_LIMIT: u64 = 10_000_000;

/// Outcome of the slot before a mission starts, seen by the mission user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StartClass {
    Idle,
    SuccessSelf,
    SuccessOther,
    Collision { transmitters: usize, involved: bool },
}

impl StartClass {
    pub fn classify(prev: &SlotRecord, user: usize) -> Self {
        match prev.transmitters {
            0 => StartClass::Idle,
            1 if prev.winner() == Some(user) => StartClass::SuccessSelf,
            1 => StartClass::SuccessOther,
            k => StartClass::Collision {
                transmitters: k,
                involved: prev.states[user] == ChannelState::Failure,
            },
        }
    }

    /// Label used in reports; collisions are grouped by size only.
    pub fn label(&self) -> String {
        match self {
            StartClass::Idle => "idle".into(),
            StartClass::SuccessSelf => "success-self".into(),
            StartClass::SuccessOther => "success-other".into(),
            StartClass::Collision { transmitters, .. } => format!("collision-{transmitters}"),
        }
    }

    fn order(&self) -> (usize, usize) {
        match self {
            StartClass::Idle => (0, 0),
            StartClass::SuccessSelf => (1, 0),
            StartClass::SuccessOther => (2, 0),
            StartClass::Collision { transmitters, .. } => (3, *transmitters),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySample {
    pub user: usize,
    /// Mission length `x` in packets.
    pub x: u32,
    /// Slots from arrival to the last packet, inclusive.
    pub completion_slots: u64,
    pub delay: u64,
    /// Slots from arrival to the first success, inclusive.
    pub first_success: u64,
    pub start: StartClass,
    /// Mission slots after the first success that were not successes.
    pub capture_violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub label: String,
    pub share: f64,
    pub delay: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionReport {
    pub samples: Vec<DelaySample>,
    pub metrics: MetricsReport,
    pub delay: Summary,
    pub by_class: Vec<ClassSummary>,
    pub capture_violations: u64,
    pub max_first_success: u64,
}

impl MissionReport {
    pub fn class(&self, label: &str) -> Option<&ClassSummary> {
        self.by_class.iter().find(|c| c.label == label)
    }

    /// Delay samples as CSV rows: `user,x,completion,delay,start,involved`.
    pub fn write_samples<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["user", "x", "completion_slots", "delay", "start_class", "involved"])?;
        for s in &self.samples {
            let involved = matches!(s.start, StartClass::Collision { involved: true, .. });
            w.write_record([
                s.user.to_string(),
                s.x.to_string(),
                s.completion_slots.to_string(),
                s.delay.to_string(),
                s.start.label(),
                (involved as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Replica {
    samples: Vec<DelaySample>,
    successes: Vec<u64>,
    slots: u64,
    runs: RunTracker,
}

fn replicate(config: &SimConfig, replication: usize) -> Result<Replica> {
    let n = config.users;
    let mut engine = Engine::new(&config.protocol, n, decision_rng(config.seed, replication as u64));
    let mut arrivals = arrival_rng(config.seed, replication as u64);
    for _ in 0..config.warm_up {
        engine.step();
    }
    let mut successes = vec![0u64; n];
    let mut runs = RunTracker::new(n);
    let mut slots = 0u64;
    let mut samples = Vec::with_capacity(config.mission_count);
    let model = &config.missions;

    for _ in 0..config.mission_count {
        let mut normal_step = |engine: &mut Engine, slots: &mut u64| {
            let rec = engine.step();
            *slots += 1;
            let winner = rec.winner();
            if let Some(w) = winner {
                successes[w] += 1;
            }
            runs.observe(winner);
        };
        for _ in 0..config.mission_gap {
            normal_step(&mut engine, &mut slots);
        }
        let mut waited = 0u64;
        loop {
            let allowed = match model.trigger {
                ArrivalTrigger::AnySlot => true,
                ArrivalTrigger::AfterCollision => engine.record().transmitters >= 2,
            };
            if allowed && arrivals.random::<f64>() < model.arrival_probability {
                break;
            }
            waited += 1;
            if waited > MISSION_SLOT_LIMIT {
                return Err(Error::Infeasible("no slot admitted a mission arrival".into()));
            }
            normal_step(&mut engine, &mut slots);
        }

        let user = arrivals.random_range(0..n);
        let x = model.length.sample(&mut arrivals);
        let start = StartClass::classify(engine.record(), user);
        engine.set_situation(user, Situation::Critical);
        let mut done = 0u32;
        let mut elapsed = 0u64;
        let mut first = None;
        let mut violations = 0u64;
        while done < x {
            let rec = engine.step();
            elapsed += 1;
            let won = rec.winner() == Some(user);
            if won {
                done += 1;
                successes[user] += 1;
                first.get_or_insert(elapsed);
            } else if first.is_some() {
                violations += 1;
            }
            if elapsed > MISSION_SLOT_LIMIT {
                return Err(Error::Infeasible(format!(
                    "mission of user {user} did not finish within {MISSION_SLOT_LIMIT} slots"
                )));
            }
        }
        slots += elapsed;
        // Normal-phase fairness only: the mission run is not counted.
        runs.finish();
        engine.set_situation(user, Situation::Normal);
        samples.push(DelaySample {
            user,
            x,
            completion_slots: elapsed,
            delay: elapsed - x as u64,
            first_success: first.unwrap_or(elapsed),
            start,
            capture_violations: violations,
        });
    }
    Ok(Replica {
        samples,
        successes,
        slots,
        runs,
    })
}

/// Injects missions one at a time into a running normal phase and measures
/// their delays.
pub fn run_missions(config: &SimConfig) -> Result<MissionReport> {
    config.validate()?;
    if config.concurrency != Concurrency::Off {
        return Err(Error::InvalidParameter(
            "single-mission runs need concurrency off; use run_concurrent".into(),
        ));
    }
    config.protocol.check_capture()?;
    if config.missions.arrival_probability == 0.0 {
        return Err(Error::InvalidParameter(
            "mission arrival probability must be positive".into(),
        ));
    }
    let replicas = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r))
        .collect::<Result<Vec<_>>>()?;

    let n = config.users;
    let mut samples = Vec::new();
    let mut successes = vec![0u64; n];
    let mut runs = RunTracker::new(n);
    let mut slots = 0;
    for r in replicas {
        samples.extend(r.samples);
        for u in 0..n {
            successes[u] += r.successes[u];
        }
        runs.merge(&r.runs);
        slots += r.slots;
    }
    Ok(summarize(config, samples, &successes, &runs, slots))
}

fn summarize(
    config: &SimConfig,
    samples: Vec<DelaySample>,
    successes: &[u64],
    runs: &RunTracker,
    slots: u64,
) -> MissionReport {
    let delay = Summary::from_values(samples.iter().map(|s| s.delay as f64));
    let mut classes: Vec<StartClass> = samples
        .iter()
        .map(|s| match s.start {
            StartClass::Collision { transmitters, .. } => StartClass::Collision {
                transmitters,
                involved: false,
            },
            c => c,
        })
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    classes.sort_by_key(|c| c.order());
    let total = samples.len().max(1) as f64;
    let by_class = classes
        .iter()
        .map(|c| {
            let label = c.label();
            let values: Vec<f64> = samples
                .iter()
                .filter(|s| s.start.label() == label)
                .map(|s| s.delay as f64)
                .collect();
            ClassSummary {
                label,
                share: values.len() as f64 / total,
                delay: Summary::from_values(values),
            }
        })
        .collect();
    let per_user: Vec<f64> = successes.iter().map(|s| *s as f64 / slots.max(1) as f64).collect();
    let fairness = runs.fairness();
    MissionReport {
        capture_violations: samples.iter().map(|s| s.capture_violations).sum(),
        max_first_success: samples.iter().map(|s| s.first_success).max().unwrap_or(0),
        metrics: MetricsReport {
            total_throughput: per_user.iter().sum(),
            per_user_throughput: per_user,
            fairness,
            complexity: config.protocol.complexity(),
            delay: Some(delay.mean),
        },
        delay,
        by_class,
        samples,
    }
}

/// Protocol 3 safety check.
#[derive(Debug, Clone, PartialEq)]
pub struct CapReport {
    pub m: usize,
    pub missions: usize,
    /// Longest observed wait, arrival to first success inclusive.
    pub max_first_success: u64,
    /// The same with arrivals only after collision slots.
    pub adversarial_max_first_success: u64,
    pub adversarial_missions: usize,
    pub throughput_protocol1: f64,
    pub throughput_protocol2: f64,
    pub throughput_protocol3: f64,
    pub throughput_std_err: f64,
}

impl CapReport {
    pub fn within_cap(&self) -> bool {
        let cap = self.m as u64 + 1;
        self.max_first_success <= cap && self.adversarial_max_first_success <= cap
    }
}

/// Runs Protocol 3 with `config`'s `f_norm`: missions with steady-state
/// and after-collision arrivals, then normal-phase throughput against
/// Protocols 1 and 2 on the same seed.
pub fn run_protocol3_cap(config: &SimConfig, m: usize) -> Result<CapReport> {
    let f_norm = config
        .protocol
        .mission_f_norm()
        .ok_or_else(|| Error::InvalidParameter("the cap check needs a symmetric mission-aware protocol".into()))?;
    let p3 = protocol3(f_norm, m)?;
    let mut cfg = config.clone();
    cfg.protocol = p3.clone();
    cfg.concurrency = Concurrency::Off;
    let steady = run_missions(&cfg)?;

    let mut adv = cfg.clone();
    adv.missions.trigger = ArrivalTrigger::AfterCollision;
    adv.mission_count = (cfg.mission_count / 10).max(1);
    let adversarial = run_missions(&adv)?;

    let normal = |protocol: Protocol| {
        let mut c = cfg.clone();
        c.protocol = protocol;
        run_normal(&c)
    };
    let r1 = normal(protocol1(f_norm)?)?;
    let r2 = normal(protocol2(f_norm)?)?;
    let r3 = normal(p3)?;
    Ok(CapReport {
        m,
        missions: steady.samples.len(),
        max_first_success: steady.max_first_success,
        adversarial_max_first_success: adversarial.max_first_success,
        adversarial_missions: adversarial.samples.len(),
        throughput_protocol1: r1.metrics.total_throughput,
        throughput_protocol2: r2.metrics.total_throughput,
        throughput_protocol3: r3.metrics.total_throughput,
        throughput_std_err: r3.throughput_std_err,
    })
}

/// Largest number of slots, arrival to first success inclusive, that a
/// mission can take, over every combination of normal-situation windows of
/// the other users and every sequence of their choices. `None` when some
/// sequence of collisions can go on forever.
pub fn exhaustive_capture_bound(protocol: &Protocol, users: usize) -> Result<Option<u64>> {
    protocol.check_users(users)?;
    protocol.check_capture()?;
    let m = protocol.max_memory().max(1);
    let others = users - 1;
    let bits = 2 * m * others;
    if bits > 24 {
        return Err(Error::Unsupported(format!(
            "exhaustive walk over 4^{} joint windows is too large",
            m * others
        )));
    }
    let codes = 1usize << (2 * m);
    let mask = codes as u64 - 1;
    let state_of = |code: usize, i: usize| ChannelState::ALL[(code >> (2 * (m - 1 - i))) & 3];
    let missions: Vec<usize> = if protocol.is_symmetric() {
        vec![0]
    } else {
        (0..users).collect()
    };

    let mut worst = 0u64;
    for mission in missions {
        let others: Vec<usize> = (0..users).filter(|u| *u != mission).collect();
        // Transmission probability per other user and window code.
        let table: Vec<Vec<f64>> = others
            .iter()
            .map(|&u| {
                let rule = protocol.rule_unchecked(u);
                let mem = rule.memory();
                (0..codes)
                    .map(|code| {
                        let past: Vec<_> = (0..m).map(|i| (Situation::Normal, state_of(code, i))).collect();
                        rule.eval_view(WindowView {
                            past: &past[m - mem..],
                            current: Situation::Normal,
                        })
                    })
                    .collect()
            })
            .collect();
        let k = others.len();
        let window = |s: u64, j: usize| ((s >> (2 * m * j)) & mask) as usize;
        let push = |code: usize, st: ChannelState| ((code << 2) | st.index()) & codes.wrapping_sub(1);

        let mut frontier: Vec<u64> = (0..1u64 << bits).collect();
        let mut seen_frontiers = HashSet::new();
        let mut depth = 0u64;
        loop {
            let mut next = Vec::new();
            for &s in &frontier {
                let mut branches: Vec<(u64, bool)> = vec![(0, false)];
                for j in 0..k {
                    let code = window(s, j);
                    let p = table[j][code];
                    let mut grown = Vec::with_capacity(branches.len() * 2);
                    for &(acc, any) in &branches {
                        if p > 0.0 {
                            let c = push(code, ChannelState::Failure) as u64;
                            grown.push((acc | (c << (2 * m * j)), true));
                        }
                        if p < 1.0 {
                            let c = push(code, ChannelState::Busy) as u64;
                            grown.push((acc | (c << (2 * m * j)), any));
                        }
                    }
                    branches = grown;
                }
                for (t, any) in branches {
                    if any {
                        next.push(t);
                    } else {
                        worst = worst.max(depth + 1);
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            if next.is_empty() {
                break;
            }
            let mut h = DefaultHasher::new();
            next.hash(&mut h);
            if !seen_frontiers.insert((h.finish(), next.len())) {
                return Ok(None);
            }
            frontier = next;
            depth += 1;
        }
    }
    Ok(Some(worst))
}
