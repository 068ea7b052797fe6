use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::engine::{arrival_rng, decision_rng, Engine};
use super::missions::StartClass;
use super::stats::{RunTracker, Summary};
use super::{Concurrency, SimConfig};
use crate::error::{Error, Result};
use crate::markov::MetricsReport;
use crate::optimizer::{solve, OptProblem};
use crate::protocol::{ChannelState, DecisionRule, MissionVariant, OnePeriodRule, Situation};

const EPISODE_SLOT_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrentSettings {
    /// Episodes per replication.
    pub episodes: usize,
    pub missions_per_episode: usize,
    /// Later missions arrive within this many slots of the first one
    /// (first-come first-served and sharing).
    pub max_lag: u64,
    /// Fairness level of the rules used when three or more missions share.
    pub sharing_theta: f64,
}

impl Default for ConcurrentSettings {
    fn default() -> Self {
        Self {
            episodes: 1000,
            missions_per_episode: 2,
            max_lag: 5,
            sharing_theta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissionRecord {
    pub episode: usize,
    pub user: usize,
    pub x: u32,
    /// Slot of arrival; the mission user transmits from this slot on.
    pub arrival: u64,
    pub first_success: u64,
    /// Slot of the last packet.
    pub completion: u64,
    pub start: StartClass,
}

impl MissionRecord {
    pub fn delay(&self) -> u64 {
        self.completion + 1 - self.arrival - self.x as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrentReport {
    pub mode: Concurrency,
    pub episodes: usize,
    pub missions: Vec<MissionRecord>,
    pub metrics: MetricsReport,
    pub delay: Summary,
    /// First-come first-served: pairs served out of arrival order.
    pub order_violations: u64,
    /// Sharing: slots with two missions after their first success.
    pub shared_slots: u64,
    /// Sharing: such slots that were not a success of the other mission
    /// user than the previous one.
    pub alternation_violations: u64,
    /// Handshake: episodes whose two signalling slots were not collisions
    /// of exactly the two mission users.
    pub signal_failures: u64,
    /// Handshake: a normal user succeeded twice in a row while a mission
    /// was pending.
    pub normal_captures: u64,
    pub normal_successes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    /// Ordinary critical behavior.
    Single,
    /// Arrived after another user's success; probing whether it is critical.
    Probing {
        failures: u8,
    },
    /// Saw its capture broken; answers with one more transmission.
    Responding,
    Shared {
        alternating: bool,
    },
}

struct Active {
    record: MissionRecord,
    done: u32,
    role: Role,
}

struct Replica {
    missions: Vec<MissionRecord>,
    successes: Vec<u64>,
    runs: RunTracker,
    slots: u64,
    order_violations: u64,
    shared_slots: u64,
    alternation_violations: u64,
    signal_failures: u64,
    normal_captures: u64,
    normal_successes: u64,
}

fn replicate(
    config: &SimConfig,
    settings: &ConcurrentSettings,
    sharing_rules: &BTreeMap<usize, OnePeriodRule>,
    replication: usize,
) -> Result<Replica> {
    let n = config.users;
    let mut engine = Engine::new(&config.protocol, n, decision_rng(config.seed, replication as u64));
    let mut rng = arrival_rng(config.seed, replication as u64);
    for _ in 0..config.warm_up {
        engine.step();
    }
    let mut out = Replica {
        missions: Vec::new(),
        successes: vec![0; n],
        runs: RunTracker::new(n),
        slots: 0,
        order_violations: 0,
        shared_slots: 0,
        alternation_violations: 0,
        signal_failures: 0,
        normal_captures: 0,
        normal_successes: 0,
    };
    let mut probs = vec![0.0; n];
    let mode = config.concurrency;

    for episode in 0..settings.episodes {
        for _ in 0..config.mission_gap {
            let winner = engine.step().winner();
            if let Some(w) = winner {
                out.successes[w] += 1;
            }
            out.runs.observe(winner);
            out.slots += 1;
        }
        let k = settings.missions_per_episode.min(n);
        let users: Vec<usize> = sample(&mut rng, n, k).into_vec();
        let lengths: Vec<u32> = (0..k).map(|_| config.missions.length.sample(&mut rng)).collect();
        let start = engine.slot();
        // Planned arrival slots; the handshake schedules the second arrival
        // after a random success of the first mission user.
        let mut offsets: Vec<u64> = vec![0; k];
        let mut handoff_after = None;
        if mode == Concurrency::Handshake {
            if k == 2 && lengths[0] >= 2 {
                handoff_after = Some(rng.random_range(1..lengths[0]));
            }
            offsets[1..].fill(u64::MAX);
        } else {
            for o in offsets.iter_mut().skip(1) {
                *o = rng.random_range(0..=settings.max_lag);
            }
            offsets.sort_unstable();
        }
        let mut pending: Vec<(u64, usize, u32)> = (0..k).map(|i| (offsets[i], users[i], lengths[i])).collect();
        let mut active: Vec<Active> = Vec::new();
        // First-come first-served groups of simultaneous arrivals.
        let mut queue: Vec<Vec<usize>> = Vec::new();
        let mut holder: Option<usize> = None;
        let mut finished: Vec<MissionRecord> = Vec::new();
        let mut yield_after_idle: Option<usize> = None;
        let mut yield_now: Option<usize> = None;
        let mut signal_slots: Option<(u64, usize, usize)> = None;
        let mut last_normal_winner: Option<usize> = None;
        let mut last_shared_winner: Option<usize> = None;

        loop {
            let now = engine.slot();
            if now - start > EPISODE_SLOT_LIMIT {
                return Err(Error::Infeasible(format!("episode {episode} did not finish")));
            }
            // Arrivals due now.
            let due: Vec<(u64, usize, u32)> = pending.iter().copied().filter(|p| p.0 == now - start).collect();
            pending.retain(|p| p.0 != now - start);
            if !due.is_empty() {
                if mode == Concurrency::Fcfs {
                    queue.push(due.iter().map(|d| d.1).collect());
                }
                for (_, user, x) in due {
                    let prev = engine.record();
                    let role = if mode == Concurrency::Handshake && !active.is_empty() {
                        signal_slots = Some((now, active[0].record.user, user));
                        Role::Probing { failures: 0 }
                    } else {
                        Role::Single
                    };
                    active.push(Active {
                        record: MissionRecord {
                            episode,
                            user,
                            x,
                            arrival: now,
                            first_success: u64::MAX,
                            completion: 0,
                            start: StartClass::classify(prev, user),
                        },
                        done: 0,
                        role,
                    });
                    engine.set_situation(user, Situation::Critical);
                }
            }
            if active.is_empty() && pending.is_empty() {
                break;
            }

            // Probabilities for the coming slot.
            let critical = active.len();
            for (u, p) in probs.iter_mut().enumerate() {
                *p = if mode != Concurrency::Handshake && critical > 0 {
                    0.0
                } else {
                    engine.probability(u)
                };
            }
            if let Some(u) = yield_now.take() {
                probs[u] = 0.0;
            }
            match mode {
                Concurrency::Fcfs => {
                    if let Some(group) = queue.first() {
                        let alive: Vec<usize> = group
                            .iter()
                            .copied()
                            .filter(|u| active.iter().any(|a| a.record.user == *u))
                            .collect();
                        match holder {
                            Some(h) => probs[h] = 1.0,
                            None => {
                                let p = 1.0 / alive.len() as f64;
                                for u in alive {
                                    probs[u] = p;
                                }
                            }
                        }
                    }
                }
                Concurrency::Sharing => {
                    let rule = match critical {
                        0 | 1 => None,
                        2 => Some(OnePeriodRule::alternating()),
                        c => Some(sharing_rules[&c]),
                    };
                    for a in &active {
                        let u = a.record.user;
                        probs[u] = match rule {
                            None => 1.0,
                            Some(r) => r.prob(engine.last(u).1),
                        };
                    }
                }
                Concurrency::Handshake => {
                    for a in &active {
                        let u = a.record.user;
                        let last = engine.last(u).1;
                        probs[u] = match a.role {
                            Role::Single | Role::Probing { .. } | Role::Responding => 1.0,
                            Role::Shared { .. } => match last {
                                ChannelState::Idle | ChannelState::Busy => 1.0,
                                ChannelState::Success => 0.0,
                                ChannelState::Failure => 0.5,
                            },
                        };
                    }
                }
                Concurrency::Off => unreachable!("checked by run_concurrent"),
            }

            let rec = engine.step_with_probabilities(&probs);
            out.slots += 1;
            let winner = rec.winner();
            if let Some(w) = winner {
                out.successes[w] += 1;
            }
            out.runs.observe(winner);
            let transmitters: Vec<usize> = (0..n)
                .filter(|u| rec.states[*u] == ChannelState::Success || rec.states[*u] == ChannelState::Failure)
                .collect();
            let states = rec.states.clone();

            if let Some((t0, i, j)) = signal_slots {
                if now == t0 || now == t0 + 1 {
                    let mut want = vec![i, j];
                    want.sort_unstable();
                    if transmitters != want {
                        out.signal_failures += 1;
                        signal_slots = None;
                    }
                }
            }
            if !active.is_empty() {
                let normal_winner = winner.filter(|w| !active.iter().any(|a| a.record.user == *w));
                if let Some(w) = normal_winner {
                    out.normal_successes += 1;
                    if last_normal_winner == Some(w) {
                        out.normal_captures += 1;
                    }
                }
                last_normal_winner = normal_winner;
            }

            // Sharing alternation after the first success with two missions.
            if mode == Concurrency::Sharing && active.len() == 2 {
                if let Some(prev) = last_shared_winner {
                    out.shared_slots += 1;
                    let ok = winner.is_some_and(|w| w != prev && active.iter().any(|a| a.record.user == w));
                    out.alternation_violations += (!ok) as u64;
                }
                last_shared_winner = winner
                    .filter(|w| active.iter().any(|a| a.record.user == *w))
                    .or(last_shared_winner);
            } else {
                last_shared_winner = None;
            }

            // Role updates from each mission user's own observation.
            for a in active.iter_mut() {
                let u = a.record.user;
                let s = states[u];
                let prev = engine.recent(u, 2)[0].1;
                a.role = match (a.role, s) {
                    (Role::Single, ChannelState::Failure) if prev == ChannelState::Success => Role::Responding,
                    (Role::Single, _) => Role::Single,
                    (Role::Responding, ChannelState::Failure) => Role::Shared { alternating: false },
                    (Role::Responding, _) => Role::Single,
                    (Role::Probing { failures }, ChannelState::Failure) if failures >= 1 => {
                        Role::Shared { alternating: false }
                    }
                    (Role::Probing { failures }, ChannelState::Failure) => Role::Probing { failures: failures + 1 },
                    (Role::Probing { .. }, _) => Role::Single,
                    (Role::Shared { .. }, ChannelState::Success | ChannelState::Busy) => {
                        Role::Shared { alternating: true }
                    }
                    (Role::Shared { .. }, ChannelState::Failure) => Role::Shared { alternating: false },
                    // An idle slot during alternation: the partner is done.
                    (Role::Shared { alternating: true }, ChannelState::Idle) => Role::Single,
                    (r @ Role::Shared { .. }, ChannelState::Idle) => r,
                };
            }
            if let Some(f) = yield_after_idle {
                if states[f] == ChannelState::Idle {
                    yield_now = Some(f);
                    yield_after_idle = None;
                }
            }

            // Mission progress.
            if let Some(w) = winner {
                if let Some(pos) = active.iter().position(|a| a.record.user == w) {
                    let a = &mut active[pos];
                    a.done += 1;
                    if a.record.first_success == u64::MAX {
                        a.record.first_success = now;
                    }
                    if mode == Concurrency::Fcfs {
                        holder = Some(w);
                    }
                    if mode == Concurrency::Handshake && pos == 0 && Some(a.done) == handoff_after {
                        // The second mission arrives in the next slot.
                        if let Some(p) = pending.first_mut() {
                            p.0 = now + 1 - start;
                        }
                    }
                    if a.done == a.record.x {
                        let mut a = active.remove(pos);
                        a.record.completion = now;
                        engine.set_situation(w, Situation::Normal);
                        if mode == Concurrency::Fcfs {
                            holder = None;
                            if let Some(g) = queue.first_mut() {
                                g.retain(|u| *u != w);
                                if g.is_empty() {
                                    queue.remove(0);
                                }
                            }
                        }
                        if mode == Concurrency::Handshake && !active.is_empty() {
                            yield_after_idle = Some(w);
                        }
                        finished.push(a.record);
                    }
                }
            }
            if active.is_empty() {
                // Unscheduled hand-offs lapse with the first mission.
                pending.retain(|p| p.0 != u64::MAX);
            }
        }
        if mode == Concurrency::Fcfs {
            let mut by_arrival = finished.clone();
            by_arrival.sort_by_key(|m| m.arrival);
            for (a, b) in by_arrival.iter().zip(by_arrival.iter().skip(1)) {
                if a.arrival < b.arrival && (a.completion >= b.completion || b.first_success <= a.completion) {
                    out.order_violations += 1;
                }
            }
        }
        finished.sort_by_key(|m| (m.arrival, m.user));
        out.missions.extend(finished);
    }
    out.runs.finish();
    Ok(out)
}

/// Simulates episodes of several missions under the configured policy.
pub fn run_concurrent(config: &SimConfig, settings: &ConcurrentSettings) -> Result<ConcurrentReport> {
    config.validate()?;
    let n = config.users;
    match config.concurrency {
        Concurrency::Off => {
            return Err(Error::InvalidParameter(
                "concurrent runs need a concurrency mode".into(),
            ));
        }
        Concurrency::Handshake => {
            if settings.missions_per_episode > 2 {
                return Err(Error::Unsupported(
                    "the handshake coordinates at most two concurrent missions".into(),
                ));
            }
            let two_period = config.protocol.is_symmetric()
                && matches!(
                    config.protocol.rules()[0],
                    DecisionRule::MissionAware {
                        variant: MissionVariant::TwoPeriod,
                        ..
                    }
                );
            if !two_period {
                return Err(Error::InvalidParameter("the handshake extends Protocol 2".into()));
            }
            config.protocol.check_capture()?;
        }
        Concurrency::Fcfs | Concurrency::Sharing => {}
    }
    if settings.missions_per_episode == 0 || settings.episodes == 0 {
        return Err(Error::InvalidParameter(
            "need at least one episode and one mission".into(),
        ));
    }
    let mut sharing_rules = BTreeMap::new();
    if config.concurrency == Concurrency::Sharing {
        for c in 3..=settings.missions_per_episode.min(n) {
            sharing_rules.insert(c, solve(&OptProblem::pnorm1(c, settings.sharing_theta))?.rule);
        }
    }
    let replicas = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, settings, &sharing_rules, r))
        .collect::<Result<Vec<_>>>()?;

    let mut missions = Vec::new();
    let mut successes = vec![0u64; n];
    let mut runs = RunTracker::new(n);
    let mut slots = 0;
    let mut report = ConcurrentReport {
        mode: config.concurrency,
        episodes: settings.episodes * config.replications,
        missions: Vec::new(),
        metrics: MetricsReport {
            per_user_throughput: Vec::new(),
            total_throughput: 0.0,
            fairness: f64::NAN,
            complexity: config.protocol.complexity(),
            delay: None,
        },
        delay: Summary::default(),
        order_violations: 0,
        shared_slots: 0,
        alternation_violations: 0,
        signal_failures: 0,
        normal_captures: 0,
        normal_successes: 0,
    };
    for r in replicas {
        missions.extend(r.missions);
        for u in 0..n {
            successes[u] += r.successes[u];
        }
        runs.merge(&r.runs);
        slots += r.slots;
        report.order_violations += r.order_violations;
        report.shared_slots += r.shared_slots;
        report.alternation_violations += r.alternation_violations;
        report.signal_failures += r.signal_failures;
        report.normal_captures += r.normal_captures;
        report.normal_successes += r.normal_successes;
    }
    let per_user: Vec<f64> = successes.iter().map(|s| *s as f64 / slots.max(1) as f64).collect();
    report.delay = Summary::from_values(missions.iter().map(|m| m.delay() as f64));
    report.metrics.total_throughput = per_user.iter().sum();
    report.metrics.per_user_throughput = per_user;
    report.metrics.fairness = runs.fairness();
    report.metrics.delay = Some(report.delay.mean);
    report.missions = missions;
    Ok(report)
}
