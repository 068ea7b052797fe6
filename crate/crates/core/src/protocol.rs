//! Channel states, histories and decision rules.
//!
//! A decision rule maps a user's recent history window (the last `m`
//! situation/channel-state pairs plus the current situation) to a
//! transmission probability. A [`Protocol`] assigns one rule per user; the
//! symmetric case stores a single rule shared by everybody.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, check_users, Error, Result};

/// What a user observes at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    Idle,
    Busy,
    Success,
    Failure,
}

impl ChannelState {
    pub const ALL: [ChannelState; 4] = [
        ChannelState::Idle,
        ChannelState::Busy,
        ChannelState::Success,
        ChannelState::Failure,
    ];

    /// Observation of a user given its own action and the number of
    /// transmitters in the slot (including itself).
    pub fn observe(transmitted: bool, transmitters: usize) -> Self {
        match (transmitted, transmitters) {
            (true, 1) => ChannelState::Success,
            (true, _) => ChannelState::Failure,
            (false, 0) => ChannelState::Idle,
            (false, _) => ChannelState::Busy,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelState::Idle => "idle",
            ChannelState::Busy => "busy",
            ChannelState::Success => "success",
            ChannelState::Failure => "failure",
        }
    }

    /// The action that produces this observation.
    pub fn action(self) -> Action {
        match self {
            ChannelState::Idle | ChannelState::Busy => Action::Wait,
            ChannelState::Success | ChannelState::Failure => Action::Transmit,
        }
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Situation {
    Normal,
    Critical,
}

impl Situation {
    pub const ALL: [Situation; 2] = [Situation::Normal, Situation::Critical];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Transmit,
    Wait,
}

impl Action {
    pub fn symbol(self) -> char {
        match self {
            Action::Transmit => 'T',
            Action::Wait => 'W',
        }
    }
}

/// One slot of a user's history.
pub type HistoryEntry = (Situation, ChannelState);

/// Entry used for slots before the start of time.
pub const DEFAULT_ENTRY: HistoryEntry = (Situation::Normal, ChannelState::Idle);

/// Stationary symmetric rule on the previous slot's channel state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnePeriodRule {
    #[serde(rename = "idle")]
    pub p_idle: f64,
    #[serde(rename = "busy")]
    pub p_busy: f64,
    #[serde(rename = "success")]
    pub p_success: f64,
    #[serde(rename = "failure")]
    pub p_failure: f64,
}

impl OnePeriodRule {
    pub fn new(p_idle: f64, p_busy: f64, p_success: f64, p_failure: f64) -> Result<Self> {
        Ok(Self {
            p_idle: check_probability("idle", p_idle)?,
            p_busy: check_probability("busy", p_busy)?,
            p_success: check_probability("success", p_success)?,
            p_failure: check_probability("failure", p_failure)?,
        })
    }

    /// The same probability after every channel state.
    pub fn uniform(p: f64) -> Result<Self> {
        Self::new(p, p, p, p)
    }

    /// Perfect two-user alternation: contend at 1/2, then take turns.
    pub fn alternating() -> Self {
        Self {
            p_idle: 0.5,
            p_busy: 1.0,
            p_success: 0.0,
            p_failure: 0.5,
        }
    }

    /// Heuristic maximizing one-step transitions into a success:
    /// `(1/N, 0, 1 - θ, 1/2)`.
    pub fn tilde(users: usize, theta: f64) -> Result<Self> {
        check_users(users)?;
        let theta = check_probability("theta", theta)?;
        Self::new(1.0 / users as f64, 0.0, 1.0 - theta, 0.5)
    }

    /// Two-state rule: keep the channel after a success, otherwise transmit
    /// with `1 - (1 - 1/η)^(1/(N-1))`.
    pub fn two_state(users: usize, eta: f64) -> Result<Self> {
        check_users(users)?;
        if !(eta.is_finite() && eta >= 1.0) {
            return Err(Error::InvalidParameter(format!("eta must be >= 1, got {eta}")));
        }
        let p = 1.0 - (1.0 - 1.0 / eta).powf(1.0 / (users - 1) as f64);
        Self::new(p, p, 1.0, p)
    }

    pub fn prob(&self, state: ChannelState) -> f64 {
        match state {
            ChannelState::Idle => self.p_idle,
            ChannelState::Busy => self.p_busy,
            ChannelState::Success => self.p_success,
            ChannelState::Failure => self.p_failure,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p_idle, self.p_busy, self.p_success, self.p_failure]
    }

    /// Probability that a successful user succeeds again in the next slot
    /// when everybody follows this rule.
    pub fn repeat_success_probability(&self, users: usize) -> f64 {
        self.p_success * (1.0 - self.p_busy).powi(users as i32 - 1)
    }

    /// Short-term fairness `1 - f(success)(1 - f(busy))^(N-1)`.
    pub fn fairness(&self, users: usize) -> f64 {
        1.0 - self.repeat_success_probability(users)
    }
}

impl fmt::Display for OnePeriodRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(idle {:.6}, busy {:.6}, success {:.6}, failure {:.6})",
            self.p_idle, self.p_busy, self.p_success, self.p_failure
        )
    }
}

/// Borrowed history window, oldest entry first.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    pub past: &'a [HistoryEntry],
    pub current: Situation,
}

impl WindowView<'_> {
    fn last_state(&self) -> ChannelState {
        self.past.last().map_or(ChannelState::Idle, |e| e.1)
    }

    fn previous_situation(&self) -> Situation {
        self.past.last().map_or(Situation::Normal, |e| e.0)
    }
}

/// Owned `m`-period history window: `m` past (situation, state) pairs,
/// oldest first, plus the current situation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryWindow {
    past: Vec<HistoryEntry>,
    current: Situation,
}

impl HistoryWindow {
    pub fn new(past: Vec<HistoryEntry>, current: Situation) -> Self {
        Self { past, current }
    }

    /// Window whose past entries are all in the normal situation.
    pub fn normal(states: &[ChannelState]) -> Self {
        Self {
            past: states.iter().map(|&s| (Situation::Normal, s)).collect(),
            current: Situation::Normal,
        }
    }

    /// The last `m` entries of a full history, padded at the front with
    /// `(Normal, Idle)` for slots before the first one.
    pub fn from_history(history: &[HistoryEntry], current: Situation, m: usize) -> Self {
        let take = history.len().min(m);
        let mut past = vec![DEFAULT_ENTRY; m - take];
        past.extend_from_slice(&history[history.len() - take..]);
        Self { past, current }
    }

    pub fn len(&self) -> usize {
        self.past.len()
    }

    pub fn is_empty(&self) -> bool {
        self.past.is_empty()
    }

    pub fn past(&self) -> &[HistoryEntry] {
        &self.past
    }

    pub fn current(&self) -> Situation {
        self.current
    }

    pub fn view(&self) -> WindowView<'_> {
        WindowView {
            past: &self.past,
            current: self.current,
        }
    }

    /// Every window of length `m` over `(Y × S)^m × Y`.
    pub fn enumerate(m: usize) -> impl Iterator<Item = HistoryWindow> {
        (0..window_count(m)).map(move |idx| decode_window(idx, m))
    }
}

fn entry_code(e: HistoryEntry) -> usize {
    e.0.index() * 4 + e.1.index()
}

fn entry_from_code(code: usize) -> HistoryEntry {
    (Situation::ALL[code / 4], ChannelState::ALL[code % 4])
}

fn window_count(m: usize) -> usize {
    8usize.pow(m as u32) * 2
}

fn encode_window(view: WindowView<'_>) -> usize {
    let body = view.past.iter().fold(0, |acc, &e| acc * 8 + entry_code(e));
    body * 2 + view.current.index()
}

fn decode_window(mut idx: usize, m: usize) -> HistoryWindow {
    let current = Situation::ALL[idx % 2];
    idx /= 2;
    let mut past = vec![DEFAULT_ENTRY; m];
    for slot in past.iter_mut().rev() {
        *slot = entry_from_code(idx % 8);
        idx /= 8;
    }
    HistoryWindow { past, current }
}

/// Explicit lookup table over all windows of a fixed memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRule {
    memory: usize,
    probs: Vec<f64>,
}

impl TableRule {
    /// Largest memory accepted for tables (`2·8^m` entries).
    pub const MAX_MEMORY: usize = 6;

    pub fn from_fn(memory: usize, f: impl Fn(&HistoryWindow) -> f64) -> Result<Self> {
        if memory > Self::MAX_MEMORY {
            return Err(Error::InvalidParameter(format!(
                "table rules support memory up to {}, got {memory}",
                Self::MAX_MEMORY
            )));
        }
        let probs = HistoryWindow::enumerate(memory)
            .map(|w| check_probability("table entry", f(&w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { memory, probs })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    fn eval(&self, view: WindowView<'_>) -> f64 {
        self.probs[encode_window(view)]
    }

    /// Smallest memory `m'` such that the table only depends on the last
    /// `m'` slots, found by exhaustive comparison against the window with
    /// its oldest `m - m'` entries reset to the default.
    pub fn minimal_memory(&self) -> usize {
        'candidate: for shorter in 0..self.memory {
            let drop = self.memory - shorter;
            for (idx, &p) in self.probs.iter().enumerate() {
                let mut w = decode_window(idx, self.memory);
                for e in &mut w.past[..drop] {
                    *e = DEFAULT_ENTRY;
                }
                if self.probs[encode_window(w.view())] != p {
                    continue 'candidate;
                }
            }
            return shorter;
        }
        self.memory
    }
}

/// Which mission-aware protocol a rule implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionVariant {
    /// Critical → transmit; first normal slot after a mission → wait;
    /// otherwise `f_norm(s^{t-1})`.
    OnePeriod,
    /// Adds: success followed by failure → wait.
    TwoPeriod,
    /// Adds: `m` consecutive failures → wait.
    Bounded(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    Memoryless(f64),
    /// Plain one-period rule; it ignores situations.
    OnePeriod(OnePeriodRule),
    MissionAware {
        f_norm: OnePeriodRule,
        variant: MissionVariant,
    },
    Table(TableRule),
}

impl DecisionRule {
    /// Declared memory length of the rule.
    pub fn memory(&self) -> usize {
        match self {
            DecisionRule::Memoryless(_) => 0,
            DecisionRule::OnePeriod(_) => 1,
            DecisionRule::MissionAware { variant, .. } => match variant {
                MissionVariant::OnePeriod => 1,
                MissionVariant::TwoPeriod => 2,
                MissionVariant::Bounded(m) => *m,
            },
            DecisionRule::Table(t) => t.memory,
        }
    }

    /// Minimal equivalent memory. Tables with memory up to 3 are reduced
    /// exhaustively; everything else reports its declared memory.
    pub fn complexity(&self) -> usize {
        match self {
            DecisionRule::Table(t) if t.memory <= 3 => t.minimal_memory(),
            other => other.memory(),
        }
    }

    /// Transmission probability for a window whose length equals
    /// [`Self::memory`]. Callers must guarantee the length.
    pub fn eval_view(&self, w: WindowView<'_>) -> f64 {
        match self {
            DecisionRule::Memoryless(p) => *p,
            DecisionRule::OnePeriod(r) => r.prob(w.last_state()),
            DecisionRule::MissionAware { f_norm, variant } => {
                if w.current == Situation::Critical {
                    return 1.0;
                }
                if w.previous_situation() == Situation::Critical {
                    return 0.0;
                }
                let states = || w.past.iter().map(|e| e.1);
                if matches!(variant, MissionVariant::TwoPeriod | MissionVariant::Bounded(_)) {
                    let n = w.past.len();
                    if n >= 2 && w.past[n - 2].1 == ChannelState::Success && w.past[n - 1].1 == ChannelState::Failure {
                        return 0.0;
                    }
                }
                if let MissionVariant::Bounded(_) = variant {
                    if states().all(|s| s == ChannelState::Failure) {
                        return 0.0;
                    }
                }
                f_norm.prob(w.last_state())
            }
            DecisionRule::Table(t) => t.eval(w),
        }
    }

    pub fn eval(&self, window: &HistoryWindow) -> Result<f64> {
        if window.len() != self.memory() {
            return Err(Error::WindowLength {
                expected: self.memory(),
                actual: window.len(),
            });
        }
        Ok(self.eval_view(window.view()))
    }

    /// The rule restricted to the normal phase, when that restriction only
    /// depends on the previous channel state.
    ///
    /// With `f_norm(busy) = 0` a success is never followed by a failure of
    /// the same user in the normal phase, so Protocol 2 reduces to `f_norm`.
    /// Protocol 3's failure counter does fire there and has no such form.
    pub fn normal_one_period(&self) -> Option<OnePeriodRule> {
        match self {
            DecisionRule::Memoryless(p) => Some(OnePeriodRule {
                p_idle: *p,
                p_busy: *p,
                p_success: *p,
                p_failure: *p,
            }),
            DecisionRule::OnePeriod(r) => Some(*r),
            DecisionRule::MissionAware {
                f_norm,
                variant: MissionVariant::OnePeriod | MissionVariant::TwoPeriod,
            } => Some(*f_norm),
            DecisionRule::MissionAware { .. } => None,
            DecisionRule::Table(t) => {
                let mut probs = [f64::NAN; 4];
                let m = t.memory;
                if m == 0 {
                    let p = t.eval(WindowView {
                        past: &[],
                        current: Situation::Normal,
                    });
                    return Some(OnePeriodRule {
                        p_idle: p,
                        p_busy: p,
                        p_success: p,
                        p_failure: p,
                    });
                }
                // Enumerate normal-only windows and check the output is a
                // function of the last state.
                let combos = 4usize.pow(m as u32);
                for code in 0..combos {
                    let mut c = code;
                    let mut past = vec![DEFAULT_ENTRY; m];
                    for e in past.iter_mut().rev() {
                        *e = (Situation::Normal, ChannelState::ALL[c % 4]);
                        c /= 4;
                    }
                    let last = past[m - 1].1.index();
                    let p = t.eval(WindowView {
                        past: &past,
                        current: Situation::Normal,
                    });
                    if probs[last].is_nan() {
                        probs[last] = p;
                    } else if probs[last] != p {
                        return None;
                    }
                }
                Some(OnePeriodRule {
                    p_idle: probs[0],
                    p_busy: probs[1],
                    p_success: probs[2],
                    p_failure: probs[3],
                })
            }
        }
    }

    /// Checks that a user following this rule captures the channel once it
    /// is critical: critical users always transmit and normal users never
    /// transmit right after observing a busy channel.
    pub fn check_capture(&self) -> Result<()> {
        match self {
            DecisionRule::MissionAware { f_norm, .. } => {
                if f_norm.p_busy != 0.0 {
                    return Err(Error::BusyNotZero(f_norm.p_busy));
                }
                Ok(())
            }
            DecisionRule::Table(t) => {
                for w in HistoryWindow::enumerate(t.memory) {
                    let p = t.eval(w.view());
                    let last = w.past.last().map(|e| e.1);
                    if w.current == Situation::Critical && p != 1.0 {
                        return Err(Error::CaptureNotGuaranteed(format!(
                            "critical window {w:?} transmits with probability {p}"
                        )));
                    }
                    if w.current == Situation::Normal && last == Some(ChannelState::Busy) && p != 0.0 {
                        return Err(Error::BusyNotZero(p));
                    }
                }
                if t.memory == 0 {
                    return Err(Error::CaptureNotGuaranteed(
                        "a memoryless table cannot react to a busy channel".into(),
                    ));
                }
                Ok(())
            }
            DecisionRule::Memoryless(_) | DecisionRule::OnePeriod(_) => Err(Error::CaptureNotGuaranteed(
                "rule does not distinguish critical situations".into(),
            )),
        }
    }
}

/// A profile of stationary finite-memory decision rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    rules: Vec<DecisionRule>,
    symmetric: bool,
}

impl Protocol {
    pub fn symmetric(rule: DecisionRule) -> Self {
        Self {
            rules: vec![rule],
            symmetric: true,
        }
    }

    /// One rule per user; the user count is `rules.len()`.
    pub fn per_user(rules: Vec<DecisionRule>) -> Result<Self> {
        check_users(rules.len())?;
        Ok(Self {
            rules,
            symmetric: false,
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of users fixed by the protocol, if it is asymmetric.
    pub fn fixed_users(&self) -> Option<usize> {
        (!self.symmetric).then_some(self.rules.len())
    }

    pub fn check_users(&self, users: usize) -> Result<()> {
        check_users(users)?;
        match self.fixed_users() {
            Some(n) if n != users => Err(Error::InvalidParameter(format!(
                "protocol defines {n} users, asked for {users}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn rule(&self, user: usize) -> Result<&DecisionRule> {
        if self.symmetric {
            Ok(&self.rules[0])
        } else {
            self.rules.get(user).ok_or(Error::UserOutOfRange {
                user,
                users: self.rules.len(),
            })
        }
    }

    /// Rule lookup for simulation loops where the index is known valid.
    pub(crate) fn rule_unchecked(&self, user: usize) -> &DecisionRule {
        if self.symmetric {
            &self.rules[0]
        } else {
            &self.rules[user]
        }
    }

    pub fn rules(&self) -> &[DecisionRule] {
        &self.rules
    }

    pub fn memory(&self, user: usize) -> Result<usize> {
        Ok(self.rule(user)?.memory())
    }

    pub fn max_memory(&self) -> usize {
        self.rules.iter().map(DecisionRule::memory).max().unwrap_or(0)
    }

    /// `m*`: the largest minimal memory over users.
    pub fn complexity(&self) -> usize {
        self.rules.iter().map(DecisionRule::complexity).max().unwrap_or(0)
    }

    /// Normal-phase one-period rules, one per user (or one if symmetric).
    pub fn normal_one_period(&self) -> Option<Vec<OnePeriodRule>> {
        self.rules.iter().map(DecisionRule::normal_one_period).collect()
    }

    pub fn check_capture(&self) -> Result<()> {
        self.rules.iter().try_for_each(DecisionRule::check_capture)
    }

    /// `f_norm` of a symmetric mission-aware protocol.
    pub fn mission_f_norm(&self) -> Option<OnePeriodRule> {
        match (self.symmetric, &self.rules[0]) {
            (true, DecisionRule::MissionAware { f_norm, .. }) => Some(*f_norm),
            _ => None,
        }
    }
}

/// Transmission probability of `user` for the given window.
pub fn eval_rule(protocol: &Protocol, user: usize, window: &HistoryWindow) -> Result<f64> {
    protocol.rule(user)?.eval(window)
}

pub fn rule_memoryless(p: f64) -> Result<Protocol> {
    Ok(Protocol::symmetric(DecisionRule::Memoryless(check_probability(
        "p", p,
    )?)))
}

pub fn rule_alternating() -> OnePeriodRule {
    OnePeriodRule::alternating()
}

pub fn rule_tilde(users: usize, theta: f64) -> Result<OnePeriodRule> {
    OnePeriodRule::tilde(users, theta)
}

pub fn rule_two_state(users: usize, eta: f64) -> Result<OnePeriodRule> {
    OnePeriodRule::two_state(users, eta)
}

/// Symmetric protocol where everybody follows `rule` regardless of situation.
pub fn one_period_protocol(rule: OnePeriodRule) -> Protocol {
    Protocol::symmetric(DecisionRule::OnePeriod(rule))
}

fn mission_protocol(f_norm: OnePeriodRule, variant: MissionVariant) -> Result<Protocol> {
    if f_norm.p_busy != 0.0 {
        return Err(Error::BusyNotZero(f_norm.p_busy));
    }
    Ok(Protocol::symmetric(DecisionRule::MissionAware { f_norm, variant }))
}

pub fn protocol1(f_norm: OnePeriodRule) -> Result<Protocol> {
    mission_protocol(f_norm, MissionVariant::OnePeriod)
}

pub fn protocol2(f_norm: OnePeriodRule) -> Result<Protocol> {
    mission_protocol(f_norm, MissionVariant::TwoPeriod)
}

pub fn protocol3(f_norm: OnePeriodRule, m: usize) -> Result<Protocol> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "protocol 3 needs memory m >= 2, got {m}"
        )));
    }
    mission_protocol(f_norm, MissionVariant::Bounded(m))
}

pub fn complexity(protocol: &Protocol) -> usize {
    protocol.complexity()
}

/// Distribution of the number of packets in a mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MissionLength {
    Fixed {
        packets: u32,
    },
    /// Geometric on `{1, 2, ...}` with the given success probability.
    Geometric {
        success: f64,
    },
    Empirical {
        values: Vec<u32>,
        weights: Vec<f64>,
    },
}

impl MissionLength {
    pub fn validate(&self) -> Result<()> {
        match self {
            MissionLength::Fixed { packets } if *packets == 0 => {
                Err(Error::InvalidParameter("mission length must be positive".into()))
            }
            MissionLength::Fixed { .. } => Ok(()),
            MissionLength::Geometric { success } => {
                check_probability("geometric success", *success)?;
                if *success == 0.0 {
                    return Err(Error::InvalidParameter(
                        "geometric success probability must be positive".into(),
                    ));
                }
                Ok(())
            }
            MissionLength::Empirical { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::InvalidParameter(
                        "empirical mission length needs matching non-empty values and weights".into(),
                    ));
                }
                if values.contains(&0) {
                    return Err(Error::InvalidParameter("mission length must be positive".into()));
                }
                WeightedIndex::new(weights)
                    .map_err(|e| Error::InvalidParameter(format!("mission length weights: {e}")))?;
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            MissionLength::Fixed { packets } => *packets,
            MissionLength::Geometric { success } => {
                let failures = Geometric::new(*success)
                    .expect("validated geometric parameter")
                    .sample(rng);
                u32::try_from(failures.saturating_add(1)).unwrap_or(u32::MAX)
            }
            MissionLength::Empirical { values, weights } => {
                let idx = WeightedIndex::new(weights).expect("validated weights").sample(rng);
                values[idx]
            }
        }
    }
}

/// When a pending mission is allowed to start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalTrigger {
    #[default]
    AnySlot,
    /// Only right after a collision slot; stresses worst-case delays.
    AfterCollision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionModel {
    pub length: MissionLength,
    /// Per-slot probability that a mission arrives to a uniformly chosen
    /// user once arrivals are allowed.
    pub arrival_probability: f64,
    #[serde(default)]
    pub trigger: ArrivalTrigger,
    /// Allow several missions at once (concurrent modes only).
    #[serde(default)]
    pub concurrent: bool,
}

impl Default for MissionModel {
    fn default() -> Self {
        Self {
            length: MissionLength::Fixed { packets: 20 },
            arrival_probability: 1.0,
            trigger: ArrivalTrigger::AnySlot,
            concurrent: false,
        }
    }
}

impl MissionModel {
    pub fn validate(&self) -> Result<()> {
        self.length.validate()?;
        check_probability("arrival probability", self.arrival_probability)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ChannelState::*;
    use Situation::*;

    fn f_tilde() -> OnePeriodRule {
        OnePeriodRule::tilde(10, 0.1).unwrap()
    }

    #[test]
    fn observation_matches_actions() {
        assert_eq!(ChannelState::observe(true, 1), Success);
        assert_eq!(ChannelState::observe(true, 3), Failure);
        assert_eq!(ChannelState::observe(false, 0), Idle);
        assert_eq!(ChannelState::observe(false, 2), Busy);
        for s in ChannelState::ALL {
            let transmitted = s.action() == Action::Transmit;
            assert_eq!(transmitted, matches!(s, Success | Failure));
        }
    }

    #[test]
    fn named_rules() {
        let t = rule_tilde(10, 0.1).unwrap();
        assert_eq!(t.as_array(), [0.1, 0.0, 0.9, 0.5]);
        assert_eq!(rule_tilde(10, 0.0).unwrap().p_success, 1.0);
        assert_eq!(rule_tilde(10, 1.0).unwrap().p_success, 0.0);
        assert!(rule_tilde(1, 0.1).is_err());
        assert!(rule_tilde(5, 1.5).is_err());

        let a = rule_alternating();
        assert_eq!(a.p_busy, 1.0);
        assert_eq!(a.p_success, 0.0);
        assert_eq!(a.fairness(2), 1.0);

        let two = rule_two_state(4, 1.0).unwrap();
        assert_eq!([two.p_idle, two.p_busy, two.p_failure], [1.0; 3]);
        assert!(rule_two_state(4, 0.5).is_err());

        assert!(rule_memoryless(-0.1).is_err());
        assert_eq!(rule_memoryless(0.3).unwrap().complexity(), 0);
    }

    #[test]
    fn protocol1_table() {
        let p1 = protocol1(f_tilde()).unwrap();
        let critical = HistoryWindow::new(vec![(Normal, Busy)], Critical);
        assert_eq!(eval_rule(&p1, 0, &critical).unwrap(), 1.0);
        let released = HistoryWindow::new(vec![(Critical, Success)], Normal);
        assert_eq!(eval_rule(&p1, 3, &released).unwrap(), 0.0);
        let after_busy = HistoryWindow::normal(&[Busy]);
        assert_eq!(eval_rule(&p1, 0, &after_busy).unwrap(), 0.0);
        assert_eq!(eval_rule(&p1, 0, &HistoryWindow::normal(&[Success])).unwrap(), 0.9);
        assert_eq!(p1.complexity(), 1);
    }

    #[test]
    fn protocol2_and_3_backoff() {
        let p2 = protocol2(f_tilde()).unwrap();
        assert_eq!(p2.complexity(), 2);
        let w = HistoryWindow::normal(&[Success, Failure]);
        assert_eq!(eval_rule(&p2, 0, &w).unwrap(), 0.0);
        assert_eq!(
            eval_rule(&p2, 0, &HistoryWindow::normal(&[Idle, Failure])).unwrap(),
            0.5
        );

        let p3 = protocol3(f_tilde(), 5).unwrap();
        assert_eq!(p3.complexity(), 5);
        assert_eq!(eval_rule(&p3, 0, &HistoryWindow::normal(&[Failure; 5])).unwrap(), 0.0);
        let four = HistoryWindow::normal(&[Idle, Failure, Failure, Failure, Failure]);
        assert_eq!(eval_rule(&p3, 0, &four).unwrap(), 0.5);
        let mut tail = vec![Idle, Idle, Idle, Success, Failure];
        assert_eq!(eval_rule(&p3, 0, &HistoryWindow::normal(&tail)).unwrap(), 0.0);
        tail[4] = Busy;
        assert_eq!(eval_rule(&p3, 0, &HistoryWindow::normal(&tail)).unwrap(), 0.0);
        assert!(protocol3(f_tilde(), 1).is_err());
    }

    #[test]
    fn busy_must_be_zero() {
        let r = OnePeriodRule::new(0.1, 0.01, 0.9, 0.5).unwrap();
        assert!(matches!(protocol1(r), Err(Error::BusyNotZero(_))));
        assert!(matches!(protocol2(r), Err(Error::BusyNotZero(_))));
        assert!(matches!(protocol3(r, 4), Err(Error::BusyNotZero(_))));
    }

    #[test]
    fn window_length_is_checked() {
        let p2 = protocol2(f_tilde()).unwrap();
        let short = HistoryWindow::normal(&[Idle]);
        assert!(matches!(
            eval_rule(&p2, 0, &short),
            Err(Error::WindowLength { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn default_prehistory() {
        let w = HistoryWindow::from_history(&[(Critical, Success)], Normal, 3);
        assert_eq!(w.past(), &[DEFAULT_ENTRY, DEFAULT_ENTRY, (Critical, Success)]);
        let w = HistoryWindow::from_history(&[(Normal, Busy); 5], Normal, 2);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn table_complexity_reduction() {
        // Depends only on the most recent slot.
        let t = TableRule::from_fn(2, |w| if w.past()[1].1 == Success { 0.9 } else { 0.2 }).unwrap();
        assert_eq!(DecisionRule::Table(t).complexity(), 1);
        // Depends on the oldest slot too.
        let t = TableRule::from_fn(2, |w| if w.past()[0].1 == Success { 0.9 } else { 0.2 }).unwrap();
        assert_eq!(DecisionRule::Table(t).complexity(), 2);
        // Constant.
        let t = TableRule::from_fn(3, |_| 0.25).unwrap();
        assert_eq!(DecisionRule::Table(t).complexity(), 0);
        // Protocol 2 written out as a table keeps memory 2.
        let p2 = DecisionRule::MissionAware {
            f_norm: f_tilde(),
            variant: MissionVariant::TwoPeriod,
        };
        let t = TableRule::from_fn(2, |w| p2.eval(w).unwrap()).unwrap();
        assert_eq!(DecisionRule::Table(t).complexity(), 2);
        // Protocol 1 padded to three slots reduces back to one.
        let p1 = DecisionRule::MissionAware {
            f_norm: f_tilde(),
            variant: MissionVariant::OnePeriod,
        };
        let t = TableRule::from_fn(3, |w| {
            p1.eval(&HistoryWindow::new(w.past()[2..].to_vec(), w.current()))
                .unwrap()
        })
        .unwrap();
        let rule = DecisionRule::Table(t);
        assert_eq!(rule.complexity(), 1);
        assert_eq!(rule.normal_one_period(), Some(f_tilde()));
        assert!(rule.check_capture().is_ok());
    }

    #[test]
    fn window_codec_roundtrip() {
        for m in 0..3 {
            for (idx, w) in HistoryWindow::enumerate(m).enumerate() {
                assert_eq!(encode_window(w.view()), idx);
            }
        }
    }

    #[test]
    fn probabilities_in_unit_interval_for_all_windows() {
        let rules = [
            DecisionRule::OnePeriod(rule_alternating()),
            DecisionRule::MissionAware {
                f_norm: f_tilde(),
                variant: MissionVariant::OnePeriod,
            },
            DecisionRule::MissionAware {
                f_norm: f_tilde(),
                variant: MissionVariant::TwoPeriod,
            },
            DecisionRule::MissionAware {
                f_norm: f_tilde(),
                variant: MissionVariant::Bounded(2),
            },
        ];
        for rule in &rules {
            for w in HistoryWindow::enumerate(rule.memory()) {
                let p = rule.eval(&w).unwrap();
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn mission_rules_capture_and_release() {
        let f = f_tilde();
        for variant in [
            MissionVariant::OnePeriod,
            MissionVariant::TwoPeriod,
            MissionVariant::Bounded(2),
        ] {
            let rule = DecisionRule::MissionAware { f_norm: f, variant };
            for w in HistoryWindow::enumerate(rule.memory()) {
                let p = rule.eval(&w).unwrap();
                if w.current() == Critical {
                    assert_eq!(p, 1.0);
                } else if w.past().last().unwrap().0 == Critical {
                    assert_eq!(p, 0.0);
                }
                // Normal-only windows without back-off patterns follow f_norm.
                let all_normal = w.current() == Normal && w.past().iter().all(|e| e.0 == Normal);
                let states: Vec<_> = w.past().iter().map(|e| e.1).collect();
                let backoff = match variant {
                    MissionVariant::OnePeriod => false,
                    MissionVariant::TwoPeriod => states == [Success, Failure],
                    MissionVariant::Bounded(_) => states == [Success, Failure] || states.iter().all(|&s| s == Failure),
                };
                if all_normal && !backoff {
                    assert_eq!(p, f.prob(*states.last().unwrap()));
                }
            }
        }
    }

    #[test]
    fn capture_admissibility() {
        assert!(protocol2(f_tilde()).unwrap().check_capture().is_ok());
        assert!(one_period_protocol(f_tilde()).check_capture().is_err());
        let bad = TableRule::from_fn(1, |w| if w.current() == Critical { 1.0 } else { 0.1 }).unwrap();
        assert!(matches!(
            DecisionRule::Table(bad).check_capture(),
            Err(Error::BusyNotZero(_))
        ));
    }

    #[test]
    fn asymmetric_protocols() {
        let p = Protocol::per_user(vec![
            DecisionRule::Memoryless(0.2),
            DecisionRule::OnePeriod(rule_alternating()),
        ])
        .unwrap();
        assert_eq!(p.fixed_users(), Some(2));
        assert_eq!(p.complexity(), 1);
        assert!(p.rule(2).is_err());
        assert!(p.check_users(3).is_err());
        assert!(Protocol::per_user(vec![DecisionRule::Memoryless(0.2)]).is_err());
    }

    #[test]
    fn mission_lengths() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = MissionLength::Geometric { success: 0.5 };
        g.validate().unwrap();
        assert!((0..1000).all(|_| g.sample(&mut rng) >= 1));
        let e = MissionLength::Empirical {
            values: vec![3, 7],
            weights: vec![0.0, 1.0],
        };
        e.validate().unwrap();
        assert_eq!(e.sample(&mut rng), 7);
        assert!(MissionLength::Fixed { packets: 0 }.validate().is_err());
        assert!(MissionLength::Empirical {
            values: vec![1],
            weights: vec![]
        }
        .validate()
        .is_err());
    }
}
