use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{
    Action, ChannelState, DecisionRule, HistoryEntry, Protocol, Situation, WindowView, DEFAULT_ENTRY,
};

/// Name of the generator, recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8";

const ARRIVAL_STREAM_OFFSET: u64 = 1 << 32;

/// Generator for the slot decisions of one replication.
pub fn decision_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Generator for mission arrivals and lengths of one replication.
pub fn arrival_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ARRIVAL_STREAM_OFFSET + replication);
    rng
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRecord {
    pub slot: u64,
    pub actions: Vec<Action>,
    pub states: Vec<ChannelState>,
    pub situations: Vec<Situation>,
    /// Number of transmitters, i.e. the aggregate class `A_k`.
    pub transmitters: usize,
}

impl SlotRecord {
    fn new(users: usize) -> Self {
        Self {
            slot: 0,
            actions: vec![Action::Wait; users],
            states: vec![ChannelState::Idle; users],
            situations: vec![Situation::Normal; users],
            transmitters: 0,
        }
    }

    /// The user that succeeded, if any.
    pub fn winner(&self) -> Option<usize> {
        if self.transmitters == 1 {
            self.actions.iter().position(|a| *a == Action::Transmit)
        } else {
            None
        }
    }

    /// Checks that observations agree with actions.
    pub fn is_consistent(&self) -> bool {
        let k = self.actions.iter().filter(|a| **a == Action::Transmit).count();
        k == self.transmitters
            && self
                .actions
                .iter()
                .zip(&self.states)
                .all(|(a, s)| *s == ChannelState::observe(*a == Action::Transmit, k))
    }

    /// Compact row: actions as `T`/`W`, states as `I`/`B`/`S`/`F`,
    /// situations as `N`/`C`.
    pub fn codes(&self) -> (String, String, String) {
        let actions = self.actions.iter().map(|a| a.symbol()).collect();
        let states = self
            .states
            .iter()
            .map(|s| match s {
                ChannelState::Idle => 'I',
                ChannelState::Busy => 'B',
                ChannelState::Success => 'S',
                ChannelState::Failure => 'F',
            })
            .collect();
        let situations = self
            .situations
            .iter()
            .map(|y| match y {
                Situation::Normal => 'N',
                Situation::Critical => 'C',
            })
            .collect();
        (actions, states, situations)
    }
}

/// Slot-by-slot state of all users.
///
/// Every slot draws exactly one uniform per user, in user order, whatever
/// the probabilities are, so two runs with the same seed stay aligned even
/// when their protocols differ.
pub struct Engine<'a> {
    protocol: &'a Protocol,
    users: usize,
    memory: Vec<usize>,
    depth: usize,
    history: Vec<Vec<HistoryEntry>>,
    situation: Vec<Situation>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
    record: SlotRecord,
}

impl<'a> Engine<'a> {
    /// `users` must be accepted by `protocol.check_users`.
    pub fn new(protocol: &'a Protocol, users: usize, rng: ChaCha8Rng) -> Self {
        let memory: Vec<usize> = (0..users).map(|u| protocol.rule_unchecked(u).memory()).collect();
        let depth = memory.iter().copied().max().unwrap_or(0).max(2);
        Self {
            protocol,
            users,
            memory,
            depth,
            history: vec![vec![DEFAULT_ENTRY; depth]; users],
            situation: vec![Situation::Normal; users],
            rng,
            probs: vec![0.0; users],
            record: SlotRecord::new(users),
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// Index of the next slot to be simulated.
    pub fn slot(&self) -> u64 {
        self.record.slot
    }

    pub fn situation(&self, user: usize) -> Situation {
        self.situation[user]
    }

    pub fn set_situation(&mut self, user: usize, y: Situation) {
        self.situation[user] = y;
    }

    /// The user's most recent (situation, state) entry.
    pub fn last(&self, user: usize) -> HistoryEntry {
        self.history[user][self.depth - 1]
    }

    /// The user's last `len` entries, oldest first (`len <= 2` always works).
    pub fn recent(&self, user: usize, len: usize) -> &[HistoryEntry] {
        &self.history[user][self.depth - len..]
    }

    pub fn rule(&self, user: usize) -> &DecisionRule {
        self.protocol.rule_unchecked(user)
    }

    /// Probability the protocol assigns to `user` in the coming slot.
    pub fn probability(&self, user: usize) -> f64 {
        let m = self.memory[user];
        self.rule(user).eval_view(WindowView {
            past: &self.history[user][self.depth - m..],
            current: self.situation[user],
        })
    }

    /// One slot under the protocol.
    pub fn step(&mut self) -> &SlotRecord {
        let mut probs = std::mem::take(&mut self.probs);
        for (u, p) in probs.iter_mut().enumerate() {
            *p = self.probability(u);
        }
        self.step_with(&probs);
        self.probs = probs;
        &self.record
    }

    /// One slot with caller-supplied transmission probabilities.
    pub fn step_with_probabilities(&mut self, probs: &[f64]) -> &SlotRecord {
        assert_eq!(probs.len(), self.users);
        self.step_with(probs);
        &self.record
    }

    fn step_with(&mut self, probs: &[f64]) {
        let mut k = 0;
        for (u, &p) in probs.iter().enumerate() {
            let draw: f64 = self.rng.random();
            let a = if draw < p { Action::Transmit } else { Action::Wait };
            k += (a == Action::Transmit) as usize;
            self.record.actions[u] = a;
        }
        self.record.transmitters = k;
        for u in 0..self.users {
            let s = ChannelState::observe(self.record.actions[u] == Action::Transmit, k);
            let y = self.situation[u];
            self.record.states[u] = s;
            self.record.situations[u] = y;
            let h = &mut self.history[u];
            h.rotate_left(1);
            h[self.depth - 1] = (y, s);
        }
        self.record.slot += 1;
    }

    /// Record of the slot just simulated.
    pub fn record(&self) -> &SlotRecord {
        &self.record
    }
}
