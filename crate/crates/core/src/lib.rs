//! Memory-based slotted-Aloha MAC protocols for networks with occasional
//! critical missions.
//!
//! Users observe the channel outcome (idle, busy, success, failure) of recent
//! slots and decide to transmit with a probability that depends on that
//! window. The crate evaluates such decision rules exactly through Markov
//! chains, optimizes one-period rules, and simulates missions.

pub mod closed_form;
pub mod config;
pub mod dcf;
pub mod error;
pub mod markov;
pub mod optimizer;
pub mod protocol;
pub mod report;
pub mod reproduce;
pub mod simulator;

pub use error::{Error, Result};
pub use markov::{analyze, build_aggregate_chain, build_full_chain, AggregateChain, FullChain, MetricsReport};
pub use protocol::{
    complexity, one_period_protocol, protocol1, protocol2, protocol3, Action, ChannelState, DecisionRule,
    HistoryWindow, MissionLength, MissionModel, OnePeriodRule, Protocol, Situation,
};
