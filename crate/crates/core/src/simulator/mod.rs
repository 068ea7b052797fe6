//! Slot-level Monte Carlo simulation.
//!
//! Replications run in parallel, each with its own generator stream, and
//! are merged in replication order so results depend only on the seed.

mod concurrent;
mod engine;
mod missions;
mod normal;
mod stats;

pub use concurrent::{run_concurrent, ConcurrentReport, ConcurrentSettings, MissionRecord};
pub use engine::{arrival_rng, decision_rng, Engine, SlotRecord, RNG_NAME};
pub use missions::{
    exhaustive_capture_bound, run_missions, run_protocol3_cap, CapReport, ClassSummary, DelaySample, MissionReport,
    StartClass,
};
pub use normal::{run_normal, write_trace, NormalReport};
pub use stats::{Accumulator, RunTracker, Summary, Z99};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{MissionModel, Protocol};

/// How simultaneous missions are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concurrency {
    /// At most one mission at a time.
    #[default]
    Off,
    /// Missions served in arrival order; mission counts are public.
    Fcfs,
    /// Mission users split the channel; mission counts are public.
    Sharing,
    /// Two private missions coordinate by a two-slot collision signal.
    Handshake,
}

impl std::str::FromStr for Concurrency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "fcfs" => Ok(Self::Fcfs),
            "sharing" => Ok(Self::Sharing),
            "handshake" => Ok(Self::Handshake),
            other => Err(Error::InvalidParameter(format!("unknown concurrency mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub users: usize,
    /// Measured slots per replication (normal-phase runs).
    pub slots: u64,
    pub replications: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub missions: MissionModel,
    /// Missions per replication (mission runs).
    pub mission_count: usize,
    /// Normal slots between the end of one mission and the next arrival.
    pub mission_gap: u64,
    pub concurrency: Concurrency,
    pub warm_up: u64,
}

impl SimConfig {
    pub fn new(protocol: Protocol, users: usize) -> Self {
        Self {
            users,
            slots: 100_000,
            replications: 1,
            seed: 1,
            protocol,
            missions: MissionModel::default(),
            mission_count: 1000,
            mission_gap: 100,
            concurrency: Concurrency::Off,
            warm_up: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.check_users(self.users)?;
        self.missions.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.slots == 0 {
            return Err(Error::InvalidParameter("slots must be at least 1".into()));
        }
        Ok(())
    }
}
