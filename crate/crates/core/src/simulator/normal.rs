use std::io::Write;

use rayon::prelude::*;

use super::engine::{decision_rng, Engine};
use super::stats::{Accumulator, RunTracker};
use super::{Concurrency, SimConfig};
use crate::error::{Error, Result};
use crate::markov::MetricsReport;

const BATCHES: u64 = 20;

/// Normal-phase estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalReport {
    pub metrics: MetricsReport,
    /// Batch-means standard error of the total throughput.
    pub throughput_std_err: f64,
    /// Mean length of each user's consecutive-success runs (NaN if none).
    pub mean_run_length: Vec<f64>,
    pub measured_slots: u64,
    /// Slots whose observations disagreed with the actions (always 0).
    pub inconsistent_slots: u64,
}

struct Replica {
    successes: Vec<u64>,
    runs: RunTracker,
    batches: Vec<f64>,
    inconsistent: u64,
}

fn replicate(config: &SimConfig, replication: usize) -> Replica {
    let n = config.users;
    let mut engine = Engine::new(&config.protocol, n, decision_rng(config.seed, replication as u64));
    for _ in 0..config.warm_up {
        engine.step();
    }
    let mut successes = vec![0u64; n];
    let mut runs = RunTracker::new(n);
    let mut batches = Vec::with_capacity(BATCHES as usize);
    let batch_len = (config.slots / BATCHES).max(1);
    let mut batch_hits = 0u64;
    let mut batch_slots = 0u64;
    let mut inconsistent = 0;
    for _ in 0..config.slots {
        let rec = engine.step();
        inconsistent += (!rec.is_consistent()) as u64;
        let winner = rec.winner();
        if let Some(w) = winner {
            successes[w] += 1;
            batch_hits += 1;
        }
        runs.observe(winner);
        batch_slots += 1;
        if batch_slots == batch_len {
            batches.push(batch_hits as f64 / batch_len as f64);
            batch_hits = 0;
            batch_slots = 0;
        }
    }
    runs.finish();
    Replica {
        successes,
        runs,
        batches,
        inconsistent,
    }
}

/// Empirical throughput profile and fairness of the normal phase.
pub fn run_normal(config: &SimConfig) -> Result<NormalReport> {
    config.validate()?;
    if config.concurrency != Concurrency::Off {
        return Err(Error::InvalidParameter("normal-phase runs need concurrency off".into()));
    }
    let n = config.users;
    let replicas: Vec<Replica> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r))
        .collect();

    let total_slots = config.slots * config.replications as u64;
    let mut successes = vec![0u64; n];
    let mut runs = RunTracker::new(n);
    let mut batches = Accumulator::default();
    let mut inconsistent = 0;
    for r in &replicas {
        for u in 0..n {
            successes[u] += r.successes[u];
        }
        runs.merge(&r.runs);
        r.batches.iter().for_each(|b| batches.push(*b));
        inconsistent += r.inconsistent;
    }
    let per_user: Vec<f64> = successes.iter().map(|s| *s as f64 / total_slots as f64).collect();
    let mean_run_length = runs.mean_lengths();
    let fairness = runs.fairness();
    Ok(NormalReport {
        metrics: MetricsReport {
            total_throughput: per_user.iter().sum(),
            per_user_throughput: per_user,
            fairness,
            complexity: config.protocol.complexity(),
            delay: None,
        },
        throughput_std_err: batches.summary().std_err,
        mean_run_length,
        measured_slots: total_slots,
        inconsistent_slots: inconsistent,
    })
}

/// Writes the first `slots` slots of replication 0 as CSV, one row per slot.
pub fn write_trace<W: Write>(config: &SimConfig, slots: u64, out: W) -> Result<()> {
    config.validate()?;
    let mut engine = Engine::new(&config.protocol, config.users, decision_rng(config.seed, 0));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["slot", "transmitters", "actions", "states", "situations"])?;
    for _ in 0..slots {
        let rec = engine.step();
        let (a, s, y) = rec.codes();
        w.write_record([(rec.slot - 1).to_string(), rec.transmitters.to_string(), a, s, y])?;
    }
    w.flush()?;
    Ok(())
}
