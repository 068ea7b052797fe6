//! Published tables and figure series regenerated as CSV.
//!
//! Table targets carry the printed values next to the computed ones, a
//! `delta_*` column (computed minus printed) and, where the optimizer can
//! exceed a printed optimum, a `beats_published` flag set when the gain is
//! larger than [`BEATS_MARGIN`].

use rayon::prelude::*;

use crate::closed_form::{delay_bound_protocol1, delay_bound_protocol2, memoryless_metrics, prop2_lower_bound};
use crate::dcf::{dcf_throughput, derive_durations, eb_probability, DcfParameters, SlotDurations};
use crate::error::{Error, Result};
use crate::markov::throughput;
use crate::optimizer::{best_memoryless, frontier_with, solve, Objective, OptProblem};
use crate::protocol::{protocol1, protocol2, OnePeriodRule};
use crate::report::{fmt_fixed, fmt_sig, CsvTable};
use crate::simulator::{run_missions, SimConfig};

pub const TABLE_USERS: [usize; 6] = [3, 4, 5, 10, 15, 20];
pub const BEATS_MARGIN: f64 = 5e-3;
pub const THETA: f64 = 0.1;

const TABLE1: [[f64; 4]; 6] = [
    [0.338, 0.034, 0.964, 0.493],
    [0.255, 0.025, 0.971, 0.490],
    [0.205, 0.020, 0.975, 0.488],
    [0.103, 0.010, 0.982, 0.485],
    [0.069, 0.006, 0.984, 0.485],
    [0.052, 0.005, 0.985, 0.484],
];

/// Columns f_norm1, f̃, f_two, f_one.
const TABLE2: [[f64; 4]; 6] = [
    [0.8275, 0.8199, 0.5808, 0.4444],
    [0.8235, 0.8139, 0.5541, 0.4219],
    [0.8214, 0.8104, 0.5391, 0.4096],
    [0.8175, 0.8038, 0.5116, 0.3874],
    [0.8163, 0.8017, 0.5030, 0.3806],
    [0.8157, 0.8007, 0.4988, 0.3774],
];

const TABLE4: [[f64; 4]; 6] = [
    [0.077, 0.0, 0.9, 0.136],
    [0.056, 0.0, 0.9, 0.146],
    [0.043, 0.0, 0.9, 0.143],
    [0.021, 0.0, 0.9, 0.151],
    [0.014, 0.0, 0.9, 0.153],
    [0.010, 0.0, 0.9, 0.156],
];

const STATES: [&str; 4] = ["idle", "busy", "success", "failure"];

/// Fairness grid for the trade-off curves. Dense near both ends, where the
/// curves bend.
pub const FRONTIER_THETAS: [f64; 26] = [
    0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9,
    0.93, 0.95, 0.9613, 0.97, 0.99, 1.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Table1,
    Table2,
    Table4,
    Fig1,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Target {
    pub const ALL: [Target; 9] = [
        Target::Table1,
        Target::Table2,
        Target::Table4,
        Target::Fig1,
        Target::Fig4,
        Target::Fig5,
        Target::Fig6,
        Target::Fig7,
        Target::Fig8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Table4 => "table4",
            Target::Fig1 => "fig1",
            Target::Fig4 => "fig4",
            Target::Fig5 => "fig5",
            Target::Fig6 => "fig6",
            Target::Fig7 => "fig7",
            Target::Fig8 => "fig8",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown target `{s}`")))
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Simulation effort for the targets that simulate (only `fig6`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceOptions {
    pub seed: u64,
    pub missions: usize,
    pub replications: usize,
    pub dcf: DcfParameters,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            missions: 5_000,
            replications: 4,
            dcf: DcfParameters::default(),
        }
    }
}

pub fn reproduce(target: Target, opts: &ReproduceOptions) -> Result<CsvTable> {
    let d = derive_durations(&opts.dcf)?;
    match target {
        Target::Table1 => rule_table(
            "f_norm1",
            &TABLE1,
            |n| OptProblem::pnorm1(n, THETA),
            Objective::SlottedAloha,
        ),
        Target::Table4 => rule_table(
            "f_norm2",
            &TABLE4,
            |n| OptProblem::pnorm2(n, THETA, d),
            Objective::Dcf(d),
        ),
        Target::Table2 => table2(),
        Target::Fig1 => fig1(),
        Target::Fig4 => fig4(d),
        Target::Fig5 => fig5(d),
        Target::Fig6 => fig6(opts),
        Target::Fig7 => fig7(),
        Target::Fig8 => fig8(),
    }
}

fn rule_table(
    name: &str,
    printed: &[[f64; 4]; 6],
    problem: impl Fn(usize) -> OptProblem + Sync,
    objective: Objective,
) -> Result<CsvTable> {
    let mut header = vec!["N".to_string()];
    header.extend(STATES.iter().map(|s| format!("{name}({s})")));
    header.push("throughput".into());
    header.extend(STATES.iter().map(|s| format!("published_{name}({s})")));
    header.extend(STATES.iter().map(|s| format!("delta_{name}({s})")));
    header.push("max_abs_delta".into());
    header.push("constraint_residual".into());
    let mut table = CsvTable::new(header);
    let solved: Vec<_> = TABLE_USERS
        .par_iter()
        .map(|&n| solve(&problem(n)))
        .collect::<Result<_>>()?;
    for ((&n, r), want) in TABLE_USERS.iter().zip(&solved).zip(printed) {
        let got = r.rule.as_array();
        let mut row = vec![n.to_string()];
        row.extend(got.iter().map(|&v| fmt_sig(v)));
        row.push(fmt_sig(objective.evaluate(&r.rule, n)?));
        row.extend(want.iter().map(|&v| fmt_fixed(v, 3)));
        let deltas: Vec<f64> = got.iter().zip(want).map(|(g, p)| g - p).collect();
        row.extend(deltas.iter().map(|&v| fmt_sig(v)));
        row.push(fmt_sig(deltas.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        row.push(fmt_sig(r.constraint_residual(n, THETA)));
        table.push(row);
    }
    Ok(table)
}

fn table2() -> Result<CsvTable> {
    let cols = ["f_norm1", "f_tilde", "f_two", "f_one"];
    let mut header = vec!["N".to_string()];
    header.extend(cols.iter().map(|c| c.to_string()));
    header.extend(cols.iter().map(|c| format!("published_{c}")));
    header.extend(cols.iter().map(|c| format!("delta_{c}")));
    header.push("prop2_closed_form".into());
    header.push("beats_published".into());
    let mut table = CsvTable::new(header);
    let rows: Vec<(usize, [f64; 4], f64)> = TABLE_USERS
        .par_iter()
        .map(|&n| {
            let norm1 = solve(&OptProblem::pnorm1(n, THETA))?.objective;
            let tilde = throughput(&OnePeriodRule::tilde(n, THETA)?, n)?;
            let two = throughput(&OnePeriodRule::two_state(n, 1.0 / THETA)?, n)?;
            let one = throughput(&OnePeriodRule::uniform(1.0 / n as f64)?, n)?;
            Ok((n, [norm1, tilde, two, one], prop2_lower_bound(n, THETA)?))
        })
        .collect::<Result<_>>()?;
    for ((n, got, closed), want) in rows.into_iter().zip(&TABLE2) {
        let mut row = vec![n.to_string()];
        row.extend(got.iter().map(|&v| fmt_sig(v)));
        row.extend(want.iter().map(|&v| fmt_fixed(v, 4)));
        row.extend(got.iter().zip(want).map(|(g, p)| fmt_sig(g - p)));
        row.push(fmt_sig(closed));
        row.push((got[0] - want[0] > BEATS_MARGIN).to_string());
        table.push(row);
    }
    Ok(table)
}

/// Memoryless operating points `(θ(p), τ(p))` for `p` on a 0.01 grid.
fn memoryless_curve(users: usize, objective: Objective) -> Result<Vec<(f64, f64)>> {
    (1..100)
        .map(|k| {
            let p = k as f64 / 100.0;
            let (_, theta) = memoryless_metrics(p, users);
            Ok((theta, objective.evaluate(&OnePeriodRule::uniform(p)?, users)?))
        })
        .collect()
}

fn series_table(rows: Vec<(&str, f64, f64)>) -> CsvTable {
    let mut table = CsvTable::new(["series", "theta", "throughput"]);
    for (s, theta, tau) in rows {
        table.push(vec![s.to_string(), fmt_sig(theta), fmt_sig(tau)]);
    }
    table
}

pub const FIGURE_USERS: usize = 10;

fn fig1() -> Result<CsvTable> {
    let n = FIGURE_USERS;
    let front = frontier_with(&FRONTIER_THETAS, |t| OptProblem::pnorm1(n, t))?;
    let mut rows = Vec::new();
    for p in &front {
        rows.push(("f_norm1", p.theta, p.throughput));
    }
    for &t in &FRONTIER_THETAS {
        rows.push(("f_tilde", t, throughput(&OnePeriodRule::tilde(n, t)?, n)?));
    }
    for (t, tau) in memoryless_curve(n, Objective::SlottedAloha)? {
        rows.push(("no_memory", t, tau));
    }
    Ok(series_table(rows))
}

fn fig4(d: SlotDurations) -> Result<CsvTable> {
    let mut table = CsvTable::new(["N", "f_norm2", "f_one2", "f_DCF", "p_one2", "p_DCF"]);
    let rows: Vec<_> = (3..=20usize)
        .into_par_iter()
        .map(|n| {
            let norm2 = solve(&OptProblem::pnorm2(n, THETA, d))?.objective;
            let (p_one, one) = best_memoryless(n, Objective::Dcf(d))?;
            let p_eb = eb_probability(16, 1024, n)?;
            let eb = dcf_throughput(&OnePeriodRule::uniform(p_eb)?, n, &d)?;
            Ok([n as f64, norm2, one, eb, p_one, p_eb])
        })
        .collect::<Result<_>>()?;
    for r in rows {
        let mut row = vec![(r[0] as usize).to_string()];
        row.extend(r[1..].iter().map(|&v| fmt_sig(v)));
        table.push(row);
    }
    Ok(table)
}

fn fig5(d: SlotDurations) -> Result<CsvTable> {
    let n = FIGURE_USERS;
    let front = frontier_with(&FRONTIER_THETAS, |t| OptProblem::pnorm2(n, t, d))?;
    let mut rows: Vec<(&str, f64, f64)> = front.iter().map(|p| ("f_norm2", p.theta, p.throughput)).collect();
    for (t, tau) in memoryless_curve(n, Objective::Dcf(d))? {
        rows.push(("no_memory", t, tau));
    }
    let p_eb = eb_probability(16, 1024, n)?;
    let (_, theta_eb) = memoryless_metrics(p_eb, n);
    rows.push((
        "f_DCF",
        theta_eb,
        dcf_throughput(&OnePeriodRule::uniform(p_eb)?, n, &d)?,
    ));
    Ok(series_table(rows))
}

/// `f_norm` for the mission protocols: the slotted optimum with `p_busy = 0`.
pub fn mission_f_norm(users: usize, theta: f64) -> Result<OnePeriodRule> {
    Ok(solve(&OptProblem::pnorm1(users, theta).with_busy_zero(true))?.rule)
}

fn fig6(opts: &ReproduceOptions) -> Result<CsvTable> {
    let mut table = CsvTable::new([
        "N",
        "bound_P1",
        "bound_P2",
        "sim_P1",
        "sim_P2",
        "sim_P1_se",
        "sim_P2_se",
        "missions",
    ]);
    for n in 3..=20usize {
        let f = mission_f_norm(n, THETA)?;
        let b1 = delay_bound_protocol1(&f, n)?.total;
        let b2 = delay_bound_protocol2(&f, n)?.total;
        let mut sims = Vec::new();
        for protocol in [protocol1(f)?, protocol2(f)?] {
            let mut cfg = SimConfig::new(protocol, n);
            cfg.seed = opts.seed;
            cfg.mission_count = opts.missions;
            cfg.replications = opts.replications;
            sims.push(run_missions(&cfg)?.delay);
        }
        table.push(vec![
            n.to_string(),
            fmt_sig(b1),
            fmt_sig(b2),
            fmt_sig(sims[0].mean),
            fmt_sig(sims[1].mean),
            fmt_sig(sims[0].std_err),
            fmt_sig(sims[1].std_err),
            sims[0].count.to_string(),
        ]);
    }
    Ok(table)
}

fn fig7() -> Result<CsvTable> {
    let n = FIGURE_USERS;
    let thetas: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    let mut table = CsvTable::new([
        "theta",
        "bound_P1",
        "bound_P2",
        "throughput",
        "f_norm(idle)",
        "f_norm(failure)",
    ]);
    let rows: Vec<_> = thetas
        .par_iter()
        .map(|&t| {
            let f = mission_f_norm(n, t)?;
            Ok([
                t,
                delay_bound_protocol1(&f, n)?.total,
                delay_bound_protocol2(&f, n)?.total,
                throughput(&f, n)?,
                f.p_idle,
                f.p_failure,
            ])
        })
        .collect::<Result<_>>()?;
    for r in rows {
        table.push(r.iter().map(|&v| fmt_sig(v)).collect());
    }
    Ok(table)
}

fn fig8() -> Result<CsvTable> {
    let n = FIGURE_USERS;
    let mut table = CsvTable::new(["p_idle", "p_failure", "throughput", "bound_P1", "bound_P2"]);
    for i in 1..=11 {
        for k in 0..=10 {
            let (pi, pf) = (i as f64 / 100.0, k as f64 / 20.0);
            let f = OnePeriodRule::new(pi, 0.0, 1.0 - THETA, pf)?;
            table.push(vec![
                fmt_sig(pi),
                fmt_sig(pf),
                fmt_sig(throughput(&f, n)?),
                fmt_sig(delay_bound_protocol1(&f, n)?.total),
                fmt_sig(delay_bound_protocol2(&f, n)?.total),
            ]);
        }
    }
    Ok(table)
}
