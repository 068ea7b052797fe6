//! Steady-state analysis of symmetric one-period rules (aggregated
//! transmitter-count chain) and of small general protocols (full outcome
//! chain over `A^N`).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{check_users, Error, Result};
use crate::protocol::{Action, ChannelState, OnePeriodRule, Protocol};

/// `Binomial(n, p)` probability mass function.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    let mut coeff = 1.0f64;
    (0..=n)
        .map(|k| {
            if k > 0 {
                coeff = coeff * (n - k + 1) as f64 / k as f64;
            }
            coeff * p.powi(k as i32) * q.powi((n - k) as i32)
        })
        .collect()
}

/// `n` choose `k` as a float.
pub fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn convolve(a: &[f64], b: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
}

/// Transition matrix over `A_0..A_N` for a symmetric one-period rule.
///
/// From `A_0` every user transmits with `p_idle`; from `A_1` the successful
/// user uses `p_success` and the others `p_busy`; from `A_k`, `k >= 2`, the
/// `k` colliders use `p_failure` and the rest `p_busy`.
pub fn aggregate_transition(rule: &OnePeriodRule, users: usize) -> DMatrix<f64> {
    let n = users;
    let mut p = DMatrix::zeros(n + 1, n + 1);
    let mut row = vec![0.0; n + 1];
    for k in 0..=n {
        match k {
            0 => row.copy_from_slice(&binomial_pmf(n, rule.p_idle)),
            1 => convolve(
                &binomial_pmf(1, rule.p_success),
                &binomial_pmf(n - 1, rule.p_busy),
                &mut row,
            ),
            _ => convolve(
                &binomial_pmf(k, rule.p_failure),
                &binomial_pmf(n - k, rule.p_busy),
                &mut row,
            ),
        }
        for (j, &v) in row.iter().enumerate() {
            p[(k, j)] = v;
        }
    }
    p
}

/// Closed communicating classes of a stochastic matrix (states with no
/// positive-probability edge leaving the class). Each class is sorted.
pub fn closed_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![usize::MAX; n];
    let sccs = tarjan_scc(&g);
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = c;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter()
                .all(|v| (0..n).all(|j| p[(v.index(), j)] <= 0.0 || component[j] == *c))
        })
        .map(|(_, scc)| {
            let mut members: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            members.sort_unstable();
            members
        })
        .collect();
    classes.sort();
    classes
}

/// Solves `πP = π`, `Σπ = 1` on a matrix assumed to have a unique closed
/// class, replacing the last balance equation with the normalization.
pub(crate) fn solve_balance(p: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Stationary (or limiting, if transient states exist) distribution.
///
/// The recurrent class is located by graph reachability and the balance
/// equations are solved on it; transient states receive zero mass.
pub fn stationary(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let classes = closed_classes(p);
    if classes.len() != 1 {
        return Err(Error::MultipleClosedClasses { classes });
    }
    let class = &classes[0];
    let sub = DMatrix::from_fn(class.len(), class.len(), |i, j| p[(class[i], class[j])]);
    let local = solve_balance(&sub).ok_or(Error::Singular)?;
    let mut pi = vec![0.0; p.nrows()];
    for (&state, &mass) in class.iter().zip(&local) {
        pi[state] = mass.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    Ok(pi)
}

/// Power iteration on the lazy chain `(P + I)/2`, which shares the
/// stationary distribution of `P` and converges for periodic chains too.
pub fn stationary_power(p: &DMatrix<f64>, max_iter: usize, tol: f64) -> Vec<f64> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64).transpose();
    let lazy = (p + DMatrix::identity(n, n)) * 0.5;
    for _ in 0..max_iter {
        let next = &pi * &lazy;
        let diff = (&next - &pi).amax();
        pi = next;
        if diff < tol {
            break;
        }
    }
    pi.iter().copied().collect()
}

/// `‖πP − π‖∞`.
pub fn stationarity_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let v = DVector::from_column_slice(pi).transpose();
    (&v * p - &v).amax()
}

/// Largest `|Σ_j P(i, j) − 1|` over rows.
pub fn row_sum_error(p: &DMatrix<f64>) -> f64 {
    p.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

/// Markov chain over transmitter counts `A_0..A_N`.
#[derive(Debug, Clone)]
pub struct AggregateChain {
    users: usize,
    transition: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl AggregateChain {
    pub fn build(rule: &OnePeriodRule, users: usize) -> Result<Self> {
        check_users(users)?;
        let transition = aggregate_transition(rule, users);
        let stationary = stationary(&transition)?;
        Ok(Self {
            users,
            transition,
            stationary,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// `π(A_1)`.
    pub fn throughput(&self) -> f64 {
        self.stationary[1]
    }

    pub fn idle_probability(&self) -> f64 {
        self.stationary[0]
    }

    pub fn collision_probability(&self) -> f64 {
        self.stationary[2..].iter().sum()
    }

    pub fn labels(&self) -> Vec<String> {
        (0..=self.users).map(|k| format!("A{k}")).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_chain_csv(out, &self.labels(), &self.transition, &self.stationary)
    }
}

pub fn build_aggregate_chain(rule: &OnePeriodRule, users: usize) -> Result<AggregateChain> {
    AggregateChain::build(rule, users)
}

/// Total throughput `π(A_1)` of a symmetric one-period rule.
pub fn throughput(rule: &OnePeriodRule, users: usize) -> Result<f64> {
    Ok(AggregateChain::build(rule, users)?.throughput())
}

/// Short-term fairness `θ* = 1 − f(success)(1 − f(busy))^(N−1)`.
pub fn fairness(rule: &OnePeriodRule, users: usize) -> f64 {
    rule.fairness(users)
}

/// Chain over joint action profiles. State index encodes user 0 in the
/// most significant bit (`1` = transmit).
#[derive(Debug, Clone)]
pub struct FullChain {
    users: usize,
    rules: Vec<OnePeriodRule>,
    transition: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl FullChain {
    pub const MAX_USERS: usize = 12;

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn transmits(&self, state: usize, user: usize) -> bool {
        state >> (self.users - 1 - user) & 1 == 1
    }

    /// Index of the profile in which only `user` transmits.
    pub fn solo_state(&self, user: usize) -> usize {
        1 << (self.users - 1 - user)
    }

    pub fn state_label(&self, state: usize) -> String {
        (0..self.users)
            .map(|u| {
                if self.transmits(state, u) {
                    Action::Transmit.symbol()
                } else {
                    Action::Wait.symbol()
                }
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.transition.nrows()).map(|s| self.state_label(s)).collect()
    }

    pub fn per_user_throughput(&self) -> Vec<f64> {
        (0..self.users).map(|u| self.stationary[self.solo_state(u)]).collect()
    }

    pub fn total_throughput(&self) -> f64 {
        self.per_user_throughput().iter().sum()
    }

    /// `min_i 1 − f_i(success) Π_{j≠i}(1 − f_j(busy))`.
    pub fn fairness(&self) -> f64 {
        (0..self.users)
            .map(|i| {
                let others: f64 = (0..self.users)
                    .filter(|&j| j != i)
                    .map(|j| 1.0 - self.rules[j].p_busy)
                    .product();
                1.0 - self.rules[i].p_success * others
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_chain_csv(out, &self.labels(), &self.transition, &self.stationary)
    }
}

/// Exact transition matrix over `A^N` for a protocol whose normal-phase
/// rules depend on the previous slot only.
pub fn full_transition(rules: &[OnePeriodRule], users: usize) -> DMatrix<f64> {
    let states = 1usize << users;
    let bit = |s: usize, u: usize| s >> (users - 1 - u) & 1 == 1;
    DMatrix::from_fn(states, states, |from, to| {
        let k = from.count_ones() as usize;
        (0..users)
            .map(|u| {
                let observed = ChannelState::observe(bit(from, u), k);
                let p = rules[u].prob(observed);
                if bit(to, u) {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    })
}

pub fn build_full_chain(protocol: &Protocol, users: usize) -> Result<FullChain> {
    protocol.check_users(users)?;
    if users > FullChain::MAX_USERS {
        return Err(Error::ChainTooLarge {
            users,
            max: FullChain::MAX_USERS,
        });
    }
    let normal = protocol.normal_one_period().ok_or_else(|| {
        Error::Unsupported(
            "full-chain analysis needs normal-phase rules with one-period memory; \
             use the simulator for longer memories"
                .into(),
        )
    })?;
    let rules: Vec<OnePeriodRule> = if protocol.is_symmetric() {
        vec![normal[0]; users]
    } else {
        normal
    };
    let transition = full_transition(&rules, users);
    let stationary = stationary(&transition)?;
    Ok(FullChain {
        users,
        rules,
        transition,
        stationary,
    })
}

/// Throughput profile, fairness, complexity and optional delay figure.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_user_throughput: Vec<f64>,
    pub total_throughput: f64,
    pub fairness: f64,
    pub complexity: usize,
    pub delay: Option<f64>,
}

impl MetricsReport {
    /// Flat `key = value` lines.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("users".to_string(), self.per_user_throughput.len().to_string()),
            (
                "total_throughput".to_string(),
                crate::report::fmt_sig(self.total_throughput),
            ),
            ("fairness".to_string(), crate::report::fmt_sig(self.fairness)),
            ("complexity".to_string(), self.complexity.to_string()),
        ];
        for (i, t) in self.per_user_throughput.iter().enumerate() {
            kv.push((format!("throughput_user_{i}"), crate::report::fmt_sig(*t)));
        }
        if let Some(d) = self.delay {
            kv.push(("delay".to_string(), crate::report::fmt_sig(d)));
        }
        kv
    }
}

/// Analytic normal-phase metrics. Symmetric one-period protocols use the
/// aggregate chain; asymmetric ones the full chain (small `N` only).
pub fn analyze(protocol: &Protocol, users: usize) -> Result<MetricsReport> {
    protocol.check_users(users)?;
    let complexity = protocol.complexity();
    if protocol.is_symmetric() {
        let rule = protocol
            .normal_one_period()
            .ok_or_else(|| Error::Unsupported("analytic metrics need one-period normal-phase rules".into()))?[0];
        let chain = AggregateChain::build(&rule, users)?;
        let total = chain.throughput();
        Ok(MetricsReport {
            per_user_throughput: vec![total / users as f64; users],
            total_throughput: total,
            fairness: rule.fairness(users),
            complexity,
            delay: None,
        })
    } else {
        let chain = build_full_chain(protocol, users)?;
        Ok(MetricsReport {
            per_user_throughput: chain.per_user_throughput(),
            total_throughput: chain.total_throughput(),
            fairness: chain.fairness(),
            complexity,
            delay: None,
        })
    }
}

/// CSV with one row per state: label, transition row, stationary mass.
pub fn write_chain_csv<W: Write>(out: W, labels: &[String], p: &DMatrix<f64>, pi: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["state".to_string()];
    header.extend(labels.iter().map(|l| format!("to_{l}")));
    header.push("stationary".into());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(p.row(i).iter().map(|&v| crate::report::fmt_sig(v)));
        rec.push(crate::report::fmt_sig(pi[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
