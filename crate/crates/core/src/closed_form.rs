//! Explicit formulas: the memoryless trade-off, the recursive lower bound on
//! optimal one-period throughput, and upper bounds on mission delay.

use crate::error::{check_probability, check_users, Error, Result};
use crate::markov::{choose, AggregateChain};
use crate::protocol::OnePeriodRule;

/// `(τ, θ)` for every user transmitting with probability `p` each slot.
pub fn memoryless_metrics(p: f64, users: usize) -> (f64, f64) {
    let solo = p * (1.0 - p).powi(users as i32 - 1);
    (users as f64 * solo, 1.0 - solo)
}

/// Largest memoryless throughput, attained at `p = 1/N`.
pub fn memoryless_max_throughput(users: usize) -> f64 {
    (1.0 - 1.0 / users as f64).powi(users as i32 - 1)
}

/// Tables behind the closed-form throughput of `f̃(N, θ)`.
///
/// With `π_k = G_k π_0`, the `G_k` for `k >= 2` do not depend on `θ`;
/// `J[k][k']` is the coefficient of `q_{k'}` in the expansion of `G_k`.
#[derive(Debug, Clone)]
pub struct Prop2Tables {
    users: usize,
    q: Vec<f64>,
    j: Vec<Vec<f64>>,
    g: Vec<f64>,
}

impl Prop2Tables {
    pub fn new(users: usize) -> Result<Self> {
        check_users(users)?;
        let n = users;
        let nf = n as f64;
        let q: Vec<f64> = (0..=n)
            .map(|k| choose(n, k) * (1.0 / nf).powi(k as i32) * (1.0 - 1.0 / nf).powi((n - k) as i32))
            .collect();
        let pow2m1 = |k: usize| 2f64.powi(k as i32) - 1.0;

        let mut j = vec![vec![0.0; n + 1]; n + 1];
        for k in (2..=n).rev() {
            j[k][k] = 1.0;
            for kp in k + 1..=n {
                j[k][kp] = (k + 1..=kp).map(|l| choose(l, k) / pow2m1(l) * j[l][kp]).sum();
            }
        }
        let mut g = vec![0.0; n + 1];
        for k in 2..=n {
            let s: f64 = (k..=n).map(|kp| j[k][kp] * q[kp]).sum();
            g[k] = 2f64.powi(k as i32) / pow2m1(k) * s;
        }
        Ok(Self { users, q, j, g })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `J_{k'}(k)`, zero outside `2 <= k <= k' <= N`.
    pub fn j(&self, k_prime: usize, k: usize) -> f64 {
        self.j.get(k).and_then(|r| r.get(k_prime)).copied().unwrap_or(0.0)
    }

    /// `G_k` for `k >= 2`.
    pub fn g(&self, k: usize) -> f64 {
        self.g[k]
    }

    pub fn g1(&self, theta: f64) -> f64 {
        let tail: f64 = (2..=self.users).map(|k| self.g[k] / 2f64.powi(k as i32)).sum();
        (1.0 - self.q[0] - tail) / theta
    }

    /// `G_1(θ) / (1 + G_1(θ) + G_2 + ... + G_N)`.
    pub fn throughput(&self, theta: f64) -> f64 {
        if theta == 0.0 {
            return 1.0;
        }
        let g1 = self.g1(theta);
        let rest: f64 = self.g[2..].iter().sum();
        g1 / (1.0 + g1 + rest)
    }
}

/// Throughput of `f̃(N, θ)`, a lower bound on the one-period optimum.
pub fn prop2_lower_bound(users: usize, theta: f64) -> Result<f64> {
    if users < 3 {
        return Err(Error::InvalidParameter(format!(
            "the recursive lower bound needs N >= 3, got {users}"
        )));
    }
    let theta = check_probability("theta", theta)?;
    Ok(Prop2Tables::new(users)?.throughput(theta))
}

/// Upper bound on the average expected mission delay, split by the outcome
/// of the slot before the mission starts. Conditional terms are in slots;
/// `total` weights them with the stationary distribution of `f_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBound {
    pub users: usize,
    pub stationary: Vec<f64>,
    /// Previous slot idle.
    pub idle: f64,
    /// The mission user itself succeeded in the previous slot.
    pub success_self: f64,
    /// Another user succeeded in the previous slot.
    pub success_other: f64,
    /// Index `k` holds the bound after a `k`-user collision (`k >= 2`).
    pub collision: Vec<f64>,
    pub total: f64,
}

impl DelayBound {
    /// π-weighted contributions `(idle, success_self, success_other, collision)`.
    pub fn contributions(&self) -> (f64, f64, f64, f64) {
        let n = self.users as f64;
        let pi = &self.stationary;
        let coll = (2..=self.users).map(|k| pi[k] * self.collision[k]).sum();
        (
            pi[0] * self.idle,
            pi[1] / n * self.success_self,
            pi[1] * (n - 1.0) / n * self.success_other,
            coll,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    One,
    Two,
}

fn delay_bound(f_norm: &OnePeriodRule, users: usize, variant: Variant) -> Result<DelayBound> {
    check_users(users)?;
    if f_norm.p_busy != 0.0 {
        return Err(Error::BusyNotZero(f_norm.p_busy));
    }
    let pf = f_norm.p_failure;
    if pf >= 1.0 {
        return Err(Error::UnboundedDelay);
    }
    let chain = AggregateChain::build(f_norm, users)?;
    let pi = chain.stationary().to_vec();
    let n = users;
    let nf = n as f64;
    let theta = 1.0 - f_norm.p_success;
    let pi_idle = f_norm.p_idle;

    // k' other users joined the mission user's first transmission.
    let idle: f64 = (1..n)
        .map(|kp| {
            choose(n - 1, kp) * pi_idle.powi(kp as i32) * (1.0 - pi_idle).powi((n - 1 - kp) as i32)
                / (1.0 - pf).powi(kp as i32)
        })
        .sum();
    let success_other = match variant {
        Variant::One => (1.0 - theta) / (1.0 - pf),
        Variant::Two => 1.0 - theta,
    };
    let mut collision = vec![0.0; n + 1];
    for (k, c) in collision.iter_mut().enumerate().skip(2) {
        *c = (nf - k as f64 * pf) / (nf * (1.0 - pf).powi(k as i32)) - 1.0;
    }
    let mut bound = DelayBound {
        users,
        stationary: pi,
        idle,
        success_self: 0.0,
        success_other,
        collision,
        total: 0.0,
    };
    let (a, b, c, d) = bound.contributions();
    bound.total = a + b + c + d;
    Ok(bound)
}

/// Upper bound on the average expected delay of Protocol 1.
pub fn delay_bound_protocol1(f_norm: &OnePeriodRule, users: usize) -> Result<DelayBound> {
    delay_bound(f_norm, users, Variant::One)
}

/// Upper bound on the average expected delay of Protocol 2.
pub fn delay_bound_protocol2(f_norm: &OnePeriodRule, users: usize) -> Result<DelayBound> {
    delay_bound(f_norm, users, Variant::Two)
}
