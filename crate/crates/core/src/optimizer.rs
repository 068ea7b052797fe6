//! Throughput maximization over symmetric one-period rules at a fixed
//! fairness level.
//!
//! The fairness constraint `p_success (1 - p_busy)^(N-1) = 1 - θ` is used to
//! eliminate `p_success`, leaving the box
//! `p_idle ∈ [0,1], p_busy ∈ [0, b_max], p_failure ∈ [0,1]` with
//! `b_max = 1 - (1-θ)^(1/(N-1))`. The solver scans a coarse grid and then
//! polishes the best few points with a Nelder-Mead simplex.

use rayon::prelude::*;

use crate::dcf::SlotDurations;
use crate::error::{check_probability, check_users, Error, Result};
use crate::markov::{aggregate_transition, solve_balance, AggregateChain};
use crate::protocol::OnePeriodRule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `π(A₁)`.
    SlottedAloha,
    /// Duration-weighted throughput.
    Dcf(SlotDurations),
}

impl Objective {
    pub fn evaluate_stationary(&self, pi: &[f64]) -> f64 {
        match self {
            Objective::SlottedAloha => pi[1],
            Objective::Dcf(d) => d.throughput_from_stationary(pi),
        }
    }

    /// Objective of a rule, through the public chain construction.
    pub fn evaluate(&self, rule: &OnePeriodRule, users: usize) -> Result<f64> {
        let chain = AggregateChain::build(rule, users)?;
        Ok(self.evaluate_stationary(chain.stationary()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub grid_step: f64,
    /// Number of grid points refined by the simplex search.
    pub starts: usize,
    pub max_iter: usize,
    /// Simplex stops when its objective spread falls below this.
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            starts: 5,
            max_iter: 2000,
            tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptProblem {
    pub users: usize,
    pub theta: f64,
    pub objective: Objective,
    /// Fix `p_busy = 0`, as the mission-aware protocols require.
    pub busy_zero: bool,
    pub settings: SolverSettings,
}

impl OptProblem {
    pub fn new(users: usize, theta: f64, objective: Objective) -> Self {
        Self {
            users,
            theta,
            objective,
            busy_zero: false,
            settings: SolverSettings::default(),
        }
    }

    pub fn pnorm1(users: usize, theta: f64) -> Self {
        Self::new(users, theta, Objective::SlottedAloha)
    }

    pub fn pnorm2(users: usize, theta: f64, durations: SlotDurations) -> Self {
        Self::new(users, theta, Objective::Dcf(durations))
    }

    pub fn with_busy_zero(mut self, busy_zero: bool) -> Self {
        self.busy_zero = busy_zero;
        self
    }

    /// Largest admissible `p_busy`.
    pub fn busy_max(&self) -> f64 {
        if self.busy_zero {
            0.0
        } else {
            1.0 - (1.0 - self.theta).powf(1.0 / (self.users as f64 - 1.0))
        }
    }

    /// The rule at a point of the free space.
    pub fn rule_at(&self, p_idle: f64, p_busy: f64, p_failure: f64) -> OnePeriodRule {
        let b = p_busy.clamp(0.0, self.busy_max());
        let s = ((1.0 - self.theta) / (1.0 - b).powi(self.users as i32 - 1)).clamp(0.0, 1.0);
        OnePeriodRule {
            p_idle: p_idle.clamp(0.0, 1.0),
            p_busy: b,
            p_success: s,
            p_failure: p_failure.clamp(0.0, 1.0),
        }
    }

    fn score(&self, rule: &OnePeriodRule) -> f64 {
        solve_balance(&aggregate_transition(rule, self.users))
            .filter(|pi| pi.iter().all(|v| *v >= -1e-9))
            .map(|pi| self.objective.evaluate_stationary(&pi))
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn validate(&self) -> Result<()> {
        check_users(self.users)?;
        check_probability("theta", self.theta)?;
        let s = &self.settings;
        if !(s.grid_step > 0.0 && s.grid_step <= 0.5) || s.starts == 0 {
            return Err(Error::InvalidParameter(
                "solver needs 0 < grid_step <= 0.5 and starts >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptResult {
    pub rule: OnePeriodRule,
    pub objective: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub grid_best: f64,
}

impl OptResult {
    /// `|p_success (1-p_busy)^(N-1) - (1-θ)|`.
    pub fn constraint_residual(&self, users: usize, theta: f64) -> f64 {
        (self.rule.repeat_success_probability(users) - (1.0 - theta)).abs()
    }
}

fn grid(step: f64, upper: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|x| *x < upper - 1e-12)
        .collect();
    v.push(upper);
    v
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    x: [f64; 3],
    value: f64,
}

/// Better value wins; values within `1e-6` prefer the smaller `p_busy`.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if (a.value - b.value).abs() <= 1e-6 {
        if a.x[1] != b.x[1] {
            return a.x[1] < b.x[1];
        }
    }
    a.value > b.value
}

/// Nelder-Mead on the box, maximizing; points are clamped to the box.
fn nelder_mead(
    f: &dyn Fn(&[f64; 3]) -> f64,
    start: [f64; 3],
    upper: [f64; 3],
    dims: usize,
    max_iter: usize,
    tol: f64,
) -> (Candidate, usize) {
    let clamp = |x: [f64; 3]| {
        let mut y = x;
        for i in 0..3 {
            y[i] = y[i].clamp(0.0, upper[i]);
        }
        y
    };
    let eval = |x: [f64; 3]| {
        let x = clamp(x);
        Candidate { x, value: f(&x) }
    };
    let active: Vec<usize> = (0..3).filter(|i| upper[*i] > 0.0).take(dims).collect();
    let mut simplex = vec![eval(start)];
    for &i in &active {
        let mut x = start;
        let h = (0.05 * upper[i]).max(1e-4);
        x[i] = if x[i] + h <= upper[i] { x[i] + h } else { x[i] - h };
        simplex.push(eval(x));
    }
    if active.is_empty() {
        return (simplex[0], 0);
    }
    let k = active.len();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| b.value.total_cmp(&a.value));
        let spread = simplex[0].value - simplex[k].value;
        let size = active
            .iter()
            .map(|&i| {
                simplex
                    .iter()
                    .map(|c| (c.x[i] - simplex[0].x[i]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() < tol && size < 1e-9 {
            break;
        }
        let mut centroid = [0.0; 3];
        for c in &simplex[..k] {
            for i in 0..3 {
                centroid[i] += c.x[i] / k as f64;
            }
        }
        let along = |t: f64| {
            let mut x = [0.0; 3];
            for i in 0..3 {
                x[i] = centroid[i] + t * (simplex[k].x[i] - centroid[i]);
            }
            eval(x)
        };
        let reflected = along(-1.0);
        if reflected.value > simplex[0].value {
            let expanded = along(-2.0);
            simplex[k] = if expanded.value > reflected.value {
                expanded
            } else {
                reflected
            };
        } else if reflected.value > simplex[k - 1].value {
            simplex[k] = reflected;
        } else {
            let contracted = if reflected.value > simplex[k].value {
                along(-0.5)
            } else {
                along(0.5)
            };
            if contracted.value > simplex[k].value.max(reflected.value) {
                simplex[k] = contracted;
            } else {
                let best = simplex[0].x;
                for c in simplex.iter_mut().skip(1) {
                    let mut x = [0.0; 3];
                    for i in 0..3 {
                        x[i] = best[i] + 0.5 * (c.x[i] - best[i]);
                    }
                    *c = eval(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.value.total_cmp(&a.value));
    (simplex[0], iterations)
}

/// Best rule for the problem.
pub fn solve(problem: &OptProblem) -> Result<OptResult> {
    problem.validate()?;
    let n = problem.users;
    if problem.theta == 0.0 {
        let rule = OnePeriodRule::tilde(n, 0.0)?;
        let objective = problem.objective.evaluate(&rule, n)?;
        return Ok(OptResult {
            rule,
            objective,
            iterations: 0,
            restarts: 0,
            grid_best: objective,
        });
    }
    let settings = problem.settings;
    let b_max = problem.busy_max();
    let f = |x: &[f64; 3]| problem.score(&problem.rule_at(x[0], x[1], x[2]));

    let axis = grid(settings.grid_step, 1.0);
    let busy_axis = if b_max > 0.0 {
        grid(settings.grid_step, b_max)
    } else {
        vec![0.0]
    };
    let mut pool: Vec<Candidate> = busy_axis
        .par_iter()
        .flat_map_iter(|&b| {
            let axis = &axis;
            axis.iter()
                .flat_map(move |&i| axis.iter().map(move |&fl| [i, b, fl]))
                .map(|x| Candidate { x, value: f(&x) })
                .collect::<Vec<_>>()
        })
        .filter(|c| c.value.is_finite())
        .collect();
    if pool.is_empty() {
        return Err(Error::Infeasible(format!(
            "no rule with a unique stationary distribution at N = {n}, theta = {}",
            problem.theta
        )));
    }
    pool.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.x[1].total_cmp(&b.x[1])));
    let grid_best = pool[0].value;

    let upper = [1.0, b_max, 1.0];
    let dims = if b_max > 0.0 { 3 } else { 2 };
    let mut best = pool[0];
    let mut iterations = 0;
    let restarts = settings.starts.min(pool.len());
    for start in pool.iter().take(restarts) {
        let (c, it) = nelder_mead(&f, start.x, upper, dims, settings.max_iter, settings.tol);
        iterations += it;
        if better(&c, &best) {
            best = c;
        }
    }
    let rule = problem.rule_at(best.x[0], best.x[1], best.x[2]);
    let objective = problem.objective.evaluate(&rule, n)?;
    Ok(OptResult {
        rule,
        objective,
        iterations,
        restarts,
        grid_best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub theta: f64,
    pub throughput: f64,
    pub rule: OnePeriodRule,
}

/// Optimal throughput for each fairness level, solved in parallel.
pub fn frontier(users: usize, thetas: &[f64], objective: Objective) -> Result<Vec<FrontierPoint>> {
    frontier_with(thetas, |theta| OptProblem::new(users, theta, objective))
}

pub fn frontier_with(thetas: &[f64], problem: impl Fn(f64) -> OptProblem + Sync) -> Result<Vec<FrontierPoint>> {
    thetas
        .par_iter()
        .map(|&theta| {
            let r = solve(&problem(theta))?;
            Ok(FrontierPoint {
                theta,
                throughput: r.objective,
                rule: r.rule,
            })
        })
        .collect()
}

/// Best memoryless transmission probability and its objective.
pub fn best_memoryless(users: usize, objective: Objective) -> Result<(f64, f64)> {
    check_users(users)?;
    let eval = |p: f64| objective.evaluate(&OnePeriodRule::uniform(p)?, users);
    if objective == Objective::SlottedAloha {
        let p = 1.0 / users as f64;
        return Ok((p, eval(p)?));
    }
    // Golden-section search; the objective is unimodal in p.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-9, 1.0 - 1e-9);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d)?;
        }
    }
    let p = (a + b) / 2.0;
    Ok((p, eval(p)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::throughput;

    #[test]
    fn rule_parametrization_meets_constraint() {
        let p = OptProblem::pnorm1(10, 0.1);
        for b in [0.0, 0.005, p.busy_max(), 0.5] {
            let r = p.rule_at(0.1, b, 0.5);
            assert!((r.repeat_success_probability(10) - 0.9).abs() < 1e-10);
            assert!(r.p_success <= 1.0);
        }
        assert!((p.rule_at(0.1, 1.0, 0.5).p_success - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_problem_beats_tilde() {
        let problem = OptProblem::pnorm1(3, 0.1);
        let r = solve(&problem).unwrap();
        let tilde = throughput(&OnePeriodRule::tilde(3, 0.1).unwrap(), 3).unwrap();
        assert!(r.objective >= tilde);
        assert!(r.objective >= r.grid_best - 1e-12);
        assert!((r.objective - 0.8275).abs() < 5e-4);
        assert!(r.constraint_residual(3, 0.1) < 1e-9);
    }

    #[test]
    fn theta_zero_is_special() {
        let r = solve(&OptProblem::pnorm1(10, 0.0)).unwrap();
        assert_eq!(r.objective, 1.0);
        assert_eq!(r.rule.p_success, 1.0);
    }

    #[test]
    fn busy_zero_mode() {
        let r = solve(&OptProblem::pnorm1(5, 0.1).with_busy_zero(true)).unwrap();
        assert_eq!(r.rule.p_busy, 0.0);
        assert!((r.rule.p_success - 0.9).abs() < 1e-12);
    }

    #[test]
    fn memoryless_optimum() {
        let (p, t) = best_memoryless(10, Objective::SlottedAloha).unwrap();
        assert_eq!(p, 0.1);
        assert!((t - 0.3874).abs() < 1e-4);
        let d = crate::dcf::derive_durations(&Default::default()).unwrap();
        let (p, t) = best_memoryless(10, Objective::Dcf(d)).unwrap();
        assert!(p > 0.0 && p < 0.1);
        for q in [p * 0.9, p * 1.1] {
            let other = Objective::Dcf(d)
                .evaluate(&OnePeriodRule::uniform(q).unwrap(), 10)
                .unwrap();
            assert!(other <= t);
        }
    }
}
