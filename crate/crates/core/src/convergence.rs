//! Refinement-budget bounds and a Monte-Carlo simulator of the
//! reliable-feedback / reliable-generator agent model.
//!
//! The simulator uses the worst-case increment model: while coverage is
//! below the optimum, each round gains exactly one item with probability
//! `p = beta * gamma` and nothing otherwise. Under that model the coverage
//! after `T` rounds is `min(opt, c0 + Binomial(T, p))`, and the hitting
//! time of `opt` is negative-binomial with mean `(opt - c0) / p`, which
//! gives exact oracles for both verification routines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-trial step limit for hitting-time simulation.
pub const HITTING_TIME_CAP: u64 = 10_000_000;

/// Largest coverage gap for which the exact binomial tail is reported.
pub const EXACT_TAIL_MAX_GAP: u32 = 60;

// Slack for `ceil` so that values like 2.0000000000000004 stay at 2.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("invalid theory parameters: {0}")]
    InvalidTheoryParams(String),
}

fn invalid(msg: impl Into<String>) -> TheoryError {
    TheoryError::InvalidTheoryParams(msg.into())
}

pub(crate) fn check_theory_params(alpha: f64, beta: f64, gamma: f64, epsilon: f64) -> Result<(), TheoryError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

fn check_success_prob(beta: f64, gamma: f64) -> Result<f64, TheoryError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(beta * gamma)
}

fn ceil_slack(x: f64) -> f64 {
    (x - CEIL_SLACK).ceil()
}

/// Smallest coverage count satisfying `count >= alpha * opt`.
pub fn coverage_target(alpha: f64, opt: u32) -> u32 {
    ceil_slack(alpha * f64::from(opt)).max(0.0) as u32
}

/// Iteration budget `ceil(max(0, alpha*opt - c0)/p + 2 ln(1/epsilon)/p)` with
/// `p = beta * gamma`.
pub fn lambda_bound(alpha: f64, beta: f64, gamma: f64, opt: u32, c0: u32, epsilon: f64) -> Result<u32, TheoryError> {
    check_theory_params(alpha, beta, gamma, epsilon)?;
    let p = beta * gamma;
    let gap = (alpha * f64::from(opt) - f64::from(c0)).max(0.0);
    let raw = gap / p + 2.0 * (1.0 / epsilon).ln() / p;
    let budget = ceil_slack(raw);
    if budget > f64::from(u32::MAX) {
        return Err(invalid(format!("iteration budget {raw} overflows")));
    }
    Ok(budget.max(0.0) as u32)
}

/// Upper bound `(opt - c0)/p + 2/p` on the expected rounds to reach `opt`.
pub fn expected_iterations_bound(opt: u32, c0: u32, beta: f64, gamma: f64) -> Result<f64, TheoryError> {
    let p = check_success_prob(beta, gamma)?;
    if c0 > opt {
        return Err(invalid(format!("c0 ({c0}) exceeds opt ({opt})")));
    }
    Ok(f64::from(opt - c0) / p + 2.0 / p)
}

/// `Pr[Binomial(n, p) >= k]`, summed in log space.
pub fn binomial_upper_tail(n: u32, p: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    // log pmf(i) via the ratio pmf(i+1)/pmf(i) = (n-i)/(i+1) * p/q
    let mut log_pmf = f64::from(n) * lq;
    for i in 0..k {
        log_pmf += (f64::from(n - i) / f64::from(i + 1)).ln() + lp - lq;
    }
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    terms.push(log_pmf);
    for i in k..n {
        log_pmf += (f64::from(n - i) / f64::from(i + 1)).ln() + lp - lq;
        terms.push(log_pmf);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementModel {
    /// Exactly one new item per successful round.
    #[default]
    WorstCase,
    /// Uniform{1, 2, 3} new items per successful round.
    Generous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub beta: f64,
    pub gamma: f64,
    pub opt: u32,
    pub c0: u32,
    pub alpha: f64,
    pub epsilon: f64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub model: IncrementModel,
    /// Keep per-trial coverage traces in the report.
    #[serde(default)]
    pub keep_traces: bool,
}

impl SimParams {
    pub fn new(beta: f64, gamma: f64, opt: u32, c0: u32, alpha: f64, epsilon: f64) -> Self {
        SimParams {
            beta,
            gamma,
            opt,
            c0,
            alpha,
            epsilon,
            trials: 10_000,
            seed: 0,
            model: IncrementModel::WorstCase,
            keep_traces: false,
        }
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn success_prob(&self) -> f64 {
        self.beta * self.gamma
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        check_theory_params(self.alpha, self.beta, self.gamma, self.epsilon)?;
        if self.c0 > self.opt {
            return Err(invalid(format!("c0 ({}) exceeds opt ({})", self.c0, self.opt)));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        Ok(())
    }

    fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

struct Chain<'a> {
    params: &'a SimParams,
    p: f64,
    coverage: u32,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    fn new(params: &'a SimParams, trial: u64) -> Self {
        Chain {
            params,
            p: params.success_prob(),
            coverage: params.c0.min(params.opt),
            rng: params.trial_rng(trial),
        }
    }

    fn step(&mut self) -> u32 {
        if self.coverage < self.params.opt && self.rng.random_bool(self.p) {
            let gain = match self.params.model {
                IncrementModel::WorstCase => 1,
                IncrementModel::Generous => self.rng.random_range(1..=3),
            };
            self.coverage = (self.coverage + gain).min(self.params.opt);
        }
        self.coverage
    }
}

/// Coverage trace of one simulated refinement chain: `t_max + 1` values
/// starting at `c0`.
pub fn simulate_trial(params: &SimParams, trial: u64, t_max: u32) -> Vec<u32> {
    let mut chain = Chain::new(params, trial);
    let mut trace = Vec::with_capacity(t_max as usize + 1);
    trace.push(chain.coverage);
    for _ in 0..t_max {
        trace.push(chain.step());
    }
    trace
}

fn final_coverage(params: &SimParams, trial: u64, rounds: u32) -> u32 {
    let mut chain = Chain::new(params, trial);
    for _ in 0..rounds {
        if chain.coverage >= params.opt {
            break;
        }
        chain.step();
    }
    chain.coverage
}

/// Rounds until coverage first equals `opt`, or `None` past the cap.
fn hitting_time(params: &SimParams, trial: u64, cap: u64) -> Option<u64> {
    let mut chain = Chain::new(params, trial);
    let mut steps = 0;
    while chain.coverage < params.opt {
        if steps == cap {
            return None;
        }
        chain.step();
        steps += 1;
    }
    Some(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verification {
    Theorem,
    Corollary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub verify: Verification,
    pub params: SimParams,
    pub p: f64,
    pub lambda: u32,
    /// Coverage count that must be reached, `ceil(alpha * opt)`.
    pub target: u32,
    pub trials: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_std_error: Option<f64>,
    /// `Pr[Binomial(lambda, p) >= target - c0]`, when the gap is small enough.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_hitting_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hitting_time_std_error: Option<f64>,
    /// Negative-binomial mean `(opt - c0) / p`, worst-case model only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_mean_hitting_time: Option<f64>,
    pub corollary_bound: f64,
    pub cap_exceeded: u64,
    /// The stated guarantee does not hold for these parameters.
    pub bound_violated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<Vec<u32>>,
}

impl SimReport {
    fn base(params: &SimParams, verify: Verification, alpha: f64) -> Result<Self, TheoryError> {
        params.validate()?;
        let p = params.success_prob();
        Ok(SimReport {
            verify,
            params: params.clone(),
            p,
            lambda: lambda_bound(alpha, params.beta, params.gamma, params.opt, params.c0, params.epsilon)?,
            target: coverage_target(alpha, params.opt),
            trials: params.trials,
            empirical_success: None,
            success_std_error: None,
            exact_success: None,
            mean_hitting_time: None,
            hitting_time_std_error: None,
            exact_mean_hitting_time: None,
            corollary_bound: expected_iterations_bound(params.opt, params.c0, params.beta, params.gamma)?,
            cap_exceeded: 0,
            bound_violated: false,
            traces: Vec::new(),
        })
    }
}

/// Runs `trials` chains for `lambda` rounds and measures how often coverage
/// reaches `alpha * opt`.
pub fn verify_theorem(params: &SimParams) -> Result<SimReport, TheoryError> {
    let mut report = SimReport::base(params, Verification::Theorem, params.alpha)?;
    let rounds = report.lambda;
    let target = report.target;

    let successes = (0..params.trials)
        .into_par_iter()
        .filter(|&trial| final_coverage(params, trial, rounds) >= target)
        .count() as u64;
    let n = params.trials as f64;
    let rate = successes as f64 / n;
    let se = (rate * (1.0 - rate) / n).sqrt();
    report.empirical_success = Some(rate);
    report.success_std_error = Some(se);

    let gap = params.opt - params.c0;
    if gap <= EXACT_TAIL_MAX_GAP && params.model == IncrementModel::WorstCase {
        let need = target.saturating_sub(params.c0);
        report.exact_success = Some(binomial_upper_tail(rounds, report.p, need));
    }
    let goal = 1.0 - params.epsilon;
    report.bound_violated = match report.exact_success {
        Some(exact) => exact < goal,
        None => rate + 3.0 * se < goal,
    };
    if params.keep_traces {
        report.traces = (0..params.trials)
            .map(|trial| simulate_trial(params, trial, rounds))
            .collect();
    }
    Ok(report)
}

/// Measures the mean number of rounds until coverage reaches `opt` and
/// compares it with the expected-iterations bound.
pub fn verify_corollary(params: &SimParams) -> Result<SimReport, TheoryError> {
    verify_corollary_with_cap(params, HITTING_TIME_CAP)
}

pub fn verify_corollary_with_cap(params: &SimParams, cap: u64) -> Result<SimReport, TheoryError> {
    let mut report = SimReport::base(params, Verification::Corollary, 1.0)?;

    // Integer sums keep the aggregate independent of completion order.
    let (hits, sum, sum_sq, capped) = (0..params.trials)
        .into_par_iter()
        .map(|trial| match hitting_time(params, trial, cap) {
            Some(t) => (1u64, t as u128, (t as u128) * (t as u128), 0u64),
            None => (0, 0, 0, 1),
        })
        .reduce(|| (0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    report.cap_exceeded = capped;
    if hits > 0 {
        let n = hits as f64;
        let mean = sum as f64 / n;
        let var = if hits > 1 {
            ((sum_sq as f64) - n * mean * mean).max(0.0) / (n - 1.0)
        } else {
            0.0
        };
        report.mean_hitting_time = Some(mean);
        report.hitting_time_std_error = Some((var / n).sqrt());
        report.bound_violated = mean > report.corollary_bound;
    }
    if params.model == IncrementModel::WorstCase {
        report.exact_mean_hitting_time = Some(f64::from(params.opt - params.c0) / report.p);
    }
    if params.keep_traces {
        let horizon = report.lambda;
        report.traces = (0..params.trials)
            .map(|trial| simulate_trial(params, trial, horizon))
            .collect();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_bound(1.0, 0.8, 0.75, 10, 0, 0.05).unwrap(), 27);
        assert_eq!(lambda_bound(1.0, 1.0, 1.0, 1, 0, (-0.5f64).exp()).unwrap(), 2);
        assert_eq!(lambda_bound(0.5, 1.0, 0.5, 10, 5, 0.1).unwrap(), 10);
    }

    #[test]
    fn lambda_rejects_bad_params() {
        assert!(lambda_bound(1.0, 0.0, 0.5, 10, 0, 0.1).is_err());
        assert!(lambda_bound(0.0, 1.0, 0.5, 10, 0, 0.1).is_err());
        assert!(lambda_bound(1.0, 1.0, 0.5, 10, 0, 1.0).is_err());
        assert!(lambda_bound(1.0, 1.0, 1.5, 10, 0, 0.5).is_err());
    }

    #[test]
    fn lambda_clamps_when_goal_already_met() {
        // gap clamps to zero, only the confidence term remains
        assert_eq!(lambda_bound(0.5, 1.0, 1.0, 4, 4, (-1.0f64).exp()).unwrap(), 2);
    }

    #[test]
    fn expected_iteration_examples() {
        assert!((expected_iterations_bound(10, 0, 0.8, 0.75).unwrap() - 20.0).abs() < 1e-12);
        assert!((expected_iterations_bound(5, 5, 0.5, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((expected_iterations_bound(5, 2, 1.0, 1.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(expected_iterations_bound(5, 6, 1.0, 1.0).is_err());
        assert!(expected_iterations_bound(5, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn unit_probability_trace_is_deterministic() {
        let params = SimParams::new(1.0, 1.0, 3, 0, 1.0, 0.5);
        assert_eq!(simulate_trial(&params, 0, 5), vec![0, 1, 2, 3, 3, 3]);
        assert_eq!(simulate_trial(&params, 0, 0), vec![0]);
        let saturated = SimParams::new(0.3, 0.3, 4, 4, 1.0, 0.5);
        assert_eq!(simulate_trial(&saturated, 9, 6), vec![4; 7]);
    }

    #[test]
    fn trials_are_reproducible() {
        let params = SimParams::new(0.5, 0.5, 20, 0, 1.0, 0.1).with_seed(42);
        assert_eq!(simulate_trial(&params, 3, 50), simulate_trial(&params, 3, 50));
        assert_ne!(simulate_trial(&params, 3, 50), simulate_trial(&params, 4, 50));
    }

    #[test]
    fn binomial_tail_small_cases() {
        // Bin(2, 0.5): P[X>=1] = 0.75, P[X>=2] = 0.25
        assert!((binomial_upper_tail(2, 0.5, 1) - 0.75).abs() < 1e-12);
        assert!((binomial_upper_tail(2, 0.5, 2) - 0.25).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(5, 0.3, 0), 1.0);
        assert_eq!(binomial_upper_tail(5, 0.3, 6), 0.0);
        assert_eq!(binomial_upper_tail(5, 1.0, 5), 1.0);
    }

    #[test]
    fn theorem_at_unit_probability_always_succeeds() {
        let params = SimParams::new(1.0, 1.0, 7, 2, 1.0, 0.2).with_trials(200);
        let r = verify_theorem(&params).unwrap();
        assert_eq!(r.empirical_success, Some(1.0));
        assert!(!r.bound_violated);
    }

    #[test]
    fn theorem_goal_already_met() {
        let params = SimParams::new(0.3, 0.5, 10, 6, 0.5, 0.1).with_trials(500);
        let r = verify_theorem(&params).unwrap();
        assert_eq!(r.target, 5);
        assert_eq!(r.empirical_success, Some(1.0));
    }

    #[test]
    fn large_gap_region_is_flagged() {
        // mean successes 66 vs 60 needed, sd ~5.7: tail is ~0.87 < 0.95
        let params = SimParams::new(1.0, 0.5, 60, 0, 1.0, 0.05).with_trials(2000);
        let r = verify_theorem(&params).unwrap();
        assert_eq!(r.lambda, 132);
        let exact = r.exact_success.unwrap();
        assert!((exact - 0.8711).abs() < 1e-3, "{exact}");
        assert!(r.bound_violated);
    }

    #[test]
    fn corollary_unit_probability_hits_exactly() {
        let params = SimParams::new(1.0, 1.0, 9, 3, 1.0, 0.5).with_trials(100);
        let r = verify_corollary(&params).unwrap();
        assert_eq!(r.mean_hitting_time, Some(6.0));
        assert_eq!(r.hitting_time_std_error, Some(0.0));
        let at_goal = SimParams::new(0.2, 0.2, 4, 4, 1.0, 0.5).with_trials(10);
        assert_eq!(verify_corollary(&at_goal).unwrap().mean_hitting_time, Some(0.0));
    }

    #[test]
    fn corollary_reports_cap_exceeded() {
        let params = SimParams::new(0.01, 0.01, 50, 0, 1.0, 0.5).with_trials(20);
        let r = verify_corollary_with_cap(&params, 10).unwrap();
        assert_eq!(r.cap_exceeded, 20);
        assert_eq!(r.mean_hitting_time, None);
    }

    #[test]
    fn generous_model_is_faster_than_worst_case() {
        let mut params = SimParams::new(0.6, 1.0, 30, 0, 1.0, 0.1).with_trials(2000);
        let worst = verify_corollary(&params).unwrap().mean_hitting_time.unwrap();
        params.model = IncrementModel::Generous;
        let generous = verify_corollary(&params).unwrap();
        assert!(generous.mean_hitting_time.unwrap() < worst);
        assert_eq!(generous.exact_mean_hitting_time, None);
    }

    proptest! {
        #[test]
        fn traces_are_monotone_and_capped(
            beta in 0.05f64..=1.0, gamma in 0.05f64..=1.0,
            opt in 0u32..30, c0_frac in 0.0f64..=1.0,
            trial in 0u64..1000, t_max in 0u32..80,
            generous in any::<bool>(),
        ) {
            let c0 = (f64::from(opt) * c0_frac) as u32;
            let mut params = SimParams::new(beta, gamma, opt, c0, 1.0, 0.1);
            if generous {
                params.model = IncrementModel::Generous;
            }
            let trace = simulate_trial(&params, trial, t_max);
            prop_assert_eq!(trace.len(), t_max as usize + 1);
            prop_assert_eq!(trace[0], c0);
            prop_assert!(trace.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(trace.iter().all(|&c| c <= opt));
        }

        #[test]
        fn tail_is_a_probability(n in 0u32..300, p in 0.0f64..=1.0, k in 0u32..320) {
            let t = binomial_upper_tail(n, p, k);
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert!(binomial_upper_tail(n, p, k + 1) <= t + 1e-12);
        }
    }
}
