//! Finite discounted MDPs, policy-induced chains, stationary distributions,
//! and geometric-mixing estimation.
//!
//! A policy `mu` collapses an MDP onto a state-to-state chain
//!
//! ```text
//! P_mu(s, s') = sum_a mu(s, a) P(s' | s, a),
//! r(s, s')    = sum_a mu(s, a) r(s, a, s'),
//! ```
//!
//! which, when irreducible and aperiodic, admits a unique stationary
//! distribution `pi` and mixes geometrically: there exist `C > 0` and
//! `alpha in (0, 1)` with `max_s TV(P_mu^t(s, .), pi) <= C alpha^t`.
//! [`estimate_mixing`] produces a concrete conservative `(C, alpha)` pair
//! by least-squares fitting the observed decay in log domain and then
//! inflating `C` until the envelope dominates every observed point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ErgodicityFailure, Error, Result};

/// Row-sum tolerance for transition and policy matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Stationary residual tolerance used by chain validation.
pub const STATIONARY_TOL: f64 = 1e-10;

/// TV values at or below this level are treated as exactly mixed when
/// fitting the geometric envelope.
pub const MIXING_FLOOR: f64 = 1e-12;

/// A finite discounted MDP with deterministic rewards `r(s, a, s') >= 0`.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `transition[s][a][s']` = P(s' | s, a), each row a distribution.
    transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a][s']` = r(s, a, s') >= 0.
    reward: Vec<Vec<Vec<f64>>>,
    gamma: f64,
}

impl Mdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        gamma: f64,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidInput {
                context: "Mdp::new",
                detail: "empty state space".into(),
            });
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidInput {
                context: "Mdp::new",
                detail: "empty action space".into(),
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput {
                context: "Mdp::new",
                detail: format!("gamma = {gamma} not in (0, 1)"),
            });
        }
        if reward.len() != n_states {
            return Err(Error::DimensionMismatch {
                context: "Mdp::new reward table",
                expected: format!("{n_states} states"),
                found: format!("{}", reward.len()),
            });
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions || reward[s].len() != n_actions {
                return Err(Error::DimensionMismatch {
                    context: "Mdp::new action dimension",
                    expected: format!("{n_actions} actions"),
                    found: format!("{} / {}", rows.len(), reward[s].len()),
                });
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states || reward[s][a].len() != n_states {
                    return Err(Error::DimensionMismatch {
                        context: "Mdp::new successor dimension",
                        expected: format!("{n_states} states"),
                        found: format!("{} / {}", row.len(), reward[s][a].len()),
                    });
                }
                validate_distribution_row(row, "Mdp transition", s * n_actions + a, ROW_SUM_TOL)?;
                if reward[s][a].iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
                    return Err(Error::InvalidInput {
                        context: "Mdp::new",
                        detail: format!("negative or non-finite reward at state {s}, action {a}"),
                    });
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &Vec<Vec<Vec<f64>>> {
        &self.transition
    }

    pub fn reward(&self) -> &Vec<Vec<Vec<f64>>> {
        &self.reward
    }
}

/// A stationary policy `mu(s, a)`; each row is a distribution over actions.
#[derive(Debug, Clone)]
pub struct Policy {
    probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput {
                context: "Policy::new",
                detail: "empty policy".into(),
            });
        }
        for (s, row) in probs.iter().enumerate() {
            validate_distribution_row(row, "Policy", s, ROW_SUM_TOL)?;
        }
        Ok(Self { probs })
    }

    /// The uniform policy over `n_actions` actions in each of `n_states` states.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            probs: vec![vec![p; n_actions]; n_states],
        }
    }

    pub fn probs(&self) -> &Vec<Vec<f64>> {
        &self.probs
    }
}

fn validate_distribution_row(
    row: &[f64],
    context: &'static str,
    index: usize,
    tol: f64,
) -> Result<()> {
    if row
        .iter()
        .any(|&p| !(0.0..=1.0 + tol).contains(&p) || !p.is_finite())
    {
        return Err(Error::InvalidInput {
            context,
            detail: format!("row {index} has an entry outside [0, 1]"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::RowSum {
            context,
            row: index,
            sum,
            tol,
        });
    }
    Ok(())
}

/// The policy-induced chain: transition matrix, induced rewards, and (once
/// computed) its stationary distribution.
#[derive(Debug, Clone)]
pub struct InducedChain {
    p_mu: DMatrix<f64>,
    reward_mu: DMatrix<f64>,
    r_inf: f64,
    gamma: f64,
    pi: Option<DVector<f64>>,
}

impl InducedChain {
    /// Build a chain directly from an induced transition matrix and reward
    /// table. `pi` remains unset.
    pub fn from_parts(p_mu: DMatrix<f64>, reward_mu: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let n = p_mu.nrows();
        if p_mu.ncols() != n || reward_mu.nrows() != n || reward_mu.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "InducedChain::from_parts",
                expected: format!("{n}x{n}"),
                found: format!(
                    "p {}x{}, r {}x{}",
                    p_mu.nrows(),
                    p_mu.ncols(),
                    reward_mu.nrows(),
                    reward_mu.ncols()
                ),
            });
        }
        for s in 0..n {
            let row: Vec<f64> = p_mu.row(s).iter().copied().collect();
            validate_distribution_row(&row, "InducedChain transition", s, ROW_SUM_TOL)?;
        }
        if reward_mu.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput {
                context: "InducedChain::from_parts",
                detail: "negative or non-finite induced reward".into(),
            });
        }
        let r_inf = reward_mu.iter().fold(0.0_f64, |m, &r| m.max(r));
        Ok(Self {
            p_mu,
            reward_mu,
            r_inf,
            gamma,
            pi: None,
        })
    }

    pub fn n_states(&self) -> usize {
        self.p_mu.nrows()
    }

    pub fn p_mu(&self) -> &DMatrix<f64> {
        &self.p_mu
    }

    pub fn reward_mu(&self) -> &DMatrix<f64> {
        &self.reward_mu
    }

    /// `r_inf = max_{s,s'} r(s, s')`, an upper bound on induced rewards.
    pub fn r_inf(&self) -> f64 {
        self.r_inf
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The stationary distribution, if computed.
    pub fn pi(&self) -> Result<&DVector<f64>> {
        self.pi.as_ref().ok_or(Error::StationaryNotComputed)
    }

    pub fn has_pi(&self) -> bool {
        self.pi.is_some()
    }

    /// Compute and store the stationary distribution; see
    /// [`stationary_distribution`].
    pub fn solve_stationary(&mut self, tol: f64) -> Result<()> {
        let pi = stationary_distribution(self, tol)?;
        self.pi = Some(pi);
        Ok(())
    }

    /// Install an externally supplied invariant distribution after checking
    /// `pi P_mu = pi` to `tol`. Useful for chains that are irreducible but
    /// periodic, where [`stationary_distribution`] refuses to run.
    pub fn set_stationary(&mut self, pi: DVector<f64>, tol: f64) -> Result<()> {
        let n = self.n_states();
        if pi.len() != n {
            return Err(Error::DimensionMismatch {
                context: "set_stationary",
                expected: format!("{n}"),
                found: format!("{}", pi.len()),
            });
        }
        let residual = stationary_residual(&self.p_mu, &pi);
        if residual > tol {
            return Err(Error::NumericalFailure {
                context: "set_stationary",
                residual,
                tol,
            });
        }
        self.pi = Some(pi);
        Ok(())
    }

    /// Expected one-step reward per state, `rbar(s) = sum_s' P(s,s') r(s,s')`.
    pub fn expected_reward(&self) -> DVector<f64> {
        let n = self.n_states();
        DVector::from_fn(n, |s, _| {
            (0..n)
                .map(|t| self.p_mu[(s, t)] * self.reward_mu[(s, t)])
                .sum()
        })
    }
}

/// Marginalize the MDP over the policy's action distribution.
///
/// `p_mu(s,s') = sum_a mu(s,a) P(s'|s,a)` and
/// `r(s,s') = sum_a mu(s,a) r(s,a,s')`. The stationary distribution is left
/// unset; call [`InducedChain::solve_stationary`] once ergodicity is
/// established.
pub fn induce_chain(mdp: &Mdp, policy: &Policy) -> Result<InducedChain> {
    let n = mdp.n_states();
    let a_count = mdp.n_actions();
    if policy.probs().len() != n {
        return Err(Error::DimensionMismatch {
            context: "induce_chain policy states",
            expected: format!("{n}"),
            found: format!("{}", policy.probs().len()),
        });
    }
    if policy.probs().iter().any(|row| row.len() != a_count) {
        return Err(Error::DimensionMismatch {
            context: "induce_chain policy actions",
            expected: format!("{a_count}"),
            found: "ragged policy row".into(),
        });
    }
    let mut p_mu = DMatrix::zeros(n, n);
    let mut reward_mu = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..a_count {
            let w = policy.probs()[s][a];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                p_mu[(s, s2)] += w * mdp.transition()[s][a][s2];
                reward_mu[(s, s2)] += w * mdp.reward()[s][a][s2];
            }
        }
    }
    InducedChain::from_parts(p_mu, reward_mu, mdp.gamma())
}

/// Outcome of the ergodicity check: either fine, or a named failure with a
/// witness.
#[derive(Debug, Clone, PartialEq)]
pub enum ErgodicityReport {
    Ergodic,
    Failed(ErgodicityFailure),
}

impl ErgodicityReport {
    pub fn is_ergodic(&self) -> bool {
        matches!(self, ErgodicityReport::Ergodic)
    }

    pub fn into_result(self) -> Result<()> {
        match self {
            ErgodicityReport::Ergodic => Ok(()),
            ErgodicityReport::Failed(f) => Err(Error::NotErgodic(f)),
        }
    }
}

/// Irreducibility via forward/backward reachability on the positive-entry
/// digraph, aperiodicity via the gcd of return times to state 0 over walk
/// lengths up to `2n`.
pub fn check_ergodic(chain: &InducedChain) -> ErgodicityReport {
    let n = chain.n_states();
    let p = chain.p_mu();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|s| (0..n).filter(|&t| p[(s, t)] > 0.0).collect())
        .collect();
    let radj: Vec<Vec<usize>> = (0..n)
        .map(|t| (0..n).filter(|&s| p[(s, t)] > 0.0).collect())
        .collect();

    let forward = reachable(&adj, 0);
    if let Some(t) = (0..n).find(|&t| !forward[t]) {
        return ErgodicityReport::Failed(ErgodicityFailure::NotIrreducible { from: 0, to: t });
    }
    let backward = reachable(&radj, 0);
    if let Some(s) = (0..n).find(|&s| !backward[s]) {
        return ErgodicityReport::Failed(ErgodicityFailure::NotIrreducible { from: s, to: 0 });
    }

    // Exact-length reachability from state 0; gcd of observed return times.
    let mut frontier = vec![false; n];
    frontier[0] = true;
    let mut g: usize = 0;
    for len in 1..=(2 * n) {
        let mut next = vec![false; n];
        for s in 0..n {
            if frontier[s] {
                for &t in &adj[s] {
                    next[t] = true;
                }
            }
        }
        frontier = next;
        if frontier[0] {
            g = gcd(g, len);
            if g == 1 {
                return ErgodicityReport::Ergodic;
            }
        }
    }
    if g == 1 {
        ErgodicityReport::Ergodic
    } else {
        ErgodicityReport::Failed(ErgodicityFailure::Periodic {
            state: 0,
            period: g.max(2),
        })
    }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        for &t in &adj[s] {
            if !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    seen
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solve `pi P_mu = pi`, `sum pi = 1` directly: least squares on
/// `(P_mu^T - I)` with the normalization row appended. Requires an ergodic
/// chain; the residual `||pi P_mu - pi||_inf` must come in at or below `tol`.
pub fn stationary_distribution(chain: &InducedChain, tol: f64) -> Result<DVector<f64>> {
    check_ergodic(chain).into_result()?;
    let n = chain.n_states();
    let p = chain.p_mu();

    let mut system = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = p[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        system[(n, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;

    let svd = system.svd(true, true);
    let pi = svd.solve(&rhs, 0.0).map_err(|_| Error::SingularSystem {
        cond: f64::INFINITY,
    })?;

    let sum: f64 = pi.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::NumericalFailure {
            context: "stationary_distribution normalization",
            residual: sum,
            tol,
        });
    }
    let pi = pi / sum;

    let residual = stationary_residual(p, &pi);
    if residual > tol {
        return Err(Error::NumericalFailure {
            context: "stationary_distribution",
            residual,
            tol,
        });
    }
    if pi.iter().any(|&x| x <= 0.0) {
        return Err(Error::NumericalFailure {
            context: "stationary_distribution positivity",
            residual: pi.iter().fold(f64::INFINITY, |m, &x| m.min(x)),
            tol,
        });
    }
    Ok(pi)
}

fn stationary_residual(p: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    let image = p.transpose() * pi;
    (image - pi).amax()
}

/// Total variation distance `(1/2) sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "tv_distance",
            expected: format!("{}", p.len()),
            found: format!("{}", q.len()),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// A fitted geometric mixing envelope `max_s TV(P^t(s,.), pi) <= C alpha^t`.
///
/// When the chain reaches the TV floor before `t = 2` there is nothing to
/// fit; the sentinel convention `alpha = f64::MIN_POSITIVE` marks exact
/// mixing while keeping `log(1/alpha)` finite downstream.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixingFit {
    pub c_const: f64,
    pub alpha: f64,
    pub horizon_used: usize,
    /// Worst absolute log-domain residual of the least-squares fit, before
    /// envelope inflation.
    pub max_residual: f64,
}

impl MixingFit {
    pub fn is_exact_mixing(&self) -> bool {
        self.alpha <= f64::MIN_POSITIVE
    }
}

/// Fit `(C, alpha)`: least squares of `log m_t` against `t` over the points
/// above [`MIXING_FLOOR`], then inflate `C` minimally so `C alpha^t >= m_t`
/// at every fitted point.
pub fn estimate_mixing(chain: &InducedChain, horizon: usize) -> Result<MixingFit> {
    check_ergodic(chain).into_result()?;
    if horizon < 10 {
        return Err(Error::InvalidInput {
            context: "estimate_mixing",
            detail: format!("horizon {horizon} < 10"),
        });
    }
    let pi = chain.pi()?;
    let n = chain.n_states();
    let pi_slice: Vec<f64> = pi.iter().copied().collect();

    let mut power = DMatrix::<f64>::identity(n, n);
    let mut decay = Vec::with_capacity(horizon + 1);
    for _t in 0..=horizon {
        let mut worst = 0.0_f64;
        for s in 0..n {
            let row: Vec<f64> = power.row(s).iter().copied().collect();
            worst = worst.max(tv_distance(&row, &pi_slice)?);
        }
        decay.push(worst);
        power = &power * chain.p_mu();
    }

    let fitted: Vec<(f64, f64)> = decay
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > MIXING_FLOOR)
        .map(|(t, &m)| (t as f64, m.ln()))
        .collect();

    if fitted.len() < 2 {
        // Mixed below the floor before t = 2: exact-mixing sentinel.
        let c0 = decay[0].max(f64::MIN_POSITIVE);
        return Ok(MixingFit {
            c_const: c0,
            alpha: f64::MIN_POSITIVE,
            horizon_used: horizon,
            max_residual: 0.0,
        });
    }

    let m = fitted.len() as f64;
    let mean_t: f64 = fitted.iter().map(|(t, _)| t).sum::<f64>() / m;
    let mean_y: f64 = fitted.iter().map(|(_, y)| y).sum::<f64>() / m;
    let var_t: f64 = fitted.iter().map(|(t, _)| (t - mean_t).powi(2)).sum();
    let cov: f64 = fitted
        .iter()
        .map(|(t, y)| (t - mean_t) * (y - mean_y))
        .sum();
    let slope = cov / var_t;
    let intercept = mean_y - slope * mean_t;

    let alpha = slope.exp().clamp(f64::MIN_POSITIVE, 1.0 - 1e-12);
    let log_alpha = alpha.ln();
    let max_residual = fitted
        .iter()
        .map(|(t, y)| (y - (intercept + slope * t)).abs())
        .fold(0.0_f64, f64::max);

    // Envelope inflation: C = max m_t / alpha^t over fitted points.
    let log_c = fitted
        .iter()
        .map(|(t, y)| y - log_alpha * t)
        .fold(f64::NEG_INFINITY, f64::max);
    let c_const = log_c.exp();

    Ok(MixingFit {
        c_const,
        alpha,
        horizon_used: horizon,
        max_residual,
    })
}

/// Maximum over start states of `TV(P^t(s,.), pi)` for `t = 0..=horizon`.
/// Exposed for envelope verification.
pub fn tv_decay_profile(chain: &InducedChain, horizon: usize) -> Result<Vec<f64>> {
    let pi = chain.pi()?;
    let n = chain.n_states();
    let pi_slice: Vec<f64> = pi.iter().copied().collect();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let mut worst = 0.0_f64;
        for s in 0..n {
            let row: Vec<f64> = power.row(s).iter().copied().collect();
            worst = worst.max(tv_distance(&row, &pi_slice)?);
        }
        out.push(worst);
        power = &power * chain.p_mu();
    }
    Ok(out)
}

/// One Markov transition `(s_t, s_{t+1}, r_t)`.
pub type Transition = (usize, usize, f64);

/// Sample a state via inverse CDF on a single uniform draw. Shared by every
/// sampler in the crate so that equal seeds give equal paths.
pub(crate) fn draw_from_cumulative(cum_row: &[f64], u: f64) -> usize {
    let n = cum_row.len();
    let mut idx = cum_row.partition_point(|&c| c <= u);
    if idx >= n {
        idx = n - 1;
    }
    idx
}

pub(crate) fn cumulative_rows(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut cum = vec![0.0; n * n];
    for s in 0..n {
        let mut acc = 0.0;
        for t in 0..n {
            acc += p[(s, t)];
            cum[s * n + t] = acc;
        }
    }
    cum
}

pub(crate) fn draw_stationary(pi: &DVector<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pi.len() - 1
}

/// Markov-sample a path of `steps` transitions starting from `s0`.
/// Deterministic in `(chain, s0, steps, seed)`.
pub fn sample_trajectory(
    chain: &InducedChain,
    s0: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Transition>> {
    let n = chain.n_states();
    if s0 >= n {
        return Err(Error::InvalidInput {
            context: "sample_trajectory",
            detail: format!("start state {s0} out of range 0..{n}"),
        });
    }
    let cum = cumulative_rows(chain.p_mu());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(steps);
    let mut s = s0;
    for _ in 0..steps {
        let u: f64 = rng.random();
        let s_next = draw_from_cumulative(&cum[s * n..(s + 1) * n], u);
        path.push((s, s_next, chain.reward_mu()[(s, s_next)]));
        s = s_next;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state_chain(a: f64, b: f64) -> InducedChain {
        let p = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 2.0]);
        InducedChain::from_parts(p, r, 0.9).unwrap()
    }

    #[test]
    fn one_action_mdp_induces_its_own_rows() {
        let p = vec![vec![vec![0.2, 0.8]], vec![vec![0.6, 0.4]]];
        let r = vec![vec![vec![1.0, 2.0]], vec![vec![0.0, 3.0]]];
        let mdp = Mdp::new(p, r, 0.9).unwrap();
        let chain = induce_chain(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert_eq!(chain.p_mu()[(0, 1)], 0.8);
        assert_eq!(chain.p_mu()[(1, 0)], 0.6);
        assert_eq!(chain.reward_mu()[(1, 1)], 3.0);
        assert_eq!(chain.r_inf(), 3.0);
        assert!(!chain.has_pi());
    }

    #[test]
    fn uniform_two_action_policy_averages_rows() {
        // Action 0 sends everything to state 0, action 1 to state 1.
        let row_a = vec![1.0, 0.0, 0.0];
        let row_b = vec![0.0, 1.0, 0.0];
        let p = vec![vec![row_a.clone(), row_b.clone()]; 3];
        let r = vec![vec![vec![1.0; 3], vec![0.0; 3]]; 3];
        let mdp = Mdp::new(p, r, 0.5).unwrap();
        let chain = induce_chain(&mdp, &Policy::uniform(3, 2)).unwrap();
        for s in 0..3 {
            assert_abs_diff_eq!(chain.p_mu()[(s, 0)], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(chain.p_mu()[(s, 1)], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(chain.p_mu()[(s, 2)], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn induced_rows_match_monte_carlo_frequencies() {
        // Random 5-state, 3-action MDP; compare p_mu against the empirical
        // frequency of s -> s' when actions are drawn from mu.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 5;
        let a_cnt = 3;
        let mut trans = Vec::new();
        let mut rew = Vec::new();
        for _ in 0..n {
            let mut per_a = Vec::new();
            let mut per_a_r = Vec::new();
            for _ in 0..a_cnt {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
                let sum: f64 = raw.iter().sum();
                per_a.push(raw.iter().map(|x| x / sum).collect::<Vec<_>>());
                per_a_r.push((0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            }
            trans.push(per_a);
            rew.push(per_a_r);
        }
        let mut pol = Vec::new();
        for _ in 0..n {
            let raw: Vec<f64> = (0..a_cnt).map(|_| rng.random::<f64>() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            pol.push(raw.iter().map(|x| x / sum).collect::<Vec<_>>());
        }
        let mdp = Mdp::new(trans.clone(), rew, 0.9).unwrap();
        let policy = Policy::new(pol.clone()).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();

        let samples = 1_000_000usize;
        let per_state = samples / n;
        for s in 0..n {
            let mut counts = vec![0usize; n];
            for _ in 0..per_state {
                let ua: f64 = rng.random();
                let mut acc = 0.0;
                let mut a = a_cnt - 1;
                for (i, &w) in pol[s].iter().enumerate() {
                    acc += w;
                    if ua < acc {
                        a = i;
                        break;
                    }
                }
                let us: f64 = rng.random();
                let mut acc2 = 0.0;
                let mut s2 = n - 1;
                for (j, &w) in trans[s][a].iter().enumerate() {
                    acc2 += w;
                    if us < acc2 {
                        s2 = j;
                        break;
                    }
                }
                counts[s2] += 1;
            }
            for s2 in 0..n {
                let p = chain.p_mu()[(s, s2)];
                let freq = counts[s2] as f64 / per_state as f64;
                let sigma = (p * (1.0 - p) / per_state as f64).sqrt();
                assert!(
                    (freq - p).abs() <= 3.0 * sigma + 1e-9,
                    "s={s} s'={s2}: freq {freq} vs p {p} (3 sigma {})",
                    3.0 * sigma
                );
            }
        }
    }

    #[test]
    fn two_cycle_is_periodic() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = DMatrix::zeros(2, 2);
        let chain = InducedChain::from_parts(p, r, 0.9).unwrap();
        match check_ergodic(&chain) {
            ErgodicityReport::Failed(ErgodicityFailure::Periodic { period, .. }) => {
                assert_eq!(period, 2)
            }
            other => panic!("expected period-2 failure, got {other:?}"),
        }
    }

    #[test]
    fn positive_matrix_is_ergodic() {
        let chain = two_state_chain(0.5, 0.5);
        assert!(check_ergodic(&chain).is_ergodic());
    }

    #[test]
    fn absorbing_state_is_not_irreducible() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let r = DMatrix::zeros(2, 2);
        let chain = InducedChain::from_parts(p, r, 0.9).unwrap();
        match check_ergodic(&chain) {
            ErgodicityReport::Failed(ErgodicityFailure::NotIrreducible { .. }) => {}
            other => panic!("expected irreducibility failure, got {other:?}"),
        }
    }

    #[test]
    fn stationary_of_symmetric_chains_is_uniform() {
        for (a, b) in [(0.5, 0.5), (0.1, 0.1)] {
            let chain = two_state_chain(a, b);
            let pi = stationary_distribution(&chain, 1e-10).unwrap();
            assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_asymmetric_matches_hand_solve() {
        // 0.1 pi0 = 0.5 pi1 with pi0 + pi1 = 1 gives (5/6, 1/6).
        let chain = two_state_chain(0.1, 0.5);
        let pi = stationary_distribution(&chain, 1e-10).unwrap();
        assert_abs_diff_eq!(pi[0], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn tv_distance_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            tv_distance(&[0.7, 0.3], &[0.5, 0.5]).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mixing_fit_recovers_second_eigenvalue() {
        // For [[1-a, a], [b, 1-b]] the TV decay is exactly |1-a-b|^t scaled.
        let (a, b) = (0.1, 0.3);
        let mut chain = two_state_chain(a, b);
        chain.solve_stationary(1e-10).unwrap();
        let fit = estimate_mixing(&chain, 40).unwrap();
        assert!(
            (fit.alpha - (1.0 - a - b).abs()).abs() < 1e-3,
            "alpha {}",
            fit.alpha
        );
        assert!(fit.c_const > 0.0);
    }

    #[test]
    fn rank_one_chain_hits_exact_mixing_sentinel() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        let r = DMatrix::zeros(2, 2);
        let mut chain = InducedChain::from_parts(p, r, 0.9).unwrap();
        chain.solve_stationary(1e-10).unwrap();
        let fit = estimate_mixing(&chain, 20).unwrap();
        assert!(fit.is_exact_mixing());
        assert!(fit.c_const > 0.0);
    }

    #[test]
    fn mixing_envelope_dominates_observed_decay() {
        let mut chain = two_state_chain(0.05, 0.2);
        chain.solve_stationary(1e-10).unwrap();
        let horizon = 60;
        let fit = estimate_mixing(&chain, horizon).unwrap();
        let profile = tv_decay_profile(&chain, horizon).unwrap();
        for (t, &m) in profile.iter().enumerate() {
            assert!(
                fit.c_const * fit.alpha.powi(t as i32) + 1e-9 >= m,
                "envelope violated at t={t}: {m}"
            );
        }
    }

    #[test]
    fn deterministic_chain_trajectory_is_the_orbit() {
        // Permutation rows: 0 -> 1 -> 2 -> 0.
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let r = DMatrix::zeros(3, 3);
        let chain = InducedChain::from_parts(p, r, 0.9).unwrap();
        for seed in [1u64, 99, 12345] {
            let path = sample_trajectory(&chain, 0, 6, seed).unwrap();
            let states: Vec<usize> = path.iter().map(|t| t.0).collect();
            assert_eq!(states, vec![0, 1, 2, 0, 1, 2]);
        }
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let mut chain = two_state_chain(0.3, 0.4);
        chain.solve_stationary(1e-10).unwrap();
        let a = sample_trajectory(&chain, 0, 500, 77).unwrap();
        let b = sample_trajectory(&chain, 0, 500, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn trajectory_frequencies_match_rows() {
        let mut chain = two_state_chain(0.3, 0.4);
        chain.solve_stationary(1e-10).unwrap();
        let steps = 1_000_000;
        let path = sample_trajectory(&chain, 0, steps, 2024).unwrap();
        let mut visits = [0usize; 2];
        let mut moves = [[0usize; 2]; 2];
        for (s, s2, _) in path {
            visits[s] += 1;
            moves[s][s2] += 1;
        }
        for s in 0..2 {
            for s2 in 0..2 {
                let p = chain.p_mu()[(s, s2)];
                let m = visits[s] as f64;
                let freq = moves[s][s2] as f64 / m;
                let sigma = (p * (1.0 - p) / m).sqrt();
                assert!(
                    (freq - p).abs() <= 3.0 * sigma + 1e-9,
                    "transition {s}->{s2}: {freq} vs {p}"
                );
            }
        }
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let p = vec![vec![vec![0.5, 0.4]]];
        let r = vec![vec![vec![0.0, 0.0]]];
        assert!(Mdp::new(p, r, 0.9).is_err());
        let neg = vec![vec![vec![1.0, 0.0]]];
        let rneg = vec![vec![vec![-1.0, 0.0]]];
        assert!(Mdp::new(neg, rneg, 0.9).is_err());
    }
}
