//! Projection-free TD(0) with linear function approximation.
//!
//! The loop starts from `theta_0 = 0` and performs exactly `T` updates
//!
//! ```text
//! g_t     = (r(s_t, s_{t+1}) + gamma phi(s_{t+1})^T theta_t - phi(s_t)^T theta_t) phi(s_t)
//! eta_t   = 1 / (c phi_inf^2 ln T ln(t+3) sqrt(t+1))
//! theta_{t+1} = theta_t + eta_t g_t
//! ```
//!
//! with `c > 30 + sqrt(1302)`. No projection is applied anywhere; iterate
//! boundedness is the property under test, quantified by [`omega_c`]:
//! `E||theta_t||^2 <= omega_c^2 max{r_inf^2 / phi_inf^2, ||theta*||^2}`.
//!
//! The averaged iterate is the step-size-weighted mean
//! `theta_bar = (sum_t eta_t theta_t) / (sum_t eta_t)`, which is the
//! quantity the convexity argument actually controls; the unweighted mean
//! is also recorded for comparison. Logarithms are natural throughout.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{
    check_ergodic, cumulative_rows, draw_from_cumulative, draw_stationary, InducedChain,
};
use crate::oracle::{potential, TdOracle};

/// The admissible-constant threshold `30 + sqrt(1302)`.
pub fn c_threshold() -> f64 {
    30.0 + 1302.0_f64.sqrt()
}

/// Where the run starts: a fixed state or a draw from `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartState {
    Fixed(usize),
    StationaryDraw,
}

/// Validated algorithm configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    c_const: f64,
    total_steps: usize,
    seed: u64,
    initial_state: StartState,
    record_stride: usize,
}

impl TdConfig {
    /// Rejects `c <= 30 + sqrt(1302)`, `T < 4` (the schedule needs
    /// `ln T > 1`), and `record_stride == 0`.
    pub fn new(
        c_const: f64,
        total_steps: usize,
        seed: u64,
        initial_state: StartState,
        record_stride: usize,
    ) -> Result<Self> {
        let threshold = c_threshold();
        if !(c_const > threshold) {
            return Err(Error::ConstantBelowThreshold {
                c: c_const,
                threshold,
            });
        }
        if total_steps < 4 {
            return Err(Error::InvalidInput {
                context: "TdConfig::new",
                detail: format!("total_steps = {total_steps} < 4"),
            });
        }
        if record_stride == 0 {
            return Err(Error::InvalidInput {
                context: "TdConfig::new",
                detail: "record_stride must be >= 1".into(),
            });
        }
        Ok(Self {
            c_const,
            total_steps,
            seed,
            initial_state,
            record_stride,
        })
    }

    pub fn c_const(&self) -> f64 {
        self.c_const
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_state(&self) -> StartState {
        self.initial_state
    }

    pub fn record_stride(&self) -> usize {
        self.record_stride
    }

    /// `delta = c phi_inf^2`, the compound constant the step-size bounds use.
    pub fn delta(&self, phi_inf: f64) -> f64 {
        self.c_const * phi_inf * phi_inf
    }

    /// Same run, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out
    }
}

/// `eta_t = 1 / (c phi_inf^2 ln T ln(t+3) sqrt(t+1))`, natural logs.
pub fn step_size(t: usize, config: &TdConfig, phi_inf: f64) -> f64 {
    let ln_t = (config.total_steps as f64).ln();
    1.0 / (config.delta(phi_inf) * ln_t * ((t + 3) as f64).ln() * ((t + 1) as f64).sqrt())
}

/// One TD(0) update. Returns the new parameter vector together with the raw
/// update direction `g`.
pub fn td_update(
    theta: &DVector<f64>,
    transition: (usize, usize, f64),
    gamma: f64,
    eta: f64,
    features: &FeatureMap,
) -> (DVector<f64>, DVector<f64>) {
    let (s, s_next, r) = transition;
    let phi_s = features.row(s);
    let phi_next = features.row(s_next);
    let delta = r + gamma * phi_next.dot(theta) - phi_s.dot(theta);
    let g = delta * phi_s;
    (theta + eta * &g, g)
}

/// One recorded step of a run. `dist_to_star` and `f_value` are present only
/// when the run had an oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRow {
    pub t: usize,
    pub eta: f64,
    pub theta_norm: f64,
    pub dist_to_star: Option<f64>,
    pub f_value: Option<f64>,
    pub grad_norm: f64,
    pub ell: f64,
}

/// Full trace of a single replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
    /// Step-size-weighted average of the iterates.
    pub theta_bar: Vec<f64>,
    /// Plain mean of the iterates, kept for comparison.
    pub theta_bar_unweighted: Vec<f64>,
    pub sum_eta: f64,
    /// `f(theta_bar)` when an oracle was supplied.
    pub f_bar: Option<f64>,
    /// `sum_k eta_k <xi_k, theta_k - theta*>` when an oracle was supplied.
    pub martingale_sum: Option<f64>,
    pub seed: u64,
    pub config: TdConfig,
}

impl RunRecord {
    /// CSV with one row per recorded step. Floats print at full round-trip
    /// precision; missing oracle fields are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,eta,theta_norm,dist_to_star,f_value,grad_norm,ell\n");
        for row in &self.rows {
            let dist = row.dist_to_star.map(|v| v.to_string()).unwrap_or_default();
            let f = row.f_value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.t, row.eta, row.theta_norm, dist, f, row.grad_norm, row.ell
            ));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "theta_bar": self.theta_bar,
            "sum_eta": self.sum_eta,
            "f_bar": self.f_bar,
            "seed": self.seed,
            "config": self.config,
        })
    }
}

/// Run Algorithm 1 for `config.total_steps` updates.
///
/// Deterministic in `(chain, features, config)`: the seed drives a ChaCha
/// stream that is consumed once per transition (plus once for a stationary
/// start). Rejects non-ergodic chains and, transitively through
/// [`TdConfig`], inadmissible constants.
pub fn run_td0(
    chain: &InducedChain,
    features: &FeatureMap,
    oracle: Option<&TdOracle>,
    config: &TdConfig,
) -> Result<RunRecord> {
    check_ergodic(chain).into_result()?;
    let n = chain.n_states();
    let d = features.dim();
    if features.n_states() != n {
        return Err(Error::DimensionMismatch {
            context: "run_td0",
            expected: format!("{n} feature rows"),
            found: format!("{}", features.n_states()),
        });
    }
    let gamma = chain.gamma();
    let phi_inf = features.phi_inf();
    let r_inf = chain.r_inf();
    let t_total = config.total_steps;
    let ln_t = (t_total as f64).ln();
    let eta_base = config.delta(phi_inf) * ln_t;

    // Flat row-major copies for the hot loop.
    let phi = features.rows_flat();
    let row_norms: Vec<f64> = (0..n)
        .map(|s| {
            phi[s * d..(s + 1) * d]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let cum = cumulative_rows(chain.p_mu());
    let reward: Vec<f64> = {
        let r = chain.reward_mu();
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            for s2 in 0..n {
                out[s * n + s2] = r[(s, s2)];
            }
        }
        out
    };

    // Oracle-dependent precomputation for the O(d) conditional update mean:
    // E[g | s] = (rbar(s) + gamma (p_s^T Phi) theta - phi_s^T theta) phi_s.
    // Keeping the same expression shape as the realized TD error makes
    // xi vanish bit-exactly on deterministic rows.
    let oracle_data = oracle.map(|o| {
        let theta_star: Vec<f64> = o.theta_star().iter().copied().collect();
        let p = chain.p_mu();
        let mut mean_next = vec![0.0; n * d];
        for s in 0..n {
            for j in 0..d {
                let mut acc = 0.0;
                for s2 in 0..n {
                    acc += p[(s, s2)] * phi[s2 * d + j];
                }
                mean_next[s * d + j] = acc;
            }
        }
        let rbar = chain.expected_reward();
        let star_dot: Vec<f64> = (0..n)
            .map(|s| dot(&phi[s * d..(s + 1) * d], &theta_star))
            .collect();
        (theta_star, mean_next, rbar, star_dot)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = match config.initial_state {
        StartState::Fixed(s0) => {
            if s0 >= n {
                return Err(Error::InvalidInput {
                    context: "run_td0",
                    detail: format!("initial state {s0} out of range 0..{n}"),
                });
            }
            s0
        }
        StartState::StationaryDraw => {
            let pi = chain.pi()?;
            draw_stationary(pi, rng.random())
        }
    };

    let mut theta = vec![0.0_f64; d];
    let mut weighted = vec![0.0_f64; d];
    let mut unweighted = vec![0.0_f64; d];
    let mut sum_eta = 0.0;
    let mut martingale = oracle.map(|_| 0.0_f64);
    let mut rows = Vec::new();

    for t in 0..t_total {
        let eta = 1.0 / (eta_base * ((t + 3) as f64).ln() * ((t + 1) as f64).sqrt());
        for j in 0..d {
            weighted[j] += eta * theta[j];
            unweighted[j] += theta[j];
        }
        sum_eta += eta;

        let u: f64 = rng.random();
        let s_next = draw_from_cumulative(&cum[state * n..(state + 1) * n], u);
        let r = reward[state * n + s_next];
        let phi_s = &phi[state * d..(state + 1) * d];
        let phi_next = &phi[s_next * d..(s_next + 1) * d];
        let dot_s = dot(phi_s, &theta);
        let dot_next = dot(phi_next, &theta);
        let delta = r + gamma * dot_next - dot_s;

        if t % config.record_stride == 0 {
            let theta_norm = norm(&theta);
            let (dist, f_value) = if let Some((theta_star, _, _, _)) = &oracle_data {
                let dist = dist_to(&theta, theta_star);
                let tv = DVector::from_column_slice(&theta);
                let f = potential(oracle.unwrap(), chain, features, &tv)?;
                (Some(dist), Some(f))
            } else {
                (None, None)
            };
            rows.push(RecordRow {
                t,
                eta,
                theta_norm,
                dist_to_star: dist,
                f_value,
                grad_norm: delta.abs() * row_norms[state],
                ell: r_inf * phi_inf + 2.0 * phi_inf * phi_inf * theta_norm,
            });
        }

        if let Some((_, mean_next, rbar, star_dot)) = &oracle_data {
            // xi_t = (delta_t - E[delta | s_t]) phi(s_t); both terms share the
            // phi(s_t) direction, so the inner product collapses to scalars.
            let mean_dot = dot(&mean_next[state * d..(state + 1) * d], &theta);
            let cond_scalar = rbar[state] + gamma * mean_dot - dot_s;
            let xi_scalar = delta - cond_scalar;
            let inner = dot_s - star_dot[state];
            *martingale.as_mut().unwrap() += eta * xi_scalar * inner;
        }

        let step = eta * delta;
        for j in 0..d {
            theta[j] += step * phi_s[j];
        }
        state = s_next;
    }

    let theta_bar: Vec<f64> = weighted.iter().map(|x| x / sum_eta).collect();
    let theta_bar_unweighted: Vec<f64> = unweighted.iter().map(|x| x / t_total as f64).collect();
    let f_bar = match oracle {
        Some(o) => Some(potential(
            o,
            chain,
            features,
            &DVector::from_column_slice(&theta_bar),
        )?),
        None => None,
    };

    Ok(RunRecord {
        rows,
        theta_bar,
        theta_bar_unweighted,
        sum_eta,
        f_bar,
        martingale_sum: martingale,
        seed: config.seed,
        config: config.clone(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist_to(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The iterate-bound constant
///
/// ```text
/// omega_c = (2c^2 + 72c + 417) / (2c^2 - 120c - 804)
///         + sqrt((4c^4 + 504c^3 - 5668c^2 - 53184c - 2991) / (4 (c^2 - 60c - 402)^2))
/// ```
///
/// finite for `c > 30 + sqrt(1302)`, decreasing in `c`, tending to 2 as
/// `c -> infinity`.
pub fn omega_c(c: f64) -> Result<f64> {
    let threshold = c_threshold();
    if !(c > threshold) {
        return Err(Error::ConstantBelowThreshold { c, threshold });
    }
    let first = (2.0 * c * c + 72.0 * c + 417.0) / (2.0 * c * c - 120.0 * c - 804.0);
    let q = c * c - 60.0 * c - 402.0;
    let num = 4.0 * c.powi(4) + 504.0 * c.powi(3) - 5668.0 * c * c - 53184.0 * c - 2991.0;
    let second = (num / (4.0 * q * q)).sqrt();
    Ok(first + second)
}

/// Result of the minimum-horizon check
/// `ln T >= max{C sqrt(u+1), (u+1)^(3/4)}` with
/// `u = ln(C sqrt T) / ln(1/alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTReport {
    pub ok: bool,
    /// `ln T - max{...}`; positive when the condition holds.
    pub margin: f64,
    pub u: f64,
    pub required: f64,
}

/// Evaluate the horizon condition of the convergence guarantee. The
/// exact-mixing sentinel (`alpha = f64::MIN_POSITIVE`) makes the condition
/// trivially true; a negative `u` (chain already mixed at `t = 0`) is
/// clamped to zero.
pub fn min_t_condition(c_const: f64, alpha: f64, total_steps: usize) -> Result<MinTReport> {
    if !(c_const > 0.0) || total_steps == 0 {
        return Err(Error::InvalidInput {
            context: "min_t_condition",
            detail: format!("need C > 0 and T >= 1, got C = {c_const}, T = {total_steps}"),
        });
    }
    let ln_t = (total_steps as f64).ln();
    if alpha <= f64::MIN_POSITIVE {
        return Ok(MinTReport {
            ok: true,
            margin: ln_t,
            u: 0.0,
            required: 0.0,
        });
    }
    if !(alpha < 1.0) {
        return Err(Error::InvalidInput {
            context: "min_t_condition",
            detail: format!("alpha = {alpha} not in (0, 1)"),
        });
    }
    let u = ((c_const * (total_steps as f64).sqrt()).ln() / (1.0 / alpha).ln()).max(0.0);
    let required = (c_const * (u + 1.0).sqrt()).max((u + 1.0).powf(0.75));
    Ok(MinTReport {
        ok: ln_t >= required,
        margin: ln_t - required,
        u,
        required,
    })
}

/// Across-replication check of the bounded-iterates theorem:
/// at every recorded `t`, `mean ||theta_t||^2 + 2 stderr` must sit below
/// `omega_c^2 max{r_inf^2 / phi_inf^2, ||theta*||^2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateBoundReport {
    pub bound: f64,
    pub worst_ratio: f64,
    pub worst_t: usize,
    /// `None` when there were too few replications for a verdict.
    pub pass: Option<bool>,
    pub replications: usize,
    pub warning: Option<String>,
}

pub fn iterate_bound_check(
    records: &[RunRecord],
    oracle: &TdOracle,
    chain: &InducedChain,
    features: &FeatureMap,
    config: &TdConfig,
) -> Result<IterateBoundReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput {
            context: "iterate_bound_check",
            detail: "no records".into(),
        });
    }
    let rows = records[0].rows.len();
    for rec in records {
        // Replications differ only in their derived seeds.
        if rec.config.with_seed(config.seed()) != *config {
            return Err(Error::InvalidInput {
                context: "iterate_bound_check",
                detail: "records do not share the configuration".into(),
            });
        }
        if rec.rows.len() != rows {
            return Err(Error::InvalidInput {
                context: "iterate_bound_check",
                detail: "records have mismatched recording grids".into(),
            });
        }
    }

    let omega = omega_c(config.c_const())?;
    let theta_star_sq = oracle.theta_star().norm_squared();
    let ratio_term = chain.r_inf() * chain.r_inf() / (features.phi_inf() * features.phi_inf());
    let bound = omega * omega * ratio_term.max(theta_star_sq);

    let m = records.len();
    let mut worst_ratio = 0.0_f64;
    let mut worst_t = 0;
    let mut all_below = true;
    for i in 0..rows {
        let values: Vec<f64> = records
            .iter()
            .map(|r| r.rows[i].theta_norm * r.rows[i].theta_norm)
            .collect();
        let mean = values.iter().sum::<f64>() / m as f64;
        let stderr = if m > 1 {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        let stat = mean + 2.0 * stderr;
        let ratio = if bound > 0.0 {
            stat / bound
        } else if stat == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_t = records[0].rows[i].t;
        }
        if stat > bound {
            all_below = false;
        }
    }

    let (pass, warning) = if m < 30 {
        (
            None,
            Some(format!(
                "only {m} replications; need >= 30 for a pass/fail verdict"
            )),
        )
    } else {
        (Some(all_below), None)
    };

    Ok(IterateBoundReport {
        bound,
        worst_ratio,
        worst_t,
        pass,
        replications: m,
        warning,
    })
}
