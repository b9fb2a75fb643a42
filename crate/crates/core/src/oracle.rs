//! Exact ground truth for small instances.
//!
//! With `D = diag(pi)`, the TD fixed point solves the linear system
//!
//! ```text
//! A theta* = b,   A = Phi^T D (I - gamma P_mu) Phi,   b = Phi^T D rbar,
//! ```
//!
//! equivalently the projected Bellman equation
//! `Phi theta* = Pi_D T_mu(Phi theta*)` with `Pi_D` the D-weighted least
//! squares projection onto the feature span. The potential driven to zero by
//! TD(0) is
//!
//! ```text
//! f(theta) = (1-gamma) ||V_theta - V*||_D^2 + gamma ||V_theta - V*||_Dir^2
//!          = (theta - theta*)^T Phi^T [(1-gamma) D + gamma L] Phi (theta - theta*),
//! ```
//!
//! with `L = D - W`, `W = (D P_mu + P_mu^T D) / 2`, and it ties to the
//! stationary gradient through the splitting identity
//! `<-gbar(theta), theta - theta*> = f(theta) - f(theta*)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::{dirichlet_seminorm_sq, value_of, weighted_norm_sq, FeatureMap, ValueVector};
use crate::mdp::InducedChain;

/// Residual tolerance enforced on `A theta* = b` at construction.
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Residual tolerance enforced on the projected Bellman equation.
pub const PROJECTION_TOL: f64 = 1e-8;

/// Exact quantities for one (chain, features) instance.
#[derive(Debug, Clone)]
pub struct TdOracle {
    a_matrix: DMatrix<f64>,
    b_vec: DVector<f64>,
    theta_star: DVector<f64>,
    d_diag: DVector<f64>,
    w_matrix: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    hessian: DMatrix<f64>,
    cond_a: f64,
}

impl TdOracle {
    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn b_vec(&self) -> &DVector<f64> {
        &self.b_vec
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn d_diag(&self) -> &DVector<f64> {
        &self.d_diag
    }

    pub fn w_matrix(&self) -> &DMatrix<f64> {
        &self.w_matrix
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// `2 Phi^T [(1-gamma) D + gamma L] Phi`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn cond_a(&self) -> f64 {
        self.cond_a
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// JSON summary for experiment reports.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "theta_star": self.theta_star.iter().copied().collect::<Vec<f64>>(),
            "f_min_eig": hessian_min_eigenvalue(self),
            "cond_A": self.cond_a,
        })
    }
}

/// D-weighted projection of `v` onto the column span of `Phi`:
/// `Pi_D v = Phi (Phi^T D Phi)^{-1} Phi^T D v`.
pub fn project_d(
    chain: &InducedChain,
    features: &FeatureMap,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let pi = chain.pi()?;
    let d = DMatrix::from_diagonal(pi);
    let phi = features.phi();
    let gram = phi.transpose() * &d * phi;
    let rhs = phi.transpose() * &d * v;
    let x = gram.lu().solve(&rhs).ok_or(Error::SingularSystem {
        cond: f64::INFINITY,
    })?;
    Ok(phi * x)
}

/// Build the exact oracle: assemble `A`, `b`, solve the fixed point, and
/// validate both characterizations (`A theta* = b` and the projected Bellman
/// equation) before returning.
pub fn solve_fixed_point(chain: &InducedChain, features: &FeatureMap) -> Result<TdOracle> {
    let pi = chain.pi()?;
    let n = chain.n_states();
    if features.n_states() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_fixed_point",
            expected: format!("{n} feature rows"),
            found: format!("{}", features.n_states()),
        });
    }
    let gamma = chain.gamma();
    let p = chain.p_mu();
    let phi = features.phi();
    let d = DMatrix::from_diagonal(pi);

    let a_matrix = phi.transpose() * &d * (DMatrix::identity(n, n) - gamma * p) * phi;
    let rbar = chain.expected_reward();
    let b_vec = phi.transpose() * &d * &rbar;

    let svd = a_matrix.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    let cond_a = if sigma_min > 0.0 {
        sigma_max / sigma_min
    } else {
        f64::INFINITY
    };

    let lu = a_matrix.clone().lu();
    let mut theta_star = lu
        .solve(&b_vec)
        .ok_or(Error::SingularSystem { cond: cond_a })?;
    // One step of iterative refinement keeps the residual at solver floor.
    let correction = lu.solve(&(&b_vec - &a_matrix * &theta_star));
    if let Some(c) = correction {
        theta_star += c;
    }

    let residual = (&a_matrix * &theta_star - &b_vec).amax();
    if residual > FIXED_POINT_TOL {
        return Err(Error::NumericalFailure {
            context: "solve_fixed_point A theta = b",
            residual,
            tol: FIXED_POINT_TOL,
        });
    }

    // Cross-check against the projected Bellman equation.
    let v_star = phi * &theta_star;
    let t_v = bellman_apply(chain, &ValueVector::new(v_star.clone())?)?;
    let projected = project_d(chain, features, t_v.as_vector())?;
    let bellman_residual = (&projected - &v_star).amax();
    if bellman_residual > PROJECTION_TOL {
        return Err(Error::NumericalFailure {
            context: "solve_fixed_point projected Bellman equation",
            residual: bellman_residual,
            tol: PROJECTION_TOL,
        });
    }

    let w_matrix = 0.5 * (&d * p + p.transpose() * &d);
    let laplacian = &d - &w_matrix;
    let hessian = 2.0 * phi.transpose() * ((1.0 - gamma) * &d + gamma * &laplacian) * phi;

    Ok(TdOracle {
        a_matrix,
        b_vec,
        theta_star,
        d_diag: pi.clone(),
        w_matrix,
        laplacian,
        hessian,
        cond_a,
    })
}

/// `(T_mu v)(s) = sum_s' P_mu(s,s') (r(s,s') + gamma v(s'))`.
pub fn bellman_apply(chain: &InducedChain, v: &ValueVector) -> Result<ValueVector> {
    let n = chain.n_states();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            context: "bellman_apply",
            expected: format!("{n}"),
            found: format!("{}", v.len()),
        });
    }
    let p = chain.p_mu();
    let r = chain.reward_mu();
    let gamma = chain.gamma();
    let x = v.as_vector();
    let out = DVector::from_fn(n, |s, _| {
        (0..n)
            .map(|s2| p[(s, s2)] * (r[(s, s2)] + gamma * x[s2]))
            .sum()
    });
    ValueVector::new(out)
}

/// `gbar(theta) = b - A theta`; zero exactly at the fixed point.
pub fn stationary_gradient(oracle: &TdOracle, theta: &DVector<f64>) -> DVector<f64> {
    &oracle.b_vec - &oracle.a_matrix * theta
}

/// `f(theta) = (1-gamma) ||V_theta - V*||_D^2 + gamma ||V_theta - V*||_Dir^2`.
pub fn potential(
    oracle: &TdOracle,
    chain: &InducedChain,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<f64> {
    let diff = value_of(features, &(theta - &oracle.theta_star))?;
    let gamma = chain.gamma();
    let wd = weighted_norm_sq(&diff, chain.pi()?)?;
    let dir = dirichlet_seminorm_sq(&diff, chain)?;
    Ok((1.0 - gamma) * wd + gamma * dir)
}

/// `<-gbar(theta), theta - theta*> - (f(theta) - f(theta*))`; the splitting
/// identity says this is zero for every `theta`.
pub fn gradient_splitting_residual(
    oracle: &TdOracle,
    chain: &InducedChain,
    features: &FeatureMap,
    theta: &DVector<f64>,
) -> Result<f64> {
    let gbar = stationary_gradient(oracle, theta);
    let lhs = (-&gbar).dot(&(theta - &oracle.theta_star));
    let f_theta = potential(oracle, chain, features, theta)?;
    let f_star = potential(oracle, chain, features, &oracle.theta_star.clone())?;
    Ok(lhs - (f_theta - f_star))
}

/// Smallest eigenvalue of the Hessian `2 Phi^T [(1-gamma) D + gamma L] Phi`,
/// by symmetric eigendecomposition. PSD up to roundoff.
pub fn hessian_min_eigenvalue(oracle: &TdOracle) -> f64 {
    let sym = 0.5 * (oracle.hessian.clone() + oracle.hessian.transpose());
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues.min()
}
