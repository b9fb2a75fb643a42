//! Linear value architecture: feature maps `Phi`, value vectors `V_theta = Phi theta`,
//! the pi-weighted norm, and the Dirichlet seminorm
//!
//! ```text
//! ||V||_Dir^2 = (1/2) sum_{s,s'} pi(s) P_mu(s,s') (V(s') - V(s))^2,
//! ```
//!
//! which vanishes exactly on constant vectors. [`adversarial_features`]
//! builds the explicit feature block that drives the Hessian's smallest
//! eigenvalue to `Theta(eps^2)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::InducedChain;

/// Relative rank-certification threshold: full rank requires
/// `sigma_min > RANK_RTOL * sigma_max`.
pub const RANK_RTOL: f64 = 1e-10;

/// A validated feature matrix: full column rank, with
/// `phi_inf = max_s ||phi(s)||_2` attained by some row.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    phi_inf: f64,
    rank_ok: bool,
}

impl FeatureMap {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi_inf(&self) -> f64 {
        self.phi_inf
    }

    pub fn rank_ok(&self) -> bool {
        self.rank_ok
    }

    /// Row `s` as a dense vector (the feature vector of state `s`).
    pub fn row(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }

    /// Row-major copy of the feature matrix for tight inner loops.
    pub fn rows_flat(&self) -> Vec<f64> {
        let (n, d) = (self.n_states(), self.dim());
        let mut out = vec![0.0; n * d];
        for s in 0..n {
            for j in 0..d {
                out[s * d + j] = self.phi[(s, j)];
            }
        }
        out
    }
}

/// A value function over states; entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(DVector<f64>);

impl ValueVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput {
                context: "ValueVector::new",
                detail: "non-finite entry".into(),
            });
        }
        Ok(Self(v))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }
}

/// Validate a raw matrix into a [`FeatureMap`]: requires `n >= d >= 1` and
/// full column rank (relative singular-value test).
pub fn build_feature_map(phi: DMatrix<f64>) -> Result<FeatureMap> {
    let (n, d) = (phi.nrows(), phi.ncols());
    if d < 1 || n < d {
        return Err(Error::InvalidInput {
            context: "build_feature_map",
            detail: format!("need n >= d >= 1, got n = {n}, d = {d}"),
        });
    }
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput {
            context: "build_feature_map",
            detail: "non-finite feature entry".into(),
        });
    }
    let svd = phi.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_min > RANK_RTOL * sigma_max) || sigma_max == 0.0 {
        return Err(Error::RankDeficient {
            sigma_min,
            sigma_max,
        });
    }
    let phi_inf = (0..n).map(|s| phi.row(s).norm()).fold(0.0_f64, f64::max);
    Ok(FeatureMap {
        phi,
        phi_inf,
        rank_ok: true,
    })
}

/// `V_theta = Phi theta`.
pub fn value_of(features: &FeatureMap, theta: &DVector<f64>) -> Result<ValueVector> {
    if theta.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            context: "value_of",
            expected: format!("{}", features.dim()),
            found: format!("{}", theta.len()),
        });
    }
    ValueVector::new(features.phi() * theta)
}

/// `||v||_D^2 = sum_s pi(s) v(s)^2`.
pub fn weighted_norm_sq(v: &ValueVector, pi: &DVector<f64>) -> Result<f64> {
    if v.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            context: "weighted_norm_sq",
            expected: format!("{}", pi.len()),
            found: format!("{}", v.len()),
        });
    }
    Ok(v.as_vector()
        .iter()
        .zip(pi.iter())
        .map(|(x, w)| w * x * x)
        .sum())
}

/// `||v||_Dir^2 = (1/2) sum_{s,s'} pi(s) P(s,s') (v(s') - v(s))^2`.
/// Zero exactly when `v` is constant.
pub fn dirichlet_seminorm_sq(v: &ValueVector, chain: &InducedChain) -> Result<f64> {
    let pi = chain.pi()?;
    let n = chain.n_states();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            context: "dirichlet_seminorm_sq",
            expected: format!("{n}"),
            found: format!("{}", v.len()),
        });
    }
    let p = chain.p_mu();
    let x = v.as_vector();
    let mut acc = 0.0;
    for s in 0..n {
        for s2 in 0..n {
            let w = pi[s] * p[(s, s2)];
            if w > 0.0 {
                let diff = x[s2] - x[s];
                acc += w * diff * diff;
            }
        }
    }
    Ok(0.5 * acc)
}

/// The curvature-degenerate feature block
///
/// ```text
/// Phi = [ (phi_inf / sqrt 2) (e_1 - e_2)^T ]
///       [ 0 | eps I_{d-1}                  ]
///       [ 0_{(n-d) x d}                    ]
/// ```
///
/// Full column rank for any `eps > 0`: the eps block covers columns 2..d and
/// the first row contributes the remaining direction. The result goes
/// through [`build_feature_map`], so rank is verified rather than assumed.
pub fn adversarial_features(n: usize, d: usize, eps: f64, phi_inf: f64) -> Result<FeatureMap> {
    if d < 2 || n <= d {
        return Err(Error::InvalidInput {
            context: "adversarial_features",
            detail: format!("need n > d >= 2, got n = {n}, d = {d}"),
        });
    }
    if !(eps >= 0.0 && eps < phi_inf) || phi_inf <= 0.0 {
        return Err(Error::InvalidInput {
            context: "adversarial_features",
            detail: format!("need 0 <= eps < phi_inf, got eps = {eps}, phi_inf = {phi_inf}"),
        });
    }
    let mut phi = DMatrix::zeros(n, d);
    let scale = phi_inf / 2.0_f64.sqrt();
    phi[(0, 0)] = scale;
    phi[(0, 1)] = -scale;
    for i in 1..d {
        phi[(i, i)] = eps;
    }
    build_feature_map(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn identity_features_have_unit_phi_inf() {
        let fm = build_feature_map(DMatrix::identity(4, 4)).unwrap();
        assert!(fm.rank_ok());
        assert_eq!(fm.phi_inf(), 1.0);
    }

    #[test]
    fn duplicated_column_is_rejected() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        match build_feature_map(phi) {
            Err(Error::RankDeficient { sigma_min, .. }) => assert!(sigma_min < 1e-10),
            other => panic!("expected rank failure, got {other:?}"),
        }
    }

    #[test]
    fn phi_inf_matches_row_norm_rescan() {
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let phi = DMatrix::from_fn(10, 3, |_, _| next());
        let fm = build_feature_map(phi.clone()).unwrap();
        let mut max_norm = 0.0_f64;
        for s in 0..10 {
            let norm: f64 = (0..3)
                .map(|j| phi[(s, j)] * phi[(s, j)])
                .sum::<f64>()
                .sqrt();
            max_norm = max_norm.max(norm);
        }
        assert_abs_diff_eq!(fm.phi_inf(), max_norm, epsilon = 1e-14);
    }

    #[test]
    fn value_of_basic_cases() {
        let fm = build_feature_map(DMatrix::identity(3, 3)).unwrap();
        let theta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = value_of(&fm, &theta).unwrap();
        assert_eq!(v.as_vector(), &theta);
        let zero = value_of(&fm, &DVector::zeros(3)).unwrap();
        assert!(zero.as_vector().iter().all(|&x| x == 0.0));
        assert!(value_of(&fm, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn value_of_matches_dot_products() {
        let phi = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -0.5, 0.25, 3.0, -1.0, 0.0, 1.0]);
        let fm = build_feature_map(phi.clone()).unwrap();
        let theta = DVector::from_vec(vec![0.7, -1.3]);
        let v = value_of(&fm, &theta).unwrap();
        for s in 0..4 {
            let dot = phi[(s, 0)] * theta[0] + phi[(s, 1)] * theta[1];
            assert_abs_diff_eq!(v.as_vector()[s], dot, epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_norm_examples() {
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        let v = ValueVector::new(DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_abs_diff_eq!(weighted_norm_sq(&v, &pi).unwrap(), 1.0, epsilon = 1e-15);
        let z = ValueVector::new(DVector::zeros(2)).unwrap();
        assert_eq!(weighted_norm_sq(&z, &pi).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_matches_quadratic_form() {
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let v = ValueVector::new(DVector::from_vec(vec![1.5, -0.25, 2.0])).unwrap();
        let d = DMatrix::from_diagonal(&pi);
        let quad = (v.as_vector().transpose() * &d * v.as_vector())[(0, 0)];
        assert_abs_diff_eq!(weighted_norm_sq(&v, &pi).unwrap(), quad, epsilon = 1e-14);
    }

    #[test]
    fn dirichlet_vanishes_on_constants_and_matches_hand_sum() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = DMatrix::zeros(2, 2);
        let mut chain = InducedChain::from_parts(p, r, 0.9).unwrap();
        chain
            .set_stationary(DVector::from_vec(vec![0.5, 0.5]), 1e-12)
            .unwrap();

        let c = ValueVector::new(DVector::from_vec(vec![3.0, 3.0])).unwrap();
        assert_eq!(dirichlet_seminorm_sq(&c, &chain).unwrap(), 0.0);

        // (1/2)(0.5 * 1 + 0.5 * 1) = 0.5 for v = (0, 1).
        let v = ValueVector::new(DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(
            dirichlet_seminorm_sq(&v, &chain).unwrap(),
            0.5,
            epsilon = 1e-15
        );

        let z = ValueVector::new(DVector::zeros(2)).unwrap();
        assert_eq!(dirichlet_seminorm_sq(&z, &chain).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_block_layout() {
        let fm = adversarial_features(5, 3, 0.1, 1.0).unwrap();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(fm.phi()[(0, 0)], inv_sqrt2, epsilon = 1e-15);
        assert_abs_diff_eq!(fm.phi()[(0, 1)], -inv_sqrt2, epsilon = 1e-15);
        assert_eq!(fm.phi()[(0, 2)], 0.0);
        assert_eq!(fm.phi()[(1, 1)], 0.1);
        assert_eq!(fm.phi()[(2, 2)], 0.1);
        assert_eq!(fm.phi()[(1, 0)], 0.0);
        // Zero tail rows.
        for s in 3..5 {
            for j in 0..3 {
                assert_eq!(fm.phi()[(s, j)], 0.0);
            }
        }
        // Row norms are phi_inf and eps, so phi_inf carries through.
        assert_abs_diff_eq!(fm.phi_inf(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn adversarial_zero_eps_fails_rank() {
        match adversarial_features(5, 3, 0.0, 1.0) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected rank failure, got {other:?}"),
        }
    }

    #[test]
    fn adversarial_full_rank_for_positive_eps() {
        for eps in [1e-1, 1e-3, 1e-6] {
            let fm = adversarial_features(7, 4, eps, 2.0).unwrap();
            assert!(fm.rank_ok());
        }
    }
}
