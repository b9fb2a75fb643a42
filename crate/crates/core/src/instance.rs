//! On-disk instance documents: one JSON file carrying the MDP, the policy,
//! and the feature matrix. The loader re-validates row sums at 1e-9 and
//! recomputes `phi_inf`, rejecting documents whose stored value drifted.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{build_feature_map, FeatureMap};
use crate::mdp::{induce_chain, InducedChain, Mdp, Policy};

/// Row-sum tolerance applied on load (looser than the in-memory 1e-12 to
/// absorb decimal round-tripping).
pub const LOAD_ROW_SUM_TOL: f64 = 1e-9;

/// Tolerance for the stored-vs-recomputed `phi_inf` comparison on load.
pub const LOAD_PHI_INF_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `transition[s][a][s']`, row-major nested arrays.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a][s']`.
    pub reward: Vec<Vec<Vec<f64>>>,
    /// `policy[s][a]`.
    pub policy: Vec<Vec<f64>>,
    /// `features[s][j]`.
    pub features: Vec<Vec<f64>>,
    pub phi_inf: f64,
}

impl InstanceDoc {
    pub fn new(mdp: &Mdp, policy: &Policy, features: &FeatureMap) -> Self {
        let mut feats = Vec::with_capacity(features.n_states());
        for s in 0..features.n_states() {
            feats.push(
                (0..features.dim())
                    .map(|j| features.phi()[(s, j)])
                    .collect(),
            );
        }
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            transition: mdp.transition().clone(),
            reward: mdp.reward().clone(),
            policy: policy.probs().clone(),
            features: feats,
            phi_inf: features.phi_inf(),
        }
    }

    /// Deterministic serialized form; equal documents give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: InstanceDoc = serde_json::from_str(&text)?;
        doc.validate()?;
        Ok(doc)
    }

    /// Structural validation: shapes, row sums at the load tolerance, and
    /// the `phi_inf` consistency check.
    pub fn validate(&self) -> Result<()> {
        if self.transition.len() != self.n_states
            || self.reward.len() != self.n_states
            || self.policy.len() != self.n_states
            || self.features.len() != self.n_states
        {
            return Err(Error::DimensionMismatch {
                context: "InstanceDoc tables",
                expected: format!("{} states", self.n_states),
                found: "inconsistent outer dimensions".into(),
            });
        }
        for (s, rows) in self.transition.iter().enumerate() {
            if rows.len() != self.n_actions {
                return Err(Error::DimensionMismatch {
                    context: "InstanceDoc transition actions",
                    expected: format!("{}", self.n_actions),
                    found: format!("{} at state {s}", rows.len()),
                });
            }
            for (a, row) in rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > LOAD_ROW_SUM_TOL {
                    return Err(Error::RowSum {
                        context: "InstanceDoc transition",
                        row: s * self.n_actions + a,
                        sum,
                        tol: LOAD_ROW_SUM_TOL,
                    });
                }
            }
        }
        for (s, row) in self.policy.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > LOAD_ROW_SUM_TOL {
                return Err(Error::RowSum {
                    context: "InstanceDoc policy",
                    row: s,
                    sum,
                    tol: LOAD_ROW_SUM_TOL,
                });
            }
        }
        let recomputed = self
            .features
            .iter()
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0_f64, f64::max);
        if (recomputed - self.phi_inf).abs() > LOAD_PHI_INF_TOL {
            return Err(Error::NumericalFailure {
                context: "InstanceDoc phi_inf consistency",
                residual: (recomputed - self.phi_inf).abs(),
                tol: LOAD_PHI_INF_TOL,
            });
        }
        Ok(())
    }

    /// Materialize validated domain objects from the document.
    pub fn build(&self) -> Result<(Mdp, Policy, FeatureMap)> {
        let mdp = Mdp::new(self.transition.clone(), self.reward.clone(), self.gamma)?;
        let policy = Policy::new(self.policy.clone())?;
        let d = self.features.first().map(|r| r.len()).unwrap_or(0);
        let mut phi = nalgebra::DMatrix::zeros(self.n_states, d);
        for (s, row) in self.features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "InstanceDoc features",
                    expected: format!("{d}"),
                    found: format!("{} at state {s}", row.len()),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                phi[(s, j)] = x;
            }
        }
        let features = build_feature_map(phi)?;
        Ok((mdp, policy, features))
    }

    /// Build the induced chain with its stationary distribution solved.
    pub fn build_chain(&self, stationary_tol: f64) -> Result<(InducedChain, FeatureMap)> {
        let (mdp, policy, features) = self.build()?;
        let mut chain = induce_chain(&mdp, &policy)?;
        chain.solve_stationary(stationary_tol)?;
        Ok((chain, features))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sample_doc() -> InstanceDoc {
        let transition = vec![
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            vec![vec![0.2, 0.8], vec![0.5, 0.5]],
        ];
        let reward = vec![
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![vec![0.0, 2.0], vec![1.0, 1.0]],
        ];
        let policy = vec![vec![0.5, 0.5], vec![0.25, 0.75]];
        let mdp = Mdp::new(transition, reward, 0.9).unwrap();
        let pol = Policy::new(policy).unwrap();
        let fm = build_feature_map(DMatrix::from_row_slice(2, 1, &[1.0, -0.5])).unwrap();
        InstanceDoc::new(&mdp, &pol, &fm)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let doc = sample_doc();
        let dir = std::env::temp_dir().join(format!("tdforge-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("instance.json");
        doc.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = InstanceDoc::load(&path).unwrap();
        loaded.save(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        assert_eq!(doc, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_row_sum_is_rejected() {
        let mut doc = sample_doc();
        doc.transition[0][0][0] = 0.8; // row now sums to 0.9
        match doc.validate() {
            Err(Error::RowSum { context, .. }) => assert_eq!(context, "InstanceDoc transition"),
            other => panic!("expected row-sum rejection, got {other:?}"),
        }
    }

    #[test]
    fn phi_inf_drift_is_rejected() {
        let mut doc = sample_doc();
        doc.phi_inf += 1e-6;
        assert!(matches!(
            doc.validate(),
            Err(Error::NumericalFailure { .. })
        ));
    }

    #[test]
    fn build_produces_solved_chain() {
        let doc = sample_doc();
        let (chain, features) = doc.build_chain(1e-10).unwrap();
        assert!(chain.has_pi());
        assert_eq!(features.dim(), 1);
        assert_eq!(chain.gamma(), 0.9);
    }
}
