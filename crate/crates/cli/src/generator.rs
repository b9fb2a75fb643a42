//! Instance generators: chain schemes (Dirichlet rows, two-state,
//! permutation-mix) crossed with feature schemes (Gaussian, tabular,
//! adversarial). Every generated document is certified ergodic and passes
//! the full instance validation before it is returned.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use tdforge_core::{
    adversarial_features, build_feature_map, check_ergodic, induce_chain, FeatureMap, InstanceDoc,
    Mdp, Policy,
};

use anyhow::{bail, Context, Result};

/// How many times a randomized scheme may redraw before giving up on
/// producing an ergodic chain / full-rank features.
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum FeatureScheme {
    RandomGaussian,
    Tabular,
    Adversarial { eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum ChainScheme {
    RandomDirichlet { concentration: f64 },
    TwoState { a: f64, b: f64 },
    PermutationMix { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub features: FeatureScheme,
    pub chain: ChainScheme,
    pub seed: u64,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!("gamma = {} not in (0, 1)", self.gamma);
        }
        if self.n == 0 || self.d == 0 {
            bail!("n and d must be positive");
        }
        match &self.chain {
            ChainScheme::TwoState { a, b } => {
                if self.n != 2 {
                    bail!("two-state chains require n = 2, got n = {}", self.n);
                }
                if !(*a > 0.0 && *a < 1.0 && *b > 0.0 && *b < 1.0) {
                    bail!("two-state parameters must lie in (0, 1), got a = {a}, b = {b}");
                }
            }
            ChainScheme::RandomDirichlet { concentration } => {
                if !(*concentration > 0.0) {
                    bail!("dirichlet concentration must be positive, got {concentration}");
                }
            }
            ChainScheme::PermutationMix { lambda } => {
                if !(*lambda > 0.0 && *lambda <= 1.0) {
                    bail!("permutation-mix lambda must lie in (0, 1], got {lambda}");
                }
            }
        }
        match &self.features {
            FeatureScheme::Tabular => {
                if self.d != self.n {
                    bail!(
                        "tabular features require d = n, got d = {}, n = {}",
                        self.d,
                        self.n
                    );
                }
            }
            FeatureScheme::Adversarial { eps } => {
                if !(*eps > 0.0 && *eps < 1.0) {
                    bail!("adversarial eps must lie in (0, 1), got {eps}");
                }
                if self.d < 2 || self.n <= self.d {
                    bail!(
                        "adversarial features require n > d >= 2, got n = {}, d = {}",
                        self.n,
                        self.d
                    );
                }
            }
            FeatureScheme::RandomGaussian => {
                if self.n < self.d {
                    bail!("need n >= d for full-rank features");
                }
            }
        }
        Ok(())
    }

    /// Copy with a different adversarial eps (sweep support).
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        match self.features {
            FeatureScheme::Adversarial { .. } => {
                let mut out = self.clone();
                out.features = FeatureScheme::Adversarial { eps };
                Ok(out)
            }
            _ => bail!("eps axis requires adversarial features"),
        }
    }

    /// Copy with a different permutation-mix lambda (sweep support).
    pub fn with_mix(&self, lambda: f64) -> Result<Self> {
        match self.chain {
            ChainScheme::PermutationMix { .. } => {
                let mut out = self.clone();
                out.chain = ChainScheme::PermutationMix { lambda };
                Ok(out)
            }
            _ => bail!("mix axis requires a permutation-mix chain"),
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.gamma = gamma;
        out
    }
}

fn chain_rows(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let n = spec.n;
    Ok(match &spec.chain {
        ChainScheme::TwoState { a, b } => {
            vec![vec![1.0 - a, *a], vec![*b, 1.0 - b]]
        }
        ChainScheme::RandomDirichlet { concentration } => {
            let gamma_dist = Gamma::new(*concentration, 1.0)
                .context("invalid Gamma distribution for Dirichlet rows")?;
            (0..n)
                .map(|_| {
                    let mut row: Vec<f64> =
                        (0..n).map(|_| gamma_dist.sample(rng).max(1e-12)).collect();
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= sum);
                    row
                })
                .collect()
        }
        ChainScheme::PermutationMix { lambda } => {
            // (1 - lambda) cyclic shift + lambda uniform; second eigenvalue
            // modulus ~ (1 - lambda), so small lambda mixes slowly.
            (0..n)
                .map(|s| {
                    (0..n)
                        .map(|t| {
                            let shift = if t == (s + 1) % n { 1.0 - lambda } else { 0.0 };
                            shift + lambda / n as f64
                        })
                        .collect()
                })
                .collect()
        }
    })
}

fn feature_matrix(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    match &spec.features {
        FeatureScheme::Tabular => Ok(build_feature_map(DMatrix::identity(spec.n, spec.n))?),
        FeatureScheme::Adversarial { eps } => Ok(adversarial_features(spec.n, spec.d, *eps, 1.0)?),
        FeatureScheme::RandomGaussian => {
            for _ in 0..MAX_RETRIES {
                let phi = DMatrix::from_fn(spec.n, spec.d, |_, _| StandardNormal.sample(rng));
                if let Ok(fm) = build_feature_map(phi) {
                    return Ok(fm);
                }
            }
            bail!("could not draw full-rank Gaussian features in {MAX_RETRIES} attempts");
        }
    }
}

/// Generate a validated single-action instance from a [`GeneratorSpec`].
/// Rewards are uniform on [0, 1], deterministic in the seed. The induced
/// chain is certified ergodic (with retries for randomized schemes) before
/// the document is returned.
pub fn generate_instance(spec: &GeneratorSpec) -> Result<InstanceDoc> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;

    let mut last_failure = None;
    for _ in 0..MAX_RETRIES {
        let rows = chain_rows(spec, &mut rng)?;
        let transition: Vec<Vec<Vec<f64>>> = rows.iter().map(|r| vec![r.clone()]).collect();
        let reward: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| vec![(0..n).map(|_| rng.random::<f64>()).collect()])
            .collect();
        let mdp = Mdp::new(transition, reward, spec.gamma)?;
        let policy = Policy::uniform(n, 1);
        let chain = induce_chain(&mdp, &policy)?;
        let report = check_ergodic(&chain);
        if !report.is_ergodic() {
            last_failure = Some(format!("{report:?}"));
            continue;
        }
        let features = feature_matrix(spec, &mut rng)?;
        let doc = InstanceDoc::new(&mdp, &policy, &features);
        doc.validate()?;
        return Ok(doc);
    }
    bail!(
        "generator produced no ergodic chain in {MAX_RETRIES} attempts (last failure: {})",
        last_failure.unwrap_or_default()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> GeneratorSpec {
        GeneratorSpec {
            n: 10,
            d: 3,
            gamma: 0.9,
            features: FeatureScheme::RandomGaussian,
            chain: ChainScheme::RandomDirichlet { concentration: 1.0 },
            seed: 7,
        }
    }

    #[test]
    fn two_state_rows_are_exact() {
        let spec = GeneratorSpec {
            n: 2,
            d: 2,
            gamma: 0.9,
            features: FeatureScheme::Tabular,
            chain: ChainScheme::TwoState { a: 0.1, b: 0.1 },
            seed: 0,
        };
        let doc = generate_instance(&spec).unwrap();
        assert_eq!(doc.transition[0][0], vec![0.9, 0.1]);
        assert_eq!(doc.transition[1][0], vec![0.1, 0.9]);
        let (chain, _) = doc.build_chain(1e-10).unwrap();
        let pi = chain.pi().unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn generated_instances_are_deterministic_in_seed() {
        let spec = base_spec();
        let a = generate_instance(&spec).unwrap();
        let b = generate_instance(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_instance(&GeneratorSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn permutation_mix_is_ergodic_and_slow_for_small_lambda() {
        let spec = GeneratorSpec {
            n: 6,
            d: 2,
            gamma: 0.9,
            features: FeatureScheme::RandomGaussian,
            chain: ChainScheme::PermutationMix { lambda: 0.2 },
            seed: 3,
        };
        let doc = generate_instance(&spec).unwrap();
        let (chain, _) = doc.build_chain(1e-10).unwrap();
        let fit = tdforge_core::estimate_mixing(&chain, 60).unwrap();
        assert!(
            fit.alpha > 0.5,
            "expected slow mixing, alpha = {}",
            fit.alpha
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = base_spec();
        spec.gamma = 1.0;
        assert!(generate_instance(&spec).is_err());

        let mut spec = base_spec();
        spec.features = FeatureScheme::Tabular; // d != n
        assert!(generate_instance(&spec).is_err());

        let mut spec = base_spec();
        spec.chain = ChainScheme::TwoState { a: 0.1, b: 0.1 }; // n != 2
        assert!(generate_instance(&spec).is_err());
    }
}
