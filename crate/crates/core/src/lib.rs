// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Projection-free TD(0) with linear function approximation on finite MDPs,
//! together with the exact small-scale machinery needed to certify its
//! finite-time behavior numerically: induced chains and mixing envelopes,
//! TD fixed points and the potential they minimize, the update
//! decomposition into martingale noise / Markovian bias / mean-path
//! gradient, and the supporting summation and Lipschitz lemmas.

pub mod error;
pub mod features;
pub mod instance;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod probe;

pub use error::{Error, Result};
pub use features::{
    adversarial_features, build_feature_map, dirichlet_seminorm_sq, value_of, weighted_norm_sq,
    FeatureMap, ValueVector,
};
pub use instance::InstanceDoc;
pub use learner::{
    c_threshold, iterate_bound_check, min_t_condition, omega_c, run_td0, step_size, td_update,
    IterateBoundReport, MinTReport, RecordRow, RunRecord, StartState, TdConfig,
};
pub use mdp::{
    check_ergodic, estimate_mixing, induce_chain, sample_trajectory, stationary_distribution,
    tv_distance, ErgodicityReport, InducedChain, Mdp, MixingFit, Policy,
};
pub use oracle::{
    bellman_apply, gradient_splitting_residual, hessian_min_eigenvalue, potential, project_d,
    solve_fixed_point, stationary_gradient, TdOracle,
};
pub use probe::{
    bias_budget_probe, conditional_update_mean, decompose_step, gradient_bound_check, lemma_sum_a1,
    lemma_sum_a2, lemma_sum_a3, lipschitz_check, martingale_sum_check, run_decomposed,
    stationary_update_mean, tv_bias_check, xi_lipschitz_check, BiasBudgetReport, DecomposedRun,
    LemmaReport, MartingaleStat, StepDecomposition,
};
