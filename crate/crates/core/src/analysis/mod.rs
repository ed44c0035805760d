//! Moment estimation and exact-moment oracles for the stochastic iterations:
//! Monte Carlo moments, exhaustive path enumeration, closed-form means,
//! variance decompositions, structural identities, condition and bound
//! evaluators, and the SVRG/SGD variance comparison.

mod bounds;
mod decomposition;
mod enumerate;
mod identities;
mod moments;
mod operators;

pub use bounds::{
    condition_report, condition_report_raw, rate_fit, residual_bound, theorem_bound, ConditionReport,
    DEFAULT_C_STAR,
};
pub use decomposition::{
    enumerated_weighted_value, sgd_variance_terms, svrg_variance_terms, variance_compare, variance_compare_mc, SgdVarianceTerms,
    SvrgVarianceTerms, VarianceComparison,
};
pub use enumerate::{
    enumerate_exact_moments, enumerate_exact_moments_with, expect_over_paths, EnumerationOptions,
    ExactMoments, IndexClasses, DEFAULT_PATH_BUDGET,
};
pub use identities::{
    commutator_check, lemma_n_minus_one_check, orthogonality_check, recursion_check,
    recursion_check_with_step, step_sum_identity_check, NMinusOneReport, OrthogonalityReport,
};
pub use moments::{closed_form_mean, closed_form_mean_iterate, mc_moments, mc_moments_plan, run_stream, MomentReport, MomentRow};
pub use operators::{Factor, R1Spec, R2Spec};
