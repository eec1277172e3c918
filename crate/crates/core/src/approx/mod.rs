//! Hypothesis spaces for values and policies, with the two fitting routines:
//! least-absolute-deviation regression and cost-sensitive classification.

mod checkpoint;
mod features;
mod policy;
mod vfa;

pub use checkpoint::Checkpoint;
pub use features::{FeatureMap, TabularIndex};
pub use policy::{
    empirical_loss, fit_policy_classifier, initial_policy, ClassificationSample, ClassifierFit, PolicyFamily,
    PolicyModel,
};
pub use vfa::{
    fit_lad_weighted, fit_vfa_lad, predict_value, LabeledValueSample, LadFit, Vfa, VfaFamily, LP_MAX_DIM,
    SUBGRADIENT_ITERS,
};

use std::sync::atomic::{AtomicUsize, Ordering};

static LAD_CALLS: AtomicUsize = AtomicUsize::new(0);
static CLASSIFY_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide counts of `(regression fits, classification fits)`.
pub fn fit_call_counts() -> (usize, usize) {
    (LAD_CALLS.load(Ordering::Relaxed), CLASSIFY_CALLS.load(Ordering::Relaxed))
}
