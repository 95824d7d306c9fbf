//! Metrics, local surrogate explanations, perturbation stability and the
//! high-risk sanity check.

mod lime;
mod metrics;
mod perturb;
mod sanity;
mod stability;

pub use lime::{lime_explain, Explanation, LimeConfig};
pub use metrics::{compute_metrics, roc_auc, MetricsReport};
pub use perturb::{perturb_history, perturb_with, EmbeddingPerturber, IdentityPerturber, PerturbedPair, Perturber};
pub use sanity::{highrisk_sanity_check, sanity_probes, SanityConfig, SanityProbes, SanityRow};
pub use stability::{
    paired_importance_errors, sample_without_replacement, stability_eval, StabilityConfig, StabilityReport,
};
