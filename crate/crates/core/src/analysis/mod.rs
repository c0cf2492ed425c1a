//! Transfer-learning probes and attribution: SVCCA between activations,
//! weight fusion / freezing / cutoff ablations, and integrated gradients.

mod ablation;
mod ig;
mod probes;
mod render;
mod svcca;

pub use ablation::{run_ablation_suite, AblationCurve, AblationKind, AblationPoint};
pub use ig::{
    default_baseline, integrated_gradients, Attributable, AttributionMap, LinearScorer, Scaled, DEFAULT_IG_STEPS,
};
pub use probes::{capture_activations, weights_change_curve, WeightsChangeCurve, WeightsChangePoint};
pub use render::{attribution_magnitude, line_chart, render_attribution, render_panels, Series};
pub use svcca::{svcca_similarity, ActivationMatrix, CcaReport, DEFAULT_VARIANCE_KEEP};
