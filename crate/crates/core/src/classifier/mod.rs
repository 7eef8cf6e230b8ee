//! Linear softmax classifier over latent features and the generalized
//! zero-/few-shot evaluation protocol.

mod eval;
mod softmax;

pub use eval::{
    evaluate_fewshot, evaluate_gzsl, evaluate_pipeline, evaluate_zsl, harmonic_mean, latent_training_set,
    per_class_accuracy, select_shots, EvalConfig, EvalReport, FewShotPlan,
};
pub use softmax::{cross_entropy, train_softmax, train_softmax_dynamic, SoftmaxHyper, SoftmaxParams};
