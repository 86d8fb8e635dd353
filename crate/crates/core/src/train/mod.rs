//! Classification heads, Adam, the learning-rate schedule, and the training
//! and evaluation loops for both regimes.

mod heads;
mod optim;
mod trainer;

pub use heads::{
    argmax, classify_cls, sentence_embed, MlpHead, SoftmaxHead, DEFAULT_MLP_HIDDEN, MLP_HIDDEN_BIAS, MLP_HIDDEN_WEIGHT,
    MLP_OUTPUT_BIAS, MLP_OUTPUT_WEIGHT, SOFTMAX_BIAS, SOFTMAX_WEIGHT,
};
pub use optim::{adam_step, lr_schedule, warmup_steps, AdamConfig, AdamState};
pub use trainer::{
    evaluate, evaluate_predictions, train, train_mlp_head, EpochRecord, Evaluation, FineTuneExample, FineTuneTask,
    FrozenExample, FrozenTask, Head, Predictor, Regime, TrainConfig, TrainLog, TrainedModel, DEFAULT_FROZEN_LR,
};

/// SplitMix64 finalizer over two words; used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
