//! Cross-entropy and mixed-loss policy-gradient training.

pub mod loss;
pub mod optim;
pub mod step;
pub mod trainer;

pub use loss::{baseline_for_trace, baseline_loss, baseline_predict, rl_gradients, xe_loss, BaselineEstimate, BaselineGrad};
pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use step::{
    apply_update, mixed_gradient, mixed_step, rl_gradient, rl_step, xe_gradient, xe_step, Optimizer, SequenceReward, StepItem, StepStats,
    TrainConfig,
};
pub use trainer::{
    decode_corpus, mean_sampled_reward, train_mixed, train_xe, ArchConfig, CorpusReward, EpochLog, Evaluator, MixedOutcome, Phase,
    TrainLog, TrainingData, XeOutcome,
};
