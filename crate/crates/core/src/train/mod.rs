//! Adam, cosine schedule, the training loop and evaluation.

pub mod config;
pub mod eval;
pub mod optim;
pub mod trainer;

pub use config::{DataConfig, TrainConfig, DATA_KEYS, TRAIN_KEYS};
pub use eval::{evaluate, image_noise_seed, EvalReport, ImageMetrics};
pub use optim::{adam_step, clip_global_norm, cosine_lr, global_norm, AdamConfig, AdamState};
pub use trainer::{sample_batch, train, train_step, Dataset, TrainOptions, TrainState, TrainSummary, LOSS_HEADER};
