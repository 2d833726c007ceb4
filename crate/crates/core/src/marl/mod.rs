//! Policy stack: networks with manual backprop, advantage estimation, the
//! MAPPO and MA-A2C trainers, greedy baselines, and checkpointing.

pub mod buffer;
pub mod checkpoint;
pub mod gae;
pub mod greedy;
pub mod mlp;
pub mod norm;
pub mod policy;
pub mod ppo;
pub mod trainer;

pub use buffer::{TrajectoryBatch, Transition};
pub use gae::{gae, standardize, AdvantageEstimate};
pub use greedy::{GreedyKind, GreedyPolicy};
pub use mlp::{Adam, Mlp, MlpGrads};
pub use norm::RunningNorm;
pub use policy::{Actor, Critic, SampledAction};
pub use ppo::{ppo_clip_grad_coef, ppo_clip_value};
pub use trainer::{train, train_ma_a2c, train_mappo, Algo, EpisodeCurve, TrainOutput, TrainedPolicy};
