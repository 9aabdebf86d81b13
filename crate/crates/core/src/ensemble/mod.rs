//! Timestep partitions, student groups, the teacher / one-to-one / one-to-many
//! training loops, routed prediction and model merging.

mod config;
mod group;
mod partition;
mod train;

pub use config::{parse_json_config, self_distill_mode, EvalConfig, StudentInit, TrainConfig};
pub use group::{merge_students, uniform_weights, GroupMetadata, StudentGroup, TrainMode};
pub use partition::{Partition, PartitionScheme};
pub use train::{evaluate_model, train_o2mkd, train_range_student, train_o2okd, train_teacher, LossRow, NetInfo, RunReport};
