//! Model zoo, partitioning at the offloading point and device-side pre-training.

mod partition;
pub mod spec;

pub use partition::{
    concat_weights, partition, pretrain, pretrain_device_side, AuxiliaryHead, ModelHalf, PartitionPoint, PartitionedModel,
    PretrainOptions, Side,
};
pub use spec::{ModelSpec, Plan, PlannedLayer, Token};
