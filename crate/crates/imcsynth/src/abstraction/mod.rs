//! Interval abstractions of continuous-state systems.

pub mod geometry;
pub mod noise;
pub mod system;

pub use geometry::{split_rect, union_volume, AxisIndex, Partition, Rect};
pub use noise::{AxisNoise, NoiseModel};
pub use system::{
    build_bmdp, extend_to_boundary, interval_row, reach_boxes, shift_reach, transition_bounds,
    Abstraction, Dynamics, ReachEntry, SystemModel,
};
