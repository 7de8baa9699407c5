pub mod aggregation;
pub mod alignment;
pub mod annotation;
pub mod data;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod ground;
pub mod pipeline;
pub mod prompting;
pub mod reconstruction;
mod scalar;
pub mod segmenter;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases.
pub mod f64 {
    pub type Point = crate::data::Point<f64>;
    pub type PointFrame = crate::data::PointFrame<f64>;
    pub type Sequence = crate::data::Sequence<f64>;
    pub type Pose = crate::geometry::Pose<f64>;
    pub type Vec3 = crate::geometry::Vec3<f64>;
    pub type Superframe = crate::aggregation::Superframe<f64>;
    pub type VoxelGrid = crate::aggregation::VoxelGrid<f64>;
    pub type PseudoCameraRig = crate::alignment::camera::PseudoCameraRig<f64>;
    pub type MetricModel = crate::alignment::metric::MetricModel<f64>;
    pub type ObjectTrack = crate::reconstruction::ObjectTrack<f64>;
    pub type PresegmentOutput = crate::pipeline::PresegmentOutput<f64>;
}

/// Single-precision aliases.
pub mod f32 {
    pub type Point = crate::data::Point<f32>;
    pub type PointFrame = crate::data::PointFrame<f32>;
    pub type Sequence = crate::data::Sequence<f32>;
    pub type Pose = crate::geometry::Pose<f32>;
    pub type Vec3 = crate::geometry::Vec3<f32>;
    pub type Superframe = crate::aggregation::Superframe<f32>;
    pub type VoxelGrid = crate::aggregation::VoxelGrid<f32>;
    pub type PseudoCameraRig = crate::alignment::camera::PseudoCameraRig<f32>;
    pub type MetricModel = crate::alignment::metric::MetricModel<f32>;
    pub type ObjectTrack = crate::reconstruction::ObjectTrack<f32>;
    pub type PresegmentOutput = crate::pipeline::PresegmentOutput<f32>;
}
