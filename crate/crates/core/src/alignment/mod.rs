//! Pseudo-camera alignment of Superframes to the image domain.

pub mod camera;
pub mod color;
pub mod frequency;
pub mod kmeans;
pub mod metric;
pub mod optimize;
pub mod render;
pub mod video;

pub use camera::{look_rotation, Intrinsics, PinholeCamera, PseudoCameraRig};
pub use frequency::{dft2, frequency_feature, histogram_descriptor, BinEdges, FrequencyFeature, HistogramDescriptor, Matrix};
pub use kmeans::{kmeans, KMeans};
pub use render::{project_voxels, PixelVoxelMap, RenderStats};
pub use color::{pseudo_color, PseudoColorParams, PseudoImage};
pub use metric::{fit_metric_model, DomainScorer, MetricModel, MetricParams};
pub use optimize::{optimize_rig, OptimizedRig, RigSearch, SearchRound};
pub use video::{render_sequence, PseudoVideo};
