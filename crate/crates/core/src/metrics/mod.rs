pub mod ari;
pub mod depth;
pub mod hungarian;
pub mod postprocess;
pub mod segmentation;

pub use ari::{adjusted_rand_index, fg_ari};
pub use depth::{depth_metrics, DepthReport, PredictionKind};
pub use hungarian::{max_weight_matching, min_cost_assignment};
pub use postprocess::{connected_components, postprocess_masks, Connectivity};
pub use segmentation::{hungarian_miou, jaccard_j, SegReport};
