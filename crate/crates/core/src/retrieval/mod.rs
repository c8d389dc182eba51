//! Test-time descriptors: branch fusion, descriptor files and ranking.

mod extract;
mod fusion;
mod rank;
mod store;

pub use extract::{describe_batch, extract, ExtractConfig, Extraction};
pub use fusion::{fuse, l2_normalize};
pub use rank::{euclidean, rank, CameraFilter, QueryRanking, RankingResult};
pub use store::{sidecar_path, DescriptorMeta, DescriptorStore, DESCRIPTOR_VERSION};
