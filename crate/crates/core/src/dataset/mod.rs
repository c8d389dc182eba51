//! Dataset records, manifests, protocols and the synthetic toy generator.

pub mod imageio;
mod manifest;
mod protocol;
pub mod toygen;

pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ImageRecord, Split};
pub use protocol::{build_protocol, Protocol, QueryGallery};
pub use toygen::{generate_toy_dataset, Background, CameraStyle, ToyGenSpec};
