//! Content-based image retrieval with trainable COSFIRE descriptors and
//! learned binary hash codes.
//!
//! The pipeline runs: sigma clipping ([`imaging`]) → difference-of-Gaussians
//! keypoint maps ([`dog`]) → COSFIRE filter banks and descriptors
//! ([`cosfire`]) → an MLP hashing network ([`hashnet`]) → Hamming retrieval
//! ([`retrieval`]) → metrics and cost accounting ([`eval`]).

pub mod config;
pub mod cosfire;
pub mod descriptors;
pub mod dog;
pub mod error;
pub mod eval;
pub mod hashnet;
pub mod imaging;
pub mod retrieval;
pub mod synthetic;

pub use config::{GridPoint, HyperGrid, PipelineConfig};
pub use cosfire::{
    build_filter_bank, configure_filter, default_orientations, CosfireFilter, CosfireHyperparams, Descriptor,
    FilterBank, KeypointTuple, PrototypeCandidate,
};
pub use descriptors::DescriptorSet;
pub use dog::{DogParams, Polarity, ResponseMap};
pub use error::{Error, Result};
pub use eval::{map_at_k, map_at_r, mlp_flops, separability_ratio, ClassDistanceMatrix, FlopsBreakdown, LayerSpec};
pub use hashnet::{DshLossParams, Matrix, MlpParams, Mode, TrainConfig, TrainHistory};
pub use imaging::{sigma_clip, DatasetManifest, Image, ImageFormat, ManifestEntry, Split};
pub use retrieval::{binarize, hamming, HashCode, Hit, RetrievalIndex, ThresholdSweep};
