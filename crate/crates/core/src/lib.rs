//! Active learning for binary image segmentation with k-NN label propagation.
//!
//! The crate holds the data model, dataset ingestion, color-histogram JSD
//! similarity, per-class k-NN search, acquisition functions, a pixel-wise
//! logistic segmenter, the session loop and the metrics used to compare
//! methods.

pub mod acquisition;
pub mod error;
pub mod ingestion;
pub mod learner;
pub mod metrics;
pub mod neighbors;
pub mod pnm;
pub mod pool;
pub mod report;
pub mod seed;
pub mod session;
pub mod similarity;
pub mod types;

pub use acquisition::{AcquisitionConfig, AcquisitionMethod, Selection};
pub use error::{Error, Result};
pub use ingestion::{DatasetManifest, ManifestEntry, SyntheticConfig};
pub use learner::{
    FeatureSet, Learner, LearnerConfig, LogisticLearner, Segmenter, SegmenterModel, TrainingExample,
};
pub use metrics::{Aggregate, MeanStd, RoundRecord};
pub use neighbors::{Neighbor, NeighborIndex};
pub use pool::PoolState;
pub use session::{Method, SessionConfig, SessionObserver, SessionRecord};
pub use similarity::Descriptor;
pub use types::{
    Annotation, BinaryMask, Dataset, GroundTruth, ImageTensor, Oracle, ProbabilityMap, Sample,
    SampleId, Split,
};
