//! Hyperbolic temporal graph encoder with RTT edge features and a
//! random-forest RTT regressor over fused embeddings.
//!
//! Pipeline: traceroute JSON lines → daily snapshots ([`ingest`]) →
//! normalized edge features ([`features`]) → Poincaré-ball encoder
//! ([`encoder`], built on [`hypgeom`]) → fusion forest ([`forest`]) →
//! metrics ([`eval`]). [`synth`] generates test data; [`pipeline`] wires the
//! stages together.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod hypgeom;
pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use encoder::tape::Matrix;
pub use encoder::{ModelConfig, ModelParams, ModelState, Monitor, PreparedSnapshot, ScoredPair, TrainHistory};
pub use error::{HermitError, Result};
pub use eval::{EvalReport, SplitRanges, SplitSpec};
pub use features::{EdgeFeatureVector, EdgeNormalizer, MinMaxParams, NodeHistory, NodeHistoryStats};
pub use forest::{ForestConfig, ForestModel, MaxFeaturesMode, RegressionTree, TreeNode};
pub use hypgeom::{BallPoint, Curvature, FermiDiracParams, TangentVector};
pub use ingest::{NodeRegistry, Snapshot, SnapshotEdge, SnapshotSequence, TraceRecord};
pub use pipeline::{evaluate, fit, HermitModel, PairPrediction, PipelineConfig};
pub use synth::{generate, SynthConfig};
