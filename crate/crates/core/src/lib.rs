//! Moment retrieval over a video corpus from text queries.
//!
//! The crate is organised bottom-up:
//!
//! * [`temporal`] and [`matrix`]: time intervals, the clip grid and dense matrices.
//! * [`phrase`]: bracketed parse trees and VP/NP phrase extraction.
//! * [`pairdet`]: detection of potentially relevant query pairs and their confidence.
//! * [`model`]: the projection model and its score heads.
//! * [`loss`]: confidence-weighted ranking and NLL objectives with analytic gradients.
//! * [`trainer`], [`retrieval`], [`metrics`]: training, two-stage inference and R@k.
//! * [`synth`]: a synthetic corpus with known pair structure.
//! * [`io`]: feature files, manifests, result and report files.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pairdet;
pub mod phrase;
pub mod record;
pub mod retrieval;
pub mod synth;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use loss::{Condition, ExperimentCondition, LossTerm, LossTerms, LossWeights};
pub use matrix::FeatureMatrix;
pub use model::{EncodedQuery, EncodedVideo, ModelParams, ScoreBundle};
pub use pairdet::{DetectorConfig, EmbeddingSet, PairKind, PairLabel, PairMap, Phi};
pub use phrase::{ParseTree, PhraseSet};
pub use record::{Dataset, QueryRecord, VideoRecord};
pub use retrieval::{CorpusIndex, MomentResult};
pub use temporal::{ClipGrid, TimeInterval};
pub use trainer::{TrainConfig, Trainer};
