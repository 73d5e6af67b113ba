//! Weakly-supervised audio temporal forgery localization.
//!
//! Frame features pass through a temporal forgery attention adapter and a
//! prompt-enhanced feature adapter, each with its own frame classifier.
//! Training sees only utterance labels: top-K multiple-instance pooling
//! and a co-learning term drive stage 1, and stage 2 refines the model
//! with a contrastive loss over pseudo frame labels taken from its own
//! proposals. Fused frame scores are thresholded into proposals and scored
//! with the usual detection and localization metrics.

pub mod error;
pub mod features;
pub mod localize;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod trainer;

pub use error::{LocoError, Result};
pub use features::{FeatureSequence, Segment, SynthConfig};
pub use localize::{ForgeryProposal, TFas};
pub use losses::{KlMode, LossConfig};
pub use metrics::{EvalConfig, EvalReport};
pub use model::{ModelConfig, ModelParams};
pub use trainer::TrainConfig;
