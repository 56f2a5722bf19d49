//! Image-text matching by iterative recurrent attention.
//!
//! Images arrive as precomputed region features and texts as token ids.
//! Both are encoded into sets of unit fragment vectors, aligned over K
//! steps by two recurrent attention memory blocks, and scored by the sum
//! of the per-step scores. Training uses a hinge loss over the hardest
//! negatives of each mini-batch; gradients come from a small reverse-mode
//! tape over dense `f64` matrices.
//!
//! ```
//! use imram::{Imram, MatchConfig, ModelConfig};
//!
//! let config = ModelConfig { raw_dim: 6, dim: 8, word_dim: 4, vocab_size: 10, matching: MatchConfig::default() };
//! let model = Imram::new(config, 7).unwrap();
//! let regions = imram::Tensor::filled(3, 6, 0.5);
//! let image = model.encode_image(&regions, 0).unwrap();
//! let text = model.encode_text(&[1, 4, 2], 0).unwrap();
//! let scores = model.score(&image, &text).unwrap();
//! assert_eq!(scores.per_step.len(), 3);
//! ```

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod loss;
pub mod matcher;
pub mod model;
pub mod optim;
pub mod params;
pub mod ram;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use dataset::{Dataset, FeatureStore, RetrievalSet, SynthConfig, Vocabulary};
pub use encoders::FragmentSet;
pub use error::{Error, Result};
pub use evaluator::{evaluate, recall_at_k, RetrievalReport};
pub use loss::hard_triplet_loss;
pub use matcher::{MatchConfig, StepScores, Variant};
pub use model::{Imram, ModelConfig};
pub use optim::{Optimizer, OptimizerKind};
pub use ram::Aggregator;
pub use tape::Tape;
pub use tensor::Tensor;
pub use trainer::{Batch, TrainConfig, Trainer};
