//! Multi-granularity scene text recognition.
//!
//! A ViT encoder turns a 32×128 word crop into patch tokens; three independent
//! attention-aggregation heads read character, BPE and WordPiece sequences off
//! those tokens, and a confidence score picks the final string.

pub mod backbone;
pub mod error;
pub mod eval;
pub mod fusion;
mod granularity;
pub mod heads;
pub mod imageio;
pub mod model;
pub mod nn;
pub mod recognizer;
pub mod synthdata;
pub mod tokenizers;
pub mod trainer;

pub use backbone::{HeadSpec, ModelConfig};
pub use error::{Error, Result};
pub use granularity::Granularity;
pub use model::{MgpStr, ModelOutput};
pub use recognizer::{Codecs, Recognizer};
