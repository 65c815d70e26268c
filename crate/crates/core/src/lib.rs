//! GUI screenshot to code: a GUI description language, a synthetic data
//! generator, a rasterizer and markup compiler, and a CNN/LSTM model that
//! learns to translate screenshots back into the description language.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decode;
pub mod dsl;
pub mod eval;
pub mod markup;
pub mod model;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use dataset::{Example, Split};
pub use decode::{sample_beam, sample_greedy, BeamHypothesis, ImageConditioned, NextToken};
pub use dsl::{Element, GuiAst, Node, Token, Vocabulary};
pub use eval::{token_error, EvalReport, RocCurve};
pub use markup::Target;
pub use model::{Model, ModelConfig, ModelError};
pub use raster::{GuiImage, RenderTheme};
pub use synth::SynthParams;
pub use train::{train, LossTrace, TrainConfig, Trainer};
