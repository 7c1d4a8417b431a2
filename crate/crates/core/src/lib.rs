//! Multi-attention fusion (MAF) drowsiness classifier, built on a small
//! reverse-mode autodiff engine.
//!
//! The pipeline is a strided CNN backbone, a bank of LANet spatial attention
//! maps with whole-map dropout ([`mlfe`]), and stacked learnable-patch
//! cross-attention units with whole-head dropout ([`llfe`]), trained
//! end-to-end with SGD ([`train`]) on a synthetic occlusion benchmark
//! ([`synth`]).
//!
//! Runnable walkthroughs live in `examples/`; the `maf` binary wraps the
//! same functionality as subcommands.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod dataset;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod llfe;
pub mod metrics;
pub mod mlfe;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tensor_file;
pub mod train;
pub mod visualize;

pub use dropout::Mode;
pub use error::{MafError, Result};
pub use model::{init_params, maf_forward, MafConfig, MafParams};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
