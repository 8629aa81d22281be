//! Desk-scale multi-task radio model pipeline.
//!
//! Synthetic wireless scenes and MIMO-OFDM channels feed two contrastively
//! aligned modality encoders; an instruction-conditioned mini transformer
//! with LoRA adapters extracts task features; per-task linear heads solve
//! five physical-layer tasks (positioning, LOS/NLOS, precoding, beam
//! selection, path loss). A training/evaluation harness runs the whole
//! pipeline under eight ablation configurations and reports metrics as CSV.

pub mod align;
pub mod backbone;
pub mod channel;
pub mod complexmat;
pub mod container;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod instructions;
pub mod labels;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod par;
pub mod params;
pub mod rng;
pub mod scene;
pub mod tasks;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
