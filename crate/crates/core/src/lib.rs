//! Similarity-ranked spectral masking for masked image modeling on
//! multi-band image patches.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`cube`]: multi-band scenes, patch extraction, normalization, a
//!   synthetic scene generator with known band redundancy, and the
//!   `SPECCUBE1` / `SPECLAB1` file formats.
//! * [`masking`]: spatial-random, spectral-random and redundancy-aware (MRS)
//!   mask plans. MRS picks a random base band and hides it together with the
//!   bands most cosine-similar to it.
//! * [`autonet`]: a small per-band autoencoder with mask tokens, a classifier
//!   head and exact analytic gradients.
//! * [`trainer`]: masked pretraining, fine-tuning, accuracy evaluation and
//!   Adam.
//! * [`leakage`]: band similarity matrices, redundancy groups, co-masking
//!   statistics and a leakage probe comparing trained models.
//! * [`cli`]: the `mrs` command-line front end (`gen`, `sim`, `pretrain`,
//!   `finetune`, `evaluate`, `compare`).
//!
//! Runnable walkthroughs of each capability live in the crate's `examples/`
//! directory (`cargo run --release --example <name>`).

pub mod autonet;
pub mod cli;
pub mod cube;
pub mod error;
pub mod leakage;
pub mod masking;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
