//! Letter-sequence recognition from video, built around one idea: train a
//! recognizer with visual attention, read off where it looked, and zoom in
//! on that region before training again. The model never sees more pixels,
//! it just spends them on the part of the frame that matters.
//!
//! The crate is a library first. Each major capability has a runnable
//! example:
//!
//! ```text
//! cargo run --release -p zoomrec --example synth_dataset
//! cargo run --release -p zoomrec --example train_baseline
//! cargo run --release -p zoomrec --example zoom_train
//! cargo run --release -p zoomrec --example attention_tubes
//! cargo run --release -p zoomrec --example decode_with_lm
//! cargo run --release -p zoomrec --example gradient_check
//! cargo run --release -p zoomrec --example zoom_vs_enlarge
//! cargo run --release -p zoomrec --example visualize_attention
//! ```
//!
//! The same functionality is reachable from the `zoomrec` binary for use in
//! scripts; run `zoomrec --help` for the subcommand list.
//!
//! Module map:
//! - [`imaging`]: frames, boxes, bilinear zooming, motion priors, PGM I/O;
//! - [`synthdata`]: deterministic synthetic glyph-sequence videos;
//! - [`model`]: attention conv-LSTM recognizer with hand-derived gradients;
//! - [`ctc`]: alignment-free loss, exact gradient, greedy decoding;
//! - [`lm_decode`]: character n-gram LM and prefix beam search;
//! - [`tube`]: peak picking and dynamic-programming box linking;
//! - [`pipeline`]: training loops, iterative zooming, schedule search;
//! - [`harness`]: metrics, CLI, visualization.

pub mod ctc;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod imaging;
pub mod linalg;
pub mod lm_decode;
pub mod model;
pub mod pipeline;
pub mod synthdata;
pub mod tube;

pub use error::{Error, Result};
