//! Line-level defect prediction with a hierarchical transformer.
//!
//! Source files are tokenized with byte-pair encoding, cut into fixed-shape
//! (lines x tokens) windows and scored by two stacked transformer encoders:
//! one over the tokens of each line, one over the lines of each window. The
//! per-line defect probabilities feed a global ranking that is scored with
//! balanced accuracy, AuROC, Recall@Top20%LOC, Effort@Top20%Recall and
//! initial false alarm.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
