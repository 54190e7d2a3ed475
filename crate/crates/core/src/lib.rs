pub mod codebook;
pub mod data_io;
pub mod dwt;
pub mod error;
pub mod metrics;
pub mod seq_model;
pub mod series;
pub mod synth;
pub mod thresholding;
pub mod tokenizer;
pub mod wavelet_bank;

pub use error::{Error, Result};
