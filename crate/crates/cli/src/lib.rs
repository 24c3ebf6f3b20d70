//! File formats, configuration and command implementations behind the
//! `cgsc` binary.

pub mod commands;
pub mod config;
pub mod tensor;

pub use commands::{cmd_eval, cmd_norm_check, cmd_solve, cmd_synth};
pub use config::Config;
pub use tensor::{read_tensor, write_tensor, Tensor, TensorError};
