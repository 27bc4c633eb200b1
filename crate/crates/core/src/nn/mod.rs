//! A small differentiable toolkit: GRU layers with hand-derived
//! backpropagation through time, affine maps, lookup tables, Adam, a
//! central-difference gradient checker and a binary checkpoint format.
//!
//! Everything runs in `f64`. Sequences are processed one at a time at their
//! true length, so there is no padding that could leak into a loss.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod linear;
mod params;
mod stack;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{fd_resolvable, grad_check, relative_error};
pub use gru::{gru_forward, GruLayer, GruTrace};
pub use linear::{LanguageEmbeddingTable, Linear};
pub use params::{add_scaled, assign_flat, flatten, param_count, zero_fill, Params};
pub(crate) use params::join;
pub use stack::{decoder_forward, encoder_embed, Decoder, DecoderTrace, Encoder, EncoderTrace};

use rand::Rng;

use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Uniform in ±√(6 / (fan_in + fan_out)) for a `rows × cols` weight.
pub fn glorot(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}
