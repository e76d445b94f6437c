//! Minimal reverse-mode differentiable numeric core: tensors, a parameter
//! store, a linear autodiff tape, LSTM stacks, categorical sampling and
//! finite-difference gradient checking.

pub mod adam;
pub mod check;
pub mod lstm;
pub mod sample;
pub mod store;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use check::{grad_check, DEFAULT_EPS};
pub use lstm::{
    lstm_cell, lstm_stack_step, LstmLayerParams, LstmStackParams, LstmStackState, LstmStackVars,
    STACK_LAYERS,
};
pub use sample::{categorical_sample, log_prob, validate_distribution};
pub use store::{ParamId, ParamStore, ParamValues};
pub use tape::{Tape, VarId};
pub use tensor::Tensor;

/// Splitmix64 step; used to derive independent seeds from a master seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-purpose seed derivation.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = master ^ 0x51_7c_c1_b7_27_22_0a_95;
    for b in tag.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h)
}
