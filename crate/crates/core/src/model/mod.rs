//! The one-layer decoder-only transformer, its scalar reduction and the
//! token-averaged FNN.

pub mod activation;
pub mod count;
pub mod forward;
pub mod params;

pub use activation::Activation;
pub use count::{bound_ratio, capacity_bounds, param_count, CapacityBounds, ParamLayout};
pub use forward::{
    empty_context_output, scalar_attention, scalar_head, softmax, token_average, transformer_forward,
    transformer_forward_cached, ForwardCache, HiddenMap, ModelOptions, ScalarModel, TokenAverageModel, Transformer,
    Variant,
};
pub use params::{lift_scalar, lift_scalar_token_average, Dims, ScalarParams, TokenAverageParams, TransformerParams};

use crate::{Result, Token};

/// Anything that maps a context to a next-token distribution over `1..=omega`.
pub trait NextTokenModel {
    fn omega(&self) -> usize;

    /// Distribution over tokens `1..=omega`, indexed from zero.
    fn predict(&self, ctx: &[Token]) -> Result<Vec<f64>>;
}
