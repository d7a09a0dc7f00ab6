//! Minimal neural-network kernel: parameters with shared storage, stride-2
//! convolutions (down and up), batch normalisation, activations, dropout and
//! an explicit backward pass for each. No graph autodiff — the networks in
//! [`crate::networks`] wire forwards and backwards by hand and the whole
//! chain is checked against central finite differences in the test suite.

pub mod layers;
pub mod ops;
pub mod param;

pub use layers::{Activation, BatchNorm, ConvBlock, ConvBlockCache, ConvDown, ConvUp, Linear};
pub use param::Param;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type of every tensor in the crate. Training runs in `f32`; the
/// gradient checks and loss oracles run the same code in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum<Self>
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
