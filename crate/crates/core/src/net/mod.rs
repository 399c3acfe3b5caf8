//! Sigmoid feedforward frame classifier with optional convolutional head,
//! generic over the arithmetic scalar so the same engine runs in f32 for
//! production and f64 for finite-difference verification.

mod forward;
mod params;
mod spec;
mod train;

pub use forward::{forward, forward_with_taps, ActivationTrace};
pub use params::{init_network, DenseParams, Parameters};
pub use spec::{ConvSpec, Head, NetworkSpec};
pub(crate) use train::argmax_row;
pub use train::{
    adapt_finetune, evaluate, gradients, train, AdaptConfig, EpochRecord, FrameSet, Metrics,
    TrainConfig, TrainingLog, IMPROVEMENT_THRESHOLD, STOP_STRIKES,
};

/// Arithmetic scalar for the network engine.
pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite_scalar(self) -> bool;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    let one = F::one();
    one / (one + (F::zero() - x).exp())
}
