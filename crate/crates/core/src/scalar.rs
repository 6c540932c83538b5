use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for all tensors and kernels.
///
/// Training runs in `f32`; gradient checking runs in `f64`, where central
/// differences are actually trustworthy. Everything downstream is generic
/// over this trait so both precisions share one code path.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::ToPrimitive + Debug + Display + Default + Sum + 'static
{
    /// Shorthand for converting an `f64` constant into this precision.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant conversion")
    }

    fn to_f64_(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
