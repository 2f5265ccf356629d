use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type for the numerical kernels: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + NumAssignOps + Debug + Display + Default + 'static {
    /// Converts an `f64` literal into `Self`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
