use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar the tape and model are generic over.
///
/// f32 is the training precision; f64 backs gradient checking on the exact
/// same graph-building code.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn to_f64_c(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
