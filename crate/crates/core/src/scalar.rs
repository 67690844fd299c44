use std::fmt::Debug;

/// Floating-point scalar the measure and quadrature code is generic over: f32 or f64.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssign + Debug + Default + Send + Sync + 'static
{
    /// Lossy conversion from an f64 literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn from_i64_lossy(x: i64) -> Self {
        Self::from_i64(x).expect("integer representable in scalar type")
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
