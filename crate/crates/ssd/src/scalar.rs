//! Scalar abstraction: the whole library is generic over the floating-point
//! type through [`Scalar`], implemented for `f32` and `f64`.

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar usable throughout the solvers.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from [0, 1).
    fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Conversion for schedule constants; panics only on non-representable
    /// values, which cannot happen for the literals used internally.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample(StandardNormal)
            }

            fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
