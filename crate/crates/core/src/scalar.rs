use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar for descriptor, clustering and matching math.
///
/// Implemented for `f32` and `f64`. `Display` and `FromStr` are required so
/// model files round-trip exactly: Rust prints the shortest decimal that
/// parses back to the identical value.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Display + FromStr + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}
