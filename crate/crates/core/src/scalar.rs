//! Floating point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

/// Storage tag used by binary containers (checkpoints) to record the scalar width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn byte_width(self) -> usize {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }
}

/// A real scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const KIND: ScalarKind;

    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn cast(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Appends the little-endian bit pattern.
    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the front of `bytes` (little-endian bit pattern).
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $kind:expr) => {
        impl Real for $t {
            const KIND: ScalarKind = $kind;

            #[inline]
            fn cast(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, ScalarKind::F32);
impl_real!(f64, ScalarKind::F64);
