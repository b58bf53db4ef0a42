//! Floating-point element types usable throughout the crate.

use std::fmt::{Debug, Display};
use std::io::{Read, Write};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Element type for tensors, network parameters, and attack arithmetic.
///
/// `f32` is the default compute precision; `f64` exists so gradient code can
/// be checked against finite-difference oracles at a precision where the
/// comparison is meaningful. Everything in the crate is generic over this
/// trait, with behaviour identical up to rounding.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Element-type code stored in tensor file headers.
    const DTYPE_CODE: u8;
    /// Encoded size of one element in bytes.
    const BYTE_WIDTH: usize;

    /// Map 64 random bits to a uniform value in `[0, 1)`, using as many of
    /// the high bits as the mantissa can hold so the result is exact.
    fn unit_from_bits(bits: u64) -> Self;

    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn of_f64(v: f64) -> Self;

    /// Widening conversion to `f64` (exact for both supported types).
    fn into_f64(self) -> f64;

    fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()>;
    fn read_le<R: Read>(r: &mut R) -> std::io::Result<Self>;
}

impl Scalar for f32 {
    const DTYPE_CODE: u8 = 0;
    const BYTE_WIDTH: usize = 4;

    #[inline]
    fn unit_from_bits(bits: u64) -> Self {
        // Top 24 bits -> [0, 2^24), scaled by 2^-24 (exact power of two).
        ((bits >> 40) as f32) * (1.0 / (1u32 << 24) as f32)
    }

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }

    fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }

    fn read_le<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        Ok(f32::from_le_bytes(buf))
    }
}

impl Scalar for f64 {
    const DTYPE_CODE: u8 = 1;
    const BYTE_WIDTH: usize = 8;

    #[inline]
    fn unit_from_bits(bits: u64) -> Self {
        // Top 53 bits -> [0, 2^53), scaled by 2^-53 (exact power of two).
        ((bits >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self
    }

    fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }

    fn read_le<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }
}
