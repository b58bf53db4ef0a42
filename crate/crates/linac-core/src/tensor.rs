//! Dense row-major tensors and the LNT1 on-disk format.
//!
//! The container is deliberately minimal: shape plus a flat `Vec` in
//! row-major order (last dimension fastest). All reductions over tensor data
//! anywhere in the crate run left-to-right in index order, which is what
//! makes results bit-identical across runs and thread counts.
//!
//! # LNT1 format
//!
//! Little-endian throughout:
//!
//! | bytes      | content                             |
//! |------------|-------------------------------------|
//! | 4          | magic `LNT1`                        |
//! | 1          | element code: 0 = f32, 1 = f64      |
//! | 1          | rank                                |
//! | 4 × rank   | extents as u32                      |
//! | w × len    | element values, row-major           |

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: [u8; 4] = *b"LNT1";

/// Dense row-major tensor over a [`Scalar`] element type.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor from a shape and matching flat data.
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::shape(
                "Tensor::new",
                format!("{len} elements for dims {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = checked_len(&dims).expect("tensor size overflow");
        Tensor {
            dims,
            data: vec![S::zero(); len],
        }
    }

    /// Tensor filled with one value.
    pub fn full(dims: Vec<usize>, value: S) -> Self {
        let len = checked_len(&dims).expect("tensor size overflow");
        Tensor {
            dims,
            data: vec![value; len],
        }
    }

    /// Fill from a function of the flat (row-major) index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let len = checked_len(&dims).expect("tensor size overflow");
        Tensor {
            dims,
            data: (0..len).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Same data under a new shape of equal element count.
    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if len != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshaped",
                format!("shape with {} elements", self.data.len()),
                format!("{dims:?} ({len} elements)"),
            ));
        }
        self.dims = dims;
        Ok(self)
    }

    /// Flat index of a rank-3 position `[i, j, k]`.
    #[inline]
    pub fn offset3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 3);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Apply `f` elementwise in place.
    pub fn map_inplace(&mut self, mut f: impl FnMut(S) -> S) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor<S>, scale: S) -> Result<()> {
        self.check_same_shape(other, "Tensor::add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
        Ok(())
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape(other, "Tensor::sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    /// Clamp every element into `[lo, hi]`.
    pub fn clamp_inplace(&mut self, lo: S, hi: S) {
        for v in &mut self.data {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            }
        }
    }

    /// Largest absolute element (0 for an empty tensor).
    pub fn linf_norm(&self) -> S {
        let mut m = S::zero();
        for v in &self.data {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    /// Euclidean norm, accumulated in `f64` in index order.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for v in &self.data {
            let x = v.into_f64();
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Largest absolute elementwise difference, in `f64`.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> Result<f64> {
        self.check_same_shape(other, "Tensor::max_abs_diff")?;
        let mut m = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = (a.into_f64() - b.into_f64()).abs();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    fn check_same_shape(&self, other: &Tensor<S>, context: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                context,
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        Ok(())
    }

    /// Serialize in LNT1 format.
    pub fn write_lnt<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&[S::DTYPE_CODE])?;
        let rank = u8::try_from(self.dims.len())
            .map_err(|_| Error::Format(format!("rank {} exceeds LNT1 limit", self.dims.len())))?;
        w.write_all(&[rank])?;
        for &d in &self.dims {
            let e = u32::try_from(d)
                .map_err(|_| Error::Format(format!("extent {d} exceeds LNT1 limit")))?;
            w.write_all(&e.to_le_bytes())?;
        }
        for &v in &self.data {
            v.write_le(w)?;
        }
        Ok(())
    }

    /// Deserialize from LNT1 format, checking magic and element type.
    pub fn read_lnt<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 6];
        r.read_exact(&mut head)
            .map_err(|e| Error::Format(format!("LNT1 header: {e}")))?;
        if head[..4] != MAGIC {
            return Err(Error::Format("bad magic, not an LNT1 tensor".into()));
        }
        if head[4] != S::DTYPE_CODE {
            return Err(Error::Format(format!(
                "element type code {} does not match requested type (code {})",
                head[4],
                S::DTYPE_CODE
            )));
        }
        let rank = head[5] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut e = [0u8; 4];
            r.read_exact(&mut e)
                .map_err(|e| Error::Format(format!("LNT1 extents: {e}")))?;
            dims.push(u32::from_le_bytes(e) as usize);
        }
        let len = checked_len(&dims)?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(
                S::read_le(r).map_err(|e| Error::Format(format!("LNT1 payload truncated: {e}")))?,
            );
        }
        Ok(Tensor { dims, data })
    }

    /// Serialized LNT1 bytes (handy for bit-identity comparisons).
    pub fn to_lnt_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(6 + 4 * self.dims.len() + S::BYTE_WIDTH * self.data.len());
        self.write_lnt(&mut buf)?;
        Ok(buf)
    }

    /// Write to a file, failing on any existing trailing content confusion
    /// by truncating first.
    pub fn save_lnt(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_lnt(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Read from a file, rejecting trailing bytes after the payload.
    pub fn load_lnt(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path.as_ref())?);
        let t = Self::read_lnt(&mut r)?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format(format!(
                "trailing bytes after tensor payload in {}",
                path.as_ref().display()
            )));
        }
        Ok(t)
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    let mut len = 1usize;
    for &d in dims {
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidArgument(format!("tensor size overflow for {dims:?}")))?;
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
    }

    #[test]
    fn rank_zero_is_a_single_value() {
        let t = Tensor::new(vec![], vec![4.25f64]).unwrap();
        let bytes = t.to_lnt_bytes().unwrap();
        let back = Tensor::<f64>::read_lnt(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn lnt_round_trip_preserves_bits() {
        let data = vec![
            0.0f32,
            -0.0,
            1.5,
            f32::MIN_POSITIVE / 2.0, // subnormal
            -3.25e-20,
            1.0e20,
        ];
        let t = Tensor::new(vec![2, 3], data.clone()).unwrap();
        let bytes = t.to_lnt_bytes().unwrap();
        let back = Tensor::<f32>::read_lnt(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.dims(), &[2, 3]);
        for (a, b) in back.data().iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn lnt_header_layout_is_pinned() {
        let t = Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        let bytes = t.to_lnt_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LNT1");
        assert_eq!(bytes[4], 0); // f32 code
        assert_eq!(bytes[5], 2); // rank
        assert_eq!(&bytes[6..10], &1u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 6 + 8 + 8);
    }

    #[test]
    fn read_rejects_bad_magic_and_dtype() {
        let t = Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        let mut bytes = t.to_lnt_bytes().unwrap();
        assert!(Tensor::<f64>::read_lnt(&mut bytes.as_slice()).is_err());
        bytes[0] = b'X';
        assert!(Tensor::<f32>::read_lnt(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn read_rejects_truncation() {
        let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let bytes = t.to_lnt_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 2];
        assert!(Tensor::<f32>::read_lnt(&mut &cut[..]).is_err());
    }

    #[test]
    fn file_round_trip_rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lnt");
        let t = Tensor::new(vec![2, 2], vec![1.0f64, -0.0, 2.0, 3.0]).unwrap();
        t.save_lnt(&path).unwrap();
        assert_eq!(Tensor::<f64>::load_lnt(&path).unwrap(), t);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(Tensor::<f64>::load_lnt(&path).is_err());
    }

    #[test]
    fn norms_and_diffs() {
        let a = Tensor::new(vec![3], vec![3.0f32, -4.0, 0.0]).unwrap();
        let b = Tensor::new(vec![3], vec![3.0f32, -4.0, 1.0]).unwrap();
        assert_eq!(a.linf_norm(), 4.0);
        assert!((a.l2_norm() - 5.0).abs() < 1e-12);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 1.0);
        let c = Tensor::<f32>::zeros(vec![2]);
        assert!(a.max_abs_diff(&c).is_err());
    }

    #[test]
    fn clamp_and_add_scaled() {
        let mut a = Tensor::new(vec![4], vec![-1.0f32, 0.25, 0.5, 2.0]).unwrap();
        let d = Tensor::new(vec![4], vec![1.0f32, 1.0, 1.0, 1.0]).unwrap();
        a.add_scaled(&d, 0.5).unwrap();
        assert_eq!(a.data(), &[-0.5, 0.75, 1.0, 2.5]);
        a.clamp_inplace(0.0, 1.0);
        assert_eq!(a.data(), &[0.0, 0.75, 1.0, 1.0]);
    }
}
