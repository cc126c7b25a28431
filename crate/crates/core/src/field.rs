//! Square complex-valued fields: the optical wavefront at one plane.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// An `n x n` grid of complex amplitudes stored row-major (`index = y * n + x`).
///
/// Coordinates are 0-based here. The 1-based pixel coordinates used by the
/// wavelet construction are converted in [`ComplexField::at_one_based`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(n: usize, fill: Complex64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("field side must be at least 1".into()));
        }
        Ok(Self { n, data: vec![fill; n * n] })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, Complex64::new(0.0, 0.0))
    }

    /// Wraps existing row-major data. The length must be a non-zero perfect square.
    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("field side must be at least 1".into()));
        }
        if data.len() != n * n {
            return Err(Error::InvalidDimension(format!(
                "expected {} elements for a {n}x{n} field, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    /// Builds a field by evaluating `f(x, y)` at every 0-based coordinate.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("field side must be at least 1".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                data.push(f(x, y));
            }
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.n
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
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.n + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Complex64) {
        self.data[y * self.n + x] = value;
    }

    /// Reads the pixel at 1-based coordinates `(x, y)`, `x, y in 1..=n`.
    #[inline]
    pub fn at_one_based(&self, x: usize, y: usize) -> Complex64 {
        debug_assert!(x >= 1 && y >= 1 && x <= self.n && y <= self.n);
        self.at(x - 1, y - 1)
    }

    /// Sum of squared moduli over all pixels.
    pub fn total_intensity(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ComplexField) -> Result<ComplexField> {
        self.check_same_side(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(ComplexField { n: self.n, data })
    }

    /// `sum_p conj(self_p) * other_p`.
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        self.check_same_side(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn scale(&self, alpha: Complex64) -> ComplexField {
        ComplexField { n: self.n, data: self.data.iter().map(|v| v * alpha).collect() }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: Complex64, other: &ComplexField) -> Result<()> {
        self.check_same_side(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub(crate) fn check_same_side(&self, other: &ComplexField) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: other.n });
        }
        Ok(())
    }
}

/// Convenience alias for [`ComplexField::new`].
pub fn make_field(n: usize, fill: Complex64) -> Result<ComplexField> {
    ComplexField::new(n, fill)
}

pub fn total_intensity(f: &ComplexField) -> f64 {
    f.total_intensity()
}

pub fn hadamard(a: &ComplexField, b: &ComplexField) -> Result<ComplexField> {
    a.hadamard(b)
}
