//! Free-space propagation between parallel planes with the first
//! Rayleigh-Sommerfeld impulse response.
//!
//! The propagation operator is the linear convolution
//! `z_i = sum_k w(p_i - p_k) h_k` over the `n x n` aperture. The fast path
//! zero-pads to `2n x 2n`, multiplies by a cached kernel spectrum and keeps the
//! `n x n` window; [`propagate_direct`] evaluates the double sum literally and
//! serves as the oracle for it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;

pub const DEFAULT_WAVELENGTH: f64 = 632.8e-9;

/// Physical sampling of one network: side length, pixel pitch, wavelength and
/// inter-layer spacing (all lengths in meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationGeometry {
    pub n: usize,
    pub pitch: f64,
    pub wavelength: f64,
    pub spacing: f64,
}

impl PropagationGeometry {
    pub fn new(n: usize, pitch: f64, wavelength: f64, spacing: f64) -> Result<Self> {
        let g = Self { n, pitch, wavelength, spacing };
        g.validate()?;
        Ok(g)
    }

    /// wavelength 632.8 nm, pitch one wavelength, spacing 100 wavelengths.
    pub fn with_defaults(n: usize) -> Result<Self> {
        Self::new(n, DEFAULT_WAVELENGTH, DEFAULT_WAVELENGTH, 100.0 * DEFAULT_WAVELENGTH)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidDimension("geometry side must be at least 1".into()));
        }
        for (name, v) in
            [("pitch", self.pitch), ("wavelength", self.wavelength), ("spacing", self.spacing)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGeometry(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Soft sampling checks. These never make a geometry invalid.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.spacing < self.pitch {
            out.push(format!(
                "layer spacing {:e} m is smaller than the pixel pitch {:e} m",
                self.spacing, self.pitch
            ));
        }
        out
    }

    /// Transform length per axis for linear convolution (at least `2n - 1`).
    pub fn padded_len(&self) -> usize {
        2 * self.n
    }

    fn cache_key(&self) -> (usize, u64, u64, u64) {
        (self.n, self.pitch.to_bits(), self.wavelength.to_bits(), self.spacing.to_bits())
    }
}

/// Impulse response between pixels offset by `(dx, dy)` pixels, including the
/// `pitch^2` area element:
/// `w = (dz / r^2) (1 / (2 pi r) + 1 / (j lambda)) exp(j 2 pi r / lambda) pitch^2`.
pub fn rs_kernel_value(g: &PropagationGeometry, dx: i64, dy: i64) -> Complex64 {
    let px = dx as f64 * g.pitch;
    let py = dy as f64 * g.pitch;
    let dz = g.spacing;
    let r2 = px * px + py * py + dz * dz;
    let r = r2.sqrt();
    // 1/(j lambda) = -j/lambda
    let bracket = Complex64::new(1.0 / (2.0 * PI * r), -1.0 / g.wavelength);
    let carrier = Complex64::from_polar(1.0, 2.0 * PI * r / g.wavelength);
    bracket * carrier * (dz / r2 * g.pitch * g.pitch)
}

/// Precomputed propagation operator for one geometry.
pub struct RsKernel {
    geometry: PropagationGeometry,
    /// `w(dx, dy)` for `dx, dy in -(n-1)..=(n-1)`, row-major over `dy`.
    spatial: Vec<Complex64>,
    /// Kernel spectrum (already divided by the inverse-transform length),
    /// stored transposed: index `kx * len + ky`.
    spectrum: Vec<Complex64>,
    /// Spectrum of the elementwise conjugate kernel, same layout.
    adjoint_spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for RsKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsKernel")
            .field("geometry", &self.geometry)
            .field("transform_len", &self.len)
            .finish()
    }
}

static KERNEL_CACHE: Lazy<Mutex<HashMap<(usize, u64, u64, u64), Arc<RsKernel>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

impl RsKernel {
    pub fn build(geometry: PropagationGeometry) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.n;
        let len = geometry.padded_len();
        let support = 2 * n - 1;
        let half = n as i64 - 1;

        let mut spatial = Vec::with_capacity(support * support);
        for dy in -half..=half {
            for dx in -half..=half {
                let w = rs_kernel_value(&geometry, dx, dy);
                if !(w.re.is_finite() && w.im.is_finite()) {
                    return Err(Error::Kernel(format!("non-finite kernel value at ({dx}, {dy})")));
                }
                spatial.push(w);
            }
        }

        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);

        let mut kernel = RsKernel {
            geometry,
            spatial,
            spectrum: Vec::new(),
            adjoint_spectrum: Vec::new(),
            forward,
            inverse,
            len,
        };
        kernel.spectrum = kernel.wrapped_spectrum(false);
        kernel.adjoint_spectrum = kernel.wrapped_spectrum(true);
        Ok(kernel)
    }

    /// Returns the process-wide kernel for `geometry`, building it on first use.
    pub fn shared(geometry: PropagationGeometry) -> Result<Arc<Self>> {
        let key = geometry.cache_key();
        if let Some(k) = KERNEL_CACHE.lock().expect("kernel cache poisoned").get(&key) {
            return Ok(Arc::clone(k));
        }
        let built = Arc::new(Self::build(geometry)?);
        let mut cache = KERNEL_CACHE.lock().expect("kernel cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(built)))
    }

    pub fn geometry(&self) -> &PropagationGeometry {
        &self.geometry
    }

    pub fn side(&self) -> usize {
        self.geometry.n
    }

    /// Spatial kernel at a pixel offset; `|dx|, |dy| <= n - 1`.
    pub fn spatial(&self, dx: i64, dy: i64) -> Complex64 {
        let half = self.geometry.n as i64 - 1;
        debug_assert!(dx.abs() <= half && dy.abs() <= half);
        let support = (2 * half + 1) as usize;
        self.spatial[(dy + half) as usize * support + (dx + half) as usize]
    }

    fn wrapped_spectrum(&self, conjugate: bool) -> Vec<Complex64> {
        let len = self.len;
        let half = self.geometry.n as i64 - 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); len * len];
        for dy in -half..=half {
            for dx in -half..=half {
                let w = self.spatial(dx, dy);
                let row = dy.rem_euclid(len as i64) as usize;
                let col = dx.rem_euclid(len as i64) as usize;
                buf[row * len + col] = if conjugate { w.conj() } else { w };
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        self.forward.process_with_scratch(&mut buf, &mut scratch);
        let mut t = transpose(&buf, len, len);
        self.forward.process_with_scratch(&mut t, &mut scratch);
        let norm = 1.0 / (len * len) as f64;
        t.iter_mut().for_each(|v| *v *= norm);
        t
    }

    fn apply(&self, f: &ComplexField, spectrum: &[Complex64]) -> Result<ComplexField> {
        let n = self.geometry.n;
        if f.side() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: f.side() });
        }
        let len = self.len;
        let zero = Complex64::new(0.0, 0.0);
        let scratch_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        let mut scratch = vec![zero; scratch_len];

        // Only the first n rows carry data; transform those along x.
        let mut rows = vec![zero; n * len];
        for y in 0..n {
            rows[y * len..y * len + n].copy_from_slice(&f.data()[y * n..(y + 1) * n]);
        }
        self.forward.process_with_scratch(&mut rows, &mut scratch);

        // Transposed: row index kx, column y (padded to len).
        let mut cols = vec![zero; len * len];
        for y in 0..n {
            for kx in 0..len {
                cols[kx * len + y] = rows[y * len + kx];
            }
        }
        self.forward.process_with_scratch(&mut cols, &mut scratch);
        for (v, s) in cols.iter_mut().zip(spectrum) {
            *v *= s;
        }
        self.inverse.process_with_scratch(&mut cols, &mut scratch);

        // Back to row-major, keeping only the n output rows.
        for y in 0..n {
            for kx in 0..len {
                rows[y * len + kx] = cols[kx * len + y];
            }
        }
        self.inverse.process_with_scratch(&mut rows, &mut scratch);

        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            out.extend_from_slice(&rows[y * len..y * len + n]);
        }
        ComplexField::from_vec(n, out)
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

pub fn build_rs_kernel(g: PropagationGeometry) -> Result<RsKernel> {
    RsKernel::build(g)
}

/// FFT-backed linear convolution with the propagation kernel.
pub fn propagate(f: &ComplexField, k: &RsKernel) -> Result<ComplexField> {
    k.apply(f, &k.spectrum)
}

/// Conjugate transpose of [`propagate`]: convolution with `conj(w)`, which
/// equals the adjoint because `w(d) == w(-d)`.
pub fn propagate_adjoint(grad_out: &ComplexField, k: &RsKernel) -> Result<ComplexField> {
    k.apply(grad_out, &k.adjoint_spectrum)
}

/// Literal `O(n^4)` evaluation of `z_i = sum_k w(p_i - p_k) h_k`.
pub fn propagate_direct(f: &ComplexField, k: &RsKernel) -> Result<ComplexField> {
    let n = k.side();
    if f.side() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: f.side() });
    }
    ComplexField::from_fn(n, |xi, yi| {
        let mut acc = Complex64::new(0.0, 0.0);
        for yk in 0..n {
            for xk in 0..n {
                let w = k.spatial(xi as i64 - xk as i64, yi as i64 - yk as i64);
                acc += w * f.at(xk, yk);
            }
        }
        acc
    })
}
