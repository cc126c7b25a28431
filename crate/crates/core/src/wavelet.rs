//! Wavelet phase masks.
//!
//! Pixels at equal L1 distance from a fixed point `q` form one "circle" and
//! share a single learnable phase, so a layer of `n^2` pixels carries at most
//! `2n - 1` parameters. The dense mode keeps one phase per pixel.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based pixel coordinate `(x, y)`, `x, y in 1..=n`.
pub type FixedPoint = (usize, usize);

/// Draws the wavelet center. With `shift` the point is uniform over the grid,
/// otherwise it is the layer center `(ceil(n/2), ceil(n/2))`.
pub fn sample_fixed_point<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: bool) -> FixedPoint {
    assert!(n >= 1, "layer side must be at least 1");
    if shift {
        (rng.gen_range(1..=n), rng.gen_range(1..=n))
    } else {
        let c = n.div_ceil(2);
        (c, c)
    }
}

/// Per-pixel circle index: the rank of the pixel's L1 distance to `q` among
/// all distinct distances on the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircleMap {
    n: usize,
    q: FixedPoint,
    circle_of: Vec<u32>,
    num_circles: usize,
}

impl CircleMap {
    pub fn build(n: usize, q: FixedPoint) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("layer side must be at least 1".into()));
        }
        let (xq, yq) = q;
        if !(1..=n).contains(&xq) || !(1..=n).contains(&yq) {
            return Err(Error::FixedPointOutOfRange { x: xq, y: yq, n });
        }
        let distance = |x: usize, y: usize| x.abs_diff(xq) + y.abs_diff(yq);

        let mut present = vec![false; 2 * n - 1];
        for y in 1..=n {
            for x in 1..=n {
                present[distance(x, y)] = true;
            }
        }
        let mut rank = vec![u32::MAX; present.len()];
        let mut num_circles = 0usize;
        for (d, seen) in present.iter().enumerate() {
            if *seen {
                rank[d] = num_circles as u32;
                num_circles += 1;
            }
        }

        let mut circle_of = Vec::with_capacity(n * n);
        for y in 1..=n {
            for x in 1..=n {
                circle_of.push(rank[distance(x, y)]);
            }
        }
        Ok(Self { n, q, circle_of, num_circles })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn fixed_point(&self) -> FixedPoint {
        self.q
    }

    pub fn num_circles(&self) -> usize {
        self.num_circles
    }

    /// Row-major circle index per pixel.
    pub fn circle_of(&self) -> &[u32] {
        &self.circle_of
    }
}

pub fn build_circle_map(n: usize, q: FixedPoint) -> Result<CircleMap> {
    CircleMap::build(n, q)
}

/// Closed-form circle count for a fixed point on an `n x n` grid.
pub fn closed_form_circle_count(n: usize, q: FixedPoint) -> usize {
    let (xq, yq) = q;
    (xq - 1).max(n - xq) + (yq - 1).max(n - yq) + 1
}

fn uniform_open_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v = rng.gen_range(0.0..2.0 * PI);
        if v > 0.0 {
            return v;
        }
    }
}

/// One i.i.d. phase in `(0, 2 pi)` per circle.
pub fn init_wavelet_phases<R: Rng + ?Sized>(rng: &mut R, map: &CircleMap) -> Vec<f64> {
    (0..map.num_circles()).map(|_| uniform_open_phase(rng)).collect()
}

/// One i.i.d. phase in `(0, 2 pi)` per pixel.
pub fn init_dense_phases<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n * n).map(|_| uniform_open_phase(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    Wavelet,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
enum Pattern {
    Wavelet(CircleMap),
    Dense { n: usize },
}

/// Learnable phases of one diffractive layer.
///
/// Phases are unconstrained reals; they start in `(0, 2 pi)` and are never
/// wrapped afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletLayer {
    pattern: Pattern,
    phases: Vec<f64>,
}

impl WaveletLayer {
    pub fn wavelet(map: CircleMap, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != map.num_circles() {
            return Err(Error::InvalidDimension(format!(
                "{} circle phases for a map with {} circles",
                phases.len(),
                map.num_circles()
            )));
        }
        Ok(Self { pattern: Pattern::Wavelet(map), phases })
    }

    pub fn dense(n: usize, phases: Vec<f64>) -> Result<Self> {
        if n == 0 || phases.len() != n * n {
            return Err(Error::InvalidDimension(format!(
                "{} dense phases for side {n}",
                phases.len()
            )));
        }
        Ok(Self { pattern: Pattern::Dense { n }, phases })
    }

    /// Draws a fresh wavelet layer: fixed point from `point_rng`, phases from `phase_rng`.
    pub fn random_wavelet<R: Rng + ?Sized>(
        n: usize,
        shift: bool,
        point_rng: &mut R,
        phase_rng: &mut R,
    ) -> Result<Self> {
        let q = sample_fixed_point(point_rng, n, shift);
        let map = CircleMap::build(n, q)?;
        let phases = init_wavelet_phases(phase_rng, &map);
        Self::wavelet(map, phases)
    }

    pub fn random_dense<R: Rng + ?Sized>(n: usize, phase_rng: &mut R) -> Result<Self> {
        Self::dense(n, init_dense_phases(phase_rng, n))
    }

    pub fn side(&self) -> usize {
        match &self.pattern {
            Pattern::Wavelet(map) => map.side(),
            Pattern::Dense { n } => *n,
        }
    }

    pub fn mode(&self) -> PhaseMode {
        match self.pattern {
            Pattern::Wavelet(_) => PhaseMode::Wavelet,
            Pattern::Dense { .. } => PhaseMode::Dense,
        }
    }

    pub fn circle_map(&self) -> Option<&CircleMap> {
        match &self.pattern {
            Pattern::Wavelet(map) => Some(map),
            Pattern::Dense { .. } => None,
        }
    }

    pub fn fixed_point(&self) -> Option<FixedPoint> {
        self.circle_map().map(CircleMap::fixed_point)
    }

    pub fn param_count(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [f64] {
        &mut self.phases
    }

    /// Per-pixel phase grid, row-major.
    pub fn expand_phases(&self) -> Vec<f64> {
        match &self.pattern {
            Pattern::Wavelet(map) => {
                map.circle_of().iter().map(|&c| self.phases[c as usize]).collect()
            }
            Pattern::Dense { .. } => self.phases.clone(),
        }
    }

    /// Adjoint of [`expand_phases`](Self::expand_phases): sums pixel gradients
    /// over each circle.
    pub fn reduce_phase_grad(&self, pixel_grad: &[f64]) -> Result<Vec<f64>> {
        let n = self.side();
        if pixel_grad.len() != n * n {
            return Err(Error::InvalidDimension(format!(
                "pixel gradient has {} entries, layer has {}",
                pixel_grad.len(),
                n * n
            )));
        }
        match &self.pattern {
            Pattern::Wavelet(map) => reduce_phase_grad(pixel_grad, map),
            Pattern::Dense { .. } => Ok(pixel_grad.to_vec()),
        }
    }

    pub fn render_phase_map(&self) -> GrayImage {
        render_phase_grid(self.side(), &self.expand_phases())
    }
}

/// `grad_C = sum_{p in C} pixel_grad[p]`.
pub fn reduce_phase_grad(pixel_grad: &[f64], map: &CircleMap) -> Result<Vec<f64>> {
    if pixel_grad.len() != map.circle_of().len() {
        return Err(Error::InvalidDimension(format!(
            "pixel gradient has {} entries, map has {}",
            pixel_grad.len(),
            map.circle_of().len()
        )));
    }
    let mut out = vec![0.0; map.num_circles()];
    for (g, &c) in pixel_grad.iter().zip(map.circle_of()) {
        out[c as usize] += g;
    }
    Ok(out)
}

pub fn expand_phases(layer: &WaveletLayer) -> Vec<f64> {
    layer.expand_phases()
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub side: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.side, self.side).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Maps `sin(phi)` from `[-1, 1]` onto `0..=255`, rounding half up.
pub fn sine_gray_level(phi: f64) -> u8 {
    let v = (phi.sin() + 1.0) / 2.0 * 255.0;
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn render_phase_grid(side: usize, phases: &[f64]) -> GrayImage {
    GrayImage { side, pixels: phases.iter().map(|&p| sine_gray_level(p)).collect() }
}

pub fn render_phase_map(layer: &WaveletLayer) -> GrayImage {
    layer.render_phase_map()
}
