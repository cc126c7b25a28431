//! Stacked phase-only diffractive layers with expressway output accumulation.
//!
//! Forward recurrence for `l = 1..=L`:
//!
//! ```text
//! z^l = P h^{l-1},   h^l = exp(j phi^l) * z^l,   h^0 = input
//! ```
//!
//! With the expressway enabled the output plane receives
//! `sum_l w_l P h^l`, evaluated as `P (sum_l w_l h^l)`; otherwise it receives
//! `P h^L`. Class scores are detector-region intensities of the output field.
//!
//! Gradients use the convention `G_u = dL/dRe(u) + j dL/dIm(u)` for every
//! complex intermediate `u`. Under it a linear map `A` pulls back as `A^H`,
//! an elementwise product with `t` as `conj(t)`, and `d/dphi` of
//! `h = exp(j phi) z` is `Im(G_h conj(h))`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;

use crate::diffraction::{propagate, propagate_adjoint, PropagationGeometry, RsKernel};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::seed::{stream_rng, Stream};
use crate::wavelet::{PhaseMode, WaveletLayer};

pub const NUM_CLASSES: usize = 10;

pub type Scores = [f64; NUM_CLASSES];

/// Axis-aligned square window `[x0, x0 + size) x [y0, y0 + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl Region {
    fn overlaps(&self, other: &Region) -> bool {
        self.x0 < other.x0 + other.size
            && other.x0 < self.x0 + self.size
            && self.y0 < other.y0 + other.size
            && other.y0 < self.y0 + self.size
    }

    pub fn area(&self) -> usize {
        self.size * self.size
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x0 + self.size).contains(&x) && (self.y0..self.y0 + self.size).contains(&y)
    }
}

/// Ten disjoint class windows in the output plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorLayout {
    n: usize,
    regions: [Region; NUM_CLASSES],
}

impl DetectorLayout {
    /// Square windows of side `max(1, n / 8)` in two rows of five. Row centers
    /// sit at 1/3 and 2/3 of the height, column centers at odd tenths of the
    /// width.
    pub fn standard(n: usize) -> Result<Self> {
        let size = (n / 8).max(1);
        let mut regions = [Region { x0: 0, y0: 0, size }; NUM_CLASSES];
        let corner = |center: f64| -> usize {
            let c = (center - size as f64 / 2.0).floor().max(0.0) as usize;
            c.min(n.saturating_sub(size))
        };
        for row in 0..2 {
            let cy = n as f64 * (row + 1) as f64 / 3.0;
            for col in 0..5 {
                let cx = n as f64 * (2 * col + 1) as f64 / 10.0;
                regions[row * 5 + col] = Region { x0: corner(cx), y0: corner(cy), size };
            }
        }
        Self::from_regions(n, regions)
    }

    pub fn from_regions(n: usize, regions: [Region; NUM_CLASSES]) -> Result<Self> {
        for (i, r) in regions.iter().enumerate() {
            if r.size == 0 || r.x0 + r.size > n || r.y0 + r.size > n {
                return Err(Error::InvalidDimension(format!(
                    "detector region {i} {r:?} does not fit a {n}x{n} plane"
                )));
            }
            for (j, other) in regions.iter().enumerate().skip(i + 1) {
                if r.overlaps(other) {
                    return Err(Error::InvalidDimension(format!(
                        "detector regions {i} and {j} overlap on a {n}x{n} plane"
                    )));
                }
            }
        }
        Ok(Self { n, regions })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn regions(&self) -> &[Region; NUM_CLASSES] {
        &self.regions
    }
}

/// `score_c = sum_{p in region_c} |f_p|^2`.
pub fn detector_readout(f: &ComplexField, d: &DetectorLayout) -> Scores {
    let mut scores = [0.0; NUM_CLASSES];
    for (score, r) in scores.iter_mut().zip(d.regions()) {
        for y in r.y0..r.y0 + r.size {
            for x in r.x0..r.x0 + r.size {
                *score += f.at(x, y).norm_sqr();
            }
        }
    }
    scores
}

/// Phase-only modulation `f_p exp(j phi_p)`.
pub fn modulate(f: &ComplexField, layer: &WaveletLayer) -> Result<ComplexField> {
    if f.side() != layer.side() {
        return Err(Error::DimensionMismatch { expected: layer.side(), actual: f.side() });
    }
    let t = transmission(layer);
    f.hadamard(&t)
}

fn transmission(layer: &WaveletLayer) -> ComplexField {
    let data = layer.expand_phases().into_iter().map(|p| Complex64::from_polar(1.0, p)).collect();
    ComplexField::from_vec(layer.side(), data).expect("layer grid is square")
}

/// Learnable values of a layer stack: all phases, plus one weight per layer
/// when the expressway is enabled.
pub fn param_count(layers: &[WaveletLayer], express_enabled: bool) -> usize {
    let phases: usize = layers.iter().map(WaveletLayer::param_count).sum();
    phases + if express_enabled { layers.len() } else { 0 }
}

/// How to build a fresh network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub geometry: PropagationGeometry,
    pub layers: usize,
    pub phase_mode: PhaseMode,
    /// Random fixed point per layer (otherwise the layer center).
    pub shift: bool,
    pub express: bool,
    pub seed: u64,
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<WaveletLayer>,
    kernel: Arc<RsKernel>,
    express_weights: Vec<f64>,
    express_enabled: bool,
    detector: DetectorLayout,
    master_seed: u64,
    transmissions: Vec<ComplexField>,
    generation: u64,
}

impl Network {
    /// Assembles a network from explicit layers. `express_weights` must hold
    /// one weight per layer; it is kept (and checkpointed) even when the
    /// expressway is disabled.
    pub fn new(
        layers: Vec<WaveletLayer>,
        geometry: PropagationGeometry,
        express_enabled: bool,
        express_weights: Vec<f64>,
        master_seed: u64,
    ) -> Result<Self> {
        let detector = DetectorLayout::standard(geometry.n)?;
        Self::with_detector(layers, geometry, express_enabled, express_weights, master_seed, detector)
    }

    pub fn with_detector(
        layers: Vec<WaveletLayer>,
        geometry: PropagationGeometry,
        express_enabled: bool,
        express_weights: Vec<f64>,
        master_seed: u64,
        detector: DetectorLayout,
    ) -> Result<Self> {
        let n = geometry.n;
        if layers.is_empty() {
            return Err(Error::InvalidDimension("a network needs at least one layer".into()));
        }
        if let Some(bad) = layers.iter().find(|l| l.side() != n) {
            return Err(Error::DimensionMismatch { expected: n, actual: bad.side() });
        }
        if express_weights.len() != layers.len() {
            return Err(Error::InvalidDimension(format!(
                "{} express weights for {} layers",
                express_weights.len(),
                layers.len()
            )));
        }
        if detector.side() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: detector.side() });
        }
        let kernel = RsKernel::shared(geometry)?;
        let mut net = Self {
            layers,
            kernel,
            express_weights,
            express_enabled,
            detector,
            master_seed,
            transmissions: Vec::new(),
            generation: 0,
        };
        net.refresh();
        Ok(net)
    }

    /// Random initialization. Layer `l` draws its fixed point from stream
    /// `FixedPoint(l)` and its phases from `Phases(l)`; express weights start
    /// at `1 / L`.
    pub fn random(spec: &NetworkSpec) -> Result<Self> {
        let n = spec.geometry.n;
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let mut phase_rng = stream_rng(spec.seed, Stream::Phases(l as u32));
            let layer = match spec.phase_mode {
                PhaseMode::Wavelet => {
                    let mut point_rng = stream_rng(spec.seed, Stream::FixedPoint(l as u32));
                    WaveletLayer::random_wavelet(n, spec.shift, &mut point_rng, &mut phase_rng)?
                }
                PhaseMode::Dense => WaveletLayer::random_dense(n, &mut phase_rng)?,
            };
            layers.push(layer);
        }
        let weights = vec![1.0 / spec.layers.max(1) as f64; spec.layers];
        Self::new(layers, spec.geometry, spec.express, weights, spec.seed)
    }

    fn refresh(&mut self) {
        self.transmissions = self.layers.iter().map(transmission).collect();
        self.generation = next_generation();
    }

    pub fn side(&self) -> usize {
        self.kernel.side()
    }

    pub fn geometry(&self) -> &PropagationGeometry {
        self.kernel.geometry()
    }

    pub fn kernel(&self) -> &RsKernel {
        &self.kernel
    }

    pub fn layers(&self) -> &[WaveletLayer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn express_enabled(&self) -> bool {
        self.express_enabled
    }

    pub fn express_weights(&self) -> &[f64] {
        &self.express_weights
    }

    pub fn detector(&self) -> &DetectorLayout {
        &self.detector
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Number of learnable values: all layer phases, plus one weight per layer
    /// when the expressway is enabled.
    pub fn param_count(&self) -> usize {
        param_count(&self.layers, self.express_enabled)
    }

    /// Mutable access to every learnable parameter group: one slice per layer,
    /// then the express weights when enabled. Cached transmissions are rebuilt
    /// afterwards.
    pub fn update_params<T>(&mut self, f: impl FnOnce(&mut [&mut [f64]]) -> T) -> T {
        let mut groups: Vec<&mut [f64]> =
            self.layers.iter_mut().map(WaveletLayer::phases_mut).collect();
        if self.express_enabled {
            groups.push(&mut self.express_weights);
        }
        let out = f(&mut groups);
        self.refresh();
        out
    }

    /// Flat copies of the parameter groups in [`update_params`](Self::update_params) order.
    pub fn param_groups(&self) -> Vec<Vec<f64>> {
        let mut groups: Vec<Vec<f64>> = self.layers.iter().map(|l| l.phases().to_vec()).collect();
        if self.express_enabled {
            groups.push(self.express_weights.clone());
        }
        groups
    }

    pub fn set_express_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.layers.len() {
            return Err(Error::InvalidDimension(format!(
                "{} express weights for {} layers",
                weights.len(),
                self.layers.len()
            )));
        }
        self.express_weights.copy_from_slice(weights);
        self.refresh();
        Ok(())
    }

    fn check_input(&self, input: &ComplexField) -> Result<()> {
        if input.side() != self.side() {
            return Err(Error::DimensionMismatch { expected: self.side(), actual: input.side() });
        }
        Ok(())
    }

    /// Output-plane field without caching intermediates.
    pub fn output_field(&self, input: &ComplexField) -> Result<ComplexField> {
        self.check_input(input)?;
        let mut h = input.clone();
        let mut acc = self.express_enabled.then(|| ComplexField::zeros(self.side())).transpose()?;
        for (t, w) in self.transmissions.iter().zip(&self.express_weights) {
            h = propagate(&h, &self.kernel)?.hadamard(t)?;
            if let Some(acc) = acc.as_mut() {
                acc.add_scaled(Complex64::new(*w, 0.0), &h)?;
            }
        }
        propagate(acc.as_ref().unwrap_or(&h), &self.kernel)
    }

    pub fn scores(&self, input: &ComplexField) -> Result<Scores> {
        Ok(detector_readout(&self.output_field(input)?, &self.detector))
    }

    pub fn forward(&self, input: &ComplexField) -> Result<(Scores, ForwardCache)> {
        self.check_input(input)?;
        let n = self.side();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<ComplexField> = Vec::with_capacity(self.layers.len());
        let mut acc = self.express_enabled.then(|| ComplexField::zeros(n)).transpose()?;
        for (l, (t, w)) in self.transmissions.iter().zip(&self.express_weights).enumerate() {
            let prev = if l == 0 { input } else { &post[l - 1] };
            let z = propagate(prev, &self.kernel)?;
            let h = z.hadamard(t)?;
            if let Some(acc) = acc.as_mut() {
                acc.add_scaled(Complex64::new(*w, 0.0), &h)?;
            }
            pre.push(z);
            post.push(h);
        }
        let output = propagate(acc.as_ref().unwrap_or(&post[post.len() - 1]), &self.kernel)?;
        let scores = detector_readout(&output, &self.detector);
        let cache = ForwardCache {
            generation: self.generation,
            side: n,
            pre_modulation: pre,
            post_modulation: post,
            accumulated: acc,
            output,
            scores,
        };
        Ok((scores, cache))
    }

    /// Reverse pass for a scalar loss with `d loss / d score = score_grads`.
    pub fn backward(&self, cache: &ForwardCache, score_grads: &Scores) -> Result<Gradients> {
        if cache.generation != self.generation
            || cache.side != self.side()
            || cache.post_modulation.len() != self.layers.len()
            || cache.accumulated.is_some() != self.express_enabled
        {
            return Err(Error::StaleCache(
                "cache was produced by a different network or before a parameter update".into(),
            ));
        }
        let n = self.side();
        let layer_count = self.layers.len();

        let mut grad_out = ComplexField::zeros(n)?;
        for (r, g) in self.detector.regions().iter().zip(score_grads) {
            if *g == 0.0 {
                continue;
            }
            for y in r.y0..r.y0 + r.size {
                for x in r.x0..r.x0 + r.size {
                    grad_out.set(x, y, cache.output.at(x, y) * (2.0 * g));
                }
            }
        }
        // Gradient at the field that was propagated to the output plane.
        let grad_acc = propagate_adjoint(&grad_out, &self.kernel)?;

        let mut express = Vec::new();
        if self.express_enabled {
            express = cache
                .post_modulation
                .iter()
                .map(|h| grad_acc.inner(h).map(|v| v.re))
                .collect::<Result<_>>()?;
        }

        let express_share = |l: usize| -> Option<Complex64> {
            self.express_enabled.then(|| Complex64::new(self.express_weights[l], 0.0))
        };

        let mut grad_h = match express_share(layer_count - 1) {
            Some(w) => grad_acc.scale(w),
            None => grad_acc.clone(),
        };
        let mut layer_grads = vec![Vec::new(); layer_count];
        for l in (0..layer_count).rev() {
            let h = &cache.post_modulation[l];
            let pixel_grad: Vec<f64> =
                grad_h.data().iter().zip(h.data()).map(|(g, h)| (g * h.conj()).im).collect();
            layer_grads[l] = self.layers[l].reduce_phase_grad(&pixel_grad)?;
            if l == 0 {
                break;
            }
            let t = &self.transmissions[l];
            let grad_z = ComplexField::from_vec(
                n,
                grad_h.data().iter().zip(t.data()).map(|(g, t)| g * t.conj()).collect(),
            )?;
            let mut prev = propagate_adjoint(&grad_z, &self.kernel)?;
            if let Some(w) = express_share(l - 1) {
                prev.add_scaled(w, &grad_acc)?;
            }
            grad_h = prev;
        }

        Ok(Gradients { layers: layer_grads, express })
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    side: usize,
    pre_modulation: Vec<ComplexField>,
    post_modulation: Vec<ComplexField>,
    accumulated: Option<ComplexField>,
    output: ComplexField,
    scores: Scores,
}

impl ForwardCache {
    /// `z^l` for `l = 1..=L` (index 0 is the first layer).
    pub fn pre_modulation(&self) -> &[ComplexField] {
        &self.pre_modulation
    }

    /// `h^l` for `l = 1..=L`.
    pub fn post_modulation(&self) -> &[ComplexField] {
        &self.post_modulation
    }

    /// `sum_l w_l h^l` when the expressway is enabled.
    pub fn accumulated(&self) -> Option<&ComplexField> {
        self.accumulated.as_ref()
    }

    pub fn output(&self) -> &ComplexField {
        &self.output
    }

    pub fn scores(&self) -> &Scores {
        &self.scores
    }
}

/// Loss gradients: one vector per layer (circle or pixel phases) and one
/// entry per express weight (empty when the expressway is disabled).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
    pub express: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers().iter().map(|l| vec![0.0; l.param_count()]).collect(),
            express: if net.express_enabled() { vec![0.0; net.layer_count()] } else { Vec::new() },
        }
    }

    /// Groups in the same order as [`Network::update_params`].
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().map(Vec::as_slice).collect();
        if !self.express.is_empty() {
            out.push(&self.express);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.express.iter_mut().zip(&other.express) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers.iter_mut().flatten().for_each(|v| *v *= factor);
        self.express.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}
