//! Classifier head, Adam, the epoch loop, evaluation, the ablation driver and
//! finite-difference gradient checks.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, DatasetName, Dataset};
use crate::diffraction::PropagationGeometry;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::metrics::MetricRow;
use crate::network::{Gradients, Network, NetworkSpec, Scores, NUM_CLASSES};
use crate::wavelet::PhaseMode;

/// Network variants. The first four are the shift/expressway combinations;
/// `Dense` is the per-pixel phase baseline without expressway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    ShiftOnly,
    ExpressOnly,
    Neither,
    #[serde(alias = "dense_baseline")]
    Dense,
}

impl AblationMode {
    pub const TABLE: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::ShiftOnly, AblationMode::ExpressOnly, AblationMode::Neither];

    /// `(random shift, expressway)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            AblationMode::Full => (true, true),
            AblationMode::ShiftOnly => (true, false),
            AblationMode::ExpressOnly => (false, true),
            AblationMode::Neither => (false, false),
            AblationMode::Dense => (false, false),
        }
    }

    pub fn phase_mode(self) -> PhaseMode {
        match self {
            AblationMode::Dense => PhaseMode::Dense,
            _ => PhaseMode::Wavelet,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::ShiftOnly => "shift_only",
            AblationMode::ExpressOnly => "express_only",
            AblationMode::Neither => "neither",
            AblationMode::Dense => "dense",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_epochs() -> u32 {
    20
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_layers() -> usize {
    10
}
fn default_side() -> usize {
    112
}
fn default_mode() -> AblationMode {
    AblationMode::Full
}
fn default_dataset() -> DatasetName {
    DatasetName::Mnist
}

/// Softmax temperature applied to detector energy fractions.
pub const DEFAULT_TEMPERATURE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mode")]
    pub ablation_mode: AblationMode,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetName,
    #[serde(default = "default_layers")]
    pub layer_count: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    /// Logits are `temperature * score_c / sum(scores)`.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Worker threads for per-sample passes; 0 uses all cores. Results do not
    /// depend on it.
    #[serde(default)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            master_seed: 0,
            ablation_mode: default_mode(),
            dataset: default_dataset(),
            layer_count: default_layers(),
            side: default_side(),
            temperature: default_temperature(),
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if self.layer_count < 1 {
            return fail("layer_count must be at least 1".into());
        }
        if self.side < 1 {
            return fail("side must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    pub fn network_spec(&self, geometry: PropagationGeometry) -> NetworkSpec {
        let (shift, express) = self.ablation_mode.flags();
        NetworkSpec {
            geometry,
            layers: self.layer_count,
            phase_mode: self.ablation_mode.phase_mode(),
            shift,
            express,
            seed: self.master_seed,
        }
    }
}

/// `p = softmax(logits - max)`, `loss = -ln p_label`, `d loss / d logits = p - onehot`.
pub fn softmax_cross_entropy(logits: &Scores, label: usize) -> Result<(f64, Scores)> {
    if label >= NUM_CLASSES {
        return Err(Error::Config(format!("label {label} outside 0..{NUM_CLASSES}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("class scores {logits:?}") });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_CLASSES];
    let mut total = 0.0;
    for (pi, s) in p.iter_mut().zip(logits) {
        *pi = (s - max).exp();
        total += *pi;
    }
    p.iter_mut().for_each(|v| *v /= total);
    let loss = -((logits[label] - max) - total.ln());
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Maps detector intensities to logits `T * s_c / sum(s)` and back-propagates
/// logit gradients to score gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreHead {
    pub temperature: f64,
}

impl ScoreHead {
    pub fn logits(&self, scores: &Scores) -> Result<Scores> {
        let total: f64 = scores.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonFinite { context: format!("detector energy {total}") });
        }
        let mut out = [0.0; NUM_CLASSES];
        for (o, s) in out.iter_mut().zip(scores) {
            *o = self.temperature * s / total;
        }
        Ok(out)
    }

    pub fn score_grads(&self, scores: &Scores, logit_grads: &Scores) -> Scores {
        let total: f64 = scores.iter().sum();
        let weighted: f64 = scores.iter().zip(logit_grads).map(|(s, g)| s * g).sum::<f64>() / total;
        let mut out = [0.0; NUM_CLASSES];
        for (o, g) in out.iter_mut().zip(logit_grads) {
            *o = self.temperature / total * (g - weighted);
        }
        out
    }

    /// Loss and `d loss / d score` for one sample.
    pub fn loss(&self, scores: &Scores, label: usize) -> Result<(f64, Scores)> {
        let logits = self.logits(scores)?;
        let (loss, logit_grads) = softmax_cross_entropy(&logits, label)?;
        Ok((loss, self.score_grads(scores, &logit_grads)))
    }
}

/// Index of the largest score, ties going to the lowest index.
pub fn argmax(scores: &Scores) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Adam moments for a list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        let shapes: Vec<usize> = net.param_groups().iter().map(Vec::len).collect();
        Self::new(&shapes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before anything
/// is modified.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::InvalidDimension(format!(
            "{} parameter groups, {} gradient groups, {} moment groups",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (gi, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[gi].len() {
            return Err(Error::InvalidDimension(format!("parameter group {gi} shape mismatch")));
        }
        if let Some(pi) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient of parameter {pi} in group {gi}: {}", g[pi]),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - hyper.beta1.powi(t);
    let correction2 = 1.0 - hyper.beta2.powi(t);
    for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[gi];
        let v = &mut state.second_moment[gi];
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Optimizer state plus the metric history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub epochs_done: u32,
    pub history: Vec<MetricRow>,
    /// Per-batch `||g_last|| / ||g_first||` of the most recent epoch.
    pub last_epoch_norm_ratios: Vec<f64>,
}

impl TrainState {
    pub fn new(net: &Network) -> Self {
        Self {
            adam: AdamState::for_network(net),
            epochs_done: 0,
            history: Vec::new(),
            last_epoch_norm_ratios: Vec::new(),
        }
    }
}

/// Forward, loss and backward for one input.
pub fn sample_gradients(
    net: &Network,
    head: &ScoreHead,
    input: &ComplexField,
    label: usize,
) -> Result<(f64, Gradients)> {
    let (scores, cache) = net.forward(input)?;
    let (loss, score_grads) = head.loss(&scores, label)?;
    Ok((loss, net.backward(&cache, &score_grads)?))
}

/// Mean loss and mean gradient over `indices`, reduced in index order.
pub fn batch_gradients(
    net: &Network,
    head: &ScoreHead,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Gradients)> {
    let n = net.side();
    let per_sample: Vec<(f64, Gradients)> = indices
        .par_iter()
        .map(|&i| sample_gradients(net, head, &data.input_field(i, n)?, data.label(i)))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.add_assign(g);
    }
    let scale = 1.0 / indices.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// One pass over `train` in the seeded order for the next epoch. Appends a
/// metric row; `test` (when given) supplies the accuracy column.
pub fn train_epoch(
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<MetricRow> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let head = ScoreHead { temperature: config.temperature };
    let hyper = AdamHyper::from(config);
    let epoch = state.epochs_done;
    let layer_count = net.layer_count();

    let mut loss_sum = 0.0;
    let mut norm_sums = vec![0.0; layer_count];
    let mut ratios = Vec::new();
    let order = batches(train.len(), config.batch_size, config.master_seed, epoch);
    for (b, indices) in order.iter().enumerate() {
        let (loss, grads) = batch_gradients(net, &head, train, indices).map_err(|e| match e {
            Error::NonFinite { context } => {
                Error::NonFinite { context: format!("epoch {}, batch {b}: {context}", epoch + 1) }
            }
            other => other,
        })?;
        loss_sum += loss * indices.len() as f64;
        let norms = grads.layer_norms();
        for (s, v) in norm_sums.iter_mut().zip(&norms) {
            *s += v;
        }
        ratios.push(norms[layer_count - 1] / norms[0]);
        let groups = grads.groups();
        net.update_params(|params| adam_step(params, &groups, &mut state.adam, &hyper))
            .map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("epoch {}, batch {b}: {context}", epoch + 1),
                },
                other => other,
            })?;
    }

    let batch_count = order.len() as f64;
    state.epochs_done += 1;
    let row = MetricRow {
        epoch: state.epochs_done,
        train_loss: loss_sum / train.len() as f64,
        test_accuracy: match test {
            Some(t) => evaluate(net, t)?,
            None => f64::NAN,
        },
        grad_norms: norm_sums.iter().map(|s| s / batch_count).collect(),
        express_weights: net.express_weights().to_vec(),
        median_norm_ratio: median(&mut ratios.clone()),
    };
    state.last_epoch_norm_ratios = ratios;
    state.history.push(row.clone());
    Ok(row)
}

/// Fraction of items whose arg-max detector score equals the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let n = net.side();
    let correct: usize = (0..data.len())
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let scores = net.scores(&data.input_field(i, n)?)?;
            Ok(usize::from(argmax(&scores) == data.label(i)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

/// Runs `f` on a pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub state: TrainState,
    /// Per-batch last/first gradient-norm ratios of the first epoch.
    pub first_epoch_norm_ratios: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.state.history.last().map_or(f64::NAN, |r| r.test_accuracy)
    }
}

/// Builds a network from `config` and trains it for `config.epochs` epochs.
/// `on_epoch(e, net)` runs before the first epoch (`e = 0`) and after every
/// epoch `e`.
pub fn run_training(
    config: &TrainConfig,
    geometry: PropagationGeometry,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(u32, &Network, Option<&MetricRow>) -> Result<()> + Send,
) -> Result<TrainOutcome> {
    config.validate()?;
    if geometry.n != config.side {
        return Err(Error::Config(format!(
            "geometry side {} differs from configured side {}",
            geometry.n, config.side
        )));
    }
    with_threads(config.threads, || {
        let mut net = Network::random(&config.network_spec(geometry))?;
        let mut state = TrainState::new(&net);
        let mut first_ratios = Vec::new();
        on_epoch(0, &net, None)?;
        for e in 0..config.epochs {
            let row = train_epoch(&mut net, train, Some(test), &mut state, config)?;
            if e == 0 {
                first_ratios = state.last_epoch_norm_ratios.clone();
            }
            on_epoch(e + 1, &net, Some(&row))?;
        }
        Ok(TrainOutcome { network: net, state, first_epoch_norm_ratios: first_ratios })
    })?
}

#[derive(Debug, Clone)]
pub struct AblationEntry {
    pub mode: AblationMode,
    pub accuracy: f64,
    pub history: Vec<MetricRow>,
}

/// Trains the four shift/expressway combinations with identical seed, data
/// order and hyperparameters.
pub fn run_ablation(
    base: &TrainConfig,
    geometry: PropagationGeometry,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<AblationEntry>> {
    AblationMode::TABLE
        .iter()
        .map(|&mode| {
            let config = TrainConfig { ablation_mode: mode, ..base.clone() };
            let outcome = run_training(&config, geometry, train, test, |_, _, _| Ok(()))?;
            Ok(AblationEntry {
                mode,
                accuracy: outcome.final_accuracy(),
                history: outcome.state.history,
            })
        })
        .collect()
}

/// A gradient passes when `|analytic - numeric| <= max(relative * magnitude, absolute)`,
/// magnitude being the larger of the two absolute values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckTolerance {
    pub step: f64,
    pub relative: f64,
    pub absolute: f64,
}

impl Default for GradCheckTolerance {
    fn default() -> Self {
        Self { step: 1e-5, relative: 1e-4, absolute: 1e-8 }
    }
}

/// Location of one learnable value: `group` follows [`Network::update_params`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub group: usize,
    pub index: usize,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group {} index {}", self.group, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|)` among gradients outside the absolute floor.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<ParamId>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares every analytic gradient of the full sample loss with central
/// differences. `flip_sign` negates the analytic gradient (fault injection).
pub fn grad_check(
    net: &Network,
    head: &ScoreHead,
    input: &ComplexField,
    label: usize,
    tol: &GradCheckTolerance,
    flip_sign: bool,
) -> Result<GradCheckReport> {
    let (_, analytic) = sample_gradients(net, head, input, label)?;
    let analytic: Vec<Vec<f64>> = analytic
        .groups()
        .iter()
        .map(|g| g.iter().map(|v| if flip_sign { -v } else { *v }).collect())
        .collect();
    let base = net.param_groups();
    let mut probe = net.clone();
    let loss_at = |p: &Network| -> Result<f64> {
        let scores = p.scores(input)?;
        Ok(head.loss(&scores, label)?.0)
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        failures: 0,
    };
    let mut worst_score = -1.0;
    for (group, values) in analytic.iter().enumerate() {
        for (index, &a) in values.iter().enumerate() {
            let original = base[group][index];
            probe.update_params(|p| p[group][index] = original + tol.step);
            let plus = loss_at(&probe)?;
            probe.update_params(|p| p[group][index] = original - tol.step);
            let minus = loss_at(&probe)?;
            probe.update_params(|p| p[group][index] = original);
            let numeric = (plus - minus) / (2.0 * tol.step);

            let diff = (a - numeric).abs();
            let magnitude = a.abs().max(numeric.abs());
            let allowed = (tol.relative * magnitude).max(tol.absolute);
            report.max_abs_error = report.max_abs_error.max(diff);
            if tol.relative * magnitude > tol.absolute {
                report.max_relative_error = report.max_relative_error.max(diff / magnitude);
            }
            let score = diff / allowed;
            if !(score <= 1.0) {
                report.failures += 1;
            }
            if score > worst_score {
                worst_score = score;
                report.worst = Some(ParamId { group, index });
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
