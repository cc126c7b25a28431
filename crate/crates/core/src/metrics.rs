//! Per-epoch metric rows and their CSV form.

use std::fmt::Write as _;

/// One row of the learning-curve table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// L2 norm of each layer's batch-mean gradient, averaged over the epoch's batches.
    pub grad_norms: Vec<f64>,
    /// Express weights after the epoch.
    pub express_weights: Vec<f64>,
    /// Median over the epoch's batches of `||g_last|| / ||g_first||`.
    pub median_norm_ratio: f64,
}

/// Decimal rendering with nine significant digits, e.g. `2.30258509`,
/// `0.000123456789`, `1234.56789`.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    // The exponent of the correctly rounded 9-digit mantissa fixes the decimals.
    let sci = format!("{v:.8e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn csv_header(layers: usize) -> String {
    let mut h = String::from("epoch,train_loss,test_accuracy");
    for l in 1..=layers {
        write!(h, ",grad_norm_l{l}").unwrap();
    }
    for l in 1..=layers {
        write!(h, ",express_w{l}").unwrap();
    }
    h.push_str(",median_norm_ratio");
    h
}

pub fn csv_row(row: &MetricRow) -> String {
    let mut line = format!(
        "{},{},{}",
        row.epoch,
        format_sig9(row.train_loss),
        format_sig9(row.test_accuracy)
    );
    for v in row.grad_norms.iter().chain(&row.express_weights) {
        line.push(',');
        line.push_str(&format_sig9(*v));
    }
    line.push(',');
    line.push_str(&format_sig9(row.median_norm_ratio));
    line
}

/// Full CSV document (header plus one line per row, `\n` terminated).
pub fn history_csv(layers: usize, rows: &[MetricRow]) -> String {
    let mut out = csv_header(layers);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}
