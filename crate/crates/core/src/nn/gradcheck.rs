//! Central finite-difference check of the analytic gradients.

use rand::Rng;

use super::model::{backward_with, forward, BackwardOptions, DropoutMasks, Mode};
use super::params::{ModelConfig, ModelParams};
use super::rng::{Purpose, RngKey};
use super::{softmax_cross_entropy, NnError};

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |a − f| / max(|a|, |f|, 1e-8)` over every parameter value.
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    /// Per-tensor maximum relative error, canonical order.
    pub per_tensor: Vec<(&'static str, f64)>,
    pub values_checked: usize,
}

impl ModelConfig {
    /// The small network used for gradient checks: `H₁=8, H₂=4`, window 5.
    pub fn tiny(dropout_rate: f64) -> Self {
        Self {
            input_dim: 6,
            lstm1_hidden: 8,
            lstm2_hidden: 4,
            fc_hidden: 6,
            num_classes: 6,
            dropout_rate,
            window_len: 5,
        }
    }
}

/// Compares every analytic gradient against central differences with step `1e-5`.
///
/// Dropout masks (when `config.dropout_rate > 0`) are drawn once and replayed
/// in both the analytic and numeric evaluations.
pub fn grad_check(config: &ModelConfig, batch: usize, seed: u64) -> Result<GradCheckReport, NnError> {
    grad_check_with(config, batch, seed, BackwardOptions::default())
}

pub(crate) fn grad_check_with(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    opts: BackwardOptions,
) -> Result<GradCheckReport, NnError> {
    let mut params = ModelParams::init(config, RngKey::new(seed, Purpose::Init))?;
    // Move off the structured init so every path carries signal.
    let mut rng = RngKey::new(seed, Purpose::Eval).stream();
    for (name, t) in params.tensors_mut() {
        if name.ends_with("bias") || name.starts_with("ln") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let inputs: Vec<f64> = (0..batch * config.window_len * config.input_dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..config.num_classes)).collect();

    let mut dropout_rng = RngKey::new(seed, Purpose::Dropout).stream();
    let (logits, cache) = forward(&params, config, &inputs, batch, Mode::Train(&mut dropout_rng))?;
    let masks: DropoutMasks = cache.masks().clone();
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels, config.num_classes)?;
    let analytic = backward_with(&params, &cache, &dlogits, opts)?;

    let loss_at = |p: &ModelParams| -> Result<f64, NnError> {
        let (z, _) = forward(p, config, &inputs, batch, Mode::Replay(&masks))?;
        Ok(softmax_cross_entropy(&z, &labels, config.num_classes)?.0)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: "",
        worst_index: 0,
        per_tensor: Vec::new(),
        values_checked: 0,
    };
    for (ti, (name, grad)) in analytic.tensors().into_iter().enumerate() {
        let mut tensor_max: f64 = 0.0;
        for idx in 0..grad.len() {
            let original = params.tensors()[ti].1.data()[idx];
            params.tensors_mut()[ti].1.data_mut()[idx] = original + FD_STEP;
            let plus = loss_at(&params)?;
            params.tensors_mut()[ti].1.data_mut()[idx] = original - FD_STEP;
            let minus = loss_at(&params)?;
            params.tensors_mut()[ti].1.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            tensor_max = tensor_max.max(rel);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name;
                report.worst_index = idx;
            }
            report.values_checked += 1;
        }
        report.per_tensor.push((name, tensor_max));
    }
    Ok(report)
}
