use serde::{Deserialize, Serialize};

use super::train::ConstituentModel;
use super::SisaError;
use crate::nn::{forward, softmax_rows, Mode, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// One softmax row per constituent model.
    pub per_shard: Vec<Vec<f64>>,
    pub aggregated: Vec<f64>,
    pub label: usize,
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Averages per-shard probability rows and picks the label.
pub fn aggregate_probabilities(per_shard: Vec<Vec<f64>>) -> Result<EnsemblePrediction, SisaError> {
    let classes = per_shard.first().map(Vec::len).ok_or(SisaError::HeterogeneousModels)?;
    if classes == 0 || per_shard.iter().any(|p| p.len() != classes) {
        return Err(SisaError::HeterogeneousModels);
    }
    let mut aggregated = vec![0.0; classes];
    for row in &per_shard {
        for (a, p) in aggregated.iter_mut().zip(row) {
            *a += p;
        }
    }
    let s = per_shard.len() as f64;
    for a in &mut aggregated {
        *a /= s;
    }
    let label = argmax(&aggregated);
    Ok(EnsemblePrediction {
        per_shard,
        aggregated,
        label,
    })
}

fn check_models(models: &[ConstituentModel], config: &ModelConfig) -> Result<(), SisaError> {
    let Some(first) = models.first() else {
        return Err(SisaError::Config("ensemble needs at least one model".into()));
    };
    if !first.params.config_with(config).same_shapes(config) || models.iter().any(|m| !m.params.same_shape(&first.params)) {
        return Err(SisaError::HeterogeneousModels);
    }
    Ok(())
}

/// Ensemble prediction for windows laid out `[b][t][feature]`, evaluated in chunks of `chunk` windows.
pub fn predict_batch(
    models: &[ConstituentModel],
    config: &ModelConfig,
    inputs: &[f64],
    chunk: usize,
) -> Result<Vec<EnsemblePrediction>, SisaError> {
    check_models(models, config)?;
    let width = config.window_len * config.input_dim;
    if width == 0 || inputs.len() % width != 0 {
        return Err(SisaError::Config(format!("input length {} is not a multiple of {width}", inputs.len())));
    }
    let n = inputs.len() / width;
    let c = config.num_classes;
    let mut probs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(models.len()); n];
    for model in models {
        let mut start = 0;
        while start < n {
            let b = chunk.max(1).min(n - start);
            let (logits, _) = forward(
                &model.params,
                config,
                &inputs[start * width..(start + b) * width],
                b,
                Mode::Eval,
            )?;
            for (k, row) in softmax_rows(&logits, c).chunks_exact(c).enumerate() {
                probs[start + k].push(row.to_vec());
            }
            start += b;
        }
    }
    probs.into_iter().map(aggregate_probabilities).collect()
}

/// Ensemble prediction for a single `window_len × input_dim` window.
pub fn aggregate_predict(models: &[ConstituentModel], config: &ModelConfig, x: &[f64]) -> Result<EnsemblePrediction, SisaError> {
    if x.len() != config.window_len * config.input_dim {
        return Err(SisaError::Config(format!(
            "window has {} values, expected {}",
            x.len(),
            config.window_len * config.input_dim
        )));
    }
    Ok(predict_batch(models, config, x, 1)?.remove(0))
}
