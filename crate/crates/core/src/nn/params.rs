use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::RngKey;
use super::tensor::Tensor;
use super::NnError;

/// Classifier dimensions. Defaults are the full-size network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub lstm1_hidden: usize,
    pub lstm2_hidden: usize,
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub window_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 6,
            lstm1_hidden: 96,
            lstm2_hidden: 48,
            fc_hidden: 64,
            num_classes: 6,
            dropout_rate: 0.30,
            window_len: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("lstm1_hidden", self.lstm1_hidden),
            ("lstm2_hidden", self.lstm2_hidden),
            ("fc_hidden", self.fc_hidden),
            ("num_classes", self.num_classes),
            ("window_len", self.window_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Structural equality: everything except dropout, which does not affect shapes.
    pub fn same_shapes(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.lstm1_hidden == other.lstm1_hidden
            && self.lstm2_hidden == other.lstm2_hidden
            && self.fc_hidden == other.fc_hidden
            && self.num_classes == other.num_classes
    }
}

/// Weights of one LSTM layer. Gate blocks are stacked in the order input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }
}

/// Full parameter set of the classifier. Also used for gradients and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub lstm1: LstmParams,
    pub ln1: LayerNormParams,
    pub lstm2: LstmParams,
    pub ln2: LayerNormParams,
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Canonical tensor order used by serialization, Adam and gradient checks.
pub const TENSOR_NAMES: [&str; 14] = [
    "lstm1.w_ih",
    "lstm1.w_hh",
    "lstm1.bias",
    "ln1.gamma",
    "ln1.beta",
    "lstm2.w_ih",
    "lstm2.w_hh",
    "lstm2.bias",
    "ln2.gamma",
    "ln2.beta",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

impl ModelParams {
    /// All-zero tensors, layer-norm gains included.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            lstm1: LstmParams::zeros(config.input_dim, config.lstm1_hidden),
            ln1: LayerNormParams {
                gamma: Tensor::zeros(&[config.lstm1_hidden]),
                beta: Tensor::zeros(&[config.lstm1_hidden]),
            },
            lstm2: LstmParams::zeros(config.lstm1_hidden, config.lstm2_hidden),
            ln2: LayerNormParams {
                gamma: Tensor::zeros(&[config.lstm2_hidden]),
                beta: Tensor::zeros(&[config.lstm2_hidden]),
            },
            fc1: DenseParams::zeros(config.lstm2_hidden, config.fc_hidden),
            fc2: DenseParams::zeros(config.fc_hidden, config.num_classes),
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases with forget-gate bias 1, unit layer-norm gain.
    pub fn init(config: &ModelConfig, key: RngKey) -> Result<Self, NnError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = key.stream();
        let mut fill_uniform = |t: &mut Tensor| {
            let fan_in = t.shape()[1] as f64;
            let bound = 1.0 / fan_in.sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill_uniform(&mut p.lstm1.w_ih);
        fill_uniform(&mut p.lstm1.w_hh);
        fill_uniform(&mut p.lstm2.w_ih);
        fill_uniform(&mut p.lstm2.w_hh);
        fill_uniform(&mut p.fc1.weight);
        fill_uniform(&mut p.fc2.weight);
        for lstm in [&mut p.lstm1, &mut p.lstm2] {
            let h = lstm.hidden();
            lstm.bias.data_mut()[h..2 * h].fill(1.0);
        }
        p.ln1.gamma.data_mut().fill(1.0);
        p.ln2.gamma.data_mut().fill(1.0);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 14] {
        [
            ("lstm1.w_ih", &self.lstm1.w_ih),
            ("lstm1.w_hh", &self.lstm1.w_hh),
            ("lstm1.bias", &self.lstm1.bias),
            ("ln1.gamma", &self.ln1.gamma),
            ("ln1.beta", &self.ln1.beta),
            ("lstm2.w_ih", &self.lstm2.w_ih),
            ("lstm2.w_hh", &self.lstm2.w_hh),
            ("lstm2.bias", &self.lstm2.bias),
            ("ln2.gamma", &self.ln2.gamma),
            ("ln2.beta", &self.ln2.beta),
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 14] {
        [
            ("lstm1.w_ih", &mut self.lstm1.w_ih),
            ("lstm1.w_hh", &mut self.lstm1.w_hh),
            ("lstm1.bias", &mut self.lstm1.bias),
            ("ln1.gamma", &mut self.ln1.gamma),
            ("ln1.beta", &mut self.ln1.beta),
            ("lstm2.w_ih", &mut self.lstm2.w_ih),
            ("lstm2.w_hh", &mut self.lstm2.w_hh),
            ("lstm2.bias", &mut self.lstm2.bias),
            ("ln2.gamma", &mut self.ln2.gamma),
            ("ln2.beta", &mut self.ln2.beta),
            ("fc1.weight", &mut self.fc1.weight),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weight),
            ("fc2.bias", &mut self.fc2.bias),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|((_, a), (_, b))| a.shape() == b.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Shape-derived config; `dropout_rate` and `window_len` are taken from `template`.
    pub fn config_with(&self, template: &ModelConfig) -> ModelConfig {
        ModelConfig {
            input_dim: self.lstm1.input(),
            lstm1_hidden: self.lstm1.hidden(),
            lstm2_hidden: self.lstm2.hidden(),
            fc_hidden: self.fc1.weight.shape()[0],
            num_classes: self.fc2.weight.shape()[0],
            ..*template
        }
    }

    /// 64-bit FNV-1a over every value's bit pattern, in canonical order.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::fnv::Fnv64::new();
        for (name, t) in self.tensors() {
            h.write(name.as_bytes());
            for v in t.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Largest absolute difference across all values. Shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .flat_map(|((_, a), (_, b))| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::Purpose;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::default();
        let key = RngKey::new(3, Purpose::Init);
        let a = ModelParams::init(&cfg, key).unwrap();
        let b = ModelParams::init(&cfg, key).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lstm1.w_ih.shape(), &[384, 6]);
        assert_eq!(a.lstm1.w_hh.shape(), &[384, 96]);
        assert_eq!(a.lstm2.w_ih.shape(), &[192, 96]);
        assert_eq!(a.fc1.weight.shape(), &[64, 48]);
        assert_eq!(a.fc2.weight.shape(), &[6, 64]);

        let other = ModelParams::init(&cfg, key.shard(1)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn init_bounds_and_biases() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, RngKey::new(11, Purpose::Init)).unwrap();
        let fc1 = p.fc1.weight.data();
        let mean = fc1.iter().sum::<f64>() / fc1.len() as f64;
        assert!(mean.abs() < 0.01, "fc1 mean {mean}");
        let bound = 1.0 / (48f64).sqrt();
        assert!(fc1.iter().all(|v| v.abs() <= bound));

        let h = cfg.lstm1_hidden;
        let b = p.lstm1.bias.data();
        assert!(b[..h].iter().all(|&v| v == 0.0));
        assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(b[2 * h..].iter().all(|&v| v == 0.0));
        assert!(p.fc2.bias.data().iter().all(|&v| v == 0.0));
        assert!(p.ln1.gamma.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout_rate = 0.3;
        cfg.lstm2_hidden = 0;
        assert!(cfg.validate().is_err());
    }
}
