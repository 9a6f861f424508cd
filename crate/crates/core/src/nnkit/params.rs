use rand::Rng;

use super::config::{ModelConfig, Segment};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

/// Flat vector of all model weights plus the layout that names its slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<Segment>,
}

impl ParameterVector {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            values: vec![0.0; config.num_params()],
            layout: config.layout(),
        }
    }

    /// Wraps raw values, checking the length against the config.
    pub fn from_values(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        let d = config.num_params();
        if values.len() != d {
            return Err(Error::Contract(format!(
                "parameter vector has length {}, model expects {d}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: config.layout(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    /// Per-layer copies in layout order.
    pub fn split_by_layer(&self) -> Vec<(&'static str, Vec<f64>)> {
        self.layout
            .iter()
            .map(|s| (s.name, self.values[s.range()].to_vec()))
            .collect()
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.values.len() != config.num_params() || self.layout != config.layout() {
            return Err(Error::Contract(format!(
                "parameter vector (length {}) does not match model config (D = {})",
                self.values.len(),
                config.num_params()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> ParameterVector {
    let mut theta = ParameterVector::zeros(config);
    let mut rng = rng_for(seed, Stream::Init, 0);
    for seg in config.layout() {
        if seg.shape.len() != 2 {
            continue;
        }
        let (fan_out, fan_in) = (seg.shape[0], seg.shape[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut theta.values[seg.range()] {
            *v = rng.random_range(-a..=a);
        }
    }
    theta
}
