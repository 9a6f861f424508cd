//! Stochastic / deterministic split of the flat parameter vector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nnkit::{Block, ModelConfig, ParameterVector};

/// Which layers are treated as stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selector {
    All,
    Encoder,
    Decoder,
}

impl Selector {
    pub const ALL: [Selector; 3] = [Selector::All, Selector::Encoder, Selector::Decoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::All => "all",
            Selector::Encoder => "encoder",
            Selector::Decoder => "decoder",
        }
    }

    fn includes(self, block: Block) -> bool {
        match self {
            Selector::All => true,
            Selector::Encoder => block == Block::Encoder,
            Selector::Decoder => block == Block::Decoder,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Selector::All),
            "encoder" => Ok(Selector::Encoder),
            "decoder" => Ok(Selector::Decoder),
            other => Err(Error::Config(format!(
                "unknown selector `{other}` (expected all, encoder or decoder)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub stochastic_indices: Vec<usize>,
    pub deterministic_indices: Vec<usize>,
    pub selector: Selector,
}

impl Partition {
    pub fn total_len(&self) -> usize {
        self.stochastic_indices.len() + self.deterministic_indices.len()
    }

    pub fn stochastic_len(&self) -> usize {
        self.stochastic_indices.len()
    }
}

pub fn build_partition(config: &ModelConfig, selector: Selector) -> Partition {
    let mut stochastic = Vec::new();
    let mut deterministic = Vec::new();
    for seg in config.layout() {
        let target = if selector.includes(seg.block) {
            &mut stochastic
        } else {
            &mut deterministic
        };
        target.extend(seg.range());
    }
    Partition {
        stochastic_indices: stochastic,
        deterministic_indices: deterministic,
        selector,
    }
}

fn check_len(theta: &ParameterVector, p: &Partition) -> Result<()> {
    if theta.len() != p.total_len() {
        return Err(Error::Contract(format!(
            "parameter vector has length {}, partition covers {}",
            theta.len(),
            p.total_len()
        )));
    }
    Ok(())
}

/// Stochastic block in ascending index order.
pub fn gather_stochastic(theta: &ParameterVector, p: &Partition) -> Result<Vec<f64>> {
    check_len(theta, p)?;
    Ok(p.stochastic_indices.iter().map(|&i| theta.values[i]).collect())
}

/// Gathers the stochastic coordinates of an arbitrary length-D vector (e.g. a gradient).
pub fn gather_slice(full: &[f64], p: &Partition) -> Result<Vec<f64>> {
    if full.len() != p.total_len() {
        return Err(Error::Contract(format!(
            "vector has length {}, partition covers {}",
            full.len(),
            p.total_len()
        )));
    }
    Ok(p.stochastic_indices.iter().map(|&i| full[i]).collect())
}

/// Full weights with `theta_s` in the stochastic slots and `theta0` everywhere else.
pub fn assemble_full(theta_s: &[f64], theta0: &ParameterVector, p: &Partition) -> Result<ParameterVector> {
    check_len(theta0, p)?;
    if theta_s.len() != p.stochastic_len() {
        return Err(Error::Contract(format!(
            "stochastic block has length {}, partition expects {}",
            theta_s.len(),
            p.stochastic_len()
        )));
    }
    let mut out = theta0.clone();
    for (&i, &v) in p.stochastic_indices.iter().zip(theta_s) {
        out.values[i] = v;
    }
    Ok(out)
}
