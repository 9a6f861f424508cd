use crate::error::{Error, Result};

/// Shape of the toy sequence-VAE.
///
/// Encoder: one-hot(seq_len * alphabet_size) -> enc_hidden (tanh) -> 2 * latent_dim
/// (mean, log-variance). Decoder: latent_dim -> dec_hidden (tanh) -> seq_len * alphabet_size
/// logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub alphabet_size: usize,
    pub seq_len: usize,
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Weight on the latent KL term.
    pub kl_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 4,
            seq_len: 8,
            latent_dim: 8,
            enc_hidden: 64,
            dec_hidden: 64,
            kl_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Encoder,
    Decoder,
}

/// One contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub block: Block,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("alphabet_size", self.alphabet_size),
            ("seq_len", self.seq_len),
            ("latent_dim", self.latent_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return Err(Error::Config(format!(
                "model.kl_weight must be a finite nonnegative number, got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }

    /// One-hot input width, also the decoder output width.
    pub fn input_dim(&self) -> usize {
        self.alphabet_size * self.seq_len
    }

    /// Layer layout in storage order. Weights are row-major `[out, in]`.
    pub fn layout(&self) -> Vec<Segment> {
        let shapes: [(&'static str, Block, Vec<usize>); 8] = [
            ("enc1.weight", Block::Encoder, vec![self.enc_hidden, self.input_dim()]),
            ("enc1.bias", Block::Encoder, vec![self.enc_hidden]),
            ("enc2.weight", Block::Encoder, vec![2 * self.latent_dim, self.enc_hidden]),
            ("enc2.bias", Block::Encoder, vec![2 * self.latent_dim]),
            ("dec1.weight", Block::Decoder, vec![self.dec_hidden, self.latent_dim]),
            ("dec1.bias", Block::Decoder, vec![self.dec_hidden]),
            ("dec2.weight", Block::Decoder, vec![self.input_dim(), self.dec_hidden]),
            ("dec2.bias", Block::Decoder, vec![self.input_dim()]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, block, shape)| {
                let seg = Segment {
                    name,
                    block,
                    offset,
                    shape,
                };
                offset += seg.len();
                seg
            })
            .collect()
    }

    /// Total parameter count D.
    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Segment::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_param_count() {
        let d = (32 * 64 + 64) + (64 * 16 + 16) + (8 * 64 + 64) + (64 * 32 + 32);
        assert_eq!(d, 5808);
        assert_eq!(ModelConfig::default().num_params(), d);
    }

    #[test]
    fn layout_is_contiguous() {
        let cfg = ModelConfig {
            alphabet_size: 3,
            seq_len: 5,
            latent_dim: 2,
            enc_hidden: 7,
            dec_hidden: 4,
            kl_weight: 0.5,
        };
        let layout = cfg.layout();
        let mut next = 0;
        for seg in &layout {
            assert_eq!(seg.offset, next);
            next += seg.len();
        }
        assert_eq!(next, cfg.num_params());
    }

    #[test]
    fn rejects_zero_sizes() {
        let cfg = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig {
            kl_weight: -1.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
