//! Forward pass, loss and hand-derived backward pass of the toy sequence-VAE.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::data::SequenceDatum;
use super::params::ParameterVector;
use crate::error::{Error, Result};

/// Standard-normal draw for the reparameterized latent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub epsilon: Vec<f64>,
}

impl LatentNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self {
            epsilon: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            epsilon: vec![0.0; dim],
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.epsilon.len() != config.latent_dim {
            return Err(Error::Contract(format!(
                "latent noise has length {}, latent_dim is {}",
                self.epsilon.len(),
                config.latent_dim
            )));
        }
        if self.epsilon.iter().any(|e| !e.is_finite()) {
            return Err(Error::Contract("latent noise has non-finite entries".into()));
        }
        Ok(())
    }
}

struct Net<'a> {
    cfg: &'a ModelConfig,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
    w4: &'a [f64],
    b4: &'a [f64],
}

impl<'a> Net<'a> {
    fn new(cfg: &'a ModelConfig, theta: &'a ParameterVector) -> Result<Self> {
        theta.check_matches(cfg)?;
        let s: Vec<&[f64]> = theta.layout.iter().map(|seg| &theta.values[seg.range()]).collect();
        Ok(Self {
            cfg,
            w1: s[0],
            b1: s[1],
            w2: s[2],
            b2: s[3],
            w3: s[4],
            b3: s[5],
            w4: s[6],
            b4: s[7],
        })
    }

    fn hot(&self, x: &SequenceDatum) -> Vec<usize> {
        let a = self.cfg.alphabet_size;
        x.symbols.iter().enumerate().map(|(p, &s)| p * a + s).collect()
    }

    /// Returns (hidden, mean, log-variance).
    fn encode(&self, hot: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let input = self.cfg.input_dim();
        let h = self.cfg.enc_hidden;
        let l = self.cfg.latent_dim;
        let h1: Vec<f64> = (0..h)
            .map(|j| {
                let row = &self.w1[j * input..(j + 1) * input];
                (self.b1[j] + hot.iter().map(|&i| row[i]).sum::<f64>()).tanh()
            })
            .collect();
        finite("enc1", &h1)?;
        let out = affine(self.w2, self.b2, &h1);
        finite("enc2", &out)?;
        Ok((h1, out[..l].to_vec(), out[l..].to_vec()))
    }

    /// Returns (hidden, logits).
    fn decode(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut h2 = affine(self.w3, self.b3, z);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        finite("dec1", &h2)?;
        let logits = affine(self.w4, self.b4, &h2);
        finite("dec2", &logits)?;
        Ok((h2, logits))
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn finite(layer: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numerical {
            layer: layer.to_string(),
            detail: format!("output {i} is {}", v[i]),
        }),
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Pass {
    hot: Vec<usize>,
    h1: Vec<f64>,
    mu: Vec<f64>,
    std: Vec<f64>,
    z: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
    loss: f64,
}

fn forward(net: &Net, x: &SequenceDatum, noise: &LatentNoise) -> Result<Pass> {
    let cfg = net.cfg;
    x.check(cfg)?;
    noise.check(cfg)?;
    let hot = net.hot(x);
    let (h1, mu, logvar) = net.encode(&hot)?;
    let std: Vec<f64> = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
    finite("enc2 (latent std)", &std)?;
    let z: Vec<f64> = mu
        .iter()
        .zip(&std)
        .zip(&noise.epsilon)
        .map(|((m, s), e)| m + s * e)
        .collect();
    let (h2, logits) = net.decode(&z)?;

    let a = cfg.alphabet_size;
    let recon: f64 = x
        .symbols
        .iter()
        .enumerate()
        .map(|(p, &s)| {
            let row = &logits[p * a..(p + 1) * a];
            log_sum_exp(row) - row[s]
        })
        .sum();
    let kl: f64 = mu
        .iter()
        .zip(&logvar)
        .zip(&std)
        .map(|((m, lv), s)| 0.5 * (m * m + s * s - lv - 1.0))
        .sum();
    let loss = recon + cfg.kl_weight * kl;
    if !loss.is_finite() {
        return Err(Error::Numerical {
            layer: "loss".into(),
            detail: format!("recon = {recon}, kl = {kl}"),
        });
    }
    Ok(Pass {
        hot,
        h1,
        mu,
        std,
        z,
        h2,
        logits,
        loss,
    })
}

/// Reconstruction cross-entropy plus `kl_weight` times the latent KL, at a
/// fixed latent noise draw.
pub fn elbo_loss(
    config: &ModelConfig,
    theta: &ParameterVector,
    x: &SequenceDatum,
    noise: &LatentNoise,
) -> Result<f64> {
    let net = Net::new(config, theta)?;
    Ok(forward(&net, x, noise)?.loss)
}

/// Adds `scale * dL/dtheta` into `grad` and returns the loss.
pub fn accumulate_grad(
    config: &ModelConfig,
    theta: &ParameterVector,
    x: &SequenceDatum,
    noise: &LatentNoise,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let net = Net::new(config, theta)?;
    if grad.len() != theta.len() {
        return Err(Error::Contract(format!(
            "gradient buffer has length {}, expected {}",
            grad.len(),
            theta.len()
        )));
    }
    let pass = forward(&net, x, noise)?;
    let cfg = config;
    let (a, input) = (cfg.alphabet_size, cfg.input_dim());
    let (he, hd, l) = (cfg.enc_hidden, cfg.dec_hidden, cfg.latent_dim);
    let beta = cfg.kl_weight;
    let off: Vec<usize> = theta.layout.iter().map(|s| s.offset).collect();

    // dL/dlogits = softmax - onehot, per position
    let mut dlogits = vec![0.0; input];
    for (p, &s) in x.symbols.iter().enumerate() {
        let row = &pass.logits[p * a..(p + 1) * a];
        let lse = log_sum_exp(row);
        for c in 0..a {
            dlogits[p * a + c] = (row[c] - lse).exp() - if c == s { 1.0 } else { 0.0 };
        }
    }

    // dec2
    let mut dh2 = vec![0.0; hd];
    for o in 0..input {
        let d = dlogits[o];
        let w_row = &net.w4[o * hd..(o + 1) * hd];
        let g_row = &mut grad[off[6] + o * hd..off[6] + (o + 1) * hd];
        for j in 0..hd {
            g_row[j] += scale * d * pass.h2[j];
            dh2[j] += w_row[j] * d;
        }
        grad[off[7] + o] += scale * d;
    }

    // dec1
    let da2: Vec<f64> = dh2
        .iter()
        .zip(&pass.h2)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    let mut dz = vec![0.0; l];
    for j in 0..hd {
        let d = da2[j];
        for k in 0..l {
            grad[off[4] + j * l + k] += scale * d * pass.z[k];
            dz[k] += net.w3[j * l + k] * d;
        }
        grad[off[5] + j] += scale * d;
    }

    // reparameterization and latent KL
    let mut de = vec![0.0; 2 * l];
    for k in 0..l {
        let var = pass.std[k] * pass.std[k];
        de[k] = dz[k] + beta * pass.mu[k];
        de[l + k] = dz[k] * noise.epsilon[k] * 0.5 * pass.std[k] + beta * 0.5 * (var - 1.0);
    }

    // enc2
    let mut dh1 = vec![0.0; he];
    for e in 0..2 * l {
        let d = de[e];
        for j in 0..he {
            grad[off[2] + e * he + j] += scale * d * pass.h1[j];
            dh1[j] += net.w2[e * he + j] * d;
        }
        grad[off[3] + e] += scale * d;
    }

    // enc1: one-hot input touches only the hot columns
    for j in 0..he {
        let d = dh1[j] * (1.0 - pass.h1[j] * pass.h1[j]);
        for &i in &pass.hot {
            grad[off[0] + j * input + i] += scale * d;
        }
        grad[off[1] + j] += scale * d;
    }
    Ok(pass.loss)
}

/// Exact gradient of [`elbo_loss`] with respect to every parameter.
pub fn grad_elbo(
    config: &ModelConfig,
    theta: &ParameterVector,
    x: &SequenceDatum,
    noise: &LatentNoise,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; theta.len()];
    accumulate_grad(config, theta, x, noise, 1.0, &mut g)?;
    Ok(g)
}

/// Encoder mean for `x`.
pub fn encode_mean(config: &ModelConfig, theta: &ParameterVector, x: &SequenceDatum) -> Result<Vec<f64>> {
    let net = Net::new(config, theta)?;
    x.check(config)?;
    Ok(net.encode(&net.hot(x))?.1)
}

/// Per-position argmax of the decoder logits; ties go to the lowest symbol.
pub fn decode_latent(config: &ModelConfig, theta: &ParameterVector, z: &[f64]) -> Result<SequenceDatum> {
    let net = Net::new(config, theta)?;
    if z.len() != config.latent_dim {
        return Err(Error::Contract(format!(
            "latent point has length {}, latent_dim is {}",
            z.len(),
            config.latent_dim
        )));
    }
    let (_, logits) = net.decode(z)?;
    let a = config.alphabet_size;
    let symbols = logits
        .chunks(a)
        .map(|row| {
            let mut best = 0;
            for c in 1..a {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(SequenceDatum { symbols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::params::init_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn datum(cfg: &ModelConfig, seed: u64) -> SequenceDatum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SequenceDatum {
            symbols: (0..cfg.seq_len).map(|_| rng.random_range(0..cfg.alphabet_size)).collect(),
        }
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let cfg = ModelConfig::default();
        let theta = ParameterVector::zeros(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in 0..5 {
            let noise = LatentNoise::draw(&mut rng, cfg.latent_dim);
            let loss = elbo_loss(&cfg, &theta, &datum(&cfg, s), &noise).unwrap();
            assert!((loss - 8.0 * 4f64.ln()).abs() < 1e-12);
        }
        assert!((8.0 * 4f64.ln() - 11.0904).abs() < 1e-4);
    }

    #[test]
    fn kl_weight_zero_is_pure_reconstruction() {
        let cfg = ModelConfig::default();
        let theta = init_parameters(&cfg, 2);
        let x = datum(&cfg, 9);
        let noise = LatentNoise::draw(&mut ChaCha8Rng::seed_from_u64(1), cfg.latent_dim);
        let full = elbo_loss(&cfg, &theta, &x, &noise).unwrap();
        let recon = elbo_loss(&ModelConfig { kl_weight: 0.0, ..cfg }, &theta, &x, &noise).unwrap();
        let double = elbo_loss(&ModelConfig { kl_weight: 2.0, ..cfg }, &theta, &x, &noise).unwrap();
        // loss is affine in kl_weight
        assert!(recon < full);
        assert!(((double - full) - (full - recon)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_model_is_stationary_at_zero() {
        let cfg = ModelConfig {
            alphabet_size: 1,
            seq_len: 1,
            latent_dim: 1,
            enc_hidden: 1,
            dec_hidden: 1,
            kl_weight: 1.0,
        };
        let theta = ParameterVector::zeros(&cfg);
        let x = SequenceDatum { symbols: vec![0] };
        let g = grad_elbo(&cfg, &theta, &x, &LatentNoise { epsilon: vec![0.7] }).unwrap();
        assert_eq!(g.len(), cfg.num_params());
        assert!(g.iter().all(|v| v.abs() < 1e-15), "{g:?}");
    }

    #[test]
    fn gradient_length_is_d() {
        let cfg = ModelConfig::default();
        let theta = init_parameters(&cfg, 4);
        let g = grad_elbo(&cfg, &theta, &datum(&cfg, 1), &LatentNoise::zeros(8)).unwrap();
        assert_eq!(g.len(), 5808);
    }

    #[test]
    fn exploding_log_variance_names_layer() {
        let cfg = ModelConfig::default();
        let mut theta = ParameterVector::zeros(&cfg);
        let seg = theta.layout.iter().find(|s| s.name == "enc2.bias").unwrap().clone();
        theta.values[seg.offset + cfg.latent_dim] = 2000.0;
        let err = elbo_loss(&cfg, &theta, &datum(&cfg, 0), &LatentNoise::zeros(8)).unwrap_err();
        match err {
            Error::Numerical { layer, .. } => assert!(layer.starts_with("enc2"), "{layer}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn zero_weights_decode_to_symbol_zero() {
        let cfg = ModelConfig::default();
        let theta = ParameterVector::zeros(&cfg);
        let d = decode_latent(&cfg, &theta, &[0.3; 8]).unwrap();
        assert_eq!(d.symbols, vec![0; 8]);
    }

    #[test]
    fn decode_is_deterministic() {
        let cfg = ModelConfig::default();
        let theta = init_parameters(&cfg, 8);
        let z = [0.1, -0.4, 1.2, 0.0, 0.5, -2.0, 0.3, 0.9];
        assert_eq!(
            decode_latent(&cfg, &theta, &z).unwrap(),
            decode_latent(&cfg, &theta, &z).unwrap()
        );
        assert!(decode_latent(&cfg, &theta, &z[..3]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ModelConfig::default();
        let theta = ParameterVector::zeros(&cfg);
        let bad = SequenceDatum { symbols: vec![4; 8] };
        assert!(matches!(
            elbo_loss(&cfg, &theta, &bad, &LatentNoise::zeros(8)),
            Err(Error::Contract(_))
        ));
        assert!(elbo_loss(&cfg, &theta, &datum(&cfg, 0), &LatentNoise::zeros(3)).is_err());
    }
}
