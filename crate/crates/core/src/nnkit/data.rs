use rand::seq::SliceRandom;
use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

pub const NUM_TEMPLATES: usize = 8;
pub const RESAMPLE_PROB: f64 = 0.1;
const TEMPLATE_SEED: u64 = 0x7E3A_1F00;

/// A symbol sequence; every entry lies in `[0, alphabet_size)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceDatum {
    pub symbols: Vec<usize>,
}

impl SequenceDatum {
    pub fn new(config: &ModelConfig, symbols: Vec<usize>) -> Result<Self> {
        let d = Self { symbols };
        d.check(config)?;
        Ok(d)
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.symbols.len() != config.seq_len {
            return Err(Error::Contract(format!(
                "sequence has length {}, model expects {}",
                self.symbols.len(),
                config.seq_len
            )));
        }
        if let Some(&s) = self.symbols.iter().find(|&&s| s >= config.alphabet_size) {
            return Err(Error::Contract(format!(
                "symbol {s} outside alphabet of size {}",
                config.alphabet_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceDatum>,
    pub validation: Vec<SequenceDatum>,
    pub test: Vec<SequenceDatum>,
    pub generator_seed: u64,
    /// Template index of each generated item, in pool order (train, then validation, then test).
    pub template_ids: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All items in pool order.
    pub fn pool(&self) -> impl Iterator<Item = &SequenceDatum> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// The fixed templates the generator perturbs. They depend only on the
/// model shape, never on the dataset seed.
pub fn templates(config: &ModelConfig) -> Vec<SequenceDatum> {
    let mut rng = rng_for(TEMPLATE_SEED, Stream::Templates, 0);
    let space = (config.alphabet_size as f64).powi(config.seq_len as i32);
    let want_distinct = space >= NUM_TEMPLATES as f64;
    let mut out: Vec<SequenceDatum> = Vec::with_capacity(NUM_TEMPLATES);
    while out.len() < NUM_TEMPLATES {
        let symbols = (0..config.seq_len)
            .map(|_| rng.random_range(0..config.alphabet_size))
            .collect();
        let t = SequenceDatum { symbols };
        if !want_distinct || !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Splits sizes for `num_items`: 80% train, 10% validation, remainder test.
pub fn split_sizes(num_items: usize) -> (usize, usize, usize) {
    let train = num_items * 8 / 10;
    let val = num_items / 10;
    (train, val, num_items - train - val)
}

/// Template-with-noise generator: pick a template uniformly, then resample
/// each position uniformly with probability 0.1.
pub fn generate_dataset(config: &ModelConfig, num_items: usize, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (n_train, n_val, n_test) = split_sizes(num_items);
    if num_items < 10 || n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "data.num_items = {num_items} is too small to populate train/validation/test (need >= 10)"
        )));
    }
    let temps = templates(config);
    let mut rng = rng_for(seed, Stream::Dataset, 0);
    let mut pool = Vec::with_capacity(num_items);
    let mut template_ids = Vec::with_capacity(num_items);
    for _ in 0..num_items {
        let t = rng.random_range(0..temps.len());
        let symbols = temps[t]
            .symbols
            .iter()
            .map(|&s| {
                if rng.random_bool(RESAMPLE_PROB) {
                    rng.random_range(0..config.alphabet_size)
                } else {
                    s
                }
            })
            .collect();
        pool.push(SequenceDatum { symbols });
        template_ids.push(t);
    }
    let test = pool.split_off(n_train + n_val);
    let validation = pool.split_off(n_train);
    Ok(Dataset {
        train: pool,
        validation,
        test,
        generator_seed: seed,
        template_ids,
    })
}

/// Deterministic shuffle of `0..n` for one training epoch.
pub(crate) fn epoch_order<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}
