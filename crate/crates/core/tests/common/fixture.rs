//! A trained toy model shared by tests in one binary.

#![allow(dead_code)]

use std::sync::OnceLock;

use asinfer::nnkit::{generate_dataset, pretrain, Dataset, ModelConfig, PretrainSettings, Pretrained};

pub struct Trained {
    pub config: ModelConfig,
    pub data: Dataset,
    pub pretrained: Pretrained,
}

pub const PRETRAIN: PretrainSettings = PretrainSettings {
    epochs: 50,
    lr: 1e-3,
    batch: 32,
    seed: 11,
};

pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = ModelConfig::default();
        let data = generate_dataset(&config, 1000, 7).unwrap();
        let pretrained = pretrain(&config, &data, &PRETRAIN).unwrap();
        Trained {
            config,
            data,
            pretrained,
        }
    })
}
