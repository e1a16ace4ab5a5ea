#![allow(dead_code)]

use cnir_core::synth::{generate, SynthParams};
use cnir_core::trainer::Dataset;
use cnir_core::TrainingConfig;

pub const SMALL: &[&str] = &[
    "synth_queries=40",
    "synth_train=20",
    "synth_valid=10",
    "synth_docs=200",
    "synth_vocab=400",
    "synth_pairs=40",
    "synth_dim=16",
    "pretrain_epochs=3",
    "max_epochs=4",
    "train_ranker_fre=2",
    "lr_reformulator=0.01",
];

pub fn small_config(extra: &[&str]) -> TrainingConfig {
    let mut cfg = TrainingConfig::default();
    cfg.apply_overrides(SMALL).unwrap();
    cfg.apply_overrides(extra).unwrap();
    cfg
}

/// Generates the synthetic set for `cfg`, writes it to a temp dir and loads it.
pub fn dataset(cfg: &TrainingConfig) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&SynthParams::from_config(cfg)).unwrap();
    data.write(dir.path()).unwrap();
    let ds = Dataset::load(dir.path(), cfg).unwrap();
    (dir, ds)
}
