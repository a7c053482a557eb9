#![allow(dead_code)]

use std::path::Path;

use vqi_core::synth::SynthConfig;
use vqi_pipeline::RunConfig;

/// A run small enough for a few seconds of training.
pub fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        data_dir: root.join("data"),
        out_dir: root.join("out"),
        seed: 5,
        synth: SynthConfig {
            train_count: 8,
            test_count: 4,
            ..SynthConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.train.epochs = 3;
    cfg
}
