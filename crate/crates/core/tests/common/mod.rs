#![allow(dead_code)]

use std::path::Path;

use uwseg::data::{generate_dataset, GenerateConfig, ShapeConfig};
use uwseg::harness::RunConfig;

/// 24×24 images, 8 train / 4 val / 2 test cases.
pub fn tiny_config() -> GenerateConfig {
    GenerateConfig {
        shape: ShapeConfig {
            height: 24,
            width: 24,
            min_half_extent: 3.0,
            max_half_extent: 8.0,
            ..ShapeConfig::default()
        },
        train: 8,
        val: 4,
        test: 2,
    }
}

pub fn tiny_dataset(root: &Path, seed: u64) {
    generate_dataset(&tiny_config(), seed, root).unwrap();
}

pub fn tiny_run(root: &Path) -> RunConfig {
    RunConfig {
        data: root.to_path_buf(),
        epochs: 2,
        width: 4,
        lr: 1e-2,
        ..RunConfig::default()
    }
}
