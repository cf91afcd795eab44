#![allow(dead_code)]

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use hyperedit::checkpoint;
use hyperedit::generator::{GeneratorConfig, GeneratorParams};
use hyperedit::hyper::{HyperConfig, HyperModule};
use tempfile::TempDir;

pub fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        feature_res: 16,
        render_steps: 8,
        ..GeneratorConfig::default()
    }
}

pub fn generator(config: GeneratorConfig) -> GeneratorParams {
    GeneratorParams::init(config, 3, DType::F32).unwrap()
}

/// A hypernetwork with non-zero weights everywhere, so edits actually move.
pub fn scrambled_hyper(g: &GeneratorParams, seed: u64) -> HyperModule {
    let h = HyperModule::new(HyperConfig::default(), g.specs(), g.config().groups.clone(), seed, DType::F32).unwrap();
    for (k, (_, var)) in h.named_vars().into_iter().enumerate() {
        let t = var.as_tensor();
        let n = t.elem_count();
        let values: Vec<f32> = (0..n)
            .map(|i| 0.05 * ((i as f32 * 12.9898 + k as f32 * 78.233 + seed as f32).sin()))
            .collect();
        var.set(&Tensor::from_vec(values, t.shape(), t.device()).unwrap()).unwrap();
    }
    h
}

pub struct Fixture {
    pub dir: TempDir,
    pub generator: PathBuf,
    pub hyper: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let g = generator(small_config());
        let h = scrambled_hyper(&g, 1);
        let generator = dir.path().join("gen.ckpt");
        let hyper = dir.path().join("hyper.ckpt");
        checkpoint::save_generator(&g, &generator).unwrap();
        checkpoint::save_hyper(&h, &hyper).unwrap();
        Self { dir, generator, hyper }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
