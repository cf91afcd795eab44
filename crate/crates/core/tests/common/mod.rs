#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::OnceLock;

use candle_core::DType;
use hyperedit::checkpoint;
use hyperedit::generator::{GeneratorConfig, GeneratorParams};
use hyperedit::hyper::{HyperConfig, HyperModule};
use hyperedit::pretrain::{pretrain, PretrainConfig};

pub fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        feature_res: 8,
        render_steps: 8,
        ..GeneratorConfig::default()
    }
}

pub fn small_generator(seed: u64, dtype: DType) -> GeneratorParams {
    GeneratorParams::init(small_config(), seed, dtype).unwrap()
}

pub fn hyper_for(g: &GeneratorParams, seed: u64) -> HyperModule {
    HyperModule::new(
        HyperConfig::default(),
        g.specs(),
        g.config().groups.clone(),
        seed,
        g.dtype(),
    )
    .unwrap()
}

pub fn pretrain_options() -> PretrainConfig {
    PretrainConfig::default()
}

/// The fitted toy generator, trained once per target directory and cached
/// as a checkpoint keyed by its settings.
pub fn pretrained() -> GeneratorParams {
    static CACHE: OnceLock<GeneratorParams> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let config = GeneratorConfig::default();
            let opts = pretrain_options();
            let mut h = DefaultHasher::new();
            serde_json::to_string(&(&config, &opts)).unwrap().hash(&mut h);
            let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
            let path = dir.join(format!("pretrained-{:016x}.ckpt", h.finish()));
            if let Ok((params, _)) = checkpoint::load_generator(&path, DType::F32) {
                return params;
            }
            let (params, _) = pretrain(config, 0, &opts).unwrap();
            let tmp = dir.join(format!("pretrained-{}.tmp", std::process::id()));
            checkpoint::save_generator(&params, &tmp).unwrap();
            std::fs::rename(&tmp, &path).unwrap();
            params
        })
        .clone()
}

/// Overwrites every hyper-module variable with uniform noise in `±scale`.
pub fn scramble(h: &HyperModule, seed: u64, scale: f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for v in h.vars() {
        let vals: Vec<f64> = (0..v.elem_count()).map(|_| rng.gen_range(-scale..scale)).collect();
        let t = candle_core::Tensor::from_vec(vals, v.dims(), &candle_core::Device::Cpu)
            .unwrap()
            .to_dtype(v.dtype())
            .unwrap();
        v.set(&t).unwrap();
    }
}

/// Bit patterns of a tensor's values, for exact comparisons.
pub fn bits(t: &candle_core::Tensor) -> Vec<u64> {
    hyperedit::nn::to_vec_f64(t)
        .unwrap()
        .into_iter()
        .map(f64::to_bits)
        .collect()
}
pub const SHAPE_STEPS: usize = 60;
