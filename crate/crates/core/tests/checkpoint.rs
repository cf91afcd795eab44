mod common;

use candle_core::DType;
use hyperedit::checkpoint::{
    check_compatible, load_generator, load_hyper, manifest_diff, manifest_hash, save_generator, save_hyper,
    GeneratorManifest, HyperManifest,
};
use hyperedit::generator::GeneratorConfig;
use hyperedit::pretrain::{pretrain, PretrainConfig};
use hyperedit::Error;

#[test]
fn generator_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let g = common::small_generator(4, DType::F32);
    save_generator(&g, &path).unwrap();
    let (back, manifest) = load_generator(&path, DType::F32).unwrap();
    assert_eq!(manifest, GeneratorManifest::of(&g));
    let a = g.named_tensors();
    let b = back.named_tensors();
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, t) in &a {
        assert_eq!(common::bits(t), common::bits(&b[k]), "{k}");
    }
}

#[test]
fn hyper_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.ckpt");
    let g = common::small_generator(4, DType::F32);
    let h = common::hyper_for(&g, 1);
    common::scramble(&h, 3, 0.1);
    save_hyper(&h, &path).unwrap();
    let (back, manifest) = load_hyper(&path, DType::F32).unwrap();
    assert_eq!(manifest, HyperManifest::of(&h));
    for (k, t) in &h.named_tensors() {
        assert_eq!(common::bits(t), common::bits(&back.named_tensors()[k]), "{k}");
    }
}

#[test]
fn loading_the_wrong_kind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    save_generator(&common::small_generator(0, DType::F32), &path).unwrap();
    assert!(load_hyper(&path, DType::F32).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_generator(&path, DType::F32).is_err());
}

#[test]
fn manifests_diff_layer_by_layer() {
    let g = common::small_generator(0, DType::F32);
    let h = common::hyper_for(&g, 0);
    let gm = GeneratorManifest::of(&g);
    let hm = HyperManifest::of(&h);
    assert!(manifest_diff(&gm, &hm).is_empty());
    assert!(check_compatible(&gm, &hm).is_ok());

    let wide = hyperedit::generator::GeneratorParams::init(
        GeneratorConfig {
            hidden_width: 32,
            ..common::small_config()
        },
        0,
        DType::F32,
    )
    .unwrap();
    let other = HyperManifest::of(&common::hyper_for(&wide, 0));
    let diff = manifest_diff(&gm, &other);
    assert!(!diff.is_empty());
    assert!(diff.iter().any(|d| d.starts_with("layer 2: shape")), "{diff:?}");
    assert!(matches!(check_compatible(&gm, &other), Err(Error::IncompatibleCheckpoints(_))));
}

#[test]
fn manifest_hash_is_stable_and_sensitive() {
    let g = common::small_generator(0, DType::F32);
    let gm = GeneratorManifest::of(&g);
    let hm = HyperManifest::of(&common::hyper_for(&g, 0));
    let a = manifest_hash(&gm, &hm).unwrap();
    assert_eq!(a.len(), 64);
    assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(a, manifest_hash(&gm, &HyperManifest::of(&common::hyper_for(&g, 5))).unwrap());
    let mut gm2 = gm.clone();
    gm2.config.render_steps += 1;
    assert_ne!(a, manifest_hash(&gm2, &hm).unwrap());
}

#[test]
fn pretraining_reduces_its_loss() {
    let opts = PretrainConfig {
        steps: 30,
        ..PretrainConfig::default()
    };
    let (_, losses) = pretrain(common::small_config(), 0, &opts).unwrap();
    assert_eq!(losses.len(), 30);
    let head: f64 = losses[..5].iter().sum();
    let tail: f64 = losses[25..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn pretraining_rejects_bad_settings() {
    for opts in [
        PretrainConfig {
            batch: 0,
            ..PretrainConfig::default()
        },
        PretrainConfig {
            modulation_lr_scale: -1.0,
            ..PretrainConfig::default()
        },
    ] {
        assert!(pretrain(common::small_config(), 0, &opts).is_err());
    }
}
