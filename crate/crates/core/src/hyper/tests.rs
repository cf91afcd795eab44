use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::CameraPose;
use crate::encoders::StubEmbedder;
use crate::generator::{GeneratorConfig, LatentCode};
use crate::nn;

fn small_generator(dtype: DType) -> GeneratorParams {
    let config = GeneratorConfig {
        feature_res: 8,
        render_steps: 8,
        ..GeneratorConfig::default()
    };
    GeneratorParams::init(config, 1, dtype).unwrap()
}

fn hyper_for(g: &GeneratorParams, seed: u64) -> HyperModule {
    HyperModule::new(
        HyperConfig::default(),
        g.specs(),
        g.config().groups.clone(),
        seed,
        g.dtype(),
    )
    .unwrap()
}

/// Overwrites every predictor variable with small random values so the
/// module no longer predicts zeros.
fn scramble(h: &HyperModule, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in h.vars() {
        let n = v.elem_count();
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let t = Tensor::from_vec(vals, v.dims(), &Device::Cpu)
            .unwrap()
            .to_dtype(v.dtype())
            .unwrap();
        v.set(&t).unwrap();
    }
}

fn direction(level: Level, seed: u64) -> DirectionFeature {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..512).map(|_| rng.gen_range(-0.1..0.1)).collect();
    DirectionFeature::new(v, level, "a".into(), "b".into()).unwrap()
}

#[test]
fn directions_are_differences_of_text_embeddings() {
    let e = StubEmbedder::new(0);
    let same = encode_direction("face", "face", Level::Attribute, &e).unwrap();
    assert!(same.vector.iter().all(|v| *v == 0.0));
    let fwd = encode_direction("face", "bearded face", Level::Attribute, &e).unwrap();
    let back = encode_direction("bearded face", "face", Level::Attribute, &e).unwrap();
    for (a, b) in fwd.vector.iter().zip(&back.vector) {
        assert_eq!(*a, -*b);
    }
    assert_eq!(fwd.level(), Level::Attribute);
    assert!(encode_direction("", "face", Level::Shape, &e).is_err());
}

#[test]
fn perturbation_is_seeded_and_scaled() {
    let f = direction(Level::Style, 3);
    assert_eq!(perturb_direction(&f, 0.0, 9).unwrap(), f);
    let a = perturb_direction(&f, 0.05, 9).unwrap();
    assert_eq!(a, perturb_direction(&f, 0.05, 9).unwrap());
    assert_ne!(a, perturb_direction(&f, 0.05, 10).unwrap());
    let noise: Vec<f64> = a.vector.iter().zip(&f.vector).map(|(x, y)| x - y).collect();
    let n = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / n;
    let sd = (noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 0.05).abs() < 0.01, "sample std {sd}");
    assert!(perturb_direction(&f, -1.0, 0).is_err());
    assert!(perturb_direction(&f, f64::NAN, 0).is_err());
}

#[test]
fn zero_initialised_module_predicts_exact_zeros() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 0);
    let dirs = BTreeMap::from([(Level::Shape, direction(Level::Shape, 1)), (Level::Style, direction(Level::Style, 2))]);
    let off = h.predict_offsets(&dirs).unwrap();
    for t in off.offsets() {
        assert!(nn::to_vec_f64(t).unwrap().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn offsets_only_fill_requested_groups() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 0);
    scramble(&h, 4);
    let off = h
        .predict_offsets(&BTreeMap::from([(Level::Attribute, direction(Level::Attribute, 1))]))
        .unwrap();
    for spec in g.specs() {
        let vals = nn::to_vec_f64(off.offset(spec.index)).unwrap();
        let zero = vals.iter().all(|v| *v == 0.0);
        assert_eq!(zero, spec.group != LayerGroup::Medium, "layer {}", spec.index);
    }
    assert!(off.is_active(LayerGroup::Medium));
    assert!(!off.is_active(LayerGroup::Fine));
}

#[test]
fn mislabelled_or_misshapen_directions_are_rejected() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 0);
    let wrong = BTreeMap::from([(Level::Shape, direction(Level::Style, 1))]);
    assert!(matches!(h.predict_offsets(&wrong), Err(crate::Error::LevelMismatch { .. })));
    let short = DirectionFeature::new(vec![0.1; 10], Level::Shape, "a".into(), "b".into()).unwrap();
    assert!(h.predict_offsets(&BTreeMap::from([(Level::Shape, short)])).is_err());
    assert!(DirectionFeature::new(vec![f64::NAN], Level::Shape, "a".into(), "b".into()).is_err());
}

#[test]
fn applying_offsets_follows_the_relative_update() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 0);
    scramble(&h, 5);
    let off = h
        .predict_offsets(&BTreeMap::from([(Level::Shape, direction(Level::Shape, 8))]))
        .unwrap();
    let coeffs = EditCoefficients::new(0.7, 2.0, -1.0);
    let edited = apply_offsets(&g, &off, &coeffs).unwrap();
    for spec in g.specs() {
        let theta = nn::to_vec_f64(g.layer(spec.index)).unwrap();
        let delta = nn::to_vec_f64(off.offset(spec.index)).unwrap();
        let got = nn::to_vec_f64(edited.layer(spec.index)).unwrap();
        for i in 0..theta.len() {
            let want = if spec.group == LayerGroup::Coarse {
                theta[i] * (1.0 + 0.7 * delta[i])
            } else {
                theta[i]
            };
            assert_eq!(got[i], want);
        }
    }
    assert!(apply_offsets(&g, &off, &EditCoefficients::new(f64::INFINITY, 0.0, 0.0)).is_err());
}

#[test]
fn zero_coefficients_keep_the_base_tensors() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 0);
    scramble(&h, 6);
    let dirs = Level::ALL.iter().map(|&l| (l, direction(l, l as u64))).collect();
    let off = h.predict_offsets(&dirs).unwrap();
    let edited = apply_offsets(&g, &off, &EditCoefficients::zero()).unwrap();
    for (a, b) in g.layers().iter().zip(edited.layers()) {
        assert_eq!(a.id(), b.id());
    }
}

#[test]
fn identity_edit_renders_match_base() {
    let g = small_generator(DType::F32);
    let h = hyper_for(&g, 0);
    let e = StubEmbedder::new(0);
    let prompts = BTreeMap::from([
        (Level::Shape, PromptSpec::new("face", "fat face")),
        (Level::Style, PromptSpec::new("photo", "Pixar")),
    ]);
    let edited = compose_edit(&g, &h, &prompts, &EditCoefficients::default(), 0.0, 0, &e).unwrap();
    let z = LatentCode::from_seed(64, 3);
    let pose = CameraPose::with_yaw(0.2);
    let a = nn::to_vec_f64(&g.generate(&z, &pose).unwrap().image).unwrap();
    let b = nn::to_vec_f64(&edited.generate(&z, &pose).unwrap().image).unwrap();
    assert_eq!(a, b);
    assert!(compose_edit(&g, &h, &BTreeMap::new(), &EditCoefficients::default(), 0.0, 0, &e).is_err());
}

#[test]
fn level_seeds_differ_per_level() {
    let s: Vec<u64> = Level::ALL.iter().map(|&l| level_seed(42, l)).collect();
    assert_ne!(s[0], s[1]);
    assert_ne!(s[1], s[2]);
    assert_eq!(level_seed(42, Level::Shape), s[0]);
}

#[test]
fn named_round_trip_and_parameter_count() {
    let g = small_generator(DType::F64);
    let h = hyper_for(&g, 2);
    scramble(&h, 1);
    let copy = h.deep_clone().unwrap();
    for ((ka, a), (kb, b)) in h.named_tensors().iter().zip(copy.named_tensors().iter()) {
        assert_eq!(ka, kb);
        assert_ne!(a.id(), b.id());
        assert_eq!(nn::to_vec_f64(a).unwrap(), nn::to_vec_f64(b).unwrap());
    }
    let cfg = h.config();
    let expected: usize = g
        .specs()
        .iter()
        .map(|s| {
            let n = s.numel();
            cfg.hidden * cfg.embed_dim + cfg.hidden + cfg.hidden * cfg.hidden + cfg.hidden + n * cfg.hidden + n + 1
        })
        .sum();
    assert_eq!(h.parameter_count(), expected);
    let mut named = h.named_tensors();
    named.remove("trunk_1.gain");
    assert!(HyperModule::from_named(cfg.clone(), &g.specs(), h.grouping().clone(), named, DType::F64).is_err());
}
