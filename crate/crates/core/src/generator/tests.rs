use candle_core::{DType, Var};

use super::*;

fn toy() -> GeneratorParams {
    GeneratorParams::init(GeneratorConfig::default(), 3, DType::F64).unwrap()
}

fn small() -> GeneratorParams {
    let config = GeneratorConfig {
        feature_res: 8,
        render_steps: 8,
        ..GeneratorConfig::default()
    };
    GeneratorParams::init(config, 5, DType::F64).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    nn::scalar_f64(&(a - b).unwrap().abs().unwrap().max_all().unwrap()).unwrap()
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum::<f64>() + b[r])
        .collect()
}

#[test]
fn zero_latent_maps_to_the_bias_path() {
    let g = toy();
    let c = g.config();
    let w = g.map_latent(&LatentCode::new(vec![0.0; c.latent_dim])).unwrap().to_vec().unwrap();
    let d = c.latent_dim;
    let mut h = vec![0.0; d];
    for k in 0..c.mapping_layers {
        let wt = nn::to_vec_f64(g.frozen(&format!("mapping_{k}.weight"))).unwrap();
        let bt = nn::to_vec_f64(g.frozen(&format!("mapping_{k}.bias"))).unwrap();
        h = matvec(&wt, d, d, &h, &bt);
        if k + 1 < c.mapping_layers {
            h = h.into_iter().map(|v| if v > 0.0 { v } else { 0.2 * v }).collect();
        }
    }
    for (a, b) in w.iter().zip(&h) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mapping_is_deterministic_and_latent_dependent() {
    let g = toy();
    let z1 = LatentCode::from_seed(64, 1);
    let z2 = LatentCode::from_seed(64, 2);
    let a = g.map_latent(&z1).unwrap().to_vec().unwrap();
    assert_eq!(a, g.map_latent(&z1).unwrap().to_vec().unwrap());
    assert_ne!(a, g.map_latent(&z2).unwrap().to_vec().unwrap());
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn wrong_latent_dimension_is_rejected() {
    let g = toy();
    assert!(g.map_latent(&LatentCode::new(vec![0.0; 3])).is_err());
    assert!(g.map_latent(&LatentCode::new(vec![f64::NAN; 64])).is_err());
}

#[test]
fn field_probes_are_deterministic_with_colours_in_range() {
    let g = toy();
    let w = g.map_latent(&LatentCode::from_seed(64, 7)).unwrap();
    let a = g.sample_field([0.1, 0.2, 0.3], [0.0, 0.0, 1.0], &w).unwrap();
    assert_eq!(a, g.sample_field([0.1, 0.2, 0.3], [0.0, 0.0, 1.0], &w).unwrap());
    let field = g.field(&w).unwrap();
    let n = 1000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::{Rng, SeedableRng};
    let pts: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dirs: Vec<f64> = (0..n).flat_map(|_| [0.0, 0.6, 0.8]).collect();
    let p = nn::tensor_from_f64(&pts, &[n, 3], DType::F64, &Device::Cpu).unwrap();
    let d = nn::tensor_from_f64(&dirs, &[n, 3], DType::F64, &Device::Cpu).unwrap();
    let (sdf, feat) = field.query(&p, &d).unwrap();
    assert!(nn::to_vec_f64(&sdf).unwrap().iter().all(|v| v.is_finite()));
    let feat = nn::to_vec_f64(&feat).unwrap();
    let c = g.config().feature_dim;
    for row in feat.chunks(c) {
        assert!(row[..3].iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(row.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn field_probe_needs_a_unit_direction() {
    let g = toy();
    let w = g.map_latent(&LatentCode::from_seed(64, 7)).unwrap();
    assert!(g.sample_field([0.0; 3], [0.0, 0.0, 2.0], &w).is_err());
    assert!(g.sample_field([f64::NAN, 0.0, 0.0], [0.0, 0.0, 1.0], &w).is_err());
}

#[test]
fn upsampler_shapes_and_constant_input() {
    let g = small();
    let c = g.config().clone();
    let zero = Tensor::zeros((c.feature_dim, c.feature_res, c.feature_res), DType::F64, &Device::Cpu).unwrap();
    let img = g.upsample(&zero).unwrap();
    assert_eq!(img.dims(), &[3, c.image_res(), c.image_res()]);
    assert_eq!(c.image_res(), c.upscale_factor() * c.feature_res);
    let v = nn::to_vec_f64(&img).unwrap();
    let plane = c.image_res() * c.image_res();
    for ch in 0..3 {
        let first = v[ch * plane];
        assert!(v[ch * plane..(ch + 1) * plane].iter().all(|&x| x == first));
    }
    let bad = Tensor::zeros((c.feature_dim, 4, 4), DType::F64, &Device::Cpu).unwrap();
    assert!(g.upsample(&bad).is_err());
}

#[test]
fn image_gradients_reach_the_feature_map() {
    let g = small();
    let c = g.config();
    let fm = Var::from_tensor(
        &Tensor::randn(0.0f64, 1.0, (c.feature_dim, c.feature_res, c.feature_res), &Device::Cpu).unwrap(),
    )
    .unwrap();
    let img = g.upsample(fm.as_tensor()).unwrap();
    let loss = img.narrow(1, 5, 1).unwrap().narrow(2, 9, 1).unwrap().sum_all().unwrap();
    let grads = loss.backward().unwrap();
    let gf = nn::to_vec_f64(grads.get(&fm).unwrap()).unwrap();
    assert!(gf.iter().any(|v| *v != 0.0));
}

#[test]
fn generate_is_deterministic_and_echoes_pose() {
    let g = small();
    let z = LatentCode::from_seed(64, 11);
    let pose = CameraPose::with_yaw(0.3);
    let a = g.generate(&z, &pose).unwrap();
    let b = g.generate(&z, &pose).unwrap();
    assert_eq!(max_abs_diff(&a.image, &b.image), 0.0);
    assert_eq!(max_abs_diff(&a.depth, &b.depth), 0.0);
    assert_eq!(a.pose, pose);
    assert_eq!(a.feature_map.dims(), &[32, 8, 8]);
}

#[test]
fn substitution_with_stored_layers_is_exact() {
    let g = small();
    let z = LatentCode::from_seed(64, 2);
    let pose = CameraPose::frontal();
    let a = g.generate(&z, &pose).unwrap();
    let b = g.substitute_forward(g.layers(), &z, &pose).unwrap();
    assert_eq!(max_abs_diff(&a.image, &b.image), 0.0);

    let mut layers = g.layers().to_vec();
    layers[4] = (&layers[4] * (1.0 + 1e-3)).unwrap();
    let c = g.substitute_forward(&layers, &z, &pose).unwrap();
    assert!(max_abs_diff(&a.image, &c.image) > 0.0);

    layers[4] = Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap();
    assert!(g.substitute_forward(&layers, &z, &pose).is_err());
}

#[test]
fn every_editable_layer_receives_gradient() {
    let g = small();
    let vars: Vec<Var> = g.layers().iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let layers: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let out = g
        .substitute_forward(&layers, &LatentCode::from_seed(64, 4), &CameraPose::frontal())
        .unwrap();
    let grads = out.image.mean_all().unwrap().backward().unwrap();
    for (i, v) in vars.iter().enumerate() {
        let gv = nn::to_vec_f64(grads.get(v).unwrap()).unwrap();
        assert!(gv.iter().any(|x| *x != 0.0), "layer {}", i + 1);
    }
}

#[test]
fn paired_render_matches_separate_renders() {
    let g = small();
    let w = g.map_latent(&LatentCode::from_seed(64, 9)).unwrap();
    let pose = CameraPose::with_yaw(-0.2);
    for changed in [0, 3, 8] {
        let mut layers = g.layers().to_vec();
        layers[changed] = (&layers[changed] * 1.05).unwrap();
        let e = g.with_layers(layers).unwrap();
        let (a, b) = g.render_pair(&e, &w, &pose, 8).unwrap();
        let a2 = g.generate_mapped(&w, &pose, 8).unwrap();
        let b2 = e.generate_mapped(&w, &pose, 8).unwrap();
        assert_eq!(max_abs_diff(&a.image, &a2.image), 0.0);
        assert_eq!(max_abs_diff(&b.image, &b2.image), 0.0);
        assert_eq!(max_abs_diff(&b.depth, &b2.depth), 0.0);
    }
}

#[test]
fn layer_specs_cover_nine_layers_in_three_groups() {
    let c = GeneratorConfig::default();
    let specs = c.layer_specs();
    assert_eq!(specs.len(), 9);
    assert_eq!(specs.iter().map(|s| s.index).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
    assert_eq!(specs[0].shape, vec![64, 4]);
    assert_eq!(specs[8].shape, vec![64, 68]);
    for s in &specs {
        assert_eq!(c.groups.group_of(s.index), Some(s.group));
    }
    let g = toy();
    let names: Vec<String> = g.frozen_names().map(String::from).collect();
    assert!(names.iter().all(|n| !specs.iter().any(|s| &s.name == n)));
    assert!(names.iter().any(|n| n.starts_with("up_")));
    assert!(names.iter().any(|n| n.starts_with("mapping_")));
}

#[test]
fn named_round_trip_and_missing_tensors() {
    let g = small();
    let named = g.named_tensors();
    let back = GeneratorParams::from_named(g.config().clone(), named.clone()).unwrap();
    assert_eq!(back.named_tensors().len(), named.len());
    let mut missing = named.clone();
    missing.remove("trunk_3");
    assert!(GeneratorParams::from_named(g.config().clone(), missing).is_err());
    let mut extra = named;
    extra.insert("bogus".into(), Tensor::zeros(1, DType::F64, &Device::Cpu).unwrap());
    assert!(GeneratorParams::from_named(g.config().clone(), extra).is_err());
}
