use candle_core::{DType, Device, Tensor, Var};

use super::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn image(seed: u64, size: usize) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(v, (3, size, size), &Device::Cpu).unwrap()
}

#[test]
fn trigram_bag_counts_padded_trigrams() {
    let bag = trigram_bag("Ab", 64);
    assert_eq!(bag.iter().sum::<f64>(), 2.0);
    assert_eq!(trigram_bag("  ab ", 64), bag);
    assert_eq!(trigram_bag("silver  hair", 4096).iter().sum::<f64>(), 11.0);
}

#[test]
fn text_embeddings_are_unit_and_seeded() {
    let e = StubEmbedder::new(0);
    let a = e.embed_text("Pixar").unwrap();
    assert_eq!(a.len(), 512);
    assert!((norm(&a) - 1.0).abs() < 1e-12);
    assert_eq!(a, e.embed_text("Pixar").unwrap());
    assert_ne!(a, StubEmbedder::new(1).embed_text("Pixar").unwrap());
    assert_ne!(a, e.embed_text("Botero").unwrap());
    assert!(e.embed_text("   ").is_err());
}

#[test]
fn related_prompts_are_closer_than_unrelated_ones() {
    let e = StubEmbedder::new(0);
    let hair = e.embed_text("hair").unwrap();
    let silver = e.embed_text("silver hair").unwrap();
    let mouth = e.embed_text("mouth").unwrap();
    assert!(cosine(&hair, &silver) > cosine(&hair, &mouth));
}

#[test]
fn image_embeddings_are_unit_and_differentiable() {
    let e = StubEmbedder::new(0);
    let img = Var::from_tensor(&image(1, 32)).unwrap();
    let emb = e.embed_image(img.as_tensor()).unwrap();
    assert_eq!(emb.dims(), &[512]);
    let v = crate::nn::to_vec_f64(&emb).unwrap();
    assert!((norm(&v) - 1.0).abs() < 1e-12);
    let grads = emb.narrow(0, 0, 1).unwrap().sum_all().unwrap().backward().unwrap();
    let g = crate::nn::to_vec_f64(grads.get(&img).unwrap()).unwrap();
    assert!(g.iter().any(|x| *x != 0.0));
}

#[test]
fn images_are_validated() {
    let e = StubEmbedder::new(0);
    let id = StubIdentityEmbedder::new(0);
    let too_bright = (image(2, 32) + 1.0).unwrap();
    assert!(e.embed_image(&too_bright).is_err());
    let gray = Tensor::zeros((1, 32, 32), DType::F64, &Device::Cpu).unwrap();
    assert!(e.embed_image(&gray).is_err());
    assert!(id.identity_embed(&image(3, 12)).is_err());
    assert!(e.embed_image(&image(3, 30)).is_err());
}

#[test]
fn identity_embeddings_are_unit_and_deterministic() {
    let id = StubIdentityEmbedder::new(0);
    let img = image(4, 32);
    let a = crate::nn::to_vec_f64(&id.identity_embed(&img).unwrap()).unwrap();
    assert_eq!(a.len(), id.dim());
    assert!((norm(&a) - 1.0).abs() < 1e-12);
    let b = crate::nn::to_vec_f64(&id.identity_embed(&img).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = crate::nn::to_vec_f64(&id.identity_embed(&image(5, 32)).unwrap()).unwrap();
    assert!(cosine(&a, &c) < 1.0);
}

#[test]
fn prompts_find_their_regions() {
    let e = StubEmbedder::new(0);
    assert!(relevant_region_for("Silver hair", &e).contains(&RegionLabel::Hair));
    assert!(relevant_region_for("blue eyes", &e).contains(&RegionLabel::Eyes));
    assert!(relevant_region_for("red lips", &e).contains(&RegionLabel::Mouth));
    let any = relevant_region_for("Pixar", &e);
    assert!(!any.is_empty() && any.len() <= 2);
    assert_eq!(relevant_region_for("", &e), BTreeSet::from([RegionLabel::Skin]));
}

#[test]
fn template_layout_places_the_face_in_frame() {
    let seg = TemplateSegmenter::layout(64, 64);
    assert_eq!(seg.labels.len(), 64 * 64);
    assert_eq!(seg.labels[0], RegionLabel::Background);
    assert_eq!(seg.labels[32 * 64 + 32], RegionLabel::Nose);
    assert_eq!(seg.labels[5 * 64 + 32], RegionLabel::Hair);
    for label in RegionLabel::ALL {
        assert!(seg.count(label) > 0, "{label:?}");
    }
    let mask = seg.mask_excluding(&BTreeSet::from([RegionLabel::Background]));
    assert_eq!(mask.iter().filter(|m| !**m).count(), seg.count(RegionLabel::Background));
    let from_image = TemplateSegmenter.segment(&image(0, 64)).unwrap();
    assert_eq!(from_image, seg);
}

#[test]
fn unknown_plugins_are_refused() {
    let cfg = EncoderConfig {
        joint: "clip-vit-b32".into(),
        ..EncoderConfig::default()
    };
    assert!(matches!(Encoders::from_config(&cfg), Err(crate::Error::UnknownPlugin(_))));
    assert!(Encoders::from_config(&EncoderConfig::default()).is_ok());
}
