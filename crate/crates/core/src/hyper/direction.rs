use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoders::JointEmbedder;
use crate::error::{invalid, Result};
use crate::groups::Level;

/// Text-difference embedding `E(tgt) - E(src)` tagged with the level it
/// edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionFeature {
    pub vector: Vec<f64>,
    level: Level,
    pub src_text: String,
    pub tgt_text: String,
}

impl DirectionFeature {
    pub fn new(vector: Vec<f64>, level: Level, src_text: String, tgt_text: String) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(invalid("direction vector has non-finite entries"));
        }
        Ok(Self {
            vector,
            level,
            src_text,
            tgt_text,
        })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn encode_direction(
    src: &str,
    tgt: &str,
    level: Level,
    embedder: &dyn JointEmbedder,
) -> Result<DirectionFeature> {
    if src.trim().is_empty() || tgt.trim().is_empty() {
        return Err(invalid("source and target prompts must be non-empty"));
    }
    let fs = embedder.embed_text(src)?;
    let ft = embedder.embed_text(tgt)?;
    let vector = ft.iter().zip(&fs).map(|(t, s)| t - s).collect();
    DirectionFeature::new(vector, level, src.to_string(), tgt.to_string())
}

/// Adds i.i.d. `N(0, sigma^2)` noise drawn from a generator seeded with
/// `seed`. Level and texts are carried over unchanged.
pub fn perturb_direction(f: &DirectionFeature, sigma: f64, seed: u64) -> Result<DirectionFeature> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise scale must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let vector = f.vector.iter().map(|v| v + noise.sample(&mut rng)).collect();
    Ok(DirectionFeature {
        vector,
        ..f.clone()
    })
}
