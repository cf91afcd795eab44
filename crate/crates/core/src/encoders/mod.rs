//! Embedding interfaces used by the losses and metrics, with deterministic
//! stub implementations so everything runs without pretrained weights.

mod segment;
mod stub;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use segment::{RegionLabel, SegmentationMap, TemplateSegmenter};
pub use stub::{trigram_bag, StubEmbedder, StubIdentityEmbedder};

use crate::error::{invalid, Error, Result};
use crate::nn;

/// Joint text/image embedding (the CLIP role). Outputs are unit vectors of
/// a shared dimension.
pub trait JointEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    /// `(3, H, W)` image in `[0, 1]` → `(dim,)` unit vector, differentiable.
    fn embed_image(&self, image: &Tensor) -> Result<Tensor>;
}

/// Face-identity embedding (the ArcFace role).
pub trait IdentityEmbedder: Send + Sync {
    fn identity_embed(&self, image: &Tensor) -> Result<Tensor>;
}

/// Per-pixel face parsing (the BiSeNet role).
pub trait RegionSegmenter: Send + Sync {
    fn segment(&self, image: &Tensor) -> Result<SegmentationMap>;
}

/// Rejects anything but a finite `(3, H, W)` tensor with values in `[0, 1]`.
pub fn validate_image(image: &Tensor) -> Result<()> {
    let dims = image.dims();
    if dims.len() != 3 || dims[0] != 3 {
        return Err(invalid(format!("expected a (3, H, W) image, got {dims:?}")));
    }
    let values = nn::to_vec_f64(image)?;
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("image pixels must lie in [0, 1]"));
    }
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Top-two score gap below which both labels are returned.
pub const REGION_TIE_MARGIN: f64 = 0.01;

/// Regions a prompt talks about: the label whose keyword embeddings are
/// closest to the prompt's (best keyword per label), or the two best labels
/// when they are within [`REGION_TIE_MARGIN`]. Falls back to `{skin}`.
pub fn relevant_region_for(prompt: &str, embedder: &dyn JointEmbedder) -> BTreeSet<RegionLabel> {
    let fallback = || BTreeSet::from([RegionLabel::Skin]);
    let Ok(p) = embedder.embed_text(prompt) else {
        return fallback();
    };
    let mut scores = Vec::with_capacity(RegionLabel::ALL.len());
    for label in RegionLabel::ALL {
        let mut best = f64::NEG_INFINITY;
        for kw in label.keywords() {
            if let Ok(k) = embedder.embed_text(kw) {
                best = best.max(cosine(&p, &k));
            }
        }
        if best.is_finite() {
            scores.push((label, best));
        }
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match scores.as_slice() {
        [] => fallback(),
        [(top, _)] => BTreeSet::from([*top]),
        [(top, s1), (second, s2), ..] => {
            if s1 - s2 < REGION_TIE_MARGIN {
                BTreeSet::from([*top, *second])
            } else {
                BTreeSet::from([*top])
            }
        }
    }
}

/// Which implementation backs each encoder role. Only the built-in stubs
/// ship with this crate; other names must be provided by a plugin build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "stub_name")]
    pub joint: String,
    #[serde(default = "stub_name")]
    pub identity: String,
    #[serde(default = "template_name")]
    pub segmenter: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn stub_name() -> String {
    "stub".into()
}

fn template_name() -> String {
    "template".into()
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            joint: stub_name(),
            identity: stub_name(),
            segmenter: template_name(),
            seed: 0,
            weights: None,
        }
    }
}

#[derive(Clone)]
pub struct Encoders {
    pub joint: Arc<dyn JointEmbedder>,
    pub identity: Arc<dyn IdentityEmbedder>,
    pub segmenter: Arc<dyn RegionSegmenter>,
}

impl std::fmt::Debug for Encoders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoders").field("joint_dim", &self.joint.dim()).finish()
    }
}

impl Encoders {
    pub fn stub(seed: u64) -> Self {
        Self {
            joint: Arc::new(StubEmbedder::new(seed)),
            identity: Arc::new(StubIdentityEmbedder::new(seed)),
            segmenter: Arc::new(TemplateSegmenter),
        }
    }

    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        let joint: Arc<dyn JointEmbedder> = match cfg.joint.as_str() {
            "stub" => Arc::new(StubEmbedder::new(cfg.seed)),
            other => return Err(Error::UnknownPlugin(other.to_string())),
        };
        let identity: Arc<dyn IdentityEmbedder> = match cfg.identity.as_str() {
            "stub" => Arc::new(StubIdentityEmbedder::new(cfg.seed)),
            other => return Err(Error::UnknownPlugin(other.to_string())),
        };
        let segmenter: Arc<dyn RegionSegmenter> = match cfg.segmenter.as_str() {
            "template" | "stub" => Arc::new(TemplateSegmenter),
            other => return Err(Error::UnknownPlugin(other.to_string())),
        };
        Ok(Self {
            joint,
            identity,
            segmenter,
        })
    }
}

#[cfg(test)]
mod tests;
