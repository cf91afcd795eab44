//! Directional, identity and region losses.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::encoders::{relevant_region_for, IdentityEmbedder, JointEmbedder, RegionSegmenter};
use crate::error::{invalid, Result};
use crate::generator::{GeneratorParams, LatentCode};
use crate::nn;

/// Embedding changes shorter than this are treated as no change.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_dir: f64,
    pub lambda_id: f64,
    pub lambda_region: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dir: 1.0,
            lambda_id: 0.3,
            lambda_region: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dir: f64,
    pub id: f64,
    pub region: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.dir, self.id, self.region, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted sum of already-computed loss terms.
pub fn total_loss(dir: f64, id: f64, region: f64, weights: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        dir,
        id,
        region,
        total: weights.lambda_dir * dir + weights.lambda_id * id + weights.lambda_region * region,
    }
}

fn scalar_like(t: &Tensor, value: f64) -> Result<Tensor> {
    // Keeps the result attached to `t`'s graph with a zero gradient.
    Ok(((t.sum_all()? * 0.0)? + value)?)
}

/// `1 - cos(text_delta, edited - base)` on precomputed embeddings.
///
/// When the text change is degenerate the loss is the constant 1. When only
/// the image change is degenerate (an edit that has not moved yet, e.g. a
/// zero-initialised predictor) the value is still 1, but its gradient is that
/// of `-<dT/|dT|, dI>`, the direction the cosine improves along as the image
/// change leaves zero; otherwise training from an exact identity edit would
/// never start.
pub fn directional_loss_from_embeddings(
    text_delta: &[f64],
    base_embedding: &Tensor,
    edited_embedding: &Tensor,
) -> Result<Tensor> {
    let dtype = edited_embedding.dtype();
    let device = edited_embedding.device();
    let di = (edited_embedding - base_embedding.to_dtype(dtype)?)?;
    let nt = text_delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nt < DEGENERATE_NORM {
        return scalar_like(&di, 1.0);
    }
    let t_hat: Vec<f64> = text_delta.iter().map(|v| v / nt).collect();
    let t_hat = nn::tensor_from_f64(&t_hat, &[t_hat.len()], dtype, device)?;
    let projection = (&di * &t_hat)?.sum_all()?;
    let di_norm = di.sqr()?.sum_all()?.sqrt()?;
    if nn::scalar_f64(&di_norm)? < DEGENERATE_NORM {
        let s = projection.neg()?;
        return Ok(((&s - s.detach())? + 1.0)?);
    }
    let cos = (projection / di_norm)?;
    Ok((1.0 - cos)?.clamp(0.0, 2.0)?)
}

pub fn directional_loss(
    embedder: &dyn JointEmbedder,
    src_text: &str,
    tgt_text: &str,
    base_img: &Tensor,
    edited_img: &Tensor,
) -> Result<Tensor> {
    let t_src = embedder.embed_text(src_text)?;
    let t_tgt = embedder.embed_text(tgt_text)?;
    let delta: Vec<f64> = t_tgt.iter().zip(&t_src).map(|(a, b)| a - b).collect();
    let e_base = embedder.embed_image(base_img)?;
    let e_edit = embedder.embed_image(edited_img)?;
    directional_loss_from_embeddings(&delta, &e_base, &e_edit)
}

/// Mean over views of `1 - <F(edited_i), F(base_i)>`.
pub fn id_loss_from_images(
    identity: &dyn IdentityEmbedder,
    base_imgs: &[Tensor],
    edited_imgs: &[Tensor],
) -> Result<Tensor> {
    if base_imgs.is_empty() || base_imgs.len() != edited_imgs.len() {
        return Err(invalid("identity loss needs one or more matched views"));
    }
    let mut terms = Vec::with_capacity(base_imgs.len());
    for (b, e) in base_imgs.iter().zip(edited_imgs) {
        let fb = identity.identity_embed(b)?;
        let fe = identity.identity_embed(e)?;
        let cos = (fe * fb.to_dtype(e.dtype())?)?.sum_all()?;
        terms.push((1.0 - cos)?.clamp(0.0, 2.0)?);
    }
    let n = terms.len() as f64;
    Ok((Tensor::stack(&terms, 0)?.sum_all()? / n)?)
}

/// Renders `latent` from every pose with both parameter sets and averages
/// the identity dissimilarity.
pub fn id_loss(
    identity: &dyn IdentityEmbedder,
    base: &GeneratorParams,
    edited: &GeneratorParams,
    latent: &LatentCode,
    poses: &[CameraPose],
) -> Result<Tensor> {
    if poses.is_empty() {
        return Err(invalid("identity loss needs at least one pose"));
    }
    let mut base_imgs = Vec::with_capacity(poses.len());
    let mut edited_imgs = Vec::with_capacity(poses.len());
    for pose in poses {
        base_imgs.push(base.generate(latent, pose)?.image);
        edited_imgs.push(edited.generate(latent, pose)?.image);
    }
    id_loss_from_images(identity, &base_imgs, &edited_imgs)
}

/// `||(edited - base) restricted to irrelevant pixels||_2 / k`, where the
/// irrelevant pixels (`k` of them) are everything outside the regions the
/// prompt refers to, segmented on the base image.
pub fn region_loss(
    segmenter: &dyn RegionSegmenter,
    embedder: &dyn JointEmbedder,
    prompt: &str,
    base_img: &Tensor,
    edited_img: &Tensor,
) -> Result<Tensor> {
    if base_img.dims() != edited_img.dims() {
        return Err(invalid(format!(
            "region loss images differ in shape: {:?} vs {:?}",
            base_img.dims(),
            edited_img.dims()
        )));
    }
    let seg = segmenter.segment(base_img)?;
    let relevant = relevant_region_for(prompt, embedder);
    let mask = seg.mask_excluding(&relevant);
    let k = mask.iter().filter(|&&m| m).count();
    if k == 0 {
        log::info!("region loss: every pixel is relevant to `{prompt}`; returning 0");
        return scalar_like(edited_img, 0.0);
    }
    let dtype = edited_img.dtype();
    let mask_vals: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mask_t = nn::tensor_from_f64(&mask_vals, &[1, seg.height, seg.width], dtype, edited_img.device())?;
    let diff = (edited_img - base_img.to_dtype(dtype)?)?.broadcast_mul(&mask_t)?;
    let ss = diff.sqr()?.sum_all()?;
    if nn::scalar_f64(&ss)? == 0.0 {
        // Zero norm: value 0 and a zero (sub)gradient instead of sqrt'(0).
        return Ok((ss * 0.0)?);
    }
    Ok((ss.sqrt()? / k as f64)?)
}

pub(crate) fn zero_scalar(dtype: DType) -> Result<Tensor> {
    Ok(Tensor::zeros((), dtype, &candle_core::Device::Cpu)?)
}
