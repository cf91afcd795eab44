//! Seeded stand-ins for pretrained encoders.
//!
//! Text and image embeddings share a low-rank subspace of the output space:
//! both are mapped through the same random basis, so image motion can align
//! with text motion the way it does in a real joint embedding.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{validate_image, IdentityEmbedder, JointEmbedder};
use crate::error::{invalid, Result};
use crate::nn;

const TEXT_BUCKETS: usize = 4096;
const POOL_GRID: usize = 4;
/// Pooled means and mean squares per channel and cell, plus one constant.
const IMAGE_STATS: usize = 2 * 3 * POOL_GRID * POOL_GRID + 1;
const STAT_BIAS: f64 = 0.1;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed character-trigram counts of the lower-cased, space-padded text.
pub fn trigram_bag(text: &str, buckets: usize) -> Vec<f64> {
    let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let chars: Vec<char> = format!(" {cleaned} ").chars().collect();
    let mut bag = vec![0.0; buckets];
    for win in chars.windows(3) {
        let tri: String = win.iter().collect();
        bag[(fnv1a(tri.as_bytes()) % buckets as u64) as usize] += 1.0;
    }
    bag
}

/// Image statistics `(1, 2 * 3 * grid^2 + 1)`: average-pooled values and
/// squared values, centred at 0.5 and 0.25, followed by a constant.
fn pooled_stats(image: &Tensor, grid: usize) -> Result<Tensor> {
    let (_, h, w) = image.dims3()?;
    let x = image.unsqueeze(0)?;
    let kernel = (h / grid, w / grid);
    let means = x.avg_pool2d(kernel)?.flatten_all()?;
    let squares = x.sqr()?.avg_pool2d(kernel)?.flatten_all()?;
    let bias = Tensor::full(STAT_BIAS, 1, image.device())?.to_dtype(image.dtype())?;
    let stats = Tensor::cat(&[(means - 0.5)?, (squares - 0.25)?, bias], 0)?;
    Ok(stats.unsqueeze(0)?)
}

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    seed: u64,
    dim: usize,
    /// `(dim, IMAGE_STATS)` shared basis.
    basis: Vec<f64>,
    /// `(IMAGE_STATS, TEXT_BUCKETS)` trigram projection.
    text_proj: Vec<f64>,
}

impl StubEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, 512)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0c11_b0a7);
        let basis = gaussian(&mut rng, dim * IMAGE_STATS, 1.0 / (dim as f64).sqrt());
        let text_proj = gaussian(&mut rng, IMAGE_STATS * TEXT_BUCKETS, 1.0);
        Self {
            seed,
            dim,
            basis,
            text_proj,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn basis_t(&self, image: &Tensor) -> Result<Tensor> {
        // (IMAGE_STATS, dim) so that stats @ basis_t lands in embedding space.
        Ok(nn::tensor_from_f64(&self.basis, &[self.dim, IMAGE_STATS], image.dtype(), image.device())?
            .t()?
            .contiguous()?)
    }
}

impl JointEmbedder for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(invalid("cannot embed an empty string"));
        }
        let bag = trigram_bag(text, TEXT_BUCKETS);
        let mut low = vec![0.0; IMAGE_STATS];
        for (b, &count) in bag.iter().enumerate() {
            if count != 0.0 {
                for (k, l) in low.iter_mut().enumerate() {
                    *l += count * self.text_proj[k * TEXT_BUCKETS + b];
                }
            }
        }
        let mut v = vec![0.0; self.dim];
        for (i, out) in v.iter_mut().enumerate() {
            let row = &self.basis[i * IMAGE_STATS..(i + 1) * IMAGE_STATS];
            *out = row.iter().zip(&low).map(|(a, b)| a * b).sum();
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / n).collect())
    }

    fn embed_image(&self, image: &Tensor) -> Result<Tensor> {
        validate_image(image)?;
        let (_, h, w) = image.dims3()?;
        if h % POOL_GRID != 0 || w % POOL_GRID != 0 {
            return Err(invalid(format!("image sides must be multiples of {POOL_GRID}")));
        }
        let stats = pooled_stats(image, POOL_GRID)?;
        let v = stats.matmul(&self.basis_t(image)?)?;
        Ok(nn::normalize(&v)?.squeeze(0)?)
    }
}

/// Identity stand-in: 8x8 pooled statistics through its own random
/// projection.
#[derive(Debug, Clone)]
pub struct StubIdentityEmbedder {
    dim: usize,
    proj: Vec<f64>,
}

const ID_GRID: usize = 8;
const ID_STATS: usize = 2 * 3 * ID_GRID * ID_GRID + 1;

impl StubIdentityEmbedder {
    pub fn new(seed: u64) -> Self {
        let dim = 128;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa7cf_ace5);
        Self {
            dim,
            proj: gaussian(&mut rng, ID_STATS * dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl IdentityEmbedder for StubIdentityEmbedder {
    fn identity_embed(&self, image: &Tensor) -> Result<Tensor> {
        validate_image(image)?;
        let (_, h, w) = image.dims3()?;
        if h % ID_GRID != 0 || w % ID_GRID != 0 {
            return Err(invalid(format!("image sides must be multiples of {ID_GRID}")));
        }
        let stats = pooled_stats(image, ID_GRID)?;
        let proj = nn::tensor_from_f64(&self.proj, &[ID_STATS, self.dim], image.dtype(), &Device::Cpu)?;
        Ok(nn::normalize(&stats.matmul(&proj)?)?.squeeze(0)?)
    }
}
