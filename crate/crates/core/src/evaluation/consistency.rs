use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pointcloud::{backproject, modified_chamfer, visibility_radius, DEFAULT_VISIBILITY_FACTOR};
use crate::camera::CameraPose;
use crate::encoders::IdentityEmbedder;
use crate::error::{invalid, Result};
use crate::generator::{GeneratorParams, LatentCode};
use crate::nn;

/// Magnitude range of random side-view yaws.
pub const SIDE_YAW_RANGE: (f64, f64) = (0.2, 0.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Samples per ray; 0 keeps the generator's default.
    #[serde(default)]
    pub render_steps: usize,
    /// Fixed yaw for every side view instead of random draws.
    #[serde(default)]
    pub side_yaw: Option<f64>,
    #[serde(default = "default_factor")]
    pub visibility_factor: f64,
}

fn default_factor() -> f64 {
    DEFAULT_VISIBILITY_FACTOR
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            render_steps: 0,
            side_yaw: None,
            visibility_factor: DEFAULT_VISIBILITY_FACTOR,
        }
    }
}

impl EvalOptions {
    fn steps(&self, params: &GeneratorParams) -> usize {
        if self.render_steps == 0 {
            params.config().render_steps
        } else {
            self.render_steps
        }
    }
}

fn identity_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D)
        .wrapping_add(index as u64)
        .rotate_left(17)
}

/// Latent code of the `index`-th evaluation identity.
pub fn eval_latent(params: &GeneratorParams, seed: u64, index: usize) -> LatentCode {
    LatentCode::from_seed(params.config().latent_dim, identity_seed(seed, index))
}

/// `count` side-view yaws for one identity: magnitude uniform in
/// [`SIDE_YAW_RANGE`], random sign.
pub fn side_yaws(seed: u64, index: usize, count: usize, options: &EvalOptions) -> Vec<f64> {
    if let Some(y) = options.side_yaw {
        return vec![y; count];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(identity_seed(seed, index) ^ 0x51de);
    (0..count)
        .map(|_| {
            let m = rng.gen_range(SIDE_YAW_RANGE.0..=SIDE_YAW_RANGE.1);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Per-identity metric values; `None` marks a skipped identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub values: Vec<Option<f64>>,
    /// Depth runs only: excluded point share per identity.
    pub excluded_fraction: Vec<Option<f64>>,
    pub skip_reasons: Vec<(usize, String)>,
}

impl MetricRun {
    fn new() -> Self {
        Self {
            values: Vec::new(),
            excluded_fraction: Vec::new(),
            skip_reasons: Vec::new(),
        }
    }

    fn skip(&mut self, index: usize, reason: String) {
        log::warn!("identity {index} skipped: {reason}");
        self.values.push(None);
        self.excluded_fraction.push(None);
        self.skip_reasons.push((index, reason));
    }

    pub fn completed(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Frontal-vs-side modified Chamfer distance (scene units) per identity.
pub fn depth_consistency(
    params: &GeneratorParams,
    n_identities: usize,
    seed: u64,
    options: &EvalOptions,
) -> Result<MetricRun> {
    if n_identities == 0 {
        return Err(invalid("need at least one identity"));
    }
    let steps = options.steps(params);
    let mut run = MetricRun::new();
    for i in 0..n_identities {
        let latent = eval_latent(params, seed, i);
        let frontal = CameraPose::frontal();
        let side = CameraPose::with_yaw(side_yaws(seed, i, 1, options)[0]);
        let front_cloud = backproject(&params.render_depth(&latent, &frontal, steps)?, &frontal);
        let side_cloud = backproject(&params.render_depth(&latent, &side, steps)?, &side);
        let result = visibility_radius(&front_cloud)
            .map(|r| r / DEFAULT_VISIBILITY_FACTOR * options.visibility_factor)
            .and_then(|r| modified_chamfer(&front_cloud, &side_cloud, r));
        match result {
            Ok(c) => {
                run.values.push(Some(c.distance));
                run.excluded_fraction.push(Some(c.excluded_fraction));
            }
            Err(e) => run.skip(i, e.to_string()),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy)]
pub enum IdMode<'a> {
    /// Two random side views of the same identity.
    CrossView,
    /// Edited render against `base`'s render at one random side view.
    EditedVsBase { base: &'a GeneratorParams },
}

fn cosine(a: &candle_core::Tensor, b: &candle_core::Tensor) -> Result<f64> {
    let a = nn::to_vec_f64(a)?;
    let b = nn::to_vec_f64(b)?;
    Ok(crate::encoders::cosine(&a, &b).clamp(-1.0, 1.0))
}

/// Identity-embedding cosine per identity.
pub fn id_consistency(
    params: &GeneratorParams,
    n_identities: usize,
    embedder: &dyn IdentityEmbedder,
    seed: u64,
    mode: IdMode<'_>,
    options: &EvalOptions,
) -> Result<MetricRun> {
    if n_identities == 0 {
        return Err(invalid("need at least one identity"));
    }
    let steps = options.steps(params);
    let mut run = MetricRun::new();
    for i in 0..n_identities {
        let latent = eval_latent(params, seed, i);
        let yaws = side_yaws(seed, i, 2, options);
        let images = match mode {
            IdMode::CrossView => (
                params.generate_with_steps(&latent, &CameraPose::with_yaw(yaws[0]), steps)?,
                params.generate_with_steps(&latent, &CameraPose::with_yaw(yaws[1]), steps)?,
            ),
            IdMode::EditedVsBase { base } => {
                let pose = CameraPose::with_yaw(yaws[0]);
                (
                    params.generate_with_steps(&latent, &pose, steps)?,
                    base.generate_with_steps(&latent, &pose, steps)?,
                )
            }
        };
        let embedded = embedder
            .identity_embed(&images.0.image)
            .and_then(|a| Ok((a, embedder.identity_embed(&images.1.image)?)));
        match embedded.and_then(|(a, b)| cosine(&a, &b)) {
            Ok(c) if c.is_finite() => {
                run.values.push(Some(c));
                run.excluded_fraction.push(None);
            }
            Ok(_) => run.skip(i, "non-finite cosine".into()),
            Err(e) => run.skip(i, e.to_string()),
        }
    }
    Ok(run)
}
