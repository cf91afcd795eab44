//! Supervised pretraining of the toy generator on a procedural face family.
//!
//! Each latent code deterministically describes an analytic head (an
//! ellipsoid with a nose, coloured skin, hair, eyes and mouth under fixed
//! lighting). The generator is fitted to sphere-traced renders of those
//! heads plus their depth and signed distance.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{self, CameraPose, Vec3};
use crate::error::{invalid, Error, Result};
use crate::generator::{GeneratorConfig, GeneratorParams, LatentCode, RadianceField};
use crate::nn;

const LIGHT: Vec3 = [0.35, 0.55, 0.76];

fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// One analytic head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralFace {
    pub radii: Vec3,
    pub nose: f64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub hairline: f64,
}

impl ProceduralFace {
    pub fn from_latent(latent: &LatentCode) -> Self {
        let z = |i: usize| latent.z.get(i).copied().unwrap_or(0.0).tanh();
        let radii = [0.5 + 0.04 * z(0), 0.62 + 0.04 * z(1), 0.55 + 0.03 * z(2)];
        let tone = 0.08 * z(3);
        let skin = [0.86 + tone + 0.04 * z(4), 0.66 + tone, 0.54 + tone];
        let blond = 0.5 + 0.5 * z(6);
        let hair = lerp3([0.22, 0.14, 0.1], [0.82, 0.66, 0.36], blond);
        Self {
            radii,
            nose: 0.09 + 0.02 * z(7),
            skin,
            hair,
            hairline: 0.3 + 0.06 * z(5),
        }
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        let [rx, ry, rz] = self.radii;
        let k0 = ((p[0] / rx).powi(2) + (p[1] / ry).powi(2) + (p[2] / rz).powi(2)).sqrt();
        let k1 = ((p[0] / (rx * rx)).powi(2) + (p[1] / (ry * ry)).powi(2) + (p[2] / (rz * rz)).powi(2)).sqrt();
        let head = if k1 > 1e-12 { k0 * (k0 - 1.0) / k1 } else { -rx.min(ry).min(rz) };
        let nose_c = [0.0, -0.02, rz - 0.03];
        let nose = camera::norm([p[0] - nose_c[0], p[1] - nose_c[1], p[2] - nose_c[2]]) - self.nose;
        smin(head, nose, 0.05)
    }

    pub fn normal(&self, p: Vec3) -> Vec3 {
        let e = 1e-4;
        let g = |i: usize| {
            let mut a = p;
            let mut b = p;
            a[i] += e;
            b[i] -= e;
            self.sdf(a) - self.sdf(b)
        };
        camera::normalize([g(0), g(1), g(2)])
    }

    pub fn albedo(&self, p: Vec3) -> [f64; 3] {
        let front = p[2] > 0.0;
        let eye = ((p[0].abs() - 0.17).powi(2) + (p[1] - 0.12).powi(2)).sqrt() < 0.06;
        let mouth = p[0].abs() < 0.15 && (p[1] + 0.28).abs() < 0.035;
        if front && eye {
            [0.1, 0.1, 0.16]
        } else if front && mouth {
            [0.72, 0.24, 0.25]
        } else if p[1] > self.hairline - 0.25 * p[2].max(0.0) {
            self.hair
        } else {
            self.skin
        }
    }

    pub fn shaded(&self, p: Vec3) -> [f64; 3] {
        let light = camera::normalize(LIGHT);
        let shade = 0.35 + 0.65 * camera::dot(self.normal(p), light).max(0.0);
        let a = self.albedo(p);
        [a[0] * shade, a[1] * shade, a[2] * shade]
    }

    /// First surface hit along a unit ray, by sphere tracing.
    pub fn trace(&self, origin: Vec3, dir: Vec3, near: f64, far: f64) -> Option<f64> {
        let mut t = near;
        for _ in 0..256 {
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            let d = self.sdf(p);
            if d < 1e-5 {
                return Some(t);
            }
            t += 0.8 * d.max(1e-4);
            if t > far {
                return None;
            }
        }
        None
    }

    /// `(rgb (3*h*w, planar), depth (h*w), mask (h*w))`; background pixels
    /// are black with depth 0 and mask 0.
    pub fn render(&self, pose: &CameraPose, h: usize, w: usize, scene_bound: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let origin = pose.origin();
        let (near, far) = crate::generator::ray_range(pose, scene_bound);
        let mut rgb = vec![0.0; 3 * h * w];
        let mut depth = vec![0.0; h * w];
        let mut mask = vec![0.0; h * w];
        for row in 0..h {
            for col in 0..w {
                let dir = pose.ray_direction(row, col, h, w);
                if let Some(t) = self.trace(origin, dir, near, far) {
                    let i = row * w + col;
                    let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                    let c = self.shaded(p);
                    for k in 0..3 {
                        rgb[k * h * w + i] = c[k];
                    }
                    depth[i] = t;
                    mask[i] = 1.0;
                }
            }
        }
        (rgb, depth, mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Learning-rate multiplier for the mapping network and FiLM projections.
    pub modulation_lr_scale: f64,
    pub batch: usize,
    pub seed: u64,
    pub yaw_range: f64,
    pub sdf_points: usize,
    pub image_weight: f64,
    pub depth_weight: f64,
    pub opacity_weight: f64,
    pub sdf_weight: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 3e-3,
            modulation_lr_scale: 0.01,
            batch: 1,
            seed: 0,
            yaw_range: 0.5,
            sdf_points: 1024,
            image_weight: 1.0,
            depth_weight: 1.0,
            opacity_weight: 0.5,
            sdf_weight: 1.0,
        }
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Fits a freshly initialised generator to the procedural face family.
/// Returns the fitted parameters and the per-step loss.
pub fn pretrain(
    config: GeneratorConfig,
    init_seed: u64,
    opts: &PretrainConfig,
) -> Result<(GeneratorParams, Vec<f64>)> {
    if opts.batch == 0 {
        return Err(invalid("pretraining batch must be at least 1"));
    }
    if !(opts.modulation_lr_scale >= 0.0 && opts.modulation_lr_scale.is_finite()) {
        return Err(invalid("modulation_lr_scale must be finite and >= 0"));
    }
    let dtype = DType::F32;
    let dev = Device::Cpu;
    let init = GeneratorParams::init(config.clone(), init_seed, dtype)?;
    let vars = init
        .named_tensors()
        .into_iter()
        .map(|(k, t)| Ok((k, Var::from_tensor(&t)?)))
        .collect::<Result<BTreeMap<String, Var>>>()?;
    let params = GeneratorParams::from_named(
        config.clone(),
        vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect(),
    )?;
    let is_modulation = |name: &str| name.starts_with("mapping_") || name.starts_with("film_");
    let group = |modulation: bool, lr: f64| -> Result<AdamW> {
        let vs = vars
            .iter()
            .filter(|(k, _)| is_modulation(k) == modulation)
            .map(|(_, v)| v.clone())
            .collect();
        Ok(AdamW::new(
            vs,
            ParamsAdamW {
                lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?)
    };
    let mut opt = group(false, opts.lr)?;
    let mut opt_mod = group(true, opts.lr * opts.modulation_lr_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e7a_1a17);
    let (fr, ir) = (config.feature_res, config.image_res());
    let bound = config.scene_bound;
    let mut history = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut terms = Vec::new();
        for _ in 0..opts.batch {
            let latent = LatentCode::sample(config.latent_dim, &mut rng);
            let yaw = rng.gen_range(-opts.yaw_range..=opts.yaw_range);
            let pose = CameraPose::with_yaw(yaw);
            let face = ProceduralFace::from_latent(&latent);
            let (rgb_hi, _, _) = face.render(&pose, ir, ir, bound);
            let (rgb_lo, depth_lo, mask_lo) = face.render(&pose, fr, fr, bound);

            let w = params.map_latent(&latent)?;
            let out = params.generate_mapped(&w, &pose, config.render_steps)?;
            let t_hi = nn::tensor_from_f64(&rgb_hi, &[3, ir, ir], dtype, &dev)?;
            let t_lo = nn::tensor_from_f64(&rgb_lo, &[3, fr, fr], dtype, &dev)?;
            let t_depth = nn::tensor_from_f64(&depth_lo, &[fr, fr], dtype, &dev)?;
            let t_mask = nn::tensor_from_f64(&mask_lo, &[fr, fr], dtype, &dev)?;

            let image = mse(&out.image, &t_hi)?;
            let coarse = mse(&out.feature_map.narrow(0, 0, 3)?, &t_lo)?;
            let depth = ((&out.depth - &t_depth)?.sqr()? * &t_mask)?.mean_all()?;
            let opacity = mse(&out.opacity, &t_mask)?;

            let n = opts.sdf_points;
            let mut pts = Vec::with_capacity(n * 3);
            let mut target = Vec::with_capacity(n);
            for _ in 0..n {
                let p = [
                    rng.gen_range(-bound..bound),
                    rng.gen_range(-bound..bound),
                    rng.gen_range(-bound..bound),
                ];
                pts.extend_from_slice(&p);
                target.push(face.sdf(p).clamp(-0.3, 0.3));
            }
            let field = params.field(&w)?;
            let p_t = nn::tensor_from_f64(&pts, &[n, 3], dtype, &dev)?;
            let d_t = nn::tensor_from_f64(&[0.0, 0.0, 1.0].repeat(n), &[n, 3], dtype, &dev)?;
            let (sdf, _) = field.query(&p_t, &d_t)?;
            let sdf_t = nn::tensor_from_f64(&target, &[n], dtype, &dev)?;
            let sdf_loss = mse(&sdf.clamp(-0.3, 0.3)?, &sdf_t)?;

            let total = ((((image + coarse)? * opts.image_weight)? + (depth * opts.depth_weight)?)?
                + (opacity * opts.opacity_weight)?
                + (sdf_loss * opts.sdf_weight)?)?;
            terms.push(total);
        }
        let loss = (Tensor::stack(&terms, 0)?.sum_all()? / opts.batch as f64)?;
        let value = nn::scalar_f64(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("pretraining loss at step {step}")));
        }
        let grads = loss.backward()?;
        opt.step(&grads)?;
        opt_mod.step(&grads)?;
        history.push(value);
        if step % 50 == 0 {
            log::info!("pretrain step {step}: loss {value:.5}");
        }
    }
    Ok((params.detached()?, history))
}
