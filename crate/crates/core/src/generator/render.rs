//! Volume rendering of SDF radiance fields along camera rays.

use candle_core::{DType, Device, Tensor, D};

use crate::camera::{CameraPose, Vec3};
use crate::error::{invalid, Result};
use crate::nn;

/// Opacity below which a ray counts as background.
pub const FOREGROUND_OPACITY: f64 = 0.5;

/// Depth value written for background rays in [`DepthMap`].
pub const BACKGROUND_DEPTH: f64 = -1.0;

/// A field queried in batches: `points` and unit `dirs` are `(P, 3)`;
/// returns `sdf: (P,)` and `features: (P, C)`.
pub trait RadianceField {
    fn feature_dim(&self) -> usize;
    fn dtype(&self) -> DType;
    fn device(&self) -> &Device;
    fn query(&self, points: &Tensor, dirs: &Tensor) -> Result<(Tensor, Tensor)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    /// Radius of the ball that contains the scene; rays are sampled on
    /// `[radius - bound, radius + bound]`.
    pub scene_bound: f64,
}

/// Raw (differentiable) outputs of one volume-rendering pass.
#[derive(Debug, Clone)]
pub struct VolumeRender {
    /// `(C, h, w)`
    pub feature_map: Tensor,
    /// `(h, w)`, opacity-normalised expected termination distance.
    pub depth: Tensor,
    /// `(h, w)`, accumulated weight per ray.
    pub opacity: Tensor,
    /// `(h * w, steps)` compositing weights.
    pub weights: Tensor,
}

/// Depth map with background rays replaced by [`BACKGROUND_DEPTH`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn from_render(depth: &Tensor, opacity: &Tensor) -> Result<Self> {
        let (height, width) = depth.dims2()?;
        let d = nn::to_vec_f64(depth)?;
        let a = nn::to_vec_f64(opacity)?;
        let values = d
            .iter()
            .zip(&a)
            .map(|(&d, &a)| {
                if a >= FOREGROUND_OPACITY && d.is_finite() && d > 0.0 {
                    d
                } else {
                    BACKGROUND_DEPTH
                }
            })
            .collect();
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn is_foreground(&self, idx: usize) -> bool {
        self.values[idx] != BACKGROUND_DEPTH
    }

    pub fn foreground_count(&self) -> usize {
        (0..self.values.len()).filter(|&i| self.is_foreground(i)).count()
    }
}

pub fn ray_range(pose: &CameraPose, scene_bound: f64) -> (f64, f64) {
    let near = (pose.radius - scene_bound).max(1e-3 * pose.radius);
    (near, pose.radius + scene_bound)
}

/// Midpoints of `steps` equal intervals of the ray range.
pub fn sample_distances(pose: &CameraPose, settings: &RenderSettings) -> (Vec<f64>, f64) {
    let (near, far) = ray_range(pose, settings.scene_bound);
    let delta = (far - near) / settings.steps as f64;
    let ts = (0..settings.steps)
        .map(|k| near + (k as f64 + 0.5) * delta)
        .collect();
    (ts, delta)
}

/// Composites an SDF field with density `sigmoid(-sdf / beta) / beta`.
///
/// Densities are sampled at interval midpoints and each interval's
/// termination is attributed to its midpoint.
pub fn volume_render<F: RadianceField + ?Sized>(
    field: &F,
    beta: &Tensor,
    pose: &CameraPose,
    settings: &RenderSettings,
) -> Result<VolumeRender> {
    pose.validate()?;
    if settings.steps < 2 {
        return Err(invalid(format!("need at least 2 ray steps, got {}", settings.steps)));
    }
    if settings.height == 0 || settings.width == 0 {
        return Err(invalid("render resolution must be non-zero"));
    }
    let dtype = field.dtype();
    let device = field.device();
    let n_rays = settings.height * settings.width;
    let steps = settings.steps;
    let (ts, delta) = sample_distances(pose, settings);
    let (points, dirs_t) = ray_samples(pose, settings, dtype, device)?;
    let (sdf, features) = field.query(&points, &dirs_t)?;
    let sdf = sdf.reshape((n_rays, steps))?;
    let channels = features.dim(1)?;
    let features = features.reshape((n_rays, steps, channels))?;

    let inv_beta = beta.to_dtype(dtype)?.reshape(())?.recip()?;
    let density = nn::sigmoid(&sdf.neg()?.broadcast_mul(&inv_beta)?)?.broadcast_mul(&inv_beta)?;
    let tau = (density * delta)?;
    // Exclusive prefix sum: optical depth accumulated before each sample.
    let shifted = Tensor::cat(
        &[
            Tensor::zeros((n_rays, 1), dtype, device)?,
            tau.narrow(1, 0, steps - 1)?,
        ],
        1,
    )?;
    let transmittance = shifted.cumsum(1)?.neg()?.exp()?;
    let alpha = (1.0 - tau.neg()?.exp()?)?;
    let weights = (transmittance * alpha)?;
    let opacity = weights.sum(D::Minus1)?;

    let feat = weights.unsqueeze(1)?.matmul(&features)?.squeeze(1)?;
    let feature_map = feat
        .t()?
        .contiguous()?
        .reshape((channels, settings.height, settings.width))?;

    let t = nn::tensor_from_f64(&ts, &[1, steps], dtype, device)?;
    let depth_num = weights.broadcast_mul(&t)?.sum(D::Minus1)?;
    let depth = (depth_num / (&opacity + 1e-10)?)?;

    Ok(VolumeRender {
        feature_map,
        depth: depth.reshape((settings.height, settings.width))?,
        opacity: opacity.reshape((settings.height, settings.width))?,
        weights,
    })
}

/// Sample points and their ray directions, `(rays * steps, 3)` each, in
/// row-major ray order.
pub fn ray_samples(
    pose: &CameraPose,
    settings: &RenderSettings,
    dtype: DType,
    device: &Device,
) -> Result<(Tensor, Tensor)> {
    let n = settings.height * settings.width * settings.steps;
    let origin = pose.origin();
    let dirs = pose.ray_directions(settings.height, settings.width);
    let (ts, _) = sample_distances(pose, settings);
    let mut pts = Vec::with_capacity(n * 3);
    let mut dirs_flat = Vec::with_capacity(n * 3);
    for d in &dirs {
        for &t in &ts {
            push3(&mut pts, [origin[0] + t * d[0], origin[1] + t * d[1], origin[2] + t * d[2]]);
            push3(&mut dirs_flat, *d);
        }
    }
    Ok((
        nn::tensor_from_f64(&pts, &[n, 3], dtype, device)?,
        nn::tensor_from_f64(&dirs_flat, &[n, 3], dtype, device)?,
    ))
}

fn push3(buf: &mut Vec<f64>, v: Vec3) {
    buf.extend_from_slice(&v);
}

/// Analytic ball `|x| - radius` with a constant feature vector.
#[derive(Debug, Clone)]
pub struct SphereField {
    pub radius: f64,
    pub feature: Vec<f64>,
    pub dtype: DType,
    pub device: Device,
}

impl SphereField {
    pub fn new(radius: f64, feature: Vec<f64>, dtype: DType) -> Self {
        Self {
            radius,
            feature,
            dtype,
            device: Device::Cpu,
        }
    }
}

impl RadianceField for SphereField {
    fn feature_dim(&self) -> usize {
        self.feature.len()
    }

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn query(&self, points: &Tensor, _dirs: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = points.dim(0)?;
        let sdf = (points.sqr()?.sum(D::Minus1)?.sqrt()? - self.radius)?;
        let feat = nn::tensor_from_f64(&self.feature, &[1, self.feature.len()], self.dtype, &self.device)?
            .broadcast_as((n, self.feature.len()))?
            .contiguous()?;
        Ok((sdf, feat))
    }
}

/// Closed-form distance from `origin` along unit `dir` to the first hit of
/// the centred ball, if any.
pub fn ray_sphere_distance(origin: Vec3, dir: Vec3, radius: f64) -> Option<f64> {
    let b = crate::camera::dot(origin, dir);
    let c = crate::camera::dot(origin, origin) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(steps: usize) -> RenderSettings {
        RenderSettings {
            height: 12,
            width: 12,
            steps,
            scene_bound: 1.0,
        }
    }

    fn beta(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn empty_space_renders_background() {
        // Radius far below zero: sdf >> 0 everywhere inside the sampled range.
        let field = SphereField::new(-50.0, vec![1.0, 0.5], DType::F64);
        let out = volume_render(&field, &beta(0.05), &CameraPose::frontal(), &settings(16)).unwrap();
        let acc = nn::to_vec_f64(&out.opacity).unwrap();
        assert!(acc.iter().all(|&a| a < 1e-12));
        let dm = DepthMap::from_render(&out.depth, &out.opacity).unwrap();
        assert_eq!(dm.foreground_count(), 0);
        assert!(dm.values.iter().all(|&d| d == BACKGROUND_DEPTH));
    }

    #[test]
    fn weights_are_nonnegative_and_sum_to_at_most_one() {
        let field = SphereField::new(0.6, vec![1.0], DType::F64);
        for b in [0.005, 0.05, 0.5] {
            let out = volume_render(&field, &beta(b), &CameraPose::with_yaw(0.7), &settings(20)).unwrap();
            let w = nn::to_vec_f64(&out.weights).unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            let acc = nn::to_vec_f64(&out.opacity).unwrap();
            assert!(acc.iter().all(|&a| a <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn too_few_steps_and_bad_poses_are_rejected() {
        let field = SphereField::new(0.6, vec![1.0], DType::F64);
        assert!(volume_render(&field, &beta(0.05), &CameraPose::frontal(), &settings(1)).is_err());
        let mut pose = CameraPose::frontal();
        pose.radius = -1.0;
        assert!(volume_render(&field, &beta(0.05), &pose, &settings(8)).is_err());
    }

    #[test]
    fn ray_sphere_closed_form() {
        let t = ray_sphere_distance([0.0, 0.0, 3.0], [0.0, 0.0, -1.0], 1.0).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        assert!(ray_sphere_distance([0.0, 2.0, 3.0], [0.0, 0.0, -1.0], 1.0).is_none());
    }
}
