//! A miniature latent-conditioned SDF generator.
//!
//! A mapping network turns `z` into `w`; `w` modulates (FiLM) a sine MLP
//! whose eight trunk layers predict a signed distance and whose ninth,
//! view-conditioned layer predicts colour and render features. Features are
//! volume-rendered into a low-resolution map and a small convolutional
//! upsampler produces the output image.
//!
//! Only the nine main linear layers are editable; everything else (mapping
//! network, FiLM projections, output heads, beta, upsampler) stays frozen.

mod field;
mod init;
pub mod render;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use field::NeuralField;
pub use render::{
    ray_range, ray_samples, ray_sphere_distance, sample_distances, volume_render, DepthMap, RadianceField, RenderSettings, SphereField,
    VolumeRender, BACKGROUND_DEPTH, FOREGROUND_OPACITY,
};

use crate::camera::{CameraPose, Vec3};
use crate::error::{invalid, Error, Result};
use crate::groups::{GroupAssignment, LayerGroup};
use crate::nn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub mapping_layers: usize,
    pub hidden_width: usize,
    /// SDF trunk layers; one more view-conditioned layer follows.
    pub trunk_layers: usize,
    pub feature_dim: usize,
    /// Side of the square volume-rendered feature map.
    pub feature_res: usize,
    /// Output channels of each x2 upsampling stage.
    pub up_channels: Vec<usize>,
    pub render_steps: usize,
    pub scene_bound: f64,
    /// Radius of the sphere the SDF is expressed relative to.
    pub sphere_prior: f64,
    pub first_omega: f64,
    pub beta_init: f64,
    pub groups: GroupAssignment,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            mapping_layers: 3,
            hidden_width: 64,
            trunk_layers: 8,
            feature_dim: 32,
            feature_res: 32,
            up_channels: vec![16, 8],
            render_steps: 24,
            scene_bound: 1.0,
            sphere_prior: 0.6,
            first_omega: 8.0,
            beta_init: 0.05,
            groups: GroupAssignment::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn editable_layers(&self) -> usize {
        self.trunk_layers + 1
    }

    pub fn upscale_factor(&self) -> usize {
        1 << self.up_channels.len()
    }

    pub fn image_res(&self) -> usize {
        self.feature_res * self.upscale_factor()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_width == 0 || self.trunk_layers == 0 {
            return Err(invalid("generator dimensions must be non-zero"));
        }
        if self.mapping_layers == 0 {
            return Err(invalid("mapping network needs at least one layer"));
        }
        if self.feature_dim < 3 {
            return Err(invalid("feature_dim must hold at least the three colour channels"));
        }
        if self.feature_res == 0 || self.up_channels.iter().any(|&c| c == 0) {
            return Err(invalid("feature map and upsampler sizes must be non-zero"));
        }
        if self.render_steps < 2 {
            return Err(invalid("render_steps must be at least 2"));
        }
        if !(self.scene_bound > 0.0 && self.sphere_prior > 0.0 && self.beta_init > 0.0) {
            return Err(invalid("scene_bound, sphere_prior and beta_init must be positive"));
        }
        self.groups.validate(self.editable_layers())
    }

    pub fn render_settings(&self, steps: usize) -> RenderSettings {
        RenderSettings {
            height: self.feature_res,
            width: self.feature_res,
            steps,
            scene_bound: self.scene_bound,
        }
    }

    /// Specs of the editable layers, in index order.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let h = self.hidden_width;
        (1..=self.editable_layers())
            .map(|index| {
                let (name, fan_in) = if index == 1 {
                    ("trunk_1".to_string(), 3)
                } else if index <= self.trunk_layers {
                    (format!("trunk_{index}"), h)
                } else {
                    (format!("view_{index}"), h + 3)
                };
                LayerSpec {
                    index,
                    name,
                    group: self
                        .groups
                        .group_of(index)
                        .expect("validated group assignment covers every layer"),
                    shape: vec![h, fan_in + 1],
                }
            })
            .collect()
    }
}

/// One editable linear layer. Its parameter tensor is `[out, in + 1]`:
/// the weight matrix with the bias appended as the last column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub name: String,
    pub group: LayerGroup,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Self {
        Self { z }
    }

    pub fn sample<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        Self {
            z: (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    pub fn from_seed(dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        Self::sample(dim, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }
}

/// The mapped latent `w`. Only [`GeneratorParams::map_latent`] builds one.
#[derive(Debug, Clone)]
pub struct MappedLatent(Tensor);

impl MappedLatent {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        nn::to_vec_f64(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sdf: f64,
    pub color: [f64; 3],
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// `(3, H, W)` in `[0, 1]`.
    pub image: Tensor,
    /// `(C, h, w)`.
    pub feature_map: Tensor,
    /// `(h, w)` expected termination distance.
    pub depth: Tensor,
    /// `(h, w)` accumulated weight.
    pub opacity: Tensor,
    pub pose: CameraPose,
}

impl RenderOutput {
    pub fn depth_map(&self) -> Result<DepthMap> {
        DepthMap::from_render(&self.depth, &self.opacity)
    }
}

/// The generator's parameters: editable layer tensors plus the frozen rest.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    specs: Vec<LayerSpec>,
    layers: Vec<Tensor>,
    frozen: BTreeMap<String, Tensor>,
    dtype: DType,
    device: Device,
}

impl GeneratorParams {
    /// Seeded random initialisation (the untrained generator).
    pub fn init(config: GeneratorConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let named = init::initial_tensors(&config, seed)?;
        let named = named
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(dtype)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::from_named(config, named)
    }

    /// Assembles parameters from a flat name → tensor map, checking that
    /// every expected tensor is present with the expected shape.
    pub fn from_named(config: GeneratorConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = named
                .remove(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing editable layer `{}`", spec.name)))?;
            check_shape(&spec.name, &spec.shape, t.dims())?;
            layers.push(t);
        }
        for (name, shape) in init::frozen_shapes(&config) {
            let t = named
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing frozen tensor `{name}`")))?;
            check_shape(&name, &shape, t.dims())?;
        }
        let expected: std::collections::BTreeSet<String> =
            init::frozen_shapes(&config).into_iter().map(|(n, _)| n).collect();
        if let Some(extra) = named.keys().find(|k| !expected.contains(*k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        let dtype = layers[0].dtype();
        let device = layers[0].device().clone();
        Ok(Self {
            config,
            specs,
            layers,
            frozen: named,
            dtype,
            device,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    /// Editable layer by 1-based index.
    pub fn layer(&self, index: usize) -> &Tensor {
        &self.layers[index - 1]
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub(crate) fn frozen(&self, name: &str) -> &Tensor {
        self.frozen
            .get(name)
            .unwrap_or_else(|| panic!("frozen tensor `{name}` validated at construction"))
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.frozen.keys().map(String::as_str)
    }

    /// Every tensor, editable and frozen, keyed by name.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.frozen.clone();
        for (spec, t) in self.specs.iter().zip(&self.layers) {
            out.insert(spec.name.clone(), t.clone());
        }
        out
    }

    /// Same frozen parameters, new editable layers.
    pub fn with_layers(&self, layers: Vec<Tensor>) -> Result<Self> {
        if layers.len() != self.specs.len() {
            return Err(invalid(format!(
                "expected {} replacement layers, got {}",
                self.specs.len(),
                layers.len()
            )));
        }
        for (spec, t) in self.specs.iter().zip(&layers) {
            check_shape(&spec.name, &spec.shape, t.dims())?;
        }
        let layers = layers
            .into_iter()
            .map(|t| Ok(t.to_dtype(self.dtype)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            ..self.clone()
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let named = self
            .named_tensors()
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(dtype)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::from_named(self.config.clone(), named)
    }

    /// Deep copy with all tensors cut off from any autodiff graph.
    pub fn detached(&self) -> Result<Self> {
        let named = self
            .named_tensors()
            .into_iter()
            .map(|(k, v)| Ok((k, v.detach().copy()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Self::from_named(self.config.clone(), named)
    }

    pub fn beta(&self) -> Result<Tensor> {
        Ok(self.frozen("log_beta").exp()?)
    }

    pub fn map_latent(&self, latent: &LatentCode) -> Result<MappedLatent> {
        let dim = self.config.latent_dim;
        if latent.z.len() != dim {
            return Err(invalid(format!(
                "latent has {} entries, generator expects {dim}",
                latent.z.len()
            )));
        }
        if latent.z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent contains non-finite entries"));
        }
        let z = nn::tensor_from_f64(&latent.z, &[1, dim], self.dtype, &self.device)?;
        // Pixel norm, as in style-based mapping networks.
        let mut h = z.broadcast_div(&(z.sqr()?.mean_keepdim(1)? + 1e-8)?.sqrt()?)?;
        for k in 0..self.config.mapping_layers {
            h = nn::linear(
                &h,
                self.frozen(&format!("mapping_{k}.weight")),
                self.frozen(&format!("mapping_{k}.bias")),
            )?;
            if k + 1 < self.config.mapping_layers {
                h = nn::leaky_relu(&h, 0.2)?;
            }
        }
        Ok(MappedLatent(h.squeeze(0)?))
    }

    /// The radiance field for one mapped latent, using this generator's
    /// editable layers.
    pub fn field<'a>(&'a self, w: &MappedLatent) -> Result<NeuralField<'a>> {
        NeuralField::new(self, &self.layers, w)
    }

    pub fn sample_field(&self, x: Vec3, d: Vec3, w: &MappedLatent) -> Result<FieldSample> {
        if x.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("field probe has non-finite coordinates"));
        }
        let dn = crate::camera::norm(d);
        if (dn - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("view direction must be unit length, |d| = {dn}")));
        }
        let field = self.field(w)?;
        let p = nn::tensor_from_f64(&x, &[1, 3], self.dtype, &self.device)?;
        let dir = nn::tensor_from_f64(&d, &[1, 3], self.dtype, &self.device)?;
        let (sdf, feat) = field.query(&p, &dir)?;
        let feature = nn::to_vec_f64(&feat)?;
        Ok(FieldSample {
            sdf: nn::scalar_f64(&sdf)?,
            color: [feature[0], feature[1], feature[2]],
            feature,
        })
    }

    pub fn volume_render(&self, w: &MappedLatent, pose: &CameraPose, steps: usize) -> Result<VolumeRender> {
        let field = self.field(w)?;
        volume_render(&field, &self.beta()?, pose, &self.config.render_settings(steps))
    }

    /// `(C, h, w)` feature map to a `(3, H, W)` image in `[0, 1]`.
    pub fn upsample(&self, feature_map: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let expected = [c.feature_dim, c.feature_res, c.feature_res];
        check_shape("feature_map", &expected, feature_map.dims())?;
        let mut x = feature_map.unsqueeze(0)?;
        let mut size = c.feature_res;
        for s in 0..c.up_channels.len() {
            size *= 2;
            x = x.upsample_nearest2d(size, size)?;
            x = nn::conv2d_same(
                &x,
                self.frozen(&format!("up_{s}.weight")),
                self.frozen(&format!("up_{s}.bias")),
            )?;
            x = nn::silu(&x)?;
        }
        let rgb = nn::conv2d_same(&x, self.frozen("to_rgb.weight"), self.frozen("to_rgb.bias"))?;
        Ok(nn::sigmoid(&rgb)?.squeeze(0)?)
    }

    pub fn generate(&self, latent: &LatentCode, pose: &CameraPose) -> Result<RenderOutput> {
        self.generate_with_steps(latent, pose, self.config.render_steps)
    }

    pub fn generate_with_steps(
        &self,
        latent: &LatentCode,
        pose: &CameraPose,
        steps: usize,
    ) -> Result<RenderOutput> {
        let w = self.map_latent(latent)?;
        self.generate_mapped(&w, pose, steps)
    }

    pub fn generate_mapped(&self, w: &MappedLatent, pose: &CameraPose, steps: usize) -> Result<RenderOutput> {
        let vr = self.volume_render(w, pose, steps)?;
        let image = self.upsample(&vr.feature_map)?;
        Ok(RenderOutput {
            image,
            feature_map: vr.feature_map,
            depth: vr.depth,
            opacity: vr.opacity,
            pose: *pose,
        })
    }

    /// Renders `self` and `edited` (same config, same latent) from one pose.
    /// Leading trunk layers the two share as the very same tensors are
    /// evaluated once; results equal two separate renders bit for bit.
    pub fn render_pair(
        &self,
        edited: &GeneratorParams,
        w: &MappedLatent,
        pose: &CameraPose,
        steps: usize,
    ) -> Result<(RenderOutput, RenderOutput)> {
        if self.config != edited.config {
            return Err(invalid("paired renders need generators with one config"));
        }
        let trunk = self.config.trunk_layers;
        let shared = self
            .layers
            .iter()
            .zip(&edited.layers)
            .take(trunk)
            .take_while(|(a, b)| a.id() == b.id())
            .count();
        let same_rest = self
            .frozen
            .iter()
            .zip(&edited.frozen)
            .all(|((ka, a), (kb, b))| ka == kb && a.id() == b.id());
        if shared == 0 || !same_rest {
            return Ok((self.generate_mapped(w, pose, steps)?, edited.generate_mapped(w, pose, steps)?));
        }
        let settings = self.config.render_settings(steps);
        let (points, _) = ray_samples(pose, &settings, self.dtype, &self.device)?;
        let prefix = self.field(w)?.trunk_prefix(&points, shared)?;
        let beta = self.beta()?;
        let mut outs = Vec::with_capacity(2);
        for params in [self, edited] {
            let field = field::ResumedField {
                field: params.field(w)?,
                prefix: prefix.clone(),
                from: shared,
            };
            let vr = volume_render(&field, &beta, pose, &settings)?;
            outs.push(RenderOutput {
                image: params.upsample(&vr.feature_map)?,
                feature_map: vr.feature_map,
                depth: vr.depth,
                opacity: vr.opacity,
                pose: *pose,
            });
        }
        let edited_out = outs.pop().expect("two renders");
        Ok((outs.pop().expect("two renders"), edited_out))
    }

    /// Renders with `replacement` standing in for the editable layers.
    /// Gradients flow back into the replacement tensors.
    pub fn substitute_forward(
        &self,
        replacement: &[Tensor],
        latent: &LatentCode,
        pose: &CameraPose,
    ) -> Result<RenderOutput> {
        self.with_layers(replacement.to_vec())?.generate(latent, pose)
    }

    /// Depth map only (no upsampling), at the feature-map resolution.
    pub fn render_depth(&self, latent: &LatentCode, pose: &CameraPose, steps: usize) -> Result<DepthMap> {
        let w = self.map_latent(latent)?;
        let vr = self.volume_render(&w, pose, steps)?;
        DepthMap::from_render(&vr.depth, &vr.opacity)
    }
}

pub(crate) fn check_shape(what: &str, expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            what: what.to_string(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
