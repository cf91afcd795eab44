//! A loaded generator and hypernetwork pair, and the edits run on it.

use std::path::Path;

use candle_core::DType;
use hyperedit::checkpoint::{self, GeneratorManifest, HyperManifest};
use hyperedit::encoders::{EncoderConfig, Encoders};
use hyperedit::generator::{GeneratorParams, LatentCode};
use hyperedit::hyper::{compose_edit, EditCoefficients, HyperModule};
use image::RgbImage;

use crate::error::CliError;
use crate::grid::to_rgb;
use crate::request::EditRequest;

/// Immutable after construction; safe to share between request workers.
#[derive(Debug)]
pub struct Model {
    pub generator: GeneratorParams,
    pub hyper: HyperModule,
    pub encoders: Encoders,
    manifest_hash: String,
}

impl Model {
    pub fn new(generator: GeneratorParams, hyper: HyperModule, encoders: Encoders) -> Result<Self, CliError> {
        let g = GeneratorManifest::of(&generator);
        let h = HyperManifest::of(&hyper);
        let diff = checkpoint::manifest_diff(&g, &h);
        if !diff.is_empty() {
            return Err(CliError::Incompatible(format!(
                "checkpoints are incompatible:\n  {}",
                diff.join("\n  ")
            )));
        }
        let manifest_hash = checkpoint::manifest_hash(&g, &h)?;
        Ok(Self {
            generator,
            hyper,
            encoders,
            manifest_hash,
        })
    }

    pub fn load(generator: &Path, hyper: &Path) -> Result<Self, CliError> {
        let (g, _) = checkpoint::load_generator(generator, DType::F32)?;
        let (h, _) = checkpoint::load_hyper(hyper, DType::F32)?;
        Self::new(g, h, Encoders::from_config(&EncoderConfig::default())?)
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    pub fn edited(&self, request: &EditRequest, alphas: &EditCoefficients) -> Result<GeneratorParams, CliError> {
        Ok(compose_edit(
            &self.generator,
            &self.hyper,
            &request.prompts,
            alphas,
            0.0,
            request.seed,
            self.encoders.joint.as_ref(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutput {
    pub edited: Vec<RgbImage>,
    pub base: Option<Vec<RgbImage>>,
}

pub fn render_row(params: &GeneratorParams, request: &EditRequest) -> Result<Vec<RgbImage>, CliError> {
    let latent = LatentCode::from_seed(params.config().latent_dim, request.seed);
    request
        .poses
        .iter()
        .map(|pose| to_rgb(&params.generate(&latent, pose)?.image))
        .collect()
}

/// Renders the request's pose sweep from the edited generator, plus the
/// base row when asked for.
pub fn run_edit(model: &Model, request: &EditRequest) -> Result<EditOutput, CliError> {
    request.validate()?;
    let edited = model.edited(request, &request.alphas)?;
    Ok(EditOutput {
        edited: render_row(&edited, request)?,
        base: if request.with_base {
            Some(render_row(&model.generator, request)?)
        } else {
            None
        },
    })
}

/// One column per sweep value at the request's first pose; each value
/// scales the request's coefficients.
pub fn run_sweep(model: &Model, request: &EditRequest, sweep: &[f64]) -> Result<Vec<RgbImage>, CliError> {
    request.validate()?;
    let mut single = request.clone();
    single.poses.truncate(1);
    sweep
        .iter()
        .map(|&s| {
            let a = request.alphas;
            let alphas = EditCoefficients::new(s * a.coarse, s * a.medium, s * a.fine);
            let edited = model.edited(&single, &alphas)?;
            Ok(render_row(&edited, &single)?.remove(0))
        })
        .collect()
}
