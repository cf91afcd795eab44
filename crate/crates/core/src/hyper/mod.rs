//! Hypernetwork edits of the generator's editable layers.
//!
//! A direction feature for each requested level goes through that level's
//! group of per-layer predictors; the predicted relative offsets scale the
//! frozen layer tensors as `theta * (1 + alpha * delta)`, with one `alpha`
//! per group.

mod direction;
mod module;

use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use direction::{encode_direction, perturb_direction, DirectionFeature};
pub use module::{HyperConfig, HyperModule, LayerPredictor};

use crate::encoders::JointEmbedder;
use crate::error::{invalid, Result};
use crate::generator::{check_shape, GeneratorParams, LayerSpec};
use crate::groups::{GroupAssignment, LayerGroup, Level};

/// Per-layer relative offsets plus the directions that produced them.
#[derive(Debug, Clone)]
pub struct OffsetSet {
    specs: Vec<LayerSpec>,
    grouping: GroupAssignment,
    offsets: Vec<Tensor>,
    provenance: BTreeMap<Level, DirectionFeature>,
}

impl OffsetSet {
    pub fn new(
        specs: Vec<LayerSpec>,
        grouping: GroupAssignment,
        offsets: Vec<Tensor>,
        provenance: BTreeMap<Level, DirectionFeature>,
    ) -> Result<Self> {
        if specs.len() != offsets.len() {
            return Err(invalid("one offset tensor per editable layer required"));
        }
        grouping.validate(specs.len())?;
        for (s, o) in specs.iter().zip(&offsets) {
            check_shape(&s.name, &s.shape, o.dims())?;
        }
        Ok(Self {
            specs,
            grouping,
            offsets,
            provenance,
        })
    }

    pub fn offsets(&self) -> &[Tensor] {
        &self.offsets
    }

    pub fn offset(&self, index: usize) -> &Tensor {
        &self.offsets[index - 1]
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn grouping(&self) -> &GroupAssignment {
        &self.grouping
    }

    pub fn provenance(&self) -> &BTreeMap<Level, DirectionFeature> {
        &self.provenance
    }

    pub fn is_active(&self, group: LayerGroup) -> bool {
        self.provenance.contains_key(&group.level())
    }
}

/// Editing degree per layer group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditCoefficients {
    pub coarse: f64,
    pub medium: f64,
    pub fine: f64,
}

impl Default for EditCoefficients {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl EditCoefficients {
    pub fn new(coarse: f64, medium: f64, fine: f64) -> Self {
        Self { coarse, medium, fine }
    }

    pub fn uniform(alpha: f64) -> Self {
        Self::new(alpha, alpha, alpha)
    }

    pub fn zero() -> Self {
        Self::uniform(0.0)
    }

    pub fn for_group(&self, group: LayerGroup) -> f64 {
        match group {
            LayerGroup::Coarse => self.coarse,
            LayerGroup::Medium => self.medium,
            LayerGroup::Fine => self.fine,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.coarse, self.medium, self.fine].iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(invalid("edit coefficients must be finite"))
        }
    }
}

/// `theta_j * (1 + alpha_g(j) * delta_j)` for every editable layer. Groups
/// with no offsets or a zero coefficient keep the base tensor as is.
pub fn apply_offsets(
    theta: &GeneratorParams,
    offsets: &OffsetSet,
    coeffs: &EditCoefficients,
) -> Result<GeneratorParams> {
    coeffs.validate()?;
    if theta.specs().len() != offsets.specs().len() {
        return Err(invalid(format!(
            "generator has {} editable layers, offsets cover {}",
            theta.specs().len(),
            offsets.specs().len()
        )));
    }
    let mut layers = Vec::with_capacity(theta.layers().len());
    for (spec, (base, delta)) in theta
        .specs()
        .iter()
        .zip(theta.layers().iter().zip(offsets.offsets()))
    {
        check_shape(&spec.name, &spec.shape, delta.dims())?;
        let group = offsets
            .grouping()
            .group_of(spec.index)
            .expect("validated grouping");
        let alpha = coeffs.for_group(group);
        if alpha == 0.0 || !offsets.is_active(group) {
            layers.push(base.clone());
        } else {
            let scale = ((delta.to_dtype(base.dtype())? * alpha)? + 1.0)?;
            layers.push((base * scale)?);
        }
    }
    theta.with_layers(layers)
}

/// Source/target prompt pair for one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub src: String,
    pub tgt: String,
}

impl PromptSpec {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

/// Seed used for a level's noise draw, so levels perturb independently.
pub fn level_seed(seed: u64, level: Level) -> u64 {
    let salt = match level {
        Level::Shape => 0x5eed_0001,
        Level::Attribute => 0x5eed_0002,
        Level::Style => 0x5eed_0003,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

/// Encodes, perturbs (when `sigma > 0`), predicts and applies in one call.
pub fn compose_edit(
    theta: &GeneratorParams,
    hyper: &HyperModule,
    prompts: &BTreeMap<Level, PromptSpec>,
    coeffs: &EditCoefficients,
    sigma: f64,
    seed: u64,
    embedder: &dyn JointEmbedder,
) -> Result<GeneratorParams> {
    let offsets = edit_offsets(hyper, prompts, sigma, seed, embedder)?;
    apply_offsets(theta, &offsets, coeffs)
}

/// The encode → perturb → predict part of [`compose_edit`].
pub fn edit_offsets(
    hyper: &HyperModule,
    prompts: &BTreeMap<Level, PromptSpec>,
    sigma: f64,
    seed: u64,
    embedder: &dyn JointEmbedder,
) -> Result<OffsetSet> {
    if prompts.is_empty() {
        return Err(invalid("an edit needs at least one level"));
    }
    let mut directions = BTreeMap::new();
    for (&level, p) in prompts {
        let f = encode_direction(&p.src, &p.tgt, level, embedder)?;
        directions.insert(level, perturb_direction(&f, sigma, level_seed(seed, level))?);
    }
    hyper.predict_offsets(&directions)
}

#[cfg(test)]
mod tests;
