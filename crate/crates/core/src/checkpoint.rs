//! Safetensors checkpoints for generators and hypernetworks.
//!
//! Tensors are stored as little-endian f64. A JSON manifest describing the
//! model lives in the file's `__metadata__` under the `manifest` key.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorParams, LayerSpec};
use crate::groups::GroupAssignment;
use crate::hyper::{HyperConfig, HyperModule};
use crate::nn;

pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_KIND: &str = "generator";
pub const HYPER_KIND: &str = "hypernetwork";
const MANIFEST_KEY: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub kind: String,
    pub version: u32,
    pub config: GeneratorConfig,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperManifest {
    pub kind: String,
    pub version: u32,
    pub config: HyperConfig,
    pub grouping: GroupAssignment,
    pub layers: Vec<LayerSpec>,
}

impl GeneratorManifest {
    pub fn of(params: &GeneratorParams) -> Self {
        Self {
            kind: GENERATOR_KIND.into(),
            version: FORMAT_VERSION,
            config: params.config().clone(),
            layers: params.specs().to_vec(),
        }
    }
}

impl HyperManifest {
    pub fn of(hyper: &HyperModule) -> Self {
        Self {
            kind: HYPER_KIND.into(),
            version: FORMAT_VERSION,
            config: hyper.config().clone(),
            grouping: hyper.grouping().clone(),
            layers: hyper.specs(),
        }
    }
}

fn write_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>, manifest: String) -> Result<()> {
    let mut buffers = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let bytes: Vec<u8> = nn::to_vec_f64(t)?
            .into_iter()
            .flat_map(f64::to_le_bytes)
            .collect();
        buffers.push((name.clone(), t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([(MANIFEST_KEY.to_string(), manifest)]);
    let bytes = safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_tensors(path: &Path, dtype: DType) -> Result<(BTreeMap<String, Tensor>, String)> {
    let bytes = std::fs::read(path)?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let manifest = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("{} has no manifest", path.display())))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is not f64")));
        }
        let values: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.insert(name, nn::tensor_from_f64(&values, view.shape(), dtype, &Device::Cpu)?);
    }
    Ok((out, manifest))
}

fn check_version(kind: &str, expected_kind: &str, version: u32) -> Result<()> {
    if kind != expected_kind {
        return Err(Error::Checkpoint(format!("expected a {expected_kind} checkpoint, found `{kind}`")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn save_generator(params: &GeneratorParams, path: &Path) -> Result<()> {
    let manifest = serde_json::to_string(&GeneratorManifest::of(params))?;
    write_tensors(path, &params.named_tensors(), manifest)
}

pub fn load_generator(path: &Path, dtype: DType) -> Result<(GeneratorParams, GeneratorManifest)> {
    let (tensors, manifest) = read_tensors(path, dtype)?;
    let manifest: GeneratorManifest = serde_json::from_str(&manifest)?;
    check_version(&manifest.kind, GENERATOR_KIND, manifest.version)?;
    let params = GeneratorParams::from_named(manifest.config.clone(), tensors)?;
    if params.specs() != manifest.layers.as_slice() {
        return Err(Error::Checkpoint("manifest layer list disagrees with its config".into()));
    }
    Ok((params, manifest))
}

pub fn save_hyper(hyper: &HyperModule, path: &Path) -> Result<()> {
    let manifest = serde_json::to_string(&HyperManifest::of(hyper))?;
    write_tensors(path, &hyper.named_tensors(), manifest)
}

pub fn load_hyper(path: &Path, dtype: DType) -> Result<(HyperModule, HyperManifest)> {
    let (tensors, manifest) = read_tensors(path, dtype)?;
    let manifest: HyperManifest = serde_json::from_str(&manifest)?;
    check_version(&manifest.kind, HYPER_KIND, manifest.version)?;
    let hyper = HyperModule::from_named(
        manifest.config.clone(),
        &manifest.layers,
        manifest.grouping.clone(),
        tensors,
        dtype,
    )?;
    Ok((hyper, manifest))
}

/// Lists every way a hypernetwork manifest disagrees with a generator.
pub fn manifest_diff(generator: &GeneratorManifest, hyper: &HyperManifest) -> Vec<String> {
    let mut diffs = Vec::new();
    if generator.layers.len() != hyper.layers.len() {
        diffs.push(format!(
            "layer count: generator {} vs hypernetwork {}",
            generator.layers.len(),
            hyper.layers.len()
        ));
    }
    for (g, h) in generator.layers.iter().zip(&hyper.layers) {
        if g.name != h.name {
            diffs.push(format!("layer {}: name `{}` vs `{}`", g.index, g.name, h.name));
        }
        if g.shape != h.shape {
            diffs.push(format!("layer {}: shape {:?} vs {:?}", g.index, g.shape, h.shape));
        }
    }
    if generator.config.groups != hyper.grouping {
        diffs.push(format!(
            "grouping: generator {:?} vs hypernetwork {:?}",
            generator.config.groups, hyper.grouping
        ));
    }
    diffs
}

pub fn check_compatible(generator: &GeneratorManifest, hyper: &HyperManifest) -> Result<()> {
    let diffs = manifest_diff(generator, hyper);
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompatibleCheckpoints(diffs.join("; ")))
    }
}

/// Hex sha256 over the two manifests' canonical JSON.
pub fn manifest_hash(generator: &GeneratorManifest, hyper: &HyperManifest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(generator)?);
    h.update(serde_json::to_vec(hyper)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
