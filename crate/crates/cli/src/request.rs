//! Edit requests and the command-line syntax for their parts.

use std::collections::BTreeMap;

use hyperedit::camera::{CameraPose, DEFAULT_SWEEP_YAWS};
use hyperedit::groups::Level;
use hyperedit::hyper::{EditCoefficients, PromptSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Version of the JSON request and response schema.
pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_poses() -> Vec<CameraPose> {
    DEFAULT_SWEEP_YAWS.iter().map(|&y| CameraPose::with_yaw(y)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub prompts: BTreeMap<Level, PromptSpec>,
    #[serde(default)]
    pub alphas: EditCoefficients,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_poses")]
    pub poses: Vec<CameraPose>,
    /// Also render the unedited generator at the same poses.
    #[serde(default)]
    pub with_base: bool,
}

impl EditRequest {
    pub fn new(prompts: BTreeMap<Level, PromptSpec>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            prompts,
            alphas: EditCoefficients::default(),
            seed: 0,
            poses: default_poses(),
            with_base: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.prompts.is_empty() {
            return Err(CliError::usage("an edit needs at least one level in `prompts`"));
        }
        if self.poses.is_empty() {
            return Err(CliError::usage("`poses` must not be empty"));
        }
        self.alphas.validate().map_err(|e| CliError::usage(e.to_string()))?;
        for pose in &self.poses {
            pose.validate().map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(())
    }
}

/// `level:source text:target text`.
pub fn parse_prompt(arg: &str) -> Result<(Level, PromptSpec), CliError> {
    let mut parts = arg.splitn(3, ':');
    let (Some(level), Some(src), Some(tgt)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(CliError::usage(format!("--prompts expects level:src:tgt, got `{arg}`")));
    };
    let level: Level = level.parse().map_err(|e: hyperedit::Error| CliError::usage(e.to_string()))?;
    Ok((level, PromptSpec::new(src.trim(), tgt.trim())))
}

pub fn parse_prompts(args: &[String]) -> Result<BTreeMap<Level, PromptSpec>, CliError> {
    let mut out = BTreeMap::new();
    for arg in args {
        let (level, spec) = parse_prompt(arg)?;
        if out.insert(level, spec).is_some() {
            return Err(CliError::usage(format!("level `{level}` given more than once")));
        }
    }
    Ok(out)
}

pub fn parse_list(arg: &str, what: &str) -> Result<Vec<f64>, CliError> {
    arg.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::usage(format!("{what}: `{s}` is not a finite number")))
        })
        .collect()
}

/// `coarse,medium,fine`.
pub fn parse_alphas(arg: &str) -> Result<EditCoefficients, CliError> {
    match parse_list(arg, "--alphas")?.as_slice() {
        &[c, m, f] => Ok(EditCoefficients::new(c, m, f)),
        other => Err(CliError::usage(format!(
            "--alphas expects three values c,m,f, got {}",
            other.len()
        ))),
    }
}

pub fn parse_poses(arg: &str) -> Result<Vec<CameraPose>, CliError> {
    Ok(parse_list(arg, "--poses")?.into_iter().map(CameraPose::with_yaw).collect())
}

/// A named prompt pair offered to interactive clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePreset {
    pub name: String,
    pub level: Level,
    pub src: String,
    pub tgt: String,
}

pub const PRESET_NAMES: [&str; 7] = [
    "Painting",
    "Elf",
    "Disney Princess",
    "Ukiyo-e",
    "Pixar",
    "Renaissance",
    "Botero",
];

pub fn default_presets() -> Vec<StylePreset> {
    PRESET_NAMES
        .iter()
        .map(|name| StylePreset {
            name: (*name).into(),
            level: Level::Style,
            src: "photo".into(),
            tgt: (*name).into(),
        })
        .collect()
}
