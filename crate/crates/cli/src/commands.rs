//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use hyperedit::camera::CameraPose;
use hyperedit::checkpoint;
use hyperedit::encoders::{EncoderConfig, Encoders};
use hyperedit::evaluation::{
    build_report, depth_consistency, id_consistency, EvalOptions, IdMode, ReportConfig, DEFAULT_VISIBILITY_FACTOR,
    SIDE_YAW_RANGE,
};
use hyperedit::generator::GeneratorConfig;
use hyperedit::groups::Level;
use hyperedit::hyper::{compose_edit, EditCoefficients, HyperConfig, HyperModule, PromptSpec};
use hyperedit::pretrain::{pretrain, PretrainConfig};
use hyperedit::training::{train, TrainingConfig};
use serde::Deserialize;

use crate::error::CliError;
use crate::grid::{png_bytes, tile};
use crate::model::{render_row, run_edit, run_sweep, Model};
use crate::request::{parse_alphas, parse_list, parse_poses, parse_prompts, EditRequest};

#[derive(Debug, Parser)]
#[command(name = "hyperedit", version, about = "Text-directed edits of a small 3D-aware generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a fresh generator to the procedural face family.
    Pretrain(PretrainArgs),
    /// Train a hypernetwork against a frozen generator.
    Train(TrainArgs),
    /// Render an edit over a pose sweep.
    Edit(EditArgs),
    /// Measure 3D consistency and write a report.
    Eval(EvalArgs),
    /// Render the unedited generator.
    Render(RenderArgs),
    /// Serve edits over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// TOML file with pretraining settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub generator_ckpt: PathBuf,
    /// Start from this hypernetwork instead of a fresh one.
    #[arg(long)]
    pub hyper_ckpt: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub generator_ckpt: PathBuf,
    #[arg(long)]
    pub hyper_ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-group coefficients `coarse,medium,fine`.
    #[arg(long, default_value = "1,1,1", allow_hyphen_values = true)]
    pub alphas: String,
    /// `level:src:tgt`, once per level.
    #[arg(long, required = true)]
    pub prompts: Vec<String>,
    /// Camera yaws in radians.
    #[arg(long, default_value = "-0.4,-0.2,0,0.2,0.4", allow_hyphen_values = true)]
    pub poses: String,
    /// Add a row rendered by the unedited generator.
    #[arg(long)]
    pub with_base: bool,
    /// Render one column per value (scaling `--alphas`) at the first pose.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_sweep: Option<String>,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub generator_ckpt: PathBuf,
    /// Needed when the config has an `[edit]` section.
    #[arg(long)]
    pub hyper_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub generator_ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "-0.4,-0.2,0,0.2,0.4", allow_hyphen_values = true)]
    pub poses: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub generator_ckpt: PathBuf,
    #[arg(long)]
    pub hyper_ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Concurrent render workers.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Edit(a) => cmd_edit(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    toml::from_str(&read(path)?).map_err(|e| {
        CliError::Core(hyperedit::Error::Config(format!("{}: {}", path.display(), e.message())))
    })
}

fn write_png(path: &Path, rows: &[Vec<image::RgbImage>]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, png_bytes(&tile(rows)?)?)?;
    Ok(())
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<(), CliError> {
    let mut opts: PretrainConfig = match &args.config {
        Some(p) => parse_toml(p)?,
        None => PretrainConfig::default(),
    };
    if let Some(steps) = args.steps {
        opts.steps = steps;
    }
    opts.seed = args.seed;
    let (params, history) = pretrain(GeneratorConfig::default(), args.seed, &opts)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save_generator(&params, &args.out)?;
    if let Some(last) = history.last() {
        log::info!("pretraining finished after {} steps, loss {last:.5}", history.len());
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = TrainingConfig::from_toml(&read(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (generator, _) = checkpoint::load_generator(&args.generator_ckpt, DType::F32)?;
    let hyper = match &args.hyper_ckpt {
        Some(p) => {
            let (h, manifest) = checkpoint::load_hyper(p, DType::F32)?;
            checkpoint::check_compatible(&checkpoint::GeneratorManifest::of(&generator), &manifest)?;
            h
        }
        None => HyperModule::new(
            HyperConfig::default(),
            generator.specs(),
            generator.config().groups.clone(),
            config.seed,
            DType::F32,
        )?,
    };
    let encoders = Encoders::from_config(&EncoderConfig::default())?;
    let outcome = train(&generator, hyper, &encoders, &config, Some(&args.out))?;
    checkpoint::save_hyper(&outcome.hyper, &args.out.join("hyper.ckpt"))?;
    if outcome.aborted_steps > 0 {
        log::warn!("{} of {} steps were aborted", outcome.aborted_steps, config.steps);
    }
    Ok(())
}

pub fn cmd_edit(args: &EditArgs) -> Result<(), CliError> {
    let mut request = EditRequest::new(parse_prompts(&args.prompts)?);
    request.alphas = parse_alphas(&args.alphas)?;
    request.seed = args.seed;
    request.poses = parse_poses(&args.poses)?;
    request.with_base = args.with_base;
    request.validate()?;
    let model = Model::load(&args.generator_ckpt, &args.hyper_ckpt)?;
    let rows = match &args.alpha_sweep {
        Some(sweep) => {
            let sweep = parse_list(sweep, "--alpha-sweep")?;
            let mut rows = Vec::new();
            if request.with_base {
                let mut first = request.clone();
                first.poses.truncate(1);
                let base = render_row(&model.generator, &first)?.remove(0);
                rows.push(vec![base; sweep.len()]);
            }
            rows.push(run_sweep(&model, &request, &sweep)?);
            rows
        }
        None => {
            let out = run_edit(&model, &request)?;
            out.base.into_iter().chain([out.edited]).collect()
        }
    };
    write_png(&args.out, &rows)
}

/// Settings for `eval`, read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_identities")]
    pub n_identities: usize,
    #[serde(default)]
    pub render_steps: usize,
    /// Fixed side-view yaw instead of random draws.
    #[serde(default)]
    pub side_yaw: Option<f64>,
    #[serde(default = "default_factor")]
    pub visibility_factor: f64,
    /// `cross_view` or `edited_vs_base`.
    #[serde(default = "default_id_mode")]
    pub id_mode: String,
    #[serde(default)]
    pub edit: Option<EvalEdit>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEdit {
    pub prompts: BTreeMap<Level, PromptSpec>,
    #[serde(default)]
    pub alphas: EditCoefficients,
}

fn default_identities() -> usize {
    20
}

fn default_factor() -> f64 {
    DEFAULT_VISIBILITY_FACTOR
}

fn default_id_mode() -> String {
    "cross_view".into()
}

impl Default for EvalConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut config: EvalConfig = match &args.config {
        Some(p) => parse_toml(p)?,
        None => EvalConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (base, _) = checkpoint::load_generator(&args.generator_ckpt, DType::F32)?;
    let encoders = Encoders::from_config(&EncoderConfig::default())?;
    let (params, hyper_name) = match &config.edit {
        Some(edit) => {
            let path = args
                .hyper_ckpt
                .as_ref()
                .ok_or_else(|| CliError::usage("the [edit] section needs --hyper-ckpt"))?;
            let model = Model::load(&args.generator_ckpt, path)?;
            let edited = compose_edit(
                &model.generator,
                &model.hyper,
                &edit.prompts,
                &edit.alphas,
                0.0,
                config.seed,
                encoders.joint.as_ref(),
            )?;
            (edited, Some(path.display().to_string()))
        }
        None => (base.clone(), None),
    };
    let mode = match config.id_mode.as_str() {
        "cross_view" => IdMode::CrossView,
        "edited_vs_base" => IdMode::EditedVsBase { base: &base },
        other => {
            return Err(CliError::Core(hyperedit::Error::Config(format!(
                "id_mode: unknown value `{other}` (cross_view or edited_vs_base)"
            ))))
        }
    };
    let opts = EvalOptions {
        render_steps: config.render_steps,
        side_yaw: config.side_yaw,
        visibility_factor: config.visibility_factor,
    };
    let depth = depth_consistency(&params, config.n_identities, config.seed, &opts)?;
    let id = id_consistency(
        &params,
        config.n_identities,
        encoders.identity.as_ref(),
        config.seed,
        mode,
        &opts,
    )?;
    for (i, reason) in depth.skip_reasons.iter().chain(&id.skip_reasons) {
        log::warn!("identity {i} skipped: {reason}");
    }
    let res = params.config().feature_res;
    let report = build_report(
        &depth,
        &id,
        ReportConfig {
            seed: config.seed,
            n_identities: config.n_identities,
            depth_resolution: res,
            id_resolution: params.config().image_res(),
            render_steps: if config.render_steps == 0 {
                params.config().render_steps
            } else {
                config.render_steps
            },
            visibility_factor: config.visibility_factor,
            side_yaw_range: SIDE_YAW_RANGE,
            side_yaw_override: config.side_yaw,
            id_mode: config.id_mode.clone(),
            generator: args.generator_ckpt.display().to_string(),
            hyper: hyper_name,
        },
    )?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&args.out, report.to_json()?)?;
    Ok(())
}

pub fn cmd_render(args: &RenderArgs) -> Result<(), CliError> {
    let (generator, _) = checkpoint::load_generator(&args.generator_ckpt, DType::F32)?;
    let poses: Vec<CameraPose> = parse_poses(&args.poses)?;
    let mut request = EditRequest::new(BTreeMap::new());
    request.seed = args.seed;
    request.poses = poses;
    write_png(&args.out, &[render_row(&generator, &request)?])
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let model = Model::load(&args.generator_ckpt, &args.hyper_ckpt)?;
    let state = crate::service::ServiceState::new(model, args.workers)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::service::serve(state, args.bind))?;
    Ok(())
}
