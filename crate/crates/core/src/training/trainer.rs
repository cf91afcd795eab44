use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{backprop::GradStore, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PromptPair, TrainingConfig};
use super::losses::{
    directional_loss_from_embeddings, id_loss_from_images, region_loss, zero_scalar, LossBreakdown,
};
use crate::camera::CameraPose;
use crate::checkpoint;
use crate::encoders::Encoders;
use crate::error::{invalid, Error, Result};
use crate::generator::{GeneratorParams, LatentCode};
use crate::groups::Level;
use crate::hyper::{apply_offsets, encode_direction, perturb_direction, EditCoefficients, HyperModule};
use crate::nn;

/// Everything random about one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub latent: LatentCode,
    pub pair: PromptPair,
    pub noise_seed: u64,
    /// Camera yaw for levels trained from a single view.
    pub yaw: f64,
}

/// Loss for one sample as a differentiable scalar, plus its gated terms.
pub fn sample_loss(
    theta: &GeneratorParams,
    hyper: &HyperModule,
    encoders: &Encoders,
    config: &TrainingConfig,
    sample: &StepSample,
) -> Result<(Tensor, LossBreakdown)> {
    let level = sample.pair.level;
    let weights = config.weights_for(level);
    let sigma = config.sigma.unwrap_or(hyper.config().noise_scale);
    let joint = encoders.joint.as_ref();

    let direction = encode_direction(&sample.pair.src, &sample.pair.tgt, level, joint)?;
    let noisy = perturb_direction(&direction, sigma, sample.noise_seed)?;
    let offsets = hyper.predict_offsets(&BTreeMap::from([(level, noisy)]))?;
    let edited = apply_offsets(theta, &offsets, &EditCoefficients::default())?;

    let steps = if config.render_steps == 0 {
        theta.config().render_steps
    } else {
        config.render_steps
    };
    let use_id = weights.lambda_id > 0.0;
    let poses: Vec<CameraPose> = if use_id {
        config.view_yaws().into_iter().map(CameraPose::with_yaw).collect()
    } else {
        vec![CameraPose::with_yaw(sample.yaw)]
    };
    let main = poses.len() / 2;

    // The mapping network is frozen, so both parameter sets share `w`.
    let w = theta.map_latent(&sample.latent)?;
    let mut base_imgs = Vec::with_capacity(poses.len());
    let mut edited_imgs = Vec::with_capacity(poses.len());
    for pose in &poses {
        let (base, edit) = theta.render_pair(&edited, &w, pose, steps)?;
        base_imgs.push(base.image.detach());
        edited_imgs.push(edit.image);
    }

    let e_base = joint.embed_image(&base_imgs[main])?;
    let e_edit = joint.embed_image(&edited_imgs[main])?;
    let dir = directional_loss_from_embeddings(&direction.vector, &e_base, &e_edit)?;

    let id = if use_id {
        id_loss_from_images(encoders.identity.as_ref(), &base_imgs, &edited_imgs)?
    } else {
        zero_scalar(theta.dtype())?
    };
    let region = if weights.lambda_region > 0.0 {
        region_loss(
            encoders.segmenter.as_ref(),
            joint,
            &sample.pair.tgt,
            &base_imgs[main],
            &edited_imgs[main],
        )?
    } else {
        zero_scalar(theta.dtype())?
    };

    let total = ((&dir * config.lambda_dir)?
        + (&id * config.lambda_id)?
        + (&region * config.lambda_region)?)?;
    let breakdown = super::losses::total_loss(
        nn::scalar_f64(&dir)?,
        nn::scalar_f64(&id)?,
        nn::scalar_f64(&region)?,
        &config.weights(),
    );
    Ok((total, breakdown))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    pub aborted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,dir,id,region,total\n");
        for r in &self.records {
            let l = r.loss;
            let _ = writeln!(out, "{},{},{},{},{}", r.step, l.dir, l.id, l.region, l.total);
        }
        out
    }

    /// Mean directional loss over the records in `range` (by position).
    pub fn mean_dir(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.loss.dir).sum::<f64>() / slice.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied(LossBreakdown),
    /// Non-finite loss or gradient; the hypernetwork was left unchanged.
    Aborted { loss: LossBreakdown, reason: String },
}

impl StepOutcome {
    pub fn loss(&self) -> LossBreakdown {
        match self {
            StepOutcome::Applied(l) | StepOutcome::Aborted { loss: l, .. } => *l,
        }
    }
}

/// Adam training of a hypernetwork against a frozen generator.
pub struct Trainer {
    theta: GeneratorParams,
    hyper: HyperModule,
    encoders: Encoders,
    config: TrainingConfig,
    levels: Vec<Level>,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    step: usize,
    history: LossHistory,
}

impl Trainer {
    pub fn new(
        theta: GeneratorParams,
        hyper: HyperModule,
        encoders: Encoders,
        config: TrainingConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.prompts.is_empty() {
            return Err(invalid("training needs at least one prompt pair"));
        }
        if theta.dtype() != hyper.dtype() {
            return Err(invalid("generator and hypernetwork dtypes differ"));
        }
        if theta.specs() != hyper.specs().as_slice() {
            return Err(Error::IncompatibleCheckpoints(
                "hypernetwork layers do not match the generator".into(),
            ));
        }
        let mut levels: Vec<Level> = config.prompts.iter().map(|p| p.level).collect();
        levels.sort();
        levels.dedup();
        let optimizer = AdamW::new(
            hyper.vars(),
            ParamsAdamW {
                lr: config.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            theta,
            hyper,
            encoders,
            config,
            levels,
            optimizer,
            rng,
            step: 0,
            history: LossHistory::default(),
        })
    }

    pub fn hyper(&self) -> &HyperModule {
        &self.hyper
    }

    pub fn into_hyper(self) -> HyperModule {
        self.hyper
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Draws a batch: per latent, one random pair for every level present.
    pub fn draw_samples(&mut self) -> Vec<StepSample> {
        let dim = self.theta.config().latent_dim;
        let range = self.config.yaw_range;
        let mut samples = Vec::new();
        for _ in 0..self.config.batch {
            let latent = LatentCode::sample(dim, &mut self.rng);
            for &level in &self.levels {
                let pool: Vec<&PromptPair> =
                    self.config.prompts.iter().filter(|p| p.level == level).collect();
                let pair = pool[self.rng.gen_range(0..pool.len())].clone();
                let noise_seed = self.rng.next_u64();
                let yaw = if range > 0.0 {
                    self.rng.gen_range(-range..=range)
                } else {
                    0.0
                };
                samples.push(StepSample {
                    latent: latent.clone(),
                    pair,
                    noise_seed,
                    yaw,
                });
            }
        }
        samples
    }

    /// Mean loss over a set of samples, with its averaged breakdown.
    pub fn batch_loss(&self, samples: &[StepSample]) -> Result<(Tensor, LossBreakdown)> {
        let mut totals = Vec::with_capacity(samples.len());
        let mut sum = LossBreakdown::default();
        for s in samples {
            let (t, b) = sample_loss(&self.theta, &self.hyper, &self.encoders, &self.config, s)?;
            totals.push(t);
            sum.dir += b.dir;
            sum.id += b.id;
            sum.region += b.region;
        }
        let n = samples.len() as f64;
        let loss = (Tensor::stack(&totals, 0)?.sum_all()? / n)?;
        let mean = super::losses::total_loss(sum.dir / n, sum.id / n, sum.region / n, &self.config.weights());
        Ok((loss, mean))
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let samples = self.draw_samples();
        self.step += 1;
        let (loss, breakdown) = self.batch_loss(&samples)?;
        let outcome = if !breakdown.is_finite() {
            StepOutcome::Aborted {
                loss: breakdown,
                reason: "non-finite loss".into(),
            }
        } else {
            let grads = loss.backward()?;
            if grads_finite(&self.hyper, &grads)? {
                self.optimizer.step(&grads)?;
                StepOutcome::Applied(breakdown)
            } else {
                StepOutcome::Aborted {
                    loss: breakdown,
                    reason: "non-finite gradient".into(),
                }
            }
        };
        if let StepOutcome::Aborted { reason, .. } = &outcome {
            log::warn!("step {} aborted: {reason}", self.step);
        }
        self.history.records.push(LossRecord {
            step: self.step,
            loss: outcome.loss(),
            aborted: matches!(outcome, StepOutcome::Aborted { .. }),
        });
        Ok(outcome)
    }
}

fn grads_finite(hyper: &HyperModule, grads: &GradStore) -> Result<bool> {
    for var in hyper.vars() {
        if let Some(g) = grads.get(&var) {
            let s = nn::scalar_f64(&g.sqr()?.sum_all()?)?;
            if !s.is_finite() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub hyper: HyperModule,
    pub history: LossHistory,
    pub aborted_steps: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs `config.steps` steps. With an output directory, writes
/// `loss_history.csv` and `hyper_{step}.ckpt` files there.
pub fn train(
    theta: &GeneratorParams,
    hyper: HyperModule,
    encoders: &Encoders,
    config: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(theta.clone(), hyper, encoders.clone(), config.clone())?;
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    for _ in 0..config.steps {
        let outcome = trainer.step()?;
        let step = trainer.steps_taken();
        log::debug!("step {step}: {:?}", outcome.loss());
        let due = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
        if let (Some(dir), true) = (out_dir, due || step == config.steps) {
            let path = dir.join(format!("hyper_{step}.ckpt"));
            checkpoint::save_hyper(trainer.hyper(), &path)?;
            checkpoints.push(path);
        }
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("loss_history.csv"), trainer.history().to_csv())?;
    }
    let history = trainer.history().clone();
    let aborted_steps = history.records.iter().filter(|r| r.aborted).count();
    Ok(TrainOutcome {
        hyper: trainer.into_hyper(),
        history,
        aborted_steps,
        checkpoints,
    })
}
