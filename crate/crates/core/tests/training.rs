mod common;

use std::sync::Arc;

use candle_core::{DType, Tensor};
use hyperedit::encoders::{Encoders, JointEmbedder};
use hyperedit::groups::Level;
use hyperedit::hyper::HyperModule;
use hyperedit::training::{train, LossWeights, PromptPair, StepOutcome, Trainer, TrainingConfig};
use hyperedit::Error;

fn config(steps: usize) -> TrainingConfig {
    let mut c = TrainingConfig::new(LossWeights::default());
    c.steps = steps;
    c.views = 2;
    c.render_steps = 4;
    c.prompts = vec![
        PromptPair::new(Level::Style, "photo", "Pixar"),
        PromptPair::new(Level::Shape, "face", "fat face"),
    ];
    c
}

fn hyper_bits(h: &HyperModule) -> Vec<Vec<u64>> {
    h.named_tensors().values().map(common::bits).collect()
}

fn scrambled(g: &hyperedit::generator::GeneratorParams) -> HyperModule {
    let h = common::hyper_for(g, 2);
    common::scramble(&h, 9, 0.02);
    h
}

#[test]
fn config_requires_every_loss_weight() {
    let full = "lambda_dir = 1.0\nlambda_id = 0.3\nlambda_region = 0.5\n";
    assert!(TrainingConfig::from_toml(full).is_ok());
    for key in ["lambda_dir", "lambda_id", "lambda_region"] {
        let text: String = full.lines().filter(|l| !l.starts_with(key)).map(|l| format!("{l}\n")).collect();
        match TrainingConfig::from_toml(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains(key), "{msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }
    assert!(TrainingConfig::from_toml(&format!("{full}unknown = 1\n")).is_err());
}

#[test]
fn trainer_needs_prompts() {
    let g = common::small_generator(0, DType::F32);
    let mut c = config(1);
    c.prompts.clear();
    assert!(Trainer::new(g.clone(), common::hyper_for(&g, 0), Encoders::stub(0), c).is_err());
}

#[test]
fn zero_steps_return_the_input_hypernetwork() {
    let g = common::small_generator(0, DType::F32);
    let h = scrambled(&g);
    let before = hyper_bits(&h);
    let out = train(&g, h, &Encoders::stub(0), &config(0), None).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(hyper_bits(&out.hyper), before);
}

#[test]
fn zero_learning_rate_leaves_the_hypernetwork_unchanged() {
    let g = common::small_generator(0, DType::F32);
    let h = scrambled(&g);
    let before = hyper_bits(&h);
    let mut c = config(2);
    c.lr = 0.0;
    let out = train(&g, h, &Encoders::stub(0), &c, None).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.aborted_steps, 0);
    assert_eq!(hyper_bits(&out.hyper), before);
    assert!(out.history.records.iter().all(|r| r.loss.total.is_finite()));
}

#[test]
fn a_step_moves_the_hypernetwork_but_not_the_generator() {
    let g = common::small_generator(0, DType::F32);
    let theta: Vec<Vec<u64>> = g.named_tensors().values().map(common::bits).collect();
    let h = scrambled(&g);
    let before = hyper_bits(&h);
    let mut trainer = Trainer::new(g.clone(), h, Encoders::stub(0), config(1)).unwrap();
    assert!(matches!(trainer.step().unwrap(), StepOutcome::Applied(_)));
    assert_ne!(hyper_bits(trainer.hyper()), before);
    let after: Vec<Vec<u64>> = g.named_tensors().values().map(common::bits).collect();
    assert_eq!(after, theta);
    assert_eq!(trainer.history().len(), 1);
    assert_eq!(trainer.steps_taken(), 1);
}

#[test]
fn training_is_deterministic() {
    let g = common::small_generator(0, DType::F32);
    let run = || train(&g, scrambled(&g), &Encoders::stub(0), &config(3), None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(hyper_bits(&a.hyper), hyper_bits(&b.hyper));
}

#[test]
fn checkpoints_and_history_are_written() {
    let g = common::small_generator(0, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(3);
    c.checkpoint_every = 2;
    let out = train(&g, scrambled(&g), &Encoders::stub(0), &c, Some(dir.path())).unwrap();
    let names: Vec<String> = out
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["hyper_2.ckpt", "hyper_3.ckpt"]);
    assert!(out.checkpoints.iter().all(|p| p.exists()));
    let csv = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "step,dir,id,region,total");
    assert!(lines[1].starts_with("1,"));
}

const DIM: usize = 512;

struct NanEmbedder;

impl JointEmbedder for NanEmbedder {
    fn dim(&self) -> usize {
        DIM
    }

    fn embed_text(&self, text: &str) -> hyperedit::Result<Vec<f64>> {
        let mut v = vec![0.0; DIM];
        v[text.len() % 2] = 1.0;
        Ok(v)
    }

    fn embed_image(&self, image: &Tensor) -> hyperedit::Result<Tensor> {
        let nan = Tensor::full(f32::NAN, DIM, image.device())?.to_dtype(image.dtype())?;
        Ok((image.sum_all()? * 0.0)?.broadcast_add(&nan)?)
    }
}

#[test]
fn non_finite_losses_abort_the_step() {
    let g = common::small_generator(0, DType::F32);
    let h = scrambled(&g);
    let before = hyper_bits(&h);
    let encoders = Encoders {
        joint: Arc::new(NanEmbedder),
        ..Encoders::stub(0)
    };
    let out = train(&g, h, &encoders, &config(2), None).unwrap();
    assert_eq!(out.aborted_steps, 2);
    assert!(out.history.records.iter().all(|r| r.aborted));
    assert_eq!(hyper_bits(&out.hyper), before);
}
