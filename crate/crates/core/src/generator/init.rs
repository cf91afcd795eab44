use std::collections::BTreeMap;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::GeneratorConfig;
use crate::error::Result;

/// Names and shapes of every non-editable tensor.
pub(crate) fn frozen_shapes(c: &GeneratorConfig) -> Vec<(String, Vec<usize>)> {
    let l = c.latent_dim;
    let h = c.hidden_width;
    let mut out = Vec::new();
    for k in 0..c.mapping_layers {
        out.push((format!("mapping_{k}.weight"), vec![l, l]));
        out.push((format!("mapping_{k}.bias"), vec![l]));
    }
    for j in 1..=c.editable_layers() {
        for part in ["freq", "phase"] {
            out.push((format!("film_{j}.{part}_weight"), vec![h, l]));
            out.push((format!("film_{j}.{part}_bias"), vec![h]));
        }
    }
    out.push(("sdf_head.weight".into(), vec![1, h]));
    out.push(("sdf_head.bias".into(), vec![1]));
    out.push(("rgb_head.weight".into(), vec![3, h]));
    out.push(("rgb_head.bias".into(), vec![3]));
    out.push(("feat_head.weight".into(), vec![c.feature_dim - 3, h]));
    out.push(("feat_head.bias".into(), vec![c.feature_dim - 3]));
    out.push(("log_beta".into(), vec![1]));
    let mut cin = c.feature_dim;
    for (s, &cout) in c.up_channels.iter().enumerate() {
        out.push((format!("up_{s}.weight"), vec![cout, cin, 3, 3]));
        out.push((format!("up_{s}.bias"), vec![cout]));
        cin = cout;
    }
    out.push(("to_rgb.weight".into(), vec![3, cin, 1, 1]));
    out.push(("to_rgb.bias".into(), vec![3]));
    out
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    fn normal(&mut self, std: f64, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let v: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.0)).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }

    fn uniform(&mut self, bound: f64, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| self.0.gen_range(-bound..=bound)).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }

    fn constant(&self, value: f64, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::full(value, shape, &Device::Cpu)?)
    }
}

/// Sine-network style initialisation (f64, CPU).
pub(crate) fn initial_tensors(c: &GeneratorConfig, seed: u64) -> Result<BTreeMap<String, Tensor>> {
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(seed));
    let mut out = BTreeMap::new();
    let l = c.latent_dim as f64;

    for spec in c.layer_specs() {
        let rows = spec.shape[0];
        let fan_in = spec.shape[1] - 1;
        let (wb, bb) = if spec.index == 1 {
            (c.first_omega / fan_in as f64, 1.0)
        } else {
            ((6.0 / fan_in as f64).sqrt(), 1.0 / (fan_in as f64).sqrt())
        };
        let w = s.uniform(wb, &[rows, fan_in])?;
        let b = s.uniform(bb, &[rows, 1])?;
        out.insert(spec.name.clone(), Tensor::cat(&[w, b], 1)?);
    }

    for (name, shape) in frozen_shapes(c) {
        let t = if name.starts_with("mapping_") {
            if name.ends_with("weight") {
                s.normal(1.0 / l.sqrt(), &shape)?
            } else {
                s.normal(0.1, &shape)?
            }
        } else if name.starts_with("film_") {
            match name.rsplit('.').next().unwrap_or_default() {
                "freq_weight" => s.normal(0.2 / l.sqrt(), &shape)?,
                "freq_bias" => s.constant(1.0, &shape)?,
                "phase_weight" => s.normal(1.0 / l.sqrt(), &shape)?,
                _ => s.uniform(0.5, &shape)?,
            }
        } else if name == "sdf_head.weight" {
            s.normal(0.01, &shape)?
        } else if name == "rgb_head.weight" {
            s.normal(0.5 / (c.hidden_width as f64).sqrt(), &shape)?
        } else if name == "feat_head.weight" {
            s.normal(1.0 / (c.hidden_width as f64).sqrt(), &shape)?
        } else if name == "log_beta" {
            s.constant(c.beta_init.ln(), &shape)?
        } else if name.ends_with(".weight") {
            // Upsampler convolutions.
            let fan_in: usize = shape[1..].iter().product();
            s.normal((2.0 / fan_in as f64).sqrt(), &shape)?
        } else {
            s.constant(0.0, &shape)?
        };
        out.insert(name, t);
    }
    Ok(out)
}
