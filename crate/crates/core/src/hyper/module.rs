use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DirectionFeature, OffsetSet};
use crate::error::{invalid, Error, Result};
use crate::generator::{check_shape, LayerSpec};
use crate::groups::{GroupAssignment, Level};
use crate::nn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub gain_init: f64,
    /// Std of the training-time noise added to direction features.
    pub noise_scale: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            hidden: 128,
            gain_init: 0.1,
            noise_scale: 0.05,
        }
    }
}

/// `h_j`: two tanh hidden layers, a zero-initialised output layer reshaped
/// to the target layer's parameter shape, and a learnable scalar gain.
#[derive(Debug, Clone)]
pub struct LayerPredictor {
    spec: LayerSpec,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
    gain: Var,
}

const PARTS: [&str; 7] = ["w1", "b1", "w2", "b2", "w3", "b3", "gain"];

impl LayerPredictor {
    fn parts(&self) -> [&Var; 7] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.gain]
    }

    fn part_shapes(spec: &LayerSpec, cfg: &HyperConfig) -> [Vec<usize>; 7] {
        let (d, h, n) = (cfg.embed_dim, cfg.hidden, spec.numel());
        [
            vec![h, d],
            vec![h],
            vec![h, h],
            vec![h],
            vec![n, h],
            vec![n],
            vec![1],
        ]
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// `input: (1, embed_dim)` → offset tensor with the layer's shape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let h = nn::linear(input, &self.w1, &self.b1)?.tanh()?;
        let h = nn::linear(&h, &self.w2, &self.b2)?.tanh()?;
        let out = nn::linear(&h, &self.w3, &self.b3)?.broadcast_mul(self.gain.as_tensor())?;
        Ok(out.reshape(self.spec.shape.as_slice())?)
    }
}

/// One small offset predictor per editable layer, partitioned into the
/// coarse / medium / fine controllers by `grouping`.
#[derive(Debug, Clone)]
pub struct HyperModule {
    config: HyperConfig,
    grouping: GroupAssignment,
    predictors: Vec<LayerPredictor>,
    dtype: DType,
}

impl HyperModule {
    pub fn new(
        config: HyperConfig,
        specs: &[LayerSpec],
        grouping: GroupAssignment,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        grouping.validate(specs.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut predictors = Vec::with_capacity(specs.len());
        for spec in specs {
            let shapes = LayerPredictor::part_shapes(spec, &config);
            let mut uniform = |bound: f64, shape: &[usize]| -> Result<Var> {
                let n: usize = shape.iter().product();
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                make_var(Tensor::from_vec(v, shape, &Device::Cpu)?, dtype)
            };
            // Inputs are whole embedding differences of norm ~1, so the first
            // layer is scaled to give unit-variance pre-activations per unit
            // input norm rather than per input coordinate.
            let w1 = uniform(3f64.sqrt(), &shapes[0])?;
            let b1 = make_var(Tensor::zeros(shapes[1].as_slice(), DType::F64, &Device::Cpu)?, dtype)?;
            let w2 = uniform((3.0 / config.hidden as f64).sqrt(), &shapes[2])?;
            let zeros = |shape: &[usize]| -> Result<Var> {
                make_var(Tensor::zeros(shape, DType::F64, &Device::Cpu)?, dtype)
            };
            let b2 = zeros(&shapes[3])?;
            let w3 = zeros(&shapes[4])?;
            let b3 = zeros(&shapes[5])?;
            let gain = make_var(Tensor::full(config.gain_init, 1, &Device::Cpu)?, dtype)?;
            predictors.push(LayerPredictor {
                spec: spec.clone(),
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
                gain,
            });
        }
        Ok(Self {
            config,
            grouping,
            predictors,
            dtype,
        })
    }

    pub fn config(&self) -> &HyperConfig {
        &self.config
    }

    pub fn grouping(&self) -> &GroupAssignment {
        &self.grouping
    }

    pub fn predictors(&self) -> &[LayerPredictor] {
        &self.predictors
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.predictors.iter().map(|p| p.spec.clone()).collect()
    }

    /// All trainable variables with stable names `"{layer}.{part}"`.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for p in &self.predictors {
            for (part, v) in PARTS.iter().zip(p.parts()) {
                out.push((format!("{}.{part}", p.spec.name), v.clone()));
            }
        }
        out
    }

    pub fn vars(&self) -> Vec<Var> {
        self.named_vars().into_iter().map(|(_, v)| v).collect()
    }

    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().clone()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Independent copy: fresh variables holding the current values.
    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_named(
            self.config.clone(),
            &self.specs(),
            self.grouping.clone(),
            self.named_tensors()
                .into_iter()
                .map(|(k, t)| Ok((k, t.copy()?)))
                .collect::<Result<_>>()?,
            self.dtype,
        )
    }

    pub fn from_named(
        config: HyperConfig,
        specs: &[LayerSpec],
        grouping: GroupAssignment,
        mut named: BTreeMap<String, Tensor>,
        dtype: DType,
    ) -> Result<Self> {
        grouping.validate(specs.len())?;
        let mut predictors = Vec::with_capacity(specs.len());
        for spec in specs {
            let shapes = LayerPredictor::part_shapes(spec, &config);
            let mut take = |i: usize| -> Result<Var> {
                let key = format!("{}.{}", spec.name, PARTS[i]);
                let t = named
                    .remove(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing hyper tensor `{key}`")))?;
                check_shape(&key, &shapes[i], t.dims())?;
                make_var(t, dtype)
            };
            predictors.push(LayerPredictor {
                spec: spec.clone(),
                w1: take(0)?,
                b1: take(1)?,
                w2: take(2)?,
                b2: take(3)?,
                w3: take(4)?,
                b3: take(5)?,
                gain: take(6)?,
            });
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected hyper tensor `{extra}`")));
        }
        Ok(Self {
            config,
            grouping,
            predictors,
            dtype,
        })
    }

    /// Offsets for every requested level's layer group; all other layers get
    /// exact zeros.
    pub fn predict_offsets(&self, directions: &BTreeMap<Level, DirectionFeature>) -> Result<OffsetSet> {
        for (level, f) in directions {
            if f.level() != *level {
                return Err(Error::LevelMismatch {
                    expected: level.to_string(),
                    actual: f.level().to_string(),
                });
            }
            if f.vector.len() != self.config.embed_dim {
                return Err(invalid(format!(
                    "direction has {} dims, hyper-module expects {}",
                    f.vector.len(),
                    self.config.embed_dim
                )));
            }
        }
        let device = Device::Cpu;
        let mut inputs = BTreeMap::new();
        for (level, f) in directions {
            let t = nn::tensor_from_f64(&f.vector, &[1, f.vector.len()], self.dtype, &device)?;
            inputs.insert(level.group(), t);
        }
        let mut offsets = Vec::with_capacity(self.predictors.len());
        for p in &self.predictors {
            let group = self
                .grouping
                .group_of(p.spec.index)
                .expect("grouping validated against specs");
            let off = match inputs.get(&group) {
                Some(x) => p.forward(x)?,
                None => Tensor::zeros(p.spec.shape.as_slice(), self.dtype, &device)?,
            };
            offsets.push(off);
        }
        OffsetSet::new(self.specs(), self.grouping.clone(), offsets, directions.clone())
    }
}

fn make_var(t: Tensor, dtype: DType) -> Result<Var> {
    Ok(Var::from_tensor(&t.to_dtype(dtype)?.copy()?)?)
}
