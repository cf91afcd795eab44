use candle_core::{DType, Device, Tensor, D};

use super::{GeneratorParams, MappedLatent, RadianceField};
use crate::error::Result;
use crate::nn;

/// FiLM-modulated sine MLP for a fixed latent.
///
/// Layer `j` computes `sin(freq_j(w) * (W_j h + b_j) + phase_j(w))`. The
/// modulation is folded into the weights once per latent so each layer costs
/// a single matmul over the point batch.
pub struct NeuralField<'a> {
    params: &'a GeneratorParams,
    /// Per layer: (`W_j^T diag(freq_j)`, `b_j * freq_j + phase_j`).
    folded: Vec<(Tensor, Tensor)>,
}

impl<'a> NeuralField<'a> {
    pub(crate) fn new(params: &'a GeneratorParams, layers: &[Tensor], w: &MappedLatent) -> Result<Self> {
        let w = w.tensor().unsqueeze(0)?;
        let mut folded = Vec::with_capacity(layers.len());
        for (idx, theta) in layers.iter().enumerate() {
            let j = idx + 1;
            let film = |part: &str| -> Result<Tensor> {
                let weight = params.frozen(&format!("film_{j}.{part}_weight"));
                let bias = params.frozen(&format!("film_{j}.{part}_bias"));
                Ok(nn::linear(&w, weight, bias)?.squeeze(0)?)
            };
            let freq = film("freq")?;
            let phase = film("phase")?;
            let fan_in = theta.dim(1)? - 1;
            let weight = theta.narrow(1, 0, fan_in)?;
            let bias = theta.narrow(1, fan_in, 1)?.squeeze(1)?;
            let w_eff = weight.t()?.broadcast_mul(&freq.unsqueeze(0)?)?;
            let b_eff = ((bias * &freq)? + phase)?;
            folded.push((w_eff, b_eff));
        }
        Ok(Self { params, folded })
    }

    fn layer(&self, idx: usize, h: &Tensor) -> Result<Tensor> {
        let (w, b) = &self.folded[idx];
        nn::sin(&h.matmul(w)?.broadcast_add(b)?)
    }
}

impl RadianceField for NeuralField<'_> {
    fn feature_dim(&self) -> usize {
        self.params.config().feature_dim
    }

    fn dtype(&self) -> DType {
        self.params.dtype()
    }

    fn device(&self) -> &Device {
        self.params.device()
    }

    fn query(&self, points: &Tensor, dirs: &Tensor) -> Result<(Tensor, Tensor)> {
        self.finish(points, dirs, points, 0)
    }
}

impl NeuralField<'_> {
    /// Activations after the first `k` trunk layers.
    pub(crate) fn trunk_prefix(&self, points: &Tensor, k: usize) -> Result<Tensor> {
        let mut h = points.clone();
        for idx in 0..k {
            h = self.layer(idx, &h)?;
        }
        Ok(h)
    }

    /// Runs trunk layers `from..` on `h`, then the heads.
    fn finish(&self, points: &Tensor, dirs: &Tensor, h: &Tensor, from: usize) -> Result<(Tensor, Tensor)> {
        let p = self.params;
        let trunk = p.config().trunk_layers;
        let mut h = h.clone();
        for idx in from..trunk {
            h = self.layer(idx, &h)?;
        }
        let sdf_delta = nn::linear(&h, p.frozen("sdf_head.weight"), p.frozen("sdf_head.bias"))?.squeeze(1)?;
        let radius = points.sqr()?.sum(D::Minus1)?.sqrt()?;
        let sdf = ((sdf_delta + radius)? - p.config().sphere_prior)?;

        let view_in = Tensor::cat(&[&h, dirs], 1)?;
        let hv = self.layer(trunk, &view_in)?;
        let rgb = nn::sigmoid(&nn::linear(&hv, p.frozen("rgb_head.weight"), p.frozen("rgb_head.bias"))?)?;
        let extra = nn::linear(&hv, p.frozen("feat_head.weight"), p.frozen("feat_head.bias"))?;
        let features = Tensor::cat(&[&rgb, &extra], 1)?;
        Ok((sdf, features))
    }
}

/// A field whose first `from` trunk layers were already evaluated on the
/// exact point batch it will be queried with.
pub(crate) struct ResumedField<'a> {
    pub field: NeuralField<'a>,
    pub prefix: Tensor,
    pub from: usize,
}

impl RadianceField for ResumedField<'_> {
    fn feature_dim(&self) -> usize {
        self.field.feature_dim()
    }

    fn dtype(&self) -> DType {
        self.field.dtype()
    }

    fn device(&self) -> &Device {
        self.field.device()
    }

    fn query(&self, points: &Tensor, dirs: &Tensor) -> Result<(Tensor, Tensor)> {
        if points.dim(0)? != self.prefix.dim(0)? {
            return Err(crate::error::invalid("resumed field queried with a different point batch"));
        }
        self.field.finish(points, dirs, &self.prefix, self.from)
    }
}
