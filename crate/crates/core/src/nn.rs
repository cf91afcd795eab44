//! Small differentiable building blocks on top of candle tensors.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, D};

use crate::error::Result;

/// `0.5 * (tanh(x / 2) + 1)`: no overflow for large |x| in either pass.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(x)?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `x @ weight^T + bias` for `x: (n, in)`, `weight: (out, in)`, `bias: (out,)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(&weight.t()?)?.broadcast_add(bias)?)
}

/// 2-D convolution with edge-replicating padding, so a constant input map
/// produces a constant output map.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let k = weight.dim(2)?;
    let pad = k / 2;
    let padded = if pad > 0 {
        x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?
    } else {
        x.clone()
    };
    let out = padded.conv2d(weight, 0, 1, 1, 1)?;
    Ok(out.broadcast_add(&bias.reshape((1, bias.dim(0)?, 1, 1))?)?)
}

/// Sine with a vectorisable f32 kernel (range reduction to `[-pi/2, pi/2]`
/// and a degree-11 polynomial, error below 1e-6). f64 uses the exact `sin`.
pub fn sin(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Sine { phase: 0.0 })?)
}

/// `sin(x + phase)`; the cosine is `phase = pi/2`.
#[derive(Debug, Clone, Copy)]
struct Sine {
    phase: f64,
}

fn sin_f32(x: f32) -> f32 {
    use std::f32::consts::{FRAC_PI_2, PI};
    const MAGIC: f32 = 12_582_912.0;
    let k = (x * (1.0 / std::f32::consts::TAU) + MAGIC) - MAGIC;
    // Two-part 2*pi so `k * 2pi` stays exact.
    let r = x - k * 6.281_25 - k * 1.935_307_2e-3;
    let r = if r > FRAC_PI_2 {
        PI - r
    } else if r < -FRAC_PI_2 {
        -PI - r
    } else {
        r
    };
    let r2 = r * r;
    let p = -2.505_210_8e-8_f32;
    let p = p * r2 + 2.755_731_9e-6;
    let p = p * r2 - 1.984_127e-4;
    let p = p * r2 + 8.333_333_3e-3;
    let p = p * r2 - 1.666_666_7e-1;
    r + r * r2 * p
}

impl CustomOp1 for Sine {
    fn name(&self) -> &'static str {
        "sine"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("sine expects a contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => {
                let phase = self.phase as f32;
                CpuStorage::F32(v[start..end].iter().map(|&x| sin_f32(x + phase)).collect())
            }
            CpuStorage::F64(v) => {
                let v = &v[start..end];
                let out = if self.phase == 0.0 {
                    v.iter().map(|x| x.sin()).collect()
                } else if self.phase == std::f64::consts::FRAC_PI_2 {
                    v.iter().map(|x| x.cos()).collect()
                } else {
                    v.iter().map(|x| (x + self.phase).sin()).collect()
                };
                CpuStorage::F64(out)
            }
            _ => return Err(candle_core::Error::Msg("sine supports f32 and f64 only".into())),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let phase = if self.phase == 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            std::f64::consts::PI
        };
        let d = arg.contiguous()?.apply_op1(Sine { phase })?;
        Ok(Some(grad_res.mul(&d)?))
    }
}

/// L2 norm over the last dimension, keeping it.
pub fn l2_norm(x: &Tensor) -> Result<Tensor> {
    Ok(x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?)
}

pub fn normalize(x: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_div(&l2_norm(x)?)?)
}

pub fn tensor_from_f64(values: &[f64], shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, shape, device)?.to_dtype(dtype)?)
}

pub fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sine_matches_std() {
        let xs: Vec<f32> = (-4000..4000).map(|i| i as f32 * 0.0137).collect();
        let t = Tensor::new(xs.as_slice(), &Device::Cpu).unwrap();
        let y = sin(&t).unwrap().to_vec1::<f32>().unwrap();
        for (x, y) in xs.iter().zip(&y) {
            assert!((f64::from(*x).sin() - f64::from(*y)).abs() < 2e-6, "{x}");
        }
    }

    #[test]
    fn sine_gradients_are_cosines() {
        let x = candle_core::Var::new(&[-2.0f64, 0.3, 1.7, 5.0], &Device::Cpu).unwrap();
        let g = sin(&x).unwrap().sum_all().unwrap().backward().unwrap();
        let g = g.get(&x).unwrap().to_vec1::<f64>().unwrap();
        for (x, g) in [-2.0f64, 0.3, 1.7, 5.0].iter().zip(&g) {
            assert_eq!(x.cos(), *g);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let x = Tensor::new(&[-1e4f64, -3.0, 0.0, 3.0, 1e4], &Device::Cpu).unwrap();
        let y = to_vec_f64(&sigmoid(&x).unwrap()).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 1.0 / (1.0 + 3f64.exp())).abs() < 1e-15);
        assert_eq!(y[2], 0.5);
        assert_eq!(y[4], 1.0);
    }

    #[test]
    fn same_padding_keeps_constant_maps_constant() {
        let dev = Device::Cpu;
        let x = Tensor::full(0.3f64, (1, 2, 5, 5), &dev).unwrap();
        let w = Tensor::randn(0f64, 1.0, (3, 2, 3, 3), &dev).unwrap();
        let b = Tensor::new(&[0.1f64, -0.2, 0.0], &dev).unwrap();
        let y = conv2d_same(&x, &w, &b).unwrap();
        assert_eq!(y.dims(), &[1, 3, 5, 5]);
        for c in 0..3 {
            let v = to_vec_f64(&y.narrow(1, c, 1).unwrap()).unwrap();
            assert!(v.iter().all(|&e| e == v[0]));
        }
    }
}
