use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    /// Leaky rectifier with negative slope 0.01.
    LeakyRelu,
    Softplus,
}

const LEAK: f64 = 0.01;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAK * z
                }
            }
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAK
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Shape of one dilated valid convolution. Kernel and dilation are given per
/// spatial axis in `(angle, radius, slice)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
    pub activation: Activation,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape("channel counts must be positive".into()));
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::Shape(format!(
                "kernel sizes must be odd, got {:?}",
                self.kernel
            )));
        }
        if self.dilation.contains(&0) {
            return Err(Error::Shape(format!(
                "dilation must be >= 1, got {:?}",
                self.dilation
            )));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    /// Extent consumed per spatial axis: `dilation·(k-1)`.
    pub fn footprint(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.dilation[a] * (self.kernel[a] - 1))
    }

    /// Output shape for an input of shape `(c, angle, radius, slice)`.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        if input[0] != self.in_channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                self.in_channels, input[0]
            )));
        }
        let fp = self.footprint();
        let mut out = [self.out_channels, 0, 0, 0];
        for (a, name) in ["angle", "radius", "slice"].iter().enumerate() {
            let extent = input[a + 1];
            if extent <= fp[a] {
                return Err(Error::Footprint(format!(
                    "{name} axis has {extent} samples but the dilated kernel spans {}; at least {} required",
                    fp[a] + 1,
                    fp[a] + 1
                )));
            }
            out[a + 1] = extent - fp[a];
        }
        Ok(out)
    }

    #[inline]
    fn weight_index(&self, o: usize, c: usize, ka: usize, kr: usize, ks: usize) -> usize {
        let [na, nr, ns] = self.kernel;
        (((o * self.in_channels + c) * ns + ks) * na + ka) * nr + kr
    }
}

/// Pre-activation output `z = w ⋆ x + b` (dilated cross-correlation).
pub(crate) fn correlate(
    spec: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
    x: &[f64],
    in_shape: [usize; 4],
) -> (Vec<f64>, [usize; 4]) {
    let out_shape = spec
        .output_shape(in_shape)
        .expect("shape checked by caller");
    let [_, ia, ir, _] = in_shape;
    let [oc, oa, or, os] = out_shape;
    let [ka_n, kr_n, ks_n] = spec.kernel;
    let [da, dr, ds] = spec.dilation;
    let is = in_shape[3];
    let mut z = vec![0.0; oc * os * oa * or];
    for o in 0..oc {
        let zo = &mut z[o * os * oa * or..(o + 1) * os * oa * or];
        zo.fill(bias[o]);
        for c in 0..spec.in_channels {
            for ks in 0..ks_n {
                for ka in 0..ka_n {
                    for kr in 0..kr_n {
                        let w = weights[spec.weight_index(o, c, ka, kr, ks)];
                        for s in 0..os {
                            let xs = s + ks * ds;
                            for a in 0..oa {
                                let xa = a + ka * da;
                                let xrow = ((c * is + xs) * ia + xa) * ir + kr * dr;
                                let zrow = (s * oa + a) * or;
                                let src = &x[xrow..xrow + or];
                                let dst = &mut zo[zrow..zrow + or];
                                for (d, &v) in dst.iter_mut().zip(src) {
                                    *d += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (z, out_shape)
}

/// Backpropagates `dz` (gradient w.r.t. the pre-activation) through the
/// correlation. Weight and bias gradients are accumulated into `dw`/`db`;
/// the input gradient is returned when requested.
pub(crate) fn correlate_backward(
    spec: &ConvSpec,
    weights: &[f64],
    x: &[f64],
    in_shape: [usize; 4],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let out_shape = spec
        .output_shape(in_shape)
        .expect("shape checked by caller");
    let [_, ia, ir, is] = in_shape;
    let [oc, oa, or, os] = out_shape;
    let [ka_n, kr_n, ks_n] = spec.kernel;
    let [da, dr, ds] = spec.dilation;
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    let plane = os * oa * or;
    for o in 0..oc {
        let dzo = &dz[o * plane..(o + 1) * plane];
        db[o] += dzo.iter().sum::<f64>();
        for c in 0..spec.in_channels {
            for ks in 0..ks_n {
                for ka in 0..ka_n {
                    for kr in 0..kr_n {
                        let wi = spec.weight_index(o, c, ka, kr, ks);
                        let w = weights[wi];
                        let mut acc = 0.0;
                        for s in 0..os {
                            let xs = s + ks * ds;
                            for a in 0..oa {
                                let xa = a + ka * da;
                                let xrow = ((c * is + xs) * ia + xa) * ir + kr * dr;
                                let zrow = (s * oa + a) * or;
                                let g = &dzo[zrow..zrow + or];
                                acc += g
                                    .iter()
                                    .zip(&x[xrow..xrow + or])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                                if let Some(dx) = dx.as_mut() {
                                    for (d, &gv) in dx[xrow..xrow + or].iter_mut().zip(g) {
                                        *d += w * gv;
                                    }
                                }
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    dx
}

/// A convolution layer owning its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.weight_count() || bias.len() != spec.out_channels {
            return Err(Error::Shape(format!(
                "layer needs {} weights and {} biases, got {} and {}",
                spec.weight_count(),
                spec.out_channels,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            spec,
            weights,
            bias,
        })
    }
}

/// Valid dilated cross-correlation plus bias, followed by the activation.
pub fn conv_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.spec.validate()?;
    layer.spec.output_shape(x.shape())?;
    let (mut z, shape) = correlate(
        &layer.spec,
        &layer.weights,
        &layer.bias,
        x.data(),
        x.shape(),
    );
    let act = layer.spec.activation;
    for v in &mut z {
        *v = act.apply(*v);
    }
    Tensor::new(shape, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1d(k: usize, d: usize) -> ConvSpec {
        ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: [1, k, 1],
            dilation: [1, d, 1],
            activation: Activation::Linear,
        }
    }

    fn row(values: &[f64]) -> Tensor {
        Tensor::new([1, 1, values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn ones_kernel_sums_windows() {
        let layer = ConvLayer::new(spec_1d(3, 1), vec![1.0; 3], vec![0.0]).unwrap();
        let y = conv_forward(&row(&[1.0, 2.0, 3.0, 4.0]), &layer).unwrap();
        assert_eq!(y.data(), &[6.0, 9.0]);
    }

    #[test]
    fn dilated_kernel_skips_samples() {
        let layer = ConvLayer::new(spec_1d(3, 2), vec![1.0; 3], vec![0.0]).unwrap();
        let y = conv_forward(&row(&[1.0, 2.0, 3.0, 4.0, 5.0]), &layer).unwrap();
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_crops() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: [3, 3, 1],
            dilation: [1, 2, 1],
            activation: Activation::Linear,
        };
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let layer = ConvLayer::new(spec, w, vec![0.0]).unwrap();
        let x = Tensor::new([1, 5, 7, 1], (0..35).map(|v| v as f64 * 0.5).collect()).unwrap();
        let y = conv_forward(&x, &layer).unwrap();
        assert_eq!(y.shape(), [1, 3, 3, 1]);
        for a in 0..3 {
            for r in 0..3 {
                assert_eq!(y.get(0, a, r, 0), x.get(0, a + 1, r + 2, 0));
            }
        }
    }

    #[test]
    fn footprint_error_names_margin() {
        let layer = ConvLayer::new(spec_1d(3, 4), vec![1.0; 3], vec![0.0]).unwrap();
        let err = conv_forward(&row(&[1.0; 8]), &layer).unwrap_err();
        assert!(
            matches!(err, Error::Footprint(ref m) if m.contains("at least 9")),
            "{err}"
        );
    }

    #[test]
    fn even_kernel_rejected() {
        let mut s = spec_1d(3, 1);
        s.kernel = [2, 3, 1];
        assert!(s.validate().is_err());
        s.kernel = [1, 3, 1];
        s.dilation = [0, 1, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn angle_shift_equivariance() {
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: [3, 3, 1],
            dilation: [2, 1, 1],
            activation: Activation::LeakyRelu,
        };
        let n = spec.weight_count();
        let w: Vec<f64> = (0..n)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.05)
            .collect();
        let layer = ConvLayer::new(spec, w, vec![0.1, -0.2, 0.3]).unwrap();
        let (na, nr) = (12, 6);
        let base: Vec<f64> = (0..2 * (na + 1) * nr)
            .map(|i| ((i * 13 % 29) as f64).sin())
            .collect();
        // x0 holds rows 0..na, x1 rows 1..na+1 of the same 2-channel signal.
        let take = |shift: usize| {
            let mut d = Vec::new();
            for c in 0..2 {
                for a in 0..na {
                    let start = (c * (na + 1) + a + shift) * nr;
                    d.extend_from_slice(&base[start..start + nr]);
                }
            }
            Tensor::new([2, na, nr, 1], d).unwrap()
        };
        let y0 = conv_forward(&take(0), &layer).unwrap();
        let y1 = conv_forward(&take(1), &layer).unwrap();
        let [_, oa, or, _] = y0.shape();
        for o in 0..3 {
            for a in 0..oa - 1 {
                for r in 0..or {
                    assert!((y0.get(o, a + 1, r, 0) - y1.get(o, a, r, 0)).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((Activation::Softplus.apply(800.0) - 800.0).abs() < 1e-12);
        assert!(Activation::Softplus.apply(-800.0) >= 0.0);
        assert!((Activation::Softplus.derivative(0.0) - 0.5).abs() < 1e-15);
    }
}
