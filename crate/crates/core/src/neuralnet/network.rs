use rand_distr::{Distribution, Normal};

use super::conv::{correlate, correlate_backward, Activation, ConvSpec};
use super::{smooth_l1, Tensor};
use crate::{Error, Result};

/// A sequential stack of convolutions whose parameters live in one flat
/// buffer. Layer `l` owns `params[offsets[l]..offsets[l+1]]`: its weights
/// followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<ConvSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    input_shape: [usize; 4],
    shapes: Vec<[usize; 4]>,
}

/// Activations kept from a forward pass for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Network {
    /// Builds a zero-initialized network and checks every layer fits.
    pub fn new(layers: Vec<ConvSpec>, input_shape: [usize; 4]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape];
        let mut offsets = vec![0];
        for spec in &layers {
            spec.validate()?;
            let next = spec.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
            offsets.push(offsets.last().unwrap() + spec.param_count());
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; n],
            input_shape,
            shapes,
        })
    }

    pub fn with_params(
        layers: Vec<ConvSpec>,
        input_shape: [usize; 4],
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::new(layers, input_shape)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "network has {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init_he<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        for (l, spec) in self.layers.iter().enumerate() {
            let fan_in = spec.in_channels * spec.kernel.iter().product::<usize>();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let start = self.offsets[l];
            let (w, b) = self.params[start..self.offsets[l + 1]].split_at_mut(spec.weight_count());
            for v in w {
                *v = normal.sample(rng);
            }
            b.fill(0.0);
        }
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 4] {
        *self.shapes.last().unwrap()
    }

    /// Mutable bias slice of layer `l`.
    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l] + self.layers[l].weight_count();
        &mut self.params[start..self.offsets[l + 1]]
    }

    fn layer_slices(&self, l: usize) -> (&[f64], &[f64]) {
        let p = &self.params[self.offsets[l]..self.offsets[l + 1]];
        p.split_at(self.layers[l].weight_count())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.data().to_vec();
        for (l, spec) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_slices(l);
            let (mut z, _) = correlate(spec, w, b, &cur, self.shapes[l]);
            for v in &mut z {
                *v = spec.activation.apply(*v);
            }
            cur = z;
        }
        Tensor::new(self.output_shape(), cur)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.data().to_vec();
        for (l, spec) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_slices(l);
            let (z, _) = correlate(spec, w, b, &cur, self.shapes[l]);
            let y = z.iter().map(|&v| spec.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut cur, y));
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: cur,
        })
    }

    /// Accumulates parameter gradients for output gradient `d_out` into
    /// `grads` (same layout as [`Network::params`]).
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let mut dy = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let spec = &self.layers[l];
            let dz: Vec<f64> = dy
                .iter()
                .zip(&trace.pre[l])
                .map(|(&g, &z)| g * spec.activation.derivative(z))
                .collect();
            let (w, _) = self.layer_slices(l);
            let g = &mut grads[self.offsets[l]..self.offsets[l + 1]];
            let (dw, db) = g.split_at_mut(spec.weight_count());
            match correlate_backward(
                spec,
                w,
                &trace.inputs[l],
                self.shapes[l],
                &dz,
                dw,
                db,
                l > 0,
            ) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }

    /// Smooth-L1 loss of the flattened output against `target`, adding its
    /// parameter gradient into `grads` scaled by `weight`.
    pub fn loss_and_grad(
        &self,
        x: &Tensor,
        target: &[f64],
        beta: f64,
        weight: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        let trace = self.forward_trace(x)?;
        if trace.output.len() != target.len() {
            return Err(Error::Shape(format!(
                "target has {} values, network outputs {}",
                target.len(),
                trace.output.len()
            )));
        }
        let (loss, mut d_out) = smooth_l1(&trace.output, target, beta);
        if weight != 1.0 {
            for v in &mut d_out {
                *v *= weight;
            }
        }
        self.backward(&trace, &d_out, grads);
        Ok(loss)
    }

    pub fn loss(&self, x: &Tensor, target: &[f64], beta: f64) -> Result<f64> {
        let y = self.forward(x)?;
        Ok(smooth_l1(y.data(), target, beta).0)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    /// Relative error per parameter.
    pub errors: Vec<f64>,
    /// Parameters whose `±eps` probes flip the sign of some hidden leaky
    /// rectifier input. The loss is not differentiable across that flip, so
    /// central differences there do not estimate the gradient.
    pub kinked: Vec<bool>,
}

impl GradCheck {
    /// Largest error over parameters whose probes stay on one linear piece.
    pub fn max_smooth_error(&self) -> f64 {
        self.errors
            .iter()
            .zip(&self.kinked)
            .filter(|(_, &k)| !k)
            .fold(0.0, |m, (&e, _)| m.max(e))
    }

    pub fn kink_count(&self) -> usize {
        self.kinked.iter().filter(|&&k| k).count()
    }
}

/// Signs of every leaky-rectifier pre-activation in a trace.
fn kink_signs(net: &Network, trace: &Trace) -> Vec<bool> {
    net.layers
        .iter()
        .zip(&trace.pre)
        .filter(|(s, _)| s.activation == Activation::LeakyRelu)
        .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0))
        .collect()
}

/// Compares backprop against central finite differences of the mean
/// smooth-L1 loss over `samples`, for every parameter.
pub fn grad_check_report(
    net: &Network,
    samples: &[(Tensor, Vec<f64>)],
    beta: f64,
    eps: f64,
) -> Result<GradCheck> {
    if samples.is_empty() {
        return Err(Error::Shape("grad check needs at least one sample".into()));
    }
    let w = 1.0 / samples.len() as f64;
    let mut analytic = vec![0.0; net.param_count()];
    for (x, t) in samples {
        net.loss_and_grad(x, t, beta, w, &mut analytic)?;
    }
    // Mean loss and the rectifier sign pattern over all samples.
    let total = |n: &Network| -> Result<(f64, Vec<bool>)> {
        let mut acc = 0.0;
        let mut signs = Vec::new();
        for (x, t) in samples {
            let tr = n.forward_trace(x)?;
            acc += smooth_l1(&tr.output, t, beta).0;
            signs.extend(kink_signs(n, &tr));
        }
        Ok((acc * w, signs))
    };
    let mut probe = net.clone();
    let mut errors = Vec::with_capacity(net.param_count());
    let mut kinked = Vec::with_capacity(net.param_count());
    for i in 0..net.param_count() {
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let (hi, s_hi) = total(&probe)?;
        probe.params[i] = orig - eps;
        let (lo, s_lo) = total(&probe)?;
        probe.params[i] = orig;
        kinked.push(s_hi != s_lo);
        let fd = (hi - lo) / (2.0 * eps);
        let a = analytic[i];
        let denom = fd.abs().max(a.abs()).max(1e-8);
        errors.push((fd - a).abs() / denom);
    }
    let (worst_param, max_rel_error) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheck {
        max_rel_error,
        worst_param,
        errors,
        kinked,
    })
}

/// Maximum relative finite-difference error over all parameters.
pub fn grad_check(
    net: &Network,
    samples: &[(Tensor, Vec<f64>)],
    beta: f64,
    eps: f64,
) -> Result<f64> {
    Ok(grad_check_report(net, samples, beta, eps)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::Activation;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed, "tensor");
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn linear_layer_gradient_is_exact() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 2,
            kernel: [3, 3, 1],
            dilation: [1, 1, 1],
            activation: Activation::Linear,
        };
        let mut net = Network::new(vec![spec], [1, 5, 5, 1]).unwrap();
        net.init_he(&mut crate::rng::seeded(1, "init"));
        let x = random_tensor([1, 5, 5, 1], 2);
        // Large beta keeps every residual on the quadratic branch.
        let target: Vec<f64> = (0..18).map(|i| i as f64 * 0.01).collect();
        let err = grad_check(&net, &[(x, target)], 100.0, 1e-4).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn two_layer_errors_are_per_parameter() {
        let l1 = ConvSpec {
            in_channels: 1,
            out_channels: 3,
            kernel: [3, 3, 1],
            dilation: [1, 1, 1],
            activation: Activation::LeakyRelu,
        };
        let l2 = ConvSpec {
            in_channels: 3,
            out_channels: 2,
            kernel: [3, 3, 1],
            dilation: [2, 2, 1],
            activation: Activation::Softplus,
        };
        let mut net = Network::new(vec![l1, l2], [1, 9, 9, 1]).unwrap();
        net.init_he(&mut crate::rng::seeded(3, "init"));
        let x = random_tensor([1, 9, 9, 1], 4);
        let target = vec![0.5; net.output_shape().iter().product()];
        let report = grad_check_report(&net, &[(x, target)], 1.0, 1e-4).unwrap();
        assert_eq!(report.errors.len(), net.param_count());
        assert!(report.max_rel_error <= 1e-4, "{}", report.max_rel_error);
        // Layers do not share storage: perturbing layer-0 params leaves layer-1
        // params untouched.
        let off = net.offsets()[1];
        let mut p = net.clone();
        p.params_mut()[0] += 1.0;
        assert_eq!(&p.params()[off..], &net.params()[off..]);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 4,
            kernel: [3, 3, 3],
            dilation: [1, 2, 1],
            activation: Activation::LeakyRelu,
        };
        let mut net = Network::new(vec![spec], [1, 6, 7, 3]).unwrap();
        net.init_he(&mut crate::rng::seeded(5, "init"));
        let x = random_tensor([1, 6, 7, 3], 6);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let tr = net.forward_trace(&x).unwrap();
        assert_eq!(tr.output, net.forward(&x).unwrap().into_data());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: [3, 3, 1],
            dilation: [4, 1, 1],
            activation: Activation::Linear,
        };
        assert!(matches!(
            Network::new(vec![spec], [1, 8, 5, 1]),
            Err(Error::Footprint(_))
        ));
        let net = Network::new(vec![spec], [1, 9, 5, 1]).unwrap();
        assert!(net.forward(&Tensor::zeros([1, 9, 4, 1])).is_err());
    }

    #[test]
    fn probes_across_a_kink_are_flagged() {
        let hidden = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: [1, 1, 1],
            dilation: [1, 1, 1],
            activation: Activation::LeakyRelu,
        };
        let head = ConvSpec {
            activation: Activation::Linear,
            ..hidden
        };
        // Hidden pre-activation is w*x + b = 0.5*1 - 0.5 + 1e-6: right at the kink.
        let net = Network::with_params(
            vec![hidden, head],
            [1, 1, 1, 1],
            vec![0.5, -0.5 + 1e-6, 1.0, 0.0],
        )
        .unwrap();
        let x = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let r = grad_check_report(&net, &[(x, vec![3.0])], 1.0, 1e-4).unwrap();
        assert_eq!(r.kinked, vec![true, true, false, false]);
        assert!(r.max_smooth_error() <= 1e-7);
    }
}
