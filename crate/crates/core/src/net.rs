//! The three-part classifier network.
//!
//! Part 1 squeezes the range and azimuth extent of a cropped cube block
//! with two 3D convolutions and spatial max-pools, leaving one Doppler
//! profile per channel. Part 2 runs three 1D convolutions along Doppler,
//! each followed by a halving max-pool. Part 3 concatenates the flattened
//! Doppler code with the target-level features and maps it to class logits
//! through fully connected layers. ReLU follows every convolution and every
//! hidden fully connected layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv1d, conv1d_backward, conv3d, conv3d_backward, fully_connected, fully_connected_backward, maxpool1d,
    maxpool1d_backward, maxpool3d, maxpool3d_backward, relu_backward_inplace, relu_inplace, Pooled, Real, Tensor,
};

pub const PART1_CHANNELS: [usize; 2] = [6, 25];
pub const PART2_CHANNELS: [usize; 3] = [16, 32, 32];
pub const HIDDEN: usize = 128;
const KERNEL3D: usize = 3;
const PAD3D: usize = 1;
const KERNEL1D: usize = 7;
const PAD1D: usize = 3;
const SPATIAL_POOL: [usize; 3] = [2, 2, 1];

/// Input ablations. `NoLowLevel` skips parts 1 and 2 entirely.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoRcs,
    NoSpeed,
    NoLowLevel,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Ablation> {
        match s {
            "none" => Some(Ablation::None),
            "no-rcs" => Some(Ablation::NoRcs),
            "no-speed" => Some(Ablation::NoSpeed),
            "no-low-level" => Some(Ablation::NoLowLevel),
            _ => None,
        }
    }

    /// Indices into `(r, azimuth, v_r, rcs)` that the network sees.
    pub fn feature_indices(self) -> &'static [usize] {
        match self {
            Ablation::None | Ablation::NoLowLevel => &[0, 1, 2, 3],
            Ablation::NoRcs => &[0, 1, 2],
            Ablation::NoSpeed => &[0, 1, 3],
        }
    }

    pub fn uses_cube(self) -> bool {
        self != Ablation::NoLowLevel
    }
}

/// Block extents in the network's `[azimuth, range, doppler]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub azimuth: usize,
    pub range: usize,
    pub doppler: usize,
}

impl BlockShape {
    pub const DEFAULT: BlockShape = BlockShape {
        azimuth: 5,
        range: 5,
        doppler: 32,
    };

    pub fn len(&self) -> usize {
        self.azimuth * self.range * self.doppler
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_out: usize,
    pub ablation: Ablation,
    pub block: BlockShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn spatial_after_part1(n: usize) -> Option<usize> {
    // conv keeps the size, each pool maps n -> (n - 2) / 2 + 1
    let mut n = n;
    for _ in 0..2 {
        n = n.checked_sub(2)? / 2 + 1;
    }
    Some(n)
}

impl Architecture {
    pub fn new(n_out: usize, ablation: Ablation, block: BlockShape) -> Result<Self> {
        let arch = Self { n_out, ablation, block };
        if n_out < 2 {
            return Err(Error::Config(format!("network needs >= 2 outputs, got {n_out}")));
        }
        if ablation.uses_cube() {
            if spatial_after_part1(block.azimuth) != Some(1) || spatial_after_part1(block.range) != Some(1) {
                return Err(Error::Config(format!(
                    "block {}x{} does not reduce to 1x1 after two 2x2 pools",
                    block.azimuth, block.range
                )));
            }
            if block.doppler < 8 || !block.doppler.is_multiple_of(8) {
                return Err(Error::Config(format!(
                    "Doppler extent {} must be a positive multiple of 8",
                    block.doppler
                )));
            }
        }
        Ok(arch)
    }

    pub fn n_features(&self) -> usize {
        self.ablation.feature_indices().len()
    }

    /// Width of the flattened part 2 output (0 without low-level input).
    pub fn doppler_code_width(&self) -> usize {
        if self.ablation.uses_cube() {
            PART2_CHANNELS[2] * self.block.doppler / 8
        } else {
            0
        }
    }

    pub fn head_input_width(&self) -> usize {
        self.doppler_code_width() + self.n_features()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |name, shape: Vec<usize>, fan_in| specs.push(ParamSpec { name, shape, fan_in });
        if self.ablation.uses_cube() {
            let k3 = KERNEL3D * KERNEL3D * KERNEL3D;
            let [c1, c2] = PART1_CHANNELS;
            push("part1.conv1.weight", vec![c1, 1, KERNEL3D, KERNEL3D, KERNEL3D], k3);
            push("part1.conv1.bias", vec![c1], k3);
            push(
                "part1.conv2.weight",
                vec![c2, c1, KERNEL3D, KERNEL3D, KERNEL3D],
                c1 * k3,
            );
            push("part1.conv2.bias", vec![c2], c1 * k3);
            let [d1, d2, d3] = PART2_CHANNELS;
            push("part2.conv1.weight", vec![d1, c2, KERNEL1D], c2 * KERNEL1D);
            push("part2.conv1.bias", vec![d1], c2 * KERNEL1D);
            push("part2.conv2.weight", vec![d2, d1, KERNEL1D], d1 * KERNEL1D);
            push("part2.conv2.bias", vec![d2], d1 * KERNEL1D);
            push("part2.conv3.weight", vec![d3, d2, KERNEL1D], d2 * KERNEL1D);
            push("part2.conv3.bias", vec![d3], d2 * KERNEL1D);
        }
        let w = self.head_input_width();
        push("part3.fc1.weight", vec![HIDDEN, w], w);
        push("part3.fc1.bias", vec![HIDDEN], w);
        push("part3.fc2.weight", vec![HIDDEN, HIDDEN], HIDDEN);
        push("part3.fc2.bias", vec![HIDDEN], HIDDEN);
        push("part3.fc3.weight", vec![self.n_out, HIDDEN], HIDDEN);
        push("part3.fc3.bias", vec![self.n_out], HIDDEN);
        specs
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: Option<Tensor<T>>,
    conv3d_out: Vec<Tensor<T>>,
    pool3d: Vec<Pooled<T>>,
    conv1d_in: Vec<Tensor<T>>,
    conv1d_out: Vec<Tensor<T>>,
    pool1d: Vec<Pooled<T>>,
    head_in: Tensor<T>,
    hidden: Vec<Tensor<T>>,
    logits: Tensor<T>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.logits.data()
    }

    /// Output of part 1, `[C, 1, 1, H]`.
    pub fn part1_shape(&self) -> Option<&[usize]> {
        self.pool3d.last().map(|p| p.output.shape())
    }

    /// Output of part 2, `[32, H/8]`.
    pub fn part2_shape(&self) -> Option<&[usize]> {
        self.pool1d.last().map(|p| p.output.shape())
    }

    pub fn head_input_width(&self) -> usize {
        self.head_in.len()
    }

    /// True when both passes took the same branch at every ReLU and
    /// max-pool, i.e. the network is locally the same smooth function.
    pub fn same_branches(&self, other: &Trace<T>) -> bool {
        let relu_same = |a: &Tensor<T>, b: &Tensor<T>| {
            a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| (*x > T::zero()) == (*y > T::zero()))
        };
        self.conv3d_out
            .iter()
            .zip(&other.conv3d_out)
            .chain(self.conv1d_out.iter().zip(&other.conv1d_out))
            .chain(self.hidden.iter().zip(&other.hidden))
            .all(|(a, b)| relu_same(a, b))
            && self
                .pool3d
                .iter()
                .zip(&other.pool3d)
                .chain(self.pool1d.iter().zip(&other.pool1d))
                .all(|(a, b)| a.argmax == b.argmax)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Network<T> {
    /// He-style uniform initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// for weights and zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_specs()
            .into_iter()
            .map(|spec| {
                let mut t = Tensor::zeros(&spec.shape);
                if spec.shape.len() > 1 {
                    let bound = (6.0 / spec.fan_in as f64).sqrt();
                    for v in t.data_mut() {
                        *v = T::of(rng.random_range(-bound..bound));
                    }
                }
                t
            })
            .collect();
        Self { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let params = arch.param_specs().iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Self { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor<T>>) -> Result<Self> {
        let specs = arch.param_specs();
        if specs.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "network parameters",
                expected: vec![specs.len()],
                actual: vec![params.len()],
            });
        }
        for (spec, p) in specs.iter().zip(&params) {
            p.expect_shape(spec.name, &spec.shape)?;
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_inputs(&self, block: &[T], features: &[T]) -> Result<()> {
        if features.len() != self.arch.n_features() {
            return Err(Error::ShapeMismatch {
                op: "network features",
                expected: vec![self.arch.n_features()],
                actual: vec![features.len()],
            });
        }
        if self.arch.ablation.uses_cube() && block.len() != self.arch.block.len() {
            let b = self.arch.block;
            return Err(Error::ShapeMismatch {
                op: "network block",
                expected: vec![b.azimuth, b.range, b.doppler],
                actual: vec![block.len()],
            });
        }
        Ok(())
    }

    /// Runs the network and records everything the backward pass needs.
    /// `block` is `[azimuth][range][doppler]`; it is ignored when the
    /// architecture skips low-level input.
    pub fn forward(&self, block: &[T], features: &[T]) -> Result<Trace<T>> {
        self.check_inputs(block, features)?;
        let p = &self.params;
        let mut next = 0;
        let mut trace = Trace {
            input: None,
            conv3d_out: Vec::new(),
            pool3d: Vec::new(),
            conv1d_in: Vec::new(),
            conv1d_out: Vec::new(),
            pool1d: Vec::new(),
            head_in: Tensor::zeros(&[1]),
            hidden: Vec::new(),
            logits: Tensor::zeros(&[1]),
        };

        let mut head_in = Vec::with_capacity(self.arch.head_input_width());
        if self.arch.ablation.uses_cube() {
            let b = self.arch.block;
            let input = Tensor::new(vec![1, b.azimuth, b.range, b.doppler], block.to_vec())?;
            let mut x = input.clone();
            trace.input = Some(input);
            for _ in 0..2 {
                let mut y = conv3d(&x, &p[next], &p[next + 1], PAD3D)?;
                next += 2;
                relu_inplace(&mut y);
                let pooled = maxpool3d(&y, SPATIAL_POOL, SPATIAL_POOL)?;
                x = pooled.output.clone();
                trace.conv3d_out.push(y);
                trace.pool3d.push(pooled);
            }
            let s = x.shape().to_vec();
            let mut x = x.reshape(&[s[0], s[3]])?;
            for _ in 0..3 {
                if x.shape()[1] % 2 != 0 {
                    return Err(Error::OddPoolLength(x.shape()[1]));
                }
                let mut y = conv1d(&x, &p[next], &p[next + 1], PAD1D)?;
                next += 2;
                relu_inplace(&mut y);
                let pooled = maxpool1d(&y, 3, 2, 1)?;
                trace.conv1d_in.push(x);
                x = pooled.output.clone();
                trace.conv1d_out.push(y);
                trace.pool1d.push(pooled);
            }
            head_in.extend_from_slice(x.data());
        }
        head_in.extend_from_slice(features);
        let mut h = Tensor::new(vec![head_in.len()], head_in)?;
        trace.head_in = h.clone();
        for layer in 0..3 {
            let mut y = fully_connected(&h, &p[next], &p[next + 1])?;
            next += 2;
            if layer < 2 {
                relu_inplace(&mut y);
                trace.hidden.push(y.clone());
            }
            h = y;
        }
        trace.logits = h;
        Ok(trace)
    }

    pub fn logits(&self, block: &[T], features: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(block, features)?.logits.into_data())
    }

    /// Accumulates parameter gradients of the pass in `trace` given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &[T], grads: &mut [Tensor<T>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "gradient buffers",
                expected: vec![self.params.len()],
                actual: vec![grads.len()],
            });
        }
        let p = &self.params;
        let mut idx = p.len();
        let mut g = Tensor::new(vec![grad_logits.len()], grad_logits.to_vec())?;
        for layer in (0..3).rev() {
            idx -= 2;
            let input = if layer == 0 {
                &trace.head_in
            } else {
                &trace.hidden[layer - 1]
            };
            let (gx, gw, gb) = fully_connected_backward(input, &p[idx], &g)?;
            add_into(&mut grads[idx], &gw);
            add_into(&mut grads[idx + 1], &gb);
            g = gx;
            if layer > 0 {
                relu_backward_inplace(&mut g, &trace.hidden[layer - 1]);
            }
        }
        if !self.arch.ablation.uses_cube() {
            return Ok(());
        }

        let code = self.arch.doppler_code_width();
        let last = &trace.pool1d[2].output;
        let mut g = Tensor::new(last.shape().to_vec(), g.data()[..code].to_vec())?;
        for layer in (0..3).rev() {
            idx -= 2;
            let pooled = &trace.pool1d[layer];
            let conv_out = &trace.conv1d_out[layer];
            let mut gy = maxpool1d_backward(conv_out.shape(), &pooled.argmax, &g)?;
            relu_backward_inplace(&mut gy, conv_out);
            let grads_l = conv1d_backward(&trace.conv1d_in[layer], &p[idx], &gy, PAD1D, true)?;
            add_into(&mut grads[idx], &grads_l.weight);
            add_into(&mut grads[idx + 1], &grads_l.bias);
            g = grads_l.input.expect("input gradient requested");
        }

        let part1_out = trace.pool3d[1].output.shape().to_vec();
        let mut g = g.reshape(&part1_out)?;
        for layer in (0..2).rev() {
            idx -= 2;
            let pooled = &trace.pool3d[layer];
            let conv_out = &trace.conv3d_out[layer];
            let mut gy = maxpool3d_backward(conv_out.shape(), &pooled.argmax, &g)?;
            relu_backward_inplace(&mut gy, conv_out);
            let input = if layer == 0 {
                trace.input.as_ref().expect("recorded input")
            } else {
                &trace.pool3d[0].output
            };
            let grads_l = conv3d_backward(input, &p[idx], &gy, PAD3D, layer > 0)?;
            add_into(&mut grads[idx], &grads_l.weight);
            add_into(&mut grads[idx + 1], &grads_l.bias);
            if let Some(gx) = grads_l.input {
                g = gx;
            }
        }
        debug_assert_eq!(idx, 0);
        Ok(())
    }
}

fn add_into<T: Real>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Pairs a network with at most one recorded forward pass.
#[derive(Debug)]
pub struct GradientTape<'a, T> {
    net: &'a Network<T>,
    trace: Option<Trace<T>>,
}

impl<'a, T: Real> GradientTape<'a, T> {
    pub fn new(net: &'a Network<T>) -> Self {
        Self { net, trace: None }
    }

    pub fn forward(&mut self, block: &[T], features: &[T]) -> Result<&[T]> {
        let trace = self.net.forward(block, features)?;
        Ok(self.trace.insert(trace).logits())
    }

    /// Gradients of all parameters for the recorded pass. Consumes the
    /// recording.
    pub fn backward(&mut self, grad_logits: &[T]) -> Result<Vec<Tensor<T>>> {
        let trace = self.trace.take().ok_or(Error::BackwardBeforeForward)?;
        let mut grads = self.net.zero_grads();
        self.net.backward(&trace, grad_logits, &mut grads)?;
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(n_out: usize, ablation: Ablation) -> Architecture {
        Architecture::new(n_out, ablation, BlockShape::DEFAULT).unwrap()
    }

    #[test]
    fn shape_chain() {
        let net = Network::<f32>::init(arch(4, Ablation::None), 1);
        let block = vec![0.1f32; 5 * 5 * 32];
        let trace = net.forward(&block, &[0.0; 4]).unwrap();
        assert_eq!(trace.part1_shape(), Some(&[25, 1, 1, 32][..]));
        assert_eq!(trace.part2_shape(), Some(&[32, 4][..]));
        assert_eq!(trace.head_input_width(), 132);
        assert_eq!(trace.logits().len(), 4);
    }

    #[test]
    fn zero_network_outputs_bias() {
        let mut net = Network::<f64>::zeros(arch(2, Ablation::None));
        let n = net.params().len();
        net.params_mut()[n - 1].data_mut().copy_from_slice(&[0.25, -0.75]);
        let logits = net.logits(&vec![0.0; 800], &[0.0; 4]).unwrap();
        assert_eq!(logits, vec![0.25, -0.75]);
    }

    #[test]
    fn no_low_level_head_is_narrow() {
        let a = arch(2, Ablation::NoLowLevel);
        let specs = a.param_specs();
        assert_eq!(specs.len(), 6);
        assert_eq!(specs[0].shape, vec![128, 4]);
        let net = Network::<f32>::init(a, 3);
        assert_eq!(net.logits(&[], &[0.1, 0.2, 0.3, 0.4]).unwrap().len(), 2);
        assert_eq!(arch(4, Ablation::NoRcs).head_input_width(), 131);
    }

    #[test]
    fn rejects_blocks_that_do_not_collapse() {
        let b = BlockShape {
            azimuth: 9,
            range: 5,
            doppler: 32,
        };
        assert!(Architecture::new(4, Ablation::None, b).is_err());
        let b = BlockShape {
            azimuth: 5,
            range: 5,
            doppler: 30,
        };
        assert!(Architecture::new(4, Ablation::None, b).is_err());
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let net = Network::<f32>::init(arch(2, Ablation::NoLowLevel), 0);
        let mut tape = GradientTape::new(&net);
        assert!(matches!(tape.backward(&[1.0, -1.0]), Err(Error::BackwardBeforeForward)));
        tape.forward(&[], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(tape.backward(&[1.0, -1.0]).is_ok());
        assert!(tape.backward(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = Network::<f64>::init(arch(4, Ablation::None), 9);
        let block: Vec<f64> = (0..800).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let trace = net.forward(&block, &[0.5, -0.2, 1.0, 0.3]).unwrap();
        let mut grads = net.zero_grads();
        net.backward(&trace, &[0.0; 4], &mut grads).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::<f32>::init(arch(4, Ablation::None), 5);
        let block: Vec<f32> = (0..800).map(|i| (i as f32 * 0.01).sin()).collect();
        let a = net.logits(&block, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = net.logits(&block, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
