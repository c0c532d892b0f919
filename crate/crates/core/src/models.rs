//! U-Net and nested U-Net++ topologies over the [`crate::nn`] tape, and the
//! plain / physics-informed loss composition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::InteriorMask;
use crate::nn::{Activation, LayerParams, Network, NnError, Op, Scalar, Tensor4, Trace};
use crate::physloss::{
    mse_loss_grad, physical_loss, physical_loss_grad, Channels, LossReport, PhysLossError, PhysicalLoss,
};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("canvas {height}x{width} is not divisible by 2^{depth}")]
    Canvas { height: usize, width: usize, depth: usize },
    #[error("the physics-informed loss needs an interior mask")]
    MissingMask,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] PhysLossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unet,
    Unetpp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
    pub variant: Variant,
    pub physics_informed: bool,
    pub physics_weight: f64,
    /// Centre the sigmoid head on the input image: `sigmoid(logit(x) + f(x))`
    /// with a zero-initialized last convolution, so an untrained model
    /// reproduces its input.
    pub input_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 4,
            base_channels: 16,
            variant: Variant::Unet,
            physics_informed: false,
            physics_weight: 1.0,
            input_skip: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 2 {
            return Err(ModelError::InvalidConfig(format!("depth {} < 2", self.depth)));
        }
        if self.base_channels < 4 {
            return Err(ModelError::InvalidConfig(format!("base_channels {} < 4", self.base_channels)));
        }
        if self.depth > 8 {
            return Err(ModelError::InvalidConfig(format!("depth {} is unreasonably large", self.depth)));
        }
        if !(self.physics_weight.is_finite() && self.physics_weight >= 0.0) {
            return Err(ModelError::InvalidConfig("physics_weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn check_canvas(&self, height: usize, width: usize) -> Result<(), ModelError> {
        let m = 1 << self.depth;
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(ModelError::Canvas { height, width, depth: self.depth });
        }
        Ok(())
    }

    /// Channel width at pooling level `level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn name(&self) -> &'static str {
        match (self.variant, self.physics_informed) {
            (Variant::Unet, false) => "UNet",
            (Variant::Unet, true) => "PI-UNet",
            (Variant::Unetpp, false) => "UNet++",
            (Variant::Unetpp, true) => "PI-UNet++",
        }
    }
}

/// A built network with its configuration.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub net: Network<T>,
}

struct Builder<T> {
    layers: Vec<LayerParams<T>>,
    ops: Vec<Op>,
    channels: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, op: Op, channels: usize) -> usize {
        self.ops.push(op);
        self.channels.push(channels);
        self.ops.len()
    }

    fn conv(&mut self, input: usize, out: usize, k: usize, act: Activation) -> usize {
        let layer = self.layers.len();
        self.layers.push(LayerParams::he_normal(out, self.channels[input], k, &mut self.rng));
        self.push(Op::Conv { layer, input, act }, out)
    }

    fn block(&mut self, input: usize, out: usize) -> usize {
        let a = self.conv(input, out, 3, Activation::Relu);
        self.conv(a, out, 3, Activation::Relu)
    }

    fn pool(&mut self, input: usize) -> usize {
        let c = self.channels[input];
        self.push(Op::MaxPool { input }, c)
    }

    /// Nearest-neighbour upsampling followed by a 3x3 conv + ReLU.
    fn up(&mut self, input: usize, out: usize) -> usize {
        let c = self.channels[input];
        let u = self.push(Op::Upsample { input }, c);
        self.conv(u, out, 3, Activation::Relu)
    }

    fn concat(&mut self, inputs: Vec<usize>) -> usize {
        let c = inputs.iter().map(|&i| self.channels[i]).sum();
        self.push(Op::Concat { inputs }, c)
    }
}

/// Builds the configured topology with He-normal weights drawn from `seed`.
pub fn build<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>, ModelError> {
    config.validate()?;
    let mut b = Builder::<T> {
        layers: Vec::new(),
        ops: Vec::new(),
        channels: vec![IMAGE_CHANNELS],
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = config.depth;
    let c = |l| config.channels(l);
    // backbone X[i][0]
    let mut backbone = Vec::with_capacity(d + 1);
    let mut x = 0;
    for i in 0..=d {
        if i > 0 {
            x = b.pool(x);
        }
        x = b.block(x, c(i));
        backbone.push(x);
    }
    let top = match config.variant {
        Variant::Unet => {
            let mut x = backbone[d];
            for l in (0..d).rev() {
                let u = b.up(x, c(l));
                let cat = b.concat(vec![backbone[l], u]);
                x = b.block(cat, c(l));
            }
            x
        }
        Variant::Unetpp => {
            // nodes[i][j] = X^{i,j}
            let mut nodes: Vec<Vec<usize>> = backbone.iter().map(|&s| vec![s]).collect();
            for j in 1..=d {
                for i in 0..=d - j {
                    let u = b.up(nodes[i + 1][j - 1], c(i));
                    let mut inputs = nodes[i].clone();
                    inputs.push(u);
                    let cat = b.concat(inputs);
                    let x = b.block(cat, c(i));
                    nodes[i].push(x);
                }
            }
            nodes[0][d]
        }
    };
    if config.input_skip {
        let head = b.conv(top, IMAGE_CHANNELS, 1, Activation::Identity);
        let last = b.layers.last_mut().expect("head layer");
        last.weight.iter_mut().for_each(|w| *w = T::zero());
        b.push(Op::LogitSkip { inputs: [0, head] }, IMAGE_CHANNELS);
    } else {
        b.conv(top, IMAGE_CHANNELS, 1, Activation::Sigmoid);
    }
    let net = Network::new(IMAGE_CHANNELS, b.layers, b.ops)?;
    Ok(Model { config: *config, net })
}

impl<T: Scalar> Model<T> {
    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<(), ModelError> {
        self.config.check_canvas(x.h, x.w)
    }

    pub fn forward(&self, x: Tensor4<T>) -> Result<Trace<T>, ModelError> {
        self.check(&x)?;
        Ok(self.net.forward(x)?)
    }

    pub fn infer(&self, x: Tensor4<T>) -> Result<Tensor4<T>, ModelError> {
        self.check(&x)?;
        Ok(self.net.infer(x)?)
    }

    pub fn backward(&mut self, trace: &Trace<T>, dy: Tensor4<T>) -> Result<(), ModelError> {
        self.net.backward(trace, dy, false)?;
        Ok(())
    }
}

/// Losses of one prediction and the gradient seed for the backward pass.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub report: LossReport,
    pub grad: [Vec<f64>; 3],
}

/// Plain models train on the MSE alone and report the physical loss when a
/// mask is given; physics-informed models add `physics_weight` times the
/// normalized physical loss.
pub fn loss(
    output: Channels,
    target: Channels,
    width: usize,
    height: usize,
    mask: Option<&InteriorMask>,
    config: &ModelConfig,
) -> Result<LossOutput, ModelError> {
    let (mse, mut grad) = mse_loss_grad(output, target)?;
    let pixels = width * height;
    if config.physics_informed {
        let mask = mask.ok_or(ModelError::MissingMask)?;
        let (phys, pg) = physical_loss_grad(output, width, height, mask)?;
        let w = config.physics_weight;
        for (g, p) in grad.iter_mut().zip(&pg) {
            for (a, &b) in g.iter_mut().zip(p) {
                *a += w * b;
            }
        }
        Ok(LossOutput { report: LossReport::new(mse, phys, pixels, Some(w)), grad })
    } else {
        let phys = match mask {
            Some(m) => physical_loss(output, width, height, m)?,
            None => PhysicalLoss { sum: 0.0, normalized: 0.0, masked_count: 0, empty_mask: true },
        };
        Ok(LossOutput { report: LossReport::new(mse, phys, pixels, None), grad })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::physloss::mse_loss;

    fn unet_params_closed_form(depth: usize, base: usize) -> usize {
        let c = |l: usize| base << l;
        let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
        let mut n = conv(3, c(0), 3) + conv(c(0), c(0), 3);
        for l in 1..=depth {
            n += conv(c(l - 1), c(l), 3) + conv(c(l), c(l), 3);
        }
        for l in 0..depth {
            n += conv(c(l + 1), c(l), 3) + conv(2 * c(l), c(l), 3) + conv(c(l), c(l), 3);
        }
        n + conv(c(0), 3, 1)
    }

    #[test]
    fn unet_parameter_count() {
        let cfg = ModelConfig::default();
        let m = build::<f32>(&cfg, 0).unwrap();
        assert_eq!(m.num_params(), unet_params_closed_form(4, 16));
        assert_eq!(m.num_params(), 2_158_739);
    }

    #[test]
    fn unetpp_is_larger() {
        let cfg = ModelConfig::default();
        let pp = ModelConfig { variant: Variant::Unetpp, ..cfg };
        assert!(build::<f32>(&pp, 0).unwrap().num_params() > build::<f32>(&cfg, 0).unwrap().num_params());
    }

    #[test]
    fn indivisible_canvas_rejected() {
        let m = build::<f32>(&ModelConfig::default(), 0).unwrap();
        assert!(matches!(m.infer(Tensor4::zeros(1, 3, 100, 100)), Err(ModelError::Canvas { .. })));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(build::<f32>(&ModelConfig { depth: 1, ..Default::default() }, 0).is_err());
        assert!(build::<f32>(&ModelConfig { base_channels: 2, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn output_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for variant in [Variant::Unet, Variant::Unetpp] {
            for depth in [2, 3] {
                let cfg = ModelConfig { depth, base_channels: 4, variant, ..Default::default() };
                let m = build::<f32>(&cfg, 1).unwrap();
                let x = Tensor4::from_vec(2, 3, 16, 24, (0..2 * 3 * 16 * 24).map(|_| rng.random::<f32>()).collect())
                    .unwrap();
                let y = m.infer(x.clone()).unwrap();
                assert_eq!(y.dims(), x.dims());
                assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
                assert_eq!(m.infer(x).unwrap(), y);
            }
        }
    }

    #[test]
    fn untrained_input_skip_model_reproduces_its_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in [Variant::Unet, Variant::Unetpp] {
            let cfg = ModelConfig { depth: 2, base_channels: 4, variant, input_skip: true, ..Default::default() };
            let m = build::<f64>(&cfg, 2).unwrap();
            assert_eq!(
                m.num_params(),
                build::<f64>(&ModelConfig { input_skip: false, ..cfg }, 2).unwrap().num_params()
            );
            let x = Tensor4::from_vec(1, 3, 8, 12, (0..288).map(|_| rng.random::<f64>()).collect()).unwrap();
            let y = m.infer(x.clone()).unwrap();
            for (a, b) in x.data.iter().zip(&y.data) {
                let clamped = a.clamp(crate::nn::LOGIT_MARGIN, 1.0 - crate::nn::LOGIT_MARGIN);
                assert!((clamped - b).abs() < 1e-12);
            }
        }
    }

    fn random_channels(rng: &mut ChaCha8Rng, n: usize) -> [Vec<f64>; 3] {
        std::array::from_fn(|_| (0..n).map(|_| rng.random::<f64>()).collect())
    }

    fn refs(c: &[Vec<f64>; 3]) -> Channels<'_> {
        [&c[0], &c[1], &c[2]]
    }

    #[test]
    fn identical_constant_output_has_zero_losses() {
        let c = [vec![0.3; 25], vec![0.3; 25], vec![0.3; 25]];
        let mask = InteriorMask { width: 5, height: 5, mask: vec![true; 25] };
        let cfg = ModelConfig { physics_informed: true, ..Default::default() };
        let r = loss(refs(&c), refs(&c), 5, 5, Some(&mask), &cfg).unwrap().report;
        assert_eq!((r.total, r.mse, r.physical), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pi_loss_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w, h) = (7, 6);
        let o = random_channels(&mut rng, w * h);
        let t = random_channels(&mut rng, w * h);
        let mask = InteriorMask { width: w, height: h, mask: (0..w * h).map(|_| rng.random::<f64>() < 0.6).collect() };
        let cfg = ModelConfig { physics_informed: true, physics_weight: 0.7, ..Default::default() };
        let pi = loss(refs(&o), refs(&t), w, h, Some(&mask), &cfg).unwrap();
        let mse = mse_loss(refs(&o), refs(&t)).unwrap();
        let phys = physical_loss(refs(&o), w, h, &mask).unwrap().normalized;
        assert!((pi.report.total - (mse + 0.7 * phys)).abs() < 1e-12);
        let plain = loss(refs(&o), refs(&t), w, h, Some(&mask), &ModelConfig::default()).unwrap();
        assert_eq!(plain.report.total, plain.report.mse);
        assert!((plain.report.physical - phys).abs() < 1e-15);
        let (_, mg) = mse_loss_grad(refs(&o), refs(&t)).unwrap();
        let (_, pg) = physical_loss_grad(refs(&o), w, h, &mask).unwrap();
        for c in 0..3 {
            assert_eq!(plain.grad[c], mg[c]);
            for k in 0..w * h {
                assert!((pi.grad[c][k] - (mg[c][k] + 0.7 * pg[c][k])).abs() < 1e-6);
            }
        }
        assert!(matches!(loss(refs(&o), refs(&t), w, h, None, &cfg), Err(ModelError::MissingMask)));
    }
}
