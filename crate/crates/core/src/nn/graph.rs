use super::adam::{Adam, LayerParams};
use super::ops::*;
use super::tensor::{Scalar, Tensor4};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

/// One step of the tape. Slot 0 holds the network input and op `k` writes
/// slot `k + 1`; the last slot is the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Conv {
        layer: usize,
        input: usize,
        act: Activation,
    },
    MaxPool {
        input: usize,
    },
    Upsample {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    /// `[image, correction]`, see [`logit_skip_forward`].
    LogitSkip {
        inputs: [usize; 2],
    },
}

impl Op {
    fn inputs(&self) -> &[usize] {
        match self {
            Op::Conv { input, .. } | Op::MaxPool { input } | Op::Upsample { input } => std::slice::from_ref(input),
            Op::Concat { inputs } => inputs,
            Op::LogitSkip { inputs } => inputs,
        }
    }
}

/// A fixed op list over a set of convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub in_channels: usize,
    pub layers: Vec<LayerParams<T>>,
    pub ops: Vec<Op>,
}

/// Every intermediate value of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub values: Vec<Tensor4<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor4<T> {
        self.values.last().expect("trace holds the input")
    }
}

fn guard<T: Scalar>(t: &Tensor4<T>, k: usize) -> Result<(), NnError> {
    if cfg!(debug_assertions) && !t.all_finite() {
        return Err(NnError::NonFinite(format!("op {k}")));
    }
    Ok(())
}

impl<T: Scalar> Network<T> {
    pub fn new(in_channels: usize, layers: Vec<LayerParams<T>>, ops: Vec<Op>) -> Result<Self, NnError> {
        for (k, op) in ops.iter().enumerate() {
            if op.inputs().is_empty() || op.inputs().iter().any(|&i| i > k) {
                return Err(NnError::Shape(format!("op {k} reads a slot that is not yet computed")));
            }
            if let Op::Conv { layer, .. } = op {
                if *layer >= layers.len() {
                    return Err(NnError::Shape(format!("op {k} uses missing layer {layer}")));
                }
            }
        }
        if ops.is_empty() {
            return Err(NnError::Shape("network without ops".into()));
        }
        Ok(Network { in_channels, layers, ops })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    fn apply(&self, k: usize, values: &[Option<Tensor4<T>>]) -> Result<Tensor4<T>, NnError> {
        let get = |i: usize| values[i].as_ref().expect("slot alive");
        let out = match &self.ops[k] {
            Op::Conv { layer, input, act } => {
                let mut y = conv2d_forward(get(*input), &self.layers[*layer])?;
                match act {
                    Activation::Identity => {}
                    Activation::Relu => relu_forward(&mut y),
                    Activation::Sigmoid => sigmoid_forward(&mut y),
                }
                y
            }
            Op::MaxPool { input } => maxpool2x2_forward(get(*input))?,
            Op::Upsample { input } => upsample2x_forward(get(*input)),
            Op::Concat { inputs } => {
                let xs: Vec<&Tensor4<T>> = inputs.iter().map(|&i| get(i)).collect();
                concat_channels_forward(&xs)?
            }
            Op::LogitSkip { inputs: [x, d] } => logit_skip_forward(get(*x), get(*d))?,
        };
        guard(&out, k)?;
        Ok(out)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(), NnError> {
        if x.c != self.in_channels {
            return Err(NnError::Shape(format!("network expects {} input channels, got {}", self.in_channels, x.c)));
        }
        Ok(())
    }

    pub fn forward(&self, x: Tensor4<T>) -> Result<Trace<T>, NnError> {
        self.check_input(&x)?;
        let mut values: Vec<Option<Tensor4<T>>> = Vec::with_capacity(self.ops.len() + 1);
        values.push(Some(x));
        for k in 0..self.ops.len() {
            let y = self.apply(k, &values)?;
            values.push(Some(y));
        }
        Ok(Trace { values: values.into_iter().map(|v| v.expect("slot")).collect() })
    }

    /// Forward pass that frees intermediates as soon as they are dead.
    pub fn infer(&self, x: Tensor4<T>) -> Result<Tensor4<T>, NnError> {
        self.check_input(&x)?;
        let n = self.ops.len();
        let mut last_use = vec![0usize; n + 1];
        for (k, op) in self.ops.iter().enumerate() {
            for &i in op.inputs() {
                last_use[i] = k;
            }
        }
        let mut values: Vec<Option<Tensor4<T>>> = vec![None; n + 1];
        values[0] = Some(x);
        for k in 0..n {
            let y = self.apply(k, &values)?;
            values[k + 1] = Some(y);
            for &i in self.ops[k].inputs() {
                if last_use[i] == k {
                    values[i] = None;
                }
            }
        }
        Ok(values[n].take().expect("output"))
    }

    /// Accumulates parameter gradients for the output gradient `dy`; returns
    /// the input gradient if requested.
    pub fn backward(
        &mut self,
        trace: &Trace<T>,
        dy: Tensor4<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor4<T>>, NnError> {
        let n = self.ops.len();
        if trace.values.len() != n + 1 || dy.dims() != trace.output().dims() {
            return Err(NnError::Shape("output gradient does not match the trace".into()));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; n + 1];
        grads[n] = Some(dy);
        let accumulate = |grads: &mut Vec<Option<Tensor4<T>>>, i: usize, g: Tensor4<T>| match grads[i].as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads[i] = Some(g),
        };
        for k in (0..n).rev() {
            let Some(mut g) = grads[k + 1].take() else { continue };
            match &self.ops[k] {
                Op::Conv { layer, input, act } => {
                    let y = &trace.values[k + 1];
                    match act {
                        Activation::Identity => {}
                        Activation::Relu => relu_backward(y, &mut g),
                        Activation::Sigmoid => sigmoid_backward(y, &mut g),
                    }
                    let need_dx = *input != 0 || need_input_grad;
                    if let Some(dx) = conv2d_backward(&trace.values[*input], &mut self.layers[*layer], &g, need_dx)? {
                        accumulate(&mut grads, *input, dx);
                    }
                }
                Op::MaxPool { input } => {
                    let dx = maxpool2x2_backward(&trace.values[*input], &g)?;
                    accumulate(&mut grads, *input, dx);
                }
                Op::Upsample { input } => {
                    let dx = upsample2x_backward(&g)?;
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat { inputs } => {
                    let channels: Vec<usize> = inputs.iter().map(|&i| trace.values[i].c).collect();
                    for (&i, dx) in inputs.iter().zip(concat_channels_backward(&g, &channels)?) {
                        accumulate(&mut grads, i, dx);
                    }
                }
                Op::LogitSkip { inputs: [x, d] } => {
                    let (dx, dd) = logit_skip_backward(&trace.values[*x], &trace.values[k + 1], &g);
                    if *x != 0 || need_input_grad {
                        accumulate(&mut grads, *x, dx);
                    }
                    accumulate(&mut grads, *d, dd);
                }
            }
        }
        Ok(if need_input_grad { grads[0].take() } else { None })
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(|l| l.zero_grad());
    }

    pub fn adam_step(&mut self, opt: &Adam) {
        for l in self.layers.iter_mut() {
            opt.step(l);
        }
    }

    /// Flattened kernel and bias gradients, layer by layer.
    pub fn gradients(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.grad_w.iter().chain(&l.grad_b).copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Small network exercising every op kind.
    fn composite(rng: &mut ChaCha8Rng) -> Network<f64> {
        let layers = vec![
            LayerParams::he_normal(3, 2, 3, rng),
            LayerParams::he_normal(4, 3, 3, rng),
            LayerParams::he_normal(3, 4, 3, rng),
            LayerParams::he_normal(2, 6, 1, rng),
        ];
        let ops = vec![
            Op::Conv { layer: 0, input: 0, act: Activation::Relu },     // 1
            Op::MaxPool { input: 1 },                                   // 2
            Op::Conv { layer: 1, input: 2, act: Activation::Relu },     // 3
            Op::Upsample { input: 3 },                                  // 4
            Op::Conv { layer: 2, input: 4, act: Activation::Identity }, // 5
            Op::Concat { inputs: vec![1, 5] },                          // 6
            Op::Conv { layer: 3, input: 6, act: Activation::Identity }, // 7
            Op::LogitSkip { inputs: [0, 7] },                           // 8
        ];
        Network::new(2, layers, ops).unwrap()
    }

    #[test]
    fn rejects_forward_references() {
        let layers = vec![LayerParams::<f64>::zeros(1, 1, 1)];
        assert!(Network::new(1, layers, vec![Op::MaxPool { input: 1 }]).is_err());
    }

    #[test]
    fn infer_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = composite(&mut rng);
        let x = Tensor4::from_vec(2, 2, 4, 6, (0..96).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        assert_eq!(&net.infer(x.clone()).unwrap(), net.forward(x).unwrap().output());
    }

    #[test]
    fn composite_network_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = composite(&mut rng);
        for l in net.layers.iter_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let x = Tensor4::from_vec(2, 2, 4, 6, (0..96).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let r: Vec<f64> = (0..2 * 2 * 24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |net: &Network<f64>, x: &Tensor4<f64>| -> f64 {
            net.forward(x.clone()).unwrap().output().data.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let trace = net.forward(x.clone()).unwrap();
        let dy = Tensor4::from_vec(2, 2, 4, 6, r.clone()).unwrap();
        let dx = net.backward(&trace, dy, true).unwrap().unwrap();
        let d = 1e-4;
        let tol = |fd: f64, g: f64| 1e-4 * fd.abs().max(g.abs()).max(1e-6);
        for _ in 0..100 {
            let li = rng.random_range(0..net.layers.len());
            let wi = rng.random_range(0..net.layers[li].weight.len());
            let mut p = net.clone();
            p.layers[li].weight[wi] += d;
            let mut m = net.clone();
            m.layers[li].weight[wi] -= d;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * d);
            let g = net.layers[li].grad_w[wi];
            assert!((fd - g).abs() <= tol(fd, g), "layer {li} weight {wi}: {fd} vs {g}");
        }
        for _ in 0..50 {
            let i = rng.random_range(0..x.len());
            let mut xp = x.clone();
            xp.data[i] += d;
            let mut xm = x.clone();
            xm.data[i] -= d;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * d);
            assert!((fd - dx.data[i]).abs() <= tol(fd, dx.data[i]), "input {i}: {fd} vs {}", dx.data[i]);
        }
    }
}
