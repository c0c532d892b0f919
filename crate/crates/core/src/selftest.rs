//! Quick numerical self-checks: network gradients, an FEM patch test, the
//! codec round trip and the physical-loss gradient.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::{decode, fit_contour_map, rasterize, sample_field, Canvas, InteriorMask};
use crate::fem::{analyze, build_mesh_cantilever, Axis, Constraint, LoadCase, LoadEdge, Material};
use crate::nn::{Activation, LayerParams, Network, Op, Tensor4};
use crate::physloss::{physical_loss, physical_loss_grad};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub error: f64,
    pub tolerance: f64,
}

fn result(name: &'static str, error: f64, tolerance: f64) -> CheckResult {
    CheckResult { name, passed: error.is_finite() && error <= tolerance, error, tolerance }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Finite differences against the backward pass of a network using every op.
pub fn gradient_check(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        LayerParams::he_normal(3, 2, 3, &mut rng),
        LayerParams::he_normal(4, 3, 3, &mut rng),
        LayerParams::he_normal(3, 4, 3, &mut rng),
        LayerParams::he_normal(2, 6, 1, &mut rng),
    ];
    let ops = vec![
        Op::Conv { layer: 0, input: 0, act: Activation::Relu },
        Op::MaxPool { input: 1 },
        Op::Conv { layer: 1, input: 2, act: Activation::Relu },
        Op::Upsample { input: 3 },
        Op::Conv { layer: 2, input: 4, act: Activation::Identity },
        Op::Concat { inputs: vec![1, 5] },
        Op::Conv { layer: 3, input: 6, act: Activation::Identity },
        Op::LogitSkip { inputs: [0, 7] },
    ];
    let mut net = Network::<f64>::new(2, layers, ops).expect("valid network");
    let x = Tensor4::from_vec(1, 2, 4, 6, (0..48).map(|_| rng.random_range(0.05..0.95)).collect()).expect("shape");
    let r: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |net: &Network<f64>| -> f64 {
        net.forward(x.clone()).expect("forward").output().data.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let trace = net.forward(x.clone()).expect("forward");
    net.backward(&trace, Tensor4::from_vec(1, 2, 4, 6, r.clone()).expect("shape"), false).expect("backward");
    let d = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let li = rng.random_range(0..net.layers.len());
        let wi = rng.random_range(0..net.layers[li].weight.len());
        let (mut p, mut m) = (net.clone(), net.clone());
        p.layers[li].weight[wi] += d;
        m.layers[li].weight[wi] -= d;
        let fd = (f(&p) - f(&m)) / (2.0 * d);
        worst = worst.max(rel(fd, net.layers[li].grad_w[wi]));
    }
    result("network_gradient", worst, 1e-4)
}

/// Uniform axial traction on a cantilever with a sliding root must give a
/// uniform stress state exactly.
pub fn patch_test() -> CheckResult {
    let mesh = Arc::new(build_mesh_cantilever(100.0, 10.0).expect("mesh"));
    let mat = Material::default();
    let load = LoadCase::distributed(Constraint::Sliding, Axis::X, LoadEdge::FreeEnd, 1000.0);
    let expected = 1000.0 / (100.0 * mat.thickness);
    let err = match analyze(&mesh, &mat, &load) {
        Ok(sol) => {
            let s = &sol.stress;
            let mut worst: f64 = 0.0;
            for k in 0..mesh.num_nodes() {
                worst = worst.max((s.sigma_x[k] - expected).abs()).max(s.sigma_y[k].abs()).max(s.tau_xy[k].abs());
            }
            worst / expected
        }
        Err(_) => f64::INFINITY,
    };
    result("fem_patch_test", err, 1e-8)
}

/// Encoding and decoding a solved field reproduces the sampled stresses.
pub fn codec_round_trip() -> CheckResult {
    let mesh = Arc::new(build_mesh_cantilever(100.0, 10.0).expect("mesh"));
    let load = LoadCase::concentrated(Constraint::Fixed, Axis::Y, 3, 1000.0);
    let err = (|| -> Option<f64> {
        let field = analyze(&mesh, &Material::default(), &load).ok()?.stress;
        let canvas = Canvas::fit(&mesh.outline, 128, 96);
        let map = fit_contour_map(&field);
        let sampled = sample_field(&field, &canvas).ok()?;
        let dec = decode(&rasterize(&field, map, &canvas, "selftest").ok()?, crate::codec::DEFAULT_EPSILON);
        let (lo, hi) = field.range();
        let mut worst: f64 = 0.0;
        for c in 0..3 {
            for k in 0..canvas.len() {
                if sampled.footprint[k] != !dec.background[k] {
                    return None;
                }
                if sampled.footprint[k] {
                    worst = worst.max((dec.values[c][k] - sampled.values[c][k]).abs());
                }
            }
        }
        Some(worst / (hi - lo).max(f64::MIN_POSITIVE))
    })()
    .unwrap_or(f64::INFINITY);
    result("codec_round_trip", err, 1e-9)
}

/// Finite differences against the analytic physical-loss gradient.
pub fn physics_gradient_check(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (9, 7);
    let ch: [Vec<f64>; 3] = std::array::from_fn(|_| (0..w * h).map(|_| rng.random::<f64>()).collect());
    let mut mask = InteriorMask::empty(w, h);
    for j in 1..h - 1 {
        for i in 1..w - 1 {
            mask.mask[j * w + i] = rng.random_bool(0.7);
        }
    }
    let loss = |c: &[Vec<f64>; 3]| physical_loss([&c[0], &c[1], &c[2]], w, h, &mask).expect("loss").normalized;
    let (_, g) = physical_loss_grad([&ch[0], &ch[1], &ch[2]], w, h, &mask).expect("grad");
    let d = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        for k in 0..w * h {
            let (mut p, mut m) = (ch.clone(), ch.clone());
            p[c][k] += d;
            m[c][k] -= d;
            let fd = (loss(&p) - loss(&m)) / (2.0 * d);
            worst = worst.max((fd - g[c][k]).abs());
        }
    }
    result("physics_loss_gradient", worst, 1e-7)
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![gradient_check(seed), patch_test(), codec_round_trip(), physics_gradient_check(seed)]
}
