use std::sync::OnceLock;

use pistress_core::models::{build, loss, ModelConfig, Variant};
use pistress_core::nn::{Adam, Tensor4};
use pistress_core::physloss::LossReport;
use pistress_core::pipeline::{evaluate, generate_dataset, train, Dataset, DatasetManifest, RunConfig, Split};
use tempfile::TempDir;

struct Shared {
    _dir: TempDir,
    cfg: RunConfig,
    data: Dataset,
}

/// One generated dataset shared by every test in this file.
fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.run_dir = dir.path().to_path_buf();
        cfg.data.export_images = false;
        generate_dataset(&cfg).unwrap();
        let data = Dataset::load(&cfg).unwrap();
        Shared { _dir: dir, cfg, data }
    })
}

/// The shared dataset cut down to one base case per split.
fn small() -> Dataset {
    let mut d = shared().data.clone();
    d.train.truncate(1);
    d.test.truncate(1);
    d.validation.truncate(1);
    d
}

fn small_model(cfg: &mut RunConfig) {
    cfg.model = ModelConfig { depth: 2, base_channels: 4, ..cfg.model };
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
}

#[test]
fn manifest_round_trips_through_jsonl() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.jsonl");
    s.data.manifest.write(&path).unwrap();
    assert_eq!(DatasetManifest::read(&path).unwrap(), s.data.manifest);
    assert_eq!(DatasetManifest::read(&s.cfg.manifest_path()).unwrap(), s.data.manifest);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = small();
    let run = |tag: &str| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = shared().cfg.clone();
        cfg.run_dir = dir.path().join(tag);
        small_model(&mut cfg);
        let out = train(&cfg, &data, |_| {}).unwrap();
        assert!(out.history.checkpoint.is_file());
        out.history.epochs.iter().map(|e| (e.train, e.test)).collect::<Vec<_>>()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    assert!(a[0].0.total.is_finite() && a[0].0.total > 0.0);
}

#[test]
fn per_sample_reports_average_to_the_split_report() {
    let data = small();
    let model = build::<f32>(&ModelConfig { depth: 2, base_channels: 4, ..Default::default() }, 3).unwrap();
    let ev = evaluate(&model, &data, Split::Test).unwrap();
    assert_eq!(ev.samples.len(), data.len(Split::Test));
    let m = LossReport::mean(&ev.samples.iter().map(|s| s.model).collect::<Vec<_>>());
    let c = LossReport::mean(&ev.samples.iter().map(|s| s.coarse).collect::<Vec<_>>());
    for (got, want) in [(ev.model, m), (ev.coarse, c)] {
        assert!((got.mse - want.mse).abs() <= 1e-12 * want.mse.abs().max(1e-30));
        assert!((got.physical - want.physical).abs() <= 1e-12 * want.physical.abs().max(1e-30));
        assert!((got.total - (got.mse + got.physical)).abs() <= 1e-12 * got.total);
    }
}

#[test]
fn evaluating_an_empty_split_is_an_error() {
    let mut data = small();
    data.test.clear();
    let model = build::<f32>(&ModelConfig { depth: 2, base_channels: 4, ..Default::default() }, 0).unwrap();
    assert!(evaluate(&model, &data, Split::Test).is_err());
}

#[test]
fn learns_the_identity_map() {
    let (n, h, w) = (4, 16, 16);
    let x = Tensor4::<f32>::from_vec(
        n,
        3,
        h,
        w,
        (0..n * 3 * h * w)
            .map(|k| {
                let (i, j, c) = ((k % w) as f32, ((k / w) % h) as f32, (k / (w * h)) as f32);
                0.5 + 0.3 * (0.4 * i + 0.7 * c).sin() * (0.3 * j + c).cos()
            })
            .collect(),
    )
    .unwrap();
    let cfg = ModelConfig { depth: 2, base_channels: 8, variant: Variant::Unet, ..Default::default() };
    let mut model = build::<f32>(&cfg, 1).unwrap();
    let opt = Adam { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    let target: Vec<[Vec<f64>; 3]> =
        (0..n).map(|b| std::array::from_fn(|c| x.plane(b, c).iter().map(|&v| v as f64).collect())).collect();
    let mut mse = f64::INFINITY;
    for _ in 0..500 {
        let trace = model.forward(x.clone()).unwrap();
        let out = trace.output();
        let mut dy = Tensor4::<f32>::zeros(n, 3, h, w);
        let mut sum = 0.0;
        for (b, t) in target.iter().enumerate() {
            let y: [Vec<f64>; 3] = std::array::from_fn(|c| out.plane(b, c).iter().map(|&v| v as f64).collect());
            let lo = loss([&y[0], &y[1], &y[2]], [&t[0], &t[1], &t[2]], w, h, None, &cfg).unwrap();
            sum += lo.report.mse;
            for c in 0..3 {
                for (d, g) in dy.plane_mut(b, c).iter_mut().zip(&lo.grad[c]) {
                    *d = (g / n as f64) as f32;
                }
            }
        }
        mse = sum / n as f64;
        if mse < 1e-3 {
            break;
        }
        model.backward(&trace, dy).unwrap();
        model.net.adam_step(&opt);
    }
    assert!(mse < 1e-3, "identity mse {mse}");
}

#[test]
fn constant_input_gives_output_inside_the_unit_interval() {
    for variant in [Variant::Unet, Variant::Unetpp] {
        for input_skip in [false, true] {
            let cfg = ModelConfig { depth: 3, base_channels: 4, variant, input_skip, ..Default::default() };
            let model = build::<f32>(&cfg, 5).unwrap();
            for v in [0.0f32, 0.5, 1.0] {
                let y = model.infer(Tensor4::from_vec(1, 3, 16, 24, vec![v; 3 * 16 * 24]).unwrap()).unwrap();
                assert!(y.data.iter().all(|&o| o > 0.0 && o < 1.0), "{variant:?} skip={input_skip} input {v}");
            }
        }
    }
}
