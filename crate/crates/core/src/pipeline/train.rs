use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::eval::{batch_input, evaluate, output_channels, target_mask, CheckpointMeta};
use super::{PipelineError, RunConfig};
use crate::models::{build, loss, Model, ModelConfig};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Adam, Tensor4};
use crate::physloss::{channels_of, LossReport};

/// Losses after one epoch. `train` is the mean training objective over the
/// epoch's batches; `test` is the evaluation of the epoch-end weights
/// (`total = mse + physical`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossReport,
    pub test: Option<LossReport>,
    /// Test objective used for checkpoint selection.
    pub test_objective: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub model_name: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub num_params: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: TrainHistory,
}

/// `run_dir/checkpoints/{model}_seed{seed}.ckpt`
pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    let name = cfg.model.name().to_lowercase().replace("++", "pp");
    cfg.run_dir.join("checkpoints").join(format!("{name}_seed{}.ckpt", cfg.seed))
}

/// Objective of a plain or physics-informed model for given losses.
fn objective(model: &ModelConfig, r: &LossReport) -> f64 {
    if model.physics_informed {
        r.mse + model.physics_weight * r.physical
    } else {
        r.mse
    }
}

/// Trains the configured model on the training split; keeps the weights of
/// the epoch with the lowest test objective (the last epoch without a test
/// split) and writes them with the history next to them.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let t = &cfg.train;
    let (w, h) = (data.train[0].fine.width, data.train[0].fine.height);
    cfg.model.check_canvas(h, w)?;
    let mut model = build::<f32>(&cfg.model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a3b1e5);
    let n_train = data.len(Split::Train);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut epochs = Vec::with_capacity(t.epochs);
    let meta = CheckpointMeta { model: cfg.model, canvas_width: w, canvas_height: h };
    let config_json = serde_json::to_string(&meta).expect("serializable");

    for epoch in 0..t.epochs {
        let start = Instant::now();
        let lr = t.lr_at(epoch);
        let opt = Adam { lr, beta1: t.adam_beta1, beta2: t.adam_beta2, eps: t.adam_eps };
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(n_train);
        for batch in order.chunks(t.batch_size) {
            let pairs: Vec<_> = batch.iter().map(|&k| data.sample(Split::Train, k)).collect();
            let trace = model.forward(batch_input(&pairs))?;
            let out = trace.output();
            let mut dy = Tensor4::<f32>::zeros(out.n, out.c, out.h, out.w);
            let scale = 1.0 / pairs.len() as f64;
            for (b, pair) in pairs.iter().enumerate() {
                let mask = target_mask(pair, data.epsilon);
                let ch = output_channels(out, b);
                let lo = loss([&ch[0], &ch[1], &ch[2]], channels_of(&pair.fine), w, h, Some(&mask), &cfg.model)?;
                if !lo.report.is_finite() {
                    return Err(PipelineError::Numerical(format!(
                        "non-finite loss at epoch {epoch} on {}",
                        pair.lineage.sample_id()
                    )));
                }
                for c in 0..3 {
                    for (d, &g) in dy.plane_mut(b, c).iter_mut().zip(&lo.grad[c]) {
                        *d = (g * scale) as f32;
                    }
                }
                reports.push(lo.report);
            }
            model.backward(&trace, dy)?;
            model.net.adam_step(&opt);
        }
        let train_report = LossReport::mean(&reports);
        let test = if data.is_empty(Split::Test) { None } else { Some(evaluate(&model, data, Split::Test)?.model) };
        let test_objective = test.as_ref().map(|r| objective(&cfg.model, r));
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train: train_report,
            test,
            test_objective,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        let score = test_objective.unwrap_or(0.0);
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, epoch, Checkpoint::from_network(&model.net, config_json.clone())));
        }
        epochs.push(record);
    }

    let path = checkpoint_path(cfg);
    let best_epoch = match best {
        Some((_, e, ckpt)) => {
            ckpt.apply_to(&mut model.net)?;
            fs::create_dir_all(path.parent().expect("checkpoint dir"))?;
            ckpt.save(&path)?;
            e
        }
        None => return Err(PipelineError::Config("epochs must be at least 1".into())),
    };
    let history = TrainHistory {
        model_name: cfg.model.name().to_string(),
        model: cfg.model,
        seed: cfg.seed,
        num_params: model.num_params(),
        train_samples: n_train,
        test_samples: data.len(Split::Test),
        epochs,
        best_epoch,
        checkpoint: path.clone(),
    };
    fs::write(path.with_extension("history.json"), serde_json::to_string_pretty(&history).expect("serializable"))?;
    Ok(TrainOutcome { model, history })
}
