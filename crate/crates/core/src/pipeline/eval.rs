use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::{thread_pool, PipelineError};
use crate::codec::pnm::{channel_path, write_pfm, write_triple};
use crate::codec::{decode, interior_mask, transform, ImageTriple, InteriorMask, SamplePair};
use crate::models::{build, Model, ModelConfig, IMAGE_CHANNELS};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::Tensor4;
use crate::physloss::{channels_of, mse_loss, physical_loss, LossReport};

/// Evaluation losses of one sample: the model prediction and the coarse
/// input, both against the fine target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample_id: String,
    pub model: LossReport,
    pub coarse: LossReport,
}

/// Mean losses over a split. Every row reports `total = mse + physical`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub model_name: String,
    pub model: LossReport,
    pub coarse: LossReport,
    pub samples: Vec<SampleEval>,
}

impl Evaluation {
    pub fn rows(&self) -> Vec<(String, LossReport)> {
        vec![("Coarse".to_string(), self.coarse), (self.model_name.clone(), self.model)]
    }
}

pub(crate) fn target_mask(pair: &SamplePair, epsilon: f64) -> InteriorMask {
    interior_mask(&pair.fine, epsilon, &pair.load_pixels)
}

fn report(output: [&[f64]; 3], pair: &SamplePair, mask: &InteriorMask) -> Result<LossReport, PipelineError> {
    let (w, h) = (pair.fine.width, pair.fine.height);
    let num = |e: crate::physloss::PhysLossError| PipelineError::Numerical(e.to_string());
    let mse = mse_loss(output, channels_of(&pair.fine)).map_err(num)?;
    let phys = physical_loss(output, w, h, mask).map_err(num)?;
    Ok(LossReport::new(mse, phys, w * h, Some(1.0)))
}

/// Losses of the coarse image used directly as the prediction.
pub fn coarse_report(pair: &SamplePair, epsilon: f64) -> Result<LossReport, PipelineError> {
    report(channels_of(&pair.coarse), pair, &target_mask(pair, epsilon))
}

/// Stacks the coarse images of `pairs` into a network input batch.
pub(crate) fn batch_input(pairs: &[SamplePair]) -> Tensor4<f32> {
    let (w, h) = (pairs[0].coarse.width, pairs[0].coarse.height);
    let mut x = Tensor4::zeros(pairs.len(), IMAGE_CHANNELS, h, w);
    for (b, p) in pairs.iter().enumerate() {
        for c in 0..IMAGE_CHANNELS {
            for (d, &s) in x.plane_mut(b, c).iter_mut().zip(&p.coarse.channels[c]) {
                *d = s as f32;
            }
        }
    }
    x
}

pub(crate) fn output_channels(out: &Tensor4<f32>, b: usize) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| out.plane(b, c).iter().map(|&v| v as f64).collect())
}

fn predict(model: &Model<f32>, pair: &SamplePair) -> Result<[Vec<f64>; 3], PipelineError> {
    let out = model.infer(batch_input(std::slice::from_ref(pair)))?;
    Ok(output_channels(&out, 0))
}

fn eval_sample(model: &Model<f32>, pair: &SamplePair, epsilon: f64) -> Result<SampleEval, PipelineError> {
    let mask = target_mask(pair, epsilon);
    let out = predict(model, pair)?;
    let r = report([&out[0], &out[1], &out[2]], pair, &mask)?;
    if !r.is_finite() {
        return Err(PipelineError::Numerical(format!("non-finite loss on {}", pair.lineage.sample_id())));
    }
    Ok(SampleEval {
        sample_id: pair.lineage.sample_id(),
        model: r,
        coarse: report(channels_of(&pair.coarse), pair, &mask)?,
    })
}

/// Evaluates `model` on every (augmented) sample of `split`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, split: Split) -> Result<Evaluation, PipelineError> {
    if data.is_empty(split) {
        return Err(PipelineError::Data(format!("split {split:?} is empty")));
    }
    let pool = thread_pool()?;
    let samples: Vec<SampleEval> = pool.install(|| {
        (0..data.len(split))
            .into_par_iter()
            .map(|k| eval_sample(model, &data.sample(split, k), data.epsilon))
            .collect::<Result<_, _>>()
    })?;
    let m: Vec<LossReport> = samples.iter().map(|s| s.model).collect();
    let c: Vec<LossReport> = samples.iter().map(|s| s.coarse).collect();
    Ok(Evaluation {
        split,
        model_name: model.config.name().to_string(),
        model: LossReport::mean(&m),
        coarse: LossReport::mean(&c),
        samples,
    })
}

/// JSON header stored in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub canvas_width: usize,
    pub canvas_height: usize,
}

/// A restored model with the canvas it was trained on.
pub struct LoadedModel {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

impl LoadedModel {
    /// Fails when `data` was rasterized on a different canvas.
    pub fn check_canvas(&self, data: &Dataset) -> Result<(), PipelineError> {
        let pair = data.train.first().or(data.test.first()).or(data.validation.first());
        match pair {
            Some(p) if p.fine.width != self.meta.canvas_width || p.fine.height != self.meta.canvas_height => {
                Err(PipelineError::Data(format!(
                    "checkpoint canvas {}x{} differs from the dataset canvas {}x{}",
                    self.meta.canvas_width, self.meta.canvas_height, p.fine.width, p.fine.height
                )))
            }
            _ => Ok(()),
        }
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel, PipelineError> {
    let bad = |e: &dyn std::fmt::Display| PipelineError::Data(format!("{}: {e}", path.display()));
    let ckpt = Checkpoint::load(path).map_err(|e| bad(&e))?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.config).map_err(|e| bad(&e))?;
    let mut model = build::<f32>(&meta.model, 0)?;
    ckpt.apply_to(&mut model.net).map_err(|e| bad(&e))?;
    Ok(LoadedModel { model, meta })
}

/// Files written for one super-resolved case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperResolved {
    pub case_id: String,
    pub images: [PathBuf; 3],
    pub stresses: [PathBuf; 3],
    pub report: LossReport,
    pub footprint_mismatch: f64,
}

/// RMS difference between the prediction for `pair` and the un-flipped
/// prediction for its flipped copy. Flips are not an exact symmetry of the
/// trained model (and, for the shear channel, not of the physics either), so
/// this is a measurement rather than a check.
pub fn flip_discrepancy(model: &Model<f32>, pair: &SamplePair, hflip: bool, vflip: bool) -> Result<f64, PipelineError> {
    let as_pair = |ch: [Vec<f64>; 3]| -> Result<SamplePair, PipelineError> {
        let img = ImageTriple::new(pair.coarse.width, pair.coarse.height, ch, pair.coarse.contour_map, "")?;
        Ok(SamplePair { coarse: img.clone(), fine: img, load_pixels: Vec::new(), lineage: pair.lineage.clone() })
    };
    let direct = predict(model, pair)?;
    let flipped = predict(model, &transform(pair, hflip, vflip, false))?;
    let back = transform(&as_pair(flipped)?, hflip, vflip, false).fine;
    let n = (3 * direct[0].len()) as f64;
    let ss: f64 =
        (0..3).map(|c| direct[c].iter().zip(&back.channels[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
    Ok((ss / n).sqrt())
}

/// Fraction of input footprint pixels whose predicted background flag
/// differs from the input (`channel 0 >= 1 - epsilon` marks background).
pub fn footprint_mismatch(prediction: &ImageTriple, input: &ImageTriple, epsilon: f64) -> f64 {
    let (p, q) = (prediction.background(epsilon), input.background(epsilon));
    let footprint = q.iter().filter(|&&b| !b).count();
    let differ = p.iter().zip(&q).filter(|(a, b)| a != b).count();
    differ as f64 / footprint.max(1) as f64
}

/// Predicts the fine image of `pair` and writes it (tag `sr`) together with
/// the stresses decoded with the input's contour map (tag `sr_stress`, zero
/// where the prediction is background).
pub fn super_resolve(
    model: &Model<f32>,
    pair: &SamplePair,
    epsilon: f64,
    out_dir: &Path,
    export: bool,
) -> Result<SuperResolved, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let mask = target_mask(pair, epsilon);
    let out = predict(model, pair)?;
    let r = report([&out[0], &out[1], &out[2]], pair, &mask)?;
    let id = pair.lineage.sample_id();
    let image = ImageTriple::new(pair.coarse.width, pair.coarse.height, out, pair.coarse.contour_map, id.clone())?;
    let mismatch = footprint_mismatch(&image, &pair.coarse, epsilon);
    let images = write_triple(out_dir, &image, "sr", export)?;
    let decoded = decode(&image, epsilon);
    let mut stresses: [PathBuf; 3] = Default::default();
    for c in 0..3 {
        let vals: Vec<f64> =
            decoded.values[c].iter().zip(&decoded.background).map(|(&v, &bg)| if bg { 0.0 } else { v }).collect();
        let path = channel_path(out_dir, &id, c, "sr_stress", "pfm");
        write_pfm(&path, image.width, image.height, &vals)?;
        stresses[c] = path;
    }
    Ok(SuperResolved { case_id: id, images, stresses, report: r, footprint_mismatch: mismatch })
}
