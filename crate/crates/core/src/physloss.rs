//! Equilibrium-residual penalty and mean squared error on intensity rasters.
//!
//! Rasters are three channels (sx, sy, txy) of `width * height` values stored
//! row by row with row index `j` along +y. The residual uses plain central
//! differences without the grid-spacing factor:
//!
//! ```text
//! r_x = y1(i+1,j) - y1(i-1,j) + y3(i,j+1) - y3(i,j-1)
//! r_y = y2(i,j+1) - y2(i,j-1) + y3(i+1,j) - y3(i-1,j)
//! ```
//!
//! Body forces never enter: load pixels are excluded by the interior mask.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ImageTriple, InteriorMask};

#[derive(Debug, Error, PartialEq)]
pub enum PhysLossError {
    #[error("raster {width}x{height} is smaller than the 3x3 stencil")]
    TooSmall { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Channels<'a> = [&'a [f64]; 3];

pub fn channels_of(image: &ImageTriple) -> Channels<'_> {
    [&image.channels[0], &image.channels[1], &image.channels[2]]
}

fn check(ch: &Channels, width: usize, height: usize) -> Result<(), PhysLossError> {
    if width < 3 || height < 3 {
        return Err(PhysLossError::TooSmall { width, height });
    }
    if ch.iter().any(|c| c.len() != width * height) {
        return Err(PhysLossError::DimensionMismatch(format!("channels must hold {width}x{height} values")));
    }
    Ok(())
}

fn check_mask(mask: &InteriorMask, width: usize, height: usize) -> Result<(), PhysLossError> {
    if mask.width != width || mask.height != height {
        return Err(PhysLossError::DimensionMismatch(format!(
            "mask {}x{} vs raster {width}x{height}",
            mask.width, mask.height
        )));
    }
    Ok(())
}

#[inline]
fn residual_at(ch: &Channels, w: usize, k: usize) -> (f64, f64) {
    let [y1, y2, y3] = ch;
    let rx = y1[k + 1] - y1[k - 1] + y3[k + w] - y3[k - w];
    let ry = y2[k + w] - y2[k - w] + y3[k + 1] - y3[k - 1];
    (rx, ry)
}

/// Residual rasters `(r_x, r_y)`; border pixels are `NaN`.
pub fn divergence(ch: Channels, width: usize, height: usize) -> Result<[Vec<f64>; 2], PhysLossError> {
    check(&ch, width, height)?;
    let mut rx = vec![f64::NAN; width * height];
    let mut ry = vec![f64::NAN; width * height];
    for j in 1..height - 1 {
        for i in 1..width - 1 {
            let k = j * width + i;
            let (a, b) = residual_at(&ch, width, k);
            rx[k] = a;
            ry[k] = b;
        }
    }
    Ok([rx, ry])
}

/// Masked squared-residual sum and its per-pixel normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLoss {
    pub sum: f64,
    /// `sum / masked_count`, zero for an empty mask.
    pub normalized: f64,
    pub masked_count: usize,
    /// Set when the mask selects no pixel; the loss is then reported as zero.
    pub empty_mask: bool,
}

impl PhysicalLoss {
    fn from_sum(sum: f64, masked_count: usize) -> Self {
        PhysicalLoss {
            sum,
            normalized: if masked_count == 0 { 0.0 } else { sum / masked_count as f64 },
            masked_count,
            empty_mask: masked_count == 0,
        }
    }
}

fn masked_pixels(mask: &InteriorMask) -> impl Iterator<Item = usize> + '_ {
    let w = mask.width;
    mask.mask.iter().enumerate().filter_map(move |(k, &m)| {
        let (i, j) = (k % w, k / w);
        // border pixels have no full stencil and are never counted
        (m && i > 0 && j > 0 && i + 1 < w && j + 1 < mask.height).then_some(k)
    })
}

pub fn physical_loss(
    ch: Channels,
    width: usize,
    height: usize,
    mask: &InteriorMask,
) -> Result<PhysicalLoss, PhysLossError> {
    check(&ch, width, height)?;
    check_mask(mask, width, height)?;
    let mut sum = 0.0;
    let mut count = 0;
    for k in masked_pixels(mask) {
        let (rx, ry) = residual_at(&ch, width, k);
        sum += rx * rx + ry * ry;
        count += 1;
    }
    Ok(PhysicalLoss::from_sum(sum, count))
}

/// Loss and gradient of the normalized physical loss with respect to every
/// channel value.
pub fn physical_loss_grad(
    ch: Channels,
    width: usize,
    height: usize,
    mask: &InteriorMask,
) -> Result<(PhysicalLoss, [Vec<f64>; 3]), PhysLossError> {
    check(&ch, width, height)?;
    check_mask(mask, width, height)?;
    let n = width * height;
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let pixels: Vec<usize> = masked_pixels(mask).collect();
    let scale = if pixels.is_empty() { 0.0 } else { 2.0 / pixels.len() as f64 };
    let mut sum = 0.0;
    let w = width;
    for &k in &pixels {
        let (rx, ry) = residual_at(&ch, w, k);
        sum += rx * rx + ry * ry;
        let (ax, ay) = (scale * rx, scale * ry);
        g[0][k + 1] += ax;
        g[0][k - 1] -= ax;
        g[2][k + w] += ax;
        g[2][k - w] -= ax;
        g[1][k + w] += ay;
        g[1][k - w] -= ay;
        g[2][k + 1] += ay;
        g[2][k - 1] -= ay;
    }
    Ok((PhysicalLoss::from_sum(sum, pixels.len()), g))
}

fn check_pair(o: &Channels, t: &Channels) -> Result<usize, PhysLossError> {
    let n = o[0].len();
    if o.iter().chain(t.iter()).any(|c| c.len() != n) {
        return Err(PhysLossError::DimensionMismatch("output and target channel lengths differ".into()));
    }
    Ok(3 * n)
}

/// `(1/N) sum (t - o)^2` over all pixels and channels.
pub fn mse_loss(output: Channels, target: Channels) -> Result<f64, PhysLossError> {
    let n = check_pair(&output, &target)?;
    let s: f64 = (0..3).map(|c| output[c].iter().zip(target[c]).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()).sum();
    Ok(s / n as f64)
}

/// MSE and its gradient `(2/N)(o - t)`.
pub fn mse_loss_grad(output: Channels, target: Channels) -> Result<(f64, [Vec<f64>; 3]), PhysLossError> {
    let n = check_pair(&output, &target)?;
    let f = 2.0 / n as f64;
    let g = std::array::from_fn(|c| output[c].iter().zip(target[c]).map(|(o, t)| f * (o - t)).collect());
    Ok((mse_loss(output, target)?, g))
}

/// Losses of one prediction or the mean over a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub mse: f64,
    /// Normalized physical loss (per masked pixel).
    pub physical: f64,
    /// Unnormalized masked sum.
    pub physical_sum: f64,
    pub pixel_count: usize,
    pub masked_count: usize,
}

impl LossReport {
    /// `total = mse + weight * physical`; pass `None` for a plain model whose
    /// total is the MSE alone.
    pub fn new(mse: f64, physical: PhysicalLoss, pixel_count: usize, physics_weight: Option<f64>) -> Self {
        let total = match physics_weight {
            Some(w) => mse + w * physical.normalized,
            None => mse,
        };
        LossReport {
            total,
            mse,
            physical: physical.normalized,
            physical_sum: physical.sum,
            pixel_count,
            masked_count: physical.masked_count,
        }
    }

    /// Arithmetic mean of per-sample reports, accumulated in the given order.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.total += r.total;
            m.mse += r.mse;
            m.physical += r.physical;
            m.physical_sum += r.physical_sum;
            m.pixel_count += r.pixel_count;
            m.masked_count += r.masked_count;
        }
        m.total /= n;
        m.mse /= n;
        m.physical /= n;
        m.physical_sum /= n;
        m.pixel_count = (m.pixel_count as f64 / n).round() as usize;
        m.masked_count = (m.masked_count as f64 / n).round() as usize;
        m
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.mse.is_finite() && self.physical.is_finite() && self.physical_sum.is_finite()
    }
}

/// Loss table with Total / MSE / physical columns, values scaled by 1e-4.
pub fn format_table(rows: &[(String, LossReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<name_w$}  {:>14}  {:>14}  {:>14}", "Model", "Total loss", "MSE loss", "Physical loss");
    let _ = writeln!(s, "{:<name_w$}  {:>14}  {:>14}  {:>14}", "", "(x1e-4)", "(x1e-4)", "(x1e-4)");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>14.4}  {:>14.4}  {:>14.4}",
            name,
            r.total * 1e4,
            r.mse * 1e4,
            r.physical * 1e4
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_channels(rng: &mut ChaCha8Rng, n: usize) -> [Vec<f64>; 3] {
        std::array::from_fn(|_| (0..n).map(|_| rng.random::<f64>()).collect())
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> InteriorMask {
        InteriorMask { width: w, height: h, mask: (0..w * h).map(|_| rng.random::<f64>() < p).collect() }
    }

    fn as_refs(c: &[Vec<f64>; 3]) -> Channels<'_> {
        [&c[0], &c[1], &c[2]]
    }

    /// The residual written with explicit (i, j) indexing.
    fn oracle(c: &[Vec<f64>; 3], w: usize, h: usize, mask: &InteriorMask) -> f64 {
        let y = |ch: usize, i: usize, j: usize| c[ch][j * w + i];
        let mut s = 0.0;
        for j in 1..h - 1 {
            for i in 1..w - 1 {
                if !mask.mask[j * w + i] {
                    continue;
                }
                let rx = (y(0, i + 1, j) - y(0, i - 1, j)) + (y(2, i, j + 1) - y(2, i, j - 1));
                let ry = (y(1, i, j + 1) - y(1, i, j - 1)) + (y(2, i + 1, j) - y(2, i - 1, j));
                s += rx * rx + ry * ry;
            }
        }
        s
    }

    #[test]
    fn constant_rasters_have_zero_residual() {
        let c = [vec![0.3; 30], vec![0.7; 30], vec![0.1; 30]];
        let [rx, ry] = divergence(as_refs(&c), 6, 5).unwrap();
        for k in 0..30 {
            let (i, j) = (k % 6, k / 6);
            if i > 0 && j > 0 && i < 5 && j < 4 {
                assert_eq!((rx[k], ry[k]), (0.0, 0.0));
            } else {
                assert!(rx[k].is_nan() && ry[k].is_nan());
            }
        }
        let mask = InteriorMask { width: 6, height: 5, mask: vec![true; 30] };
        let (l, g) = physical_loss_grad(as_refs(&c), 6, 5, &mask).unwrap();
        assert_eq!(l.sum, 0.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_gives_twice_slope() {
        let (w, h, a) = (7, 5, 0.05);
        let y1: Vec<f64> = (0..w * h).map(|k| a * (k % w) as f64).collect();
        let c = [y1, vec![0.4; w * h], vec![0.2; w * h]];
        let [rx, _] = divergence(as_refs(&c), w, h).unwrap();
        for j in 1..h - 1 {
            for i in 1..w - 1 {
                assert!((rx[j * w + i] - 2.0 * a).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn checkerboard_is_in_the_null_space() {
        let (w, h) = (8, 8);
        let y1: Vec<f64> = (0..w * h).map(|k| ((k % w + k / w) % 2) as f64).collect();
        let c = [y1, vec![0.0; w * h], vec![0.0; w * h]];
        let mask = InteriorMask { width: w, height: h, mask: vec![true; w * h] };
        assert_eq!(physical_loss(as_refs(&c), w, h, &mask).unwrap().sum, 0.0);
    }

    #[test]
    fn too_small_raster_rejected() {
        let c = [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]];
        assert_eq!(divergence(as_refs(&c), 2, 2).unwrap_err(), PhysLossError::TooSmall { width: 2, height: 2 });
    }

    #[test]
    fn empty_mask_flags_and_returns_zero() {
        let c = [vec![0.1; 16], vec![0.9; 16], vec![0.5; 16]];
        let l = physical_loss(as_refs(&c), 4, 4, &InteriorMask::empty(4, 4)).unwrap();
        assert!(l.empty_mask);
        assert_eq!(l.normalized, 0.0);
    }

    #[test]
    fn matches_scalar_oracle_on_random_rasters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (w, h) = (rng.random_range(3..12), rng.random_range(3..12));
            let c = random_channels(&mut rng, w * h);
            let mask = random_mask(&mut rng, w, h, 0.6);
            let l = physical_loss(as_refs(&c), w, h, &mask).unwrap();
            let o = oracle(&c, w, h, &mask);
            assert!((l.sum - o).abs() <= 1e-12 * o.abs().max(1e-300));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (6, 5);
        let c = random_channels(&mut rng, w * h);
        let mask = random_mask(&mut rng, w, h, 0.7);
        let (_, g) = physical_loss_grad(as_refs(&c), w, h, &mask).unwrap();
        let d = 1e-4;
        for ch in 0..3 {
            for k in 0..w * h {
                let mut p = c.clone();
                p[ch][k] += d;
                let mut m = c.clone();
                m[ch][k] -= d;
                let fd = (physical_loss(as_refs(&p), w, h, &mask).unwrap().normalized
                    - physical_loss(as_refs(&m), w, h, &mask).unwrap().normalized)
                    / (2.0 * d);
                assert!((fd - g[ch][k]).abs() <= 1e-6 * fd.abs().max(1e-8), "ch {ch} k {k}: {fd} vs {}", g[ch][k]);
            }
        }
    }

    #[test]
    fn mse_examples() {
        let t = [vec![0.2, 0.4], vec![0.6, 0.8], vec![0.1, 0.3]];
        assert_eq!(mse_loss(as_refs(&t), as_refs(&t)).unwrap(), 0.0);
        let o: [Vec<f64>; 3] = std::array::from_fn(|c| t[c].iter().map(|v| v + 0.25).collect());
        assert!((mse_loss(as_refs(&o), as_refs(&t)).unwrap() - 0.0625).abs() < 1e-15);
        let short = [vec![0.0], vec![0.0], vec![0.0]];
        assert!(mse_loss(as_refs(&short), as_refs(&t)).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_channels(&mut rng, 12);
        let t = random_channels(&mut rng, 12);
        let (_, g) = mse_loss_grad(as_refs(&o), as_refs(&t)).unwrap();
        let d = 1e-4;
        for ch in 0..3 {
            for k in 0..12 {
                let mut p = o.clone();
                p[ch][k] += d;
                let mut m = o.clone();
                m[ch][k] -= d;
                let fd = (mse_loss(as_refs(&p), as_refs(&t)).unwrap() - mse_loss(as_refs(&m), as_refs(&t)).unwrap())
                    / (2.0 * d);
                assert!((fd - g[ch][k]).abs() <= 1e-8 * fd.abs().max(1e-8));
            }
        }
    }

    #[test]
    fn table_has_one_line_per_row() {
        let r = LossReport::new(1e-3, PhysicalLoss::from_sum(2.0, 4), 12, Some(1.0));
        assert!((r.total - (1e-3 + 0.5)).abs() < 1e-15);
        let t = format_table(&[("Coarse".into(), r), ("PI-UNet".into(), r)]);
        assert_eq!(t.lines().count(), 4);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<LossReport>(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_translation_invariant(
            seed in any::<u64>(), shift in -2.0f64..2.0, w in 3usize..9, h in 3usize..9
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_channels(&mut rng, w * h);
            let mask = random_mask(&mut rng, w, h, 0.5);
            let a = physical_loss(as_refs(&c), w, h, &mask).unwrap();
            let shifted: [Vec<f64>; 3] = std::array::from_fn(|ch| c[ch].iter().map(|v| v + shift).collect());
            let b = physical_loss(as_refs(&shifted), w, h, &mask).unwrap();
            prop_assert!(a.sum >= 0.0 && a.normalized >= 0.0);
            prop_assert!((a.sum - b.sum).abs() <= 1e-9 * a.sum.max(1.0));
        }

        #[test]
        fn shrinking_mask_never_increases_sum(seed in any::<u64>(), w in 3usize..9, h in 3usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_channels(&mut rng, w * h);
            let mask = random_mask(&mut rng, w, h, 0.8);
            let mut smaller = mask.clone();
            for m in smaller.mask.iter_mut() {
                if rng.random::<f64>() < 0.3 {
                    *m = false;
                }
            }
            let a = physical_loss(as_refs(&c), w, h, &mask).unwrap();
            let b = physical_loss(as_refs(&c), w, h, &smaller).unwrap();
            prop_assert!(b.sum <= a.sum);
        }

        #[test]
        fn constant_field_loss_is_exactly_zero(v in prop::array::uniform3(0.0f64..1.0), w in 3usize..9, h in 3usize..9) {
            let c: [Vec<f64>; 3] = std::array::from_fn(|ch| vec![v[ch]; w * h]);
            let mask = InteriorMask { width: w, height: h, mask: vec![true; w * h] };
            prop_assert_eq!(physical_loss(as_refs(&c), w, h, &mask).unwrap().sum, 0.0);
        }
    }
}
