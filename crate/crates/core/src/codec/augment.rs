use serde::{Deserialize, Serialize};

use super::raster::{idx, Pixel};
use super::{ImageTriple, DEFAULT_EPSILON};

/// Which transforms produced a sample from its base case.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub base_case: String,
    pub hflip: bool,
    pub vflip: bool,
    pub invert: bool,
}

impl Lineage {
    pub fn base(case_id: impl Into<String>) -> Self {
        Lineage { base_case: case_id.into(), hflip: false, vflip: false, invert: false }
    }

    /// Index in `0..8` following the order produced by [`augment`].
    pub fn code(&self) -> usize {
        (self.hflip as usize) | (self.vflip as usize) << 1 | (self.invert as usize) << 2
    }

    pub fn sample_id(&self) -> String {
        let mut s = self.base_case.clone();
        if self.hflip || self.vflip || self.invert {
            s.push('~');
            if self.hflip {
                s.push('h');
            }
            if self.vflip {
                s.push('v');
            }
            if self.invert {
                s.push('i');
            }
        }
        s
    }
}

/// Coarse input and fine target of one case on a shared canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub coarse: ImageTriple,
    pub fine: ImageTriple,
    pub load_pixels: Vec<Pixel>,
    pub lineage: Lineage,
}

fn flip(image: &ImageTriple, horizontal: bool, vertical: bool) -> ImageTriple {
    let (w, h) = (image.width, image.height);
    let channels = std::array::from_fn(|c| {
        let src = &image.channels[c];
        let mut out = vec![0.0; w * h];
        for j in 0..h {
            let sj = if vertical { h - 1 - j } else { j };
            for i in 0..w {
                let si = if horizontal { w - 1 - i } else { i };
                out[idx(w, i, j)] = src[idx(w, si, sj)];
            }
        }
        out
    });
    ImageTriple { channels, ..image.clone() }
}

/// `I -> 1 - I` on the domain; the contour map is adjusted so that decoded
/// stresses are unchanged.
fn invert(image: &ImageTriple) -> ImageTriple {
    let bg = image.background(DEFAULT_EPSILON);
    let channels = std::array::from_fn(|c| {
        image.channels[c].iter().zip(&bg).map(|(&v, &b)| if b { v } else { 1.0 - v }).collect()
    });
    ImageTriple { channels, contour_map: image.contour_map.inverted(), ..image.clone() }
}

/// Applies one combination of transforms to both images of a pair.
///
/// The shear channel is mirrored like the normal ones, without a sign change.
pub fn transform(pair: &SamplePair, hflip: bool, vflip: bool, inv: bool) -> SamplePair {
    let apply = |img: &ImageTriple| {
        let f = flip(img, hflip, vflip);
        if inv {
            invert(&f)
        } else {
            f
        }
    };
    let (w, h) = (pair.fine.width, pair.fine.height);
    let mut load_pixels: Vec<Pixel> = pair
        .load_pixels
        .iter()
        .map(|&(i, j)| (if hflip { w - 1 - i } else { i }, if vflip { h - 1 - j } else { j }))
        .collect();
    load_pixels.sort_by_key(|&(i, j)| (j, i));
    SamplePair {
        coarse: apply(&pair.coarse),
        fine: apply(&pair.fine),
        load_pixels,
        lineage: Lineage {
            base_case: pair.lineage.base_case.clone(),
            hflip: pair.lineage.hflip ^ hflip,
            vflip: pair.lineage.vflip ^ vflip,
            invert: pair.lineage.invert ^ inv,
        },
    }
}

/// The original pair followed by its seven flip/inversion variants.
pub fn augment(pair: &SamplePair) -> Vec<SamplePair> {
    (0..8).map(|code| transform(pair, code & 1 != 0, code & 2 != 0, code & 4 != 0)).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::codec::{decode, ContourMap};

    fn random_pair(w: usize, h: usize, vals: &[f64]) -> SamplePair {
        // footprint: everything except the first column and a corner block
        let mut chans: [Vec<f64>; 3] = std::array::from_fn(|_| vec![1.0; w * h]);
        let mut k = 0;
        for j in 0..h {
            for i in 0..w {
                if i == 0 || (i > w / 2 && j > h / 2) {
                    continue;
                }
                for ch in chans.iter_mut() {
                    ch[idx(w, i, j)] = 0.05 + 0.9 * vals[k % vals.len()];
                    k += 1;
                }
            }
        }
        let img = ImageTriple::new(w, h, chans, ContourMap::new(3.0, -0.4), "case").unwrap();
        SamplePair { coarse: img.clone(), fine: img, load_pixels: vec![(1, 1), (2, 1)], lineage: Lineage::base("case") }
    }

    #[test]
    fn eight_distinct_samples() {
        let pair = random_pair(6, 4, &[0.1, 0.7, 0.3, 0.9, 0.5]);
        let out = augment(&pair);
        assert_eq!(out.len(), 8);
        let codes: Vec<usize> = out.iter().map(|s| s.lineage.code()).collect();
        assert_eq!(codes, (0..8).collect::<Vec<_>>());
        assert_eq!(out[0], pair);
    }

    #[test]
    fn double_flip_is_identity() {
        let pair = random_pair(7, 5, &[0.2, 0.6, 0.4]);
        let twice = transform(&transform(&pair, true, false, false), true, false, false);
        assert_eq!(twice, pair);
    }

    proptest! {
        #[test]
        fn augmented_images_stay_valid(vals in prop::collection::vec(0.0f64..1.0, 10..40), w in 4usize..10, h in 4usize..10) {
            let pair = random_pair(w, h, &vals);
            let bg = pair.fine.background(DEFAULT_EPSILON);
            for s in augment(&pair) {
                prop_assert!(s.coarse.is_valid(DEFAULT_EPSILON));
                prop_assert!(s.fine.is_valid(DEFAULT_EPSILON));
                prop_assert_eq!(s.coarse.background(DEFAULT_EPSILON), s.fine.background(DEFAULT_EPSILON));
                let bg_count = s.fine.background(DEFAULT_EPSILON).iter().filter(|&&b| b).count();
                prop_assert_eq!(bg_count, bg.iter().filter(|&&b| b).count());
            }
        }

        #[test]
        fn inversion_keeps_decoded_stress(vals in prop::collection::vec(0.0f64..1.0, 10..40)) {
            let pair = random_pair(6, 5, &vals);
            let inv = transform(&pair, false, false, true);
            let a = decode(&pair.fine, DEFAULT_EPSILON);
            let b = decode(&inv.fine, DEFAULT_EPSILON);
            for c in 0..3 {
                for (x, y) in a.values[c].iter().zip(&b.values[c]) {
                    prop_assert!((x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-12);
                }
            }
        }
    }
}
