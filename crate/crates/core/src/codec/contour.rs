use serde::{Deserialize, Serialize};

use crate::fem::StressField;

/// Intensities assigned to the smallest and largest stress of a case.
pub const INTENSITY_LOW: f64 = 0.05;
pub const INTENSITY_HIGH: f64 = 0.95;
pub const BACKGROUND: f64 = 1.0;

/// Linear intensity <-> stress transform of one analysis case:
/// `stress = c * (intensity + s)`, shared by all three channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourMap {
    pub c: f64,
    pub s: f64,
}

impl ContourMap {
    pub fn new(c: f64, s: f64) -> Self {
        assert!(c != 0.0 && c.is_finite() && s.is_finite(), "contour coefficient must be finite and non-zero");
        ContourMap { c, s }
    }

    pub fn intensity(&self, stress: f64) -> f64 {
        stress / self.c - self.s
    }

    pub fn stress(&self, intensity: f64) -> f64 {
        self.c * (intensity + self.s)
    }

    /// Map after `I -> 1 - I`, decoding to the same stresses.
    pub fn inverted(&self) -> Self {
        ContourMap { c: -self.c, s: -(1.0 + self.s) }
    }

    /// Fits the map so the stress range `[lo, hi]` lands on
    /// `[INTENSITY_LOW, INTENSITY_HIGH]`. A degenerate range puts its single
    /// value at mid-grey.
    pub fn fit_range(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let mag = lo.abs().max(hi.abs());
        if !(span > 1e-12 * mag) {
            let v = 0.5 * (lo + hi);
            let c = if v == 0.0 { 1.0 } else { v.abs() };
            return ContourMap::new(c, v / c - 0.5);
        }
        let c = span / (INTENSITY_HIGH - INTENSITY_LOW);
        ContourMap::new(c, lo / c - INTENSITY_LOW)
    }
}

/// Contour map over all three components of one field.
pub fn fit_contour_map(field: &StressField) -> ContourMap {
    let (lo, hi) = field.range();
    ContourMap::fit_range(lo, hi)
}

/// Contour map covering every component of several fields of the same case.
pub fn fit_contour_map_many(fields: &[&StressField]) -> ContourMap {
    let (lo, hi) = fields
        .iter()
        .map(|f| f.range())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| (a.min(lo), b.max(hi)));
    ContourMap::fit_range(lo, hi)
}
