use serde::{Deserialize, Serialize};

use crate::fem::Outline;

/// Pixel (i, j): `i` is the column counted along +x, `j` the row counted along +y
/// (row 0 is the bottom of the canvas). Buffers are stored row by row.
pub type Pixel = (usize, usize);

#[inline]
pub fn idx(width: usize, i: usize, j: usize) -> usize {
    j * width + i
}

/// Placement of a physical domain on a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    /// Pixels per length unit.
    pub scale: f64,
    /// Physical coordinates of the lower-left corner of pixel (0, 0).
    pub origin: [f64; 2],
}

impl Canvas {
    /// Largest uniform scale that fits the outline's bounding box, centred.
    pub fn fit(outline: &Outline, width: usize, height: usize) -> Self {
        let (lo, hi) = outline.bbox();
        let (bw, bh) = (hi[0] - lo[0], hi[1] - lo[1]);
        let scale = (width as f64 / bw).min(height as f64 / bh);
        Self::centered(outline, width, height, scale)
    }

    pub fn centered(outline: &Outline, width: usize, height: usize, scale: f64) -> Self {
        let (lo, hi) = outline.bbox();
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        Canvas { width, height, scale, origin: [c[0] - 0.5 * width as f64 / scale, c[1] - 0.5 * height as f64 / scale] }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + (i as f64 + 0.5) / self.scale, self.origin[1] + (j as f64 + 0.5) / self.scale]
    }

    /// Pixel containing a physical point, if it is on the canvas.
    pub fn pixel_of(&self, p: [f64; 2]) -> Option<Pixel> {
        let fi = ((p[0] - self.origin[0]) * self.scale).floor();
        let fj = ((p[1] - self.origin[1]) * self.scale).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            None
        } else {
            Some((fi as usize, fj as usize))
        }
    }

    /// Pixels whose centres lie inside the outline.
    pub fn footprint(&self, outline: &Outline) -> Vec<bool> {
        let mut fp = vec![false; self.len()];
        for j in 0..self.height {
            for i in 0..self.width {
                fp[idx(self.width, i, j)] = outline.contains(self.pixel_center(i, j));
            }
        }
        fp
    }
}
