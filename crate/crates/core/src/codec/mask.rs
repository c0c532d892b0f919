use serde::{Deserialize, Serialize};

use super::raster::{idx, Canvas, Pixel};
use super::ImageTriple;
use crate::fem::Mesh;

/// Pixels whose full central-difference stencil lies inside the domain and
/// away from load application points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteriorMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl InteriorMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[idx(self.width, i, j)]
    }

    pub fn empty(width: usize, height: usize) -> Self {
        InteriorMask { width, height, mask: vec![false; width * height] }
    }

    /// Same mask after mirroring columns and/or rows.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Self {
        let (w, h) = (self.width, self.height);
        let mut mask = vec![false; w * h];
        for j in 0..h {
            for i in 0..w {
                let si = if horizontal { w - 1 - i } else { i };
                let sj = if vertical { h - 1 - j } else { j };
                mask[idx(w, i, j)] = self.mask[idx(w, si, sj)];
            }
        }
        InteriorMask { width: w, height: h, mask }
    }
}

/// `m(i,j) = 1` iff the pixel and its four stencil neighbours are darker than
/// `1 - epsilon` in channel 1 and the pixel is not a load pixel.
pub fn interior_mask(image: &ImageTriple, epsilon: f64, load_pixels: &[Pixel]) -> InteriorMask {
    assert!(epsilon > 0.0 && epsilon < 0.5, "epsilon must lie in (0, 0.5)");
    let (w, h) = (image.width, image.height);
    let inside = |i: usize, j: usize| image.channels[0][idx(w, i, j)] < 1.0 - epsilon;
    let mut mask = vec![false; w * h];
    for j in 1..h.saturating_sub(1) {
        for i in 1..w.saturating_sub(1) {
            mask[idx(w, i, j)] =
                inside(i, j) && inside(i - 1, j) && inside(i + 1, j) && inside(i, j - 1) && inside(i, j + 1);
        }
    }
    for &(i, j) in load_pixels {
        if i < w && j < h {
            mask[idx(w, i, j)] = false;
        }
    }
    InteriorMask { width: w, height: h, mask }
}

/// A pixel set together with the four stencil neighbours of every member,
/// clipped to the canvas; sorted and deduplicated.
pub fn dilate_stencil(pixels: &[Pixel], width: usize, height: usize) -> Vec<Pixel> {
    let mut out = Vec::with_capacity(pixels.len() * 5);
    for &(i, j) in pixels {
        out.push((i, j));
        if i > 0 {
            out.push((i - 1, j));
        }
        if i + 1 < width {
            out.push((i + 1, j));
        }
        if j > 0 {
            out.push((i, j - 1));
        }
        if j + 1 < height {
            out.push((i, j + 1));
        }
    }
    out.sort_by_key(|&(i, j)| (j, i));
    out.dedup();
    out
}

/// Pixels of the given load nodes (each snapped to the nearest footprint pixel)
/// dilated by the difference stencil.
pub fn load_pixels(mesh: &Mesh, nodes: &[usize], canvas: &Canvas) -> Vec<Pixel> {
    let footprint = canvas.footprint(&mesh.outline);
    let w = canvas.width;
    let mut base = Vec::with_capacity(nodes.len());
    for &n in nodes {
        let p = mesh.nodes[n];
        // continuous pixel coordinates of the node
        let fi = (p[0] - canvas.origin[0]) * canvas.scale - 0.5;
        let fj = (p[1] - canvas.origin[1]) * canvas.scale - 0.5;
        let ci = fi.round().clamp(0.0, (w - 1) as f64) as isize;
        let cj = fj.round().clamp(0.0, (canvas.height - 1) as f64) as isize;
        let mut best: Option<(f64, Pixel)> = None;
        for r in 0..=3isize {
            for dj in -r..=r {
                for di in -r..=r {
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i >= w as isize || j >= canvas.height as isize {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    if !footprint[idx(w, i, j)] {
                        continue;
                    }
                    let d = (i as f64 - fi).powi(2) + (j as f64 - fj).powi(2);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, (i, j)));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        if let Some((_, px)) = best {
            base.push(px);
        }
    }
    dilate_stencil(&base, w, canvas.height)
}
