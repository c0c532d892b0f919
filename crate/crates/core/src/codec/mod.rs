//! Stress field <-> grayscale contour image triples.
//!
//! Intensities are stored as `f64` rasters in [0, 1] with white (1.0) as the
//! background. Rows run bottom-to-top so that pixel differences along `j`
//! follow the physical +y axis.

mod augment;
mod contour;
mod mask;
pub mod pnm;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::element::{quad4_natural, quad4_shape, tri3_barycentric};
use crate::fem::{ElementKind, Mesh, StressField};

pub use augment::{augment, transform, Lineage, SamplePair};
pub use contour::{fit_contour_map, fit_contour_map_many, ContourMap, BACKGROUND, INTENSITY_HIGH, INTENSITY_LOW};
pub use mask::{dilate_stencil, interior_mask, load_pixels, InteriorMask};
pub use raster::{idx, Canvas, Pixel};

/// Default intensity margin separating background white from the domain.
pub const DEFAULT_EPSILON: f64 = 0.02;

/// Minimum element size in pixels for a canvas to resolve the mesh.
pub const MIN_ELEMENT_PIXELS: f64 = 2.0;

pub const CHANNEL_NAMES: [&str; 3] = ["sx", "sy", "txy"];

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("canvas too small: elements span {pixels:.2} px, need at least {MIN_ELEMENT_PIXELS}")]
    CanvasTooSmall { pixels: f64 },
    #[error("domain does not fit on the {width}x{height} canvas")]
    OutOfCanvas { width: usize, height: usize },
    #[error("raster dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("image format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Three intensity rasters (sx, sy, txy) of one case plus its contour map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTriple {
    pub width: usize,
    pub height: usize,
    pub channels: [Vec<f64>; 3],
    pub contour_map: ContourMap,
    pub case_id: String,
}

impl ImageTriple {
    pub fn new(
        width: usize,
        height: usize,
        channels: [Vec<f64>; 3],
        contour_map: ContourMap,
        case_id: impl Into<String>,
    ) -> Result<Self, CodecError> {
        if channels.iter().any(|c| c.len() != width * height) {
            return Err(CodecError::DimensionMismatch(format!("channels must hold {width}x{height} pixels")));
        }
        Ok(ImageTriple { width, height, channels, contour_map, case_id: case_id.into() })
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.channels[c][idx(self.width, i, j)]
    }

    /// Background pixels, judged on channel 1 against `1 - epsilon`.
    pub fn background(&self, epsilon: f64) -> Vec<bool> {
        self.channels[0].iter().map(|&v| v >= 1.0 - epsilon).collect()
    }

    pub fn same_shape(&self, other: &ImageTriple) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// All intensities in [0, 1] and a background shared by the three channels.
    pub fn is_valid(&self, epsilon: f64) -> bool {
        let in_range = self.channels.iter().flatten().all(|v| (0.0..=1.0).contains(v));
        let bg = self.background(epsilon);
        let shared = self.channels[1..].iter().all(|ch| ch.iter().zip(&bg).all(|(&v, &b)| (v >= 1.0 - epsilon) == b));
        in_range && shared
    }
}

/// Stress sampled at pixel centres; `NaN` outside the footprint.
#[derive(Debug, Clone)]
pub struct StressRasters {
    pub width: usize,
    pub height: usize,
    pub footprint: Vec<bool>,
    pub values: [Vec<f64>; 3],
}

/// Decoded image: stresses per pixel and the background flags.
#[derive(Debug, Clone)]
pub struct DecodedStress {
    pub values: [Vec<f64>; 3],
    pub background: Vec<bool>,
}

/// Smallest element extent in pixels (square root of twice the smallest area
/// for triangles, which equals the leg of a right-isosceles element).
fn min_element_pixels(mesh: &Mesh, canvas: &Canvas) -> f64 {
    let min_area = (0..mesh.num_elements()).map(|e| mesh.element_area(e).abs()).fold(f64::INFINITY, f64::min);
    let extent = match mesh.kind {
        ElementKind::Quad4 => min_area.sqrt(),
        ElementKind::Tri3 => (2.0 * min_area).sqrt(),
    };
    extent * canvas.scale
}

/// Interpolates the nodal field at every footprint pixel centre.
///
/// Each pixel takes its value from the element containing its centre via the
/// element shape functions; footprint pixels that fall through the element
/// search (round-off on shared edges) use the nearest element, with natural
/// coordinates clamped to the element.
pub fn sample_field(field: &StressField, canvas: &Canvas) -> Result<StressRasters, CodecError> {
    let mesh = &field.mesh;
    let pixels = min_element_pixels(mesh, canvas);
    if pixels < MIN_ELEMENT_PIXELS {
        return Err(CodecError::CanvasTooSmall { pixels });
    }
    let (lo, hi) = mesh.outline.bbox();
    if canvas.pixel_of(lo).is_none()
        || canvas.pixel_of([hi[0] - 1e-9 * (hi[0] - lo[0]), hi[1] - 1e-9 * (hi[1] - lo[1])]).is_none()
    {
        return Err(CodecError::OutOfCanvas { width: canvas.width, height: canvas.height });
    }
    let (w, h) = (canvas.width, canvas.height);
    let footprint = canvas.footprint(&mesh.outline);
    let mut values = [vec![f64::NAN; w * h], vec![f64::NAN; w * h], vec![f64::NAN; w * h]];
    let mut assigned = vec![false; w * h];

    let interpolate = |e: usize, p: [f64; 2], clamp: bool| -> Option<[f64; 3]> {
        let nodes = mesh.element(e);
        let xy = mesh.element_coords(e);
        let weights: Vec<f64> = match mesh.kind {
            ElementKind::Quad4 => {
                let q = [xy[0], xy[1], xy[2], xy[3]];
                let (mut xi, mut eta) = quad4_natural(&q, p);
                let tol = 1e-9;
                if !clamp && (xi.abs() > 1.0 + tol || eta.abs() > 1.0 + tol) {
                    return None;
                }
                xi = xi.clamp(-1.0, 1.0);
                eta = eta.clamp(-1.0, 1.0);
                quad4_shape(xi, eta).to_vec()
            }
            ElementKind::Tri3 => {
                let t = [xy[0], xy[1], xy[2]];
                let mut l = tri3_barycentric(&t, p);
                if !clamp && l.iter().any(|&v| v < -1e-9) {
                    return None;
                }
                if clamp {
                    for v in l.iter_mut() {
                        *v = v.max(0.0);
                    }
                    let s: f64 = l.iter().sum();
                    for v in l.iter_mut() {
                        *v /= s;
                    }
                }
                l.to_vec()
            }
        };
        let mut out = [0.0; 3];
        for (k, &n) in nodes.iter().enumerate() {
            for c in 0..3 {
                out[c] += weights[k] * field.component(c)[n];
            }
        }
        Some(out)
    };

    for e in 0..mesh.num_elements() {
        let xy = mesh.element_coords(e);
        let (mut elo, mut ehi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &xy {
            for k in 0..2 {
                elo[k] = elo[k].min(p[k]);
                ehi[k] = ehi[k].max(p[k]);
            }
        }
        let i0 = (((elo[0] - canvas.origin[0]) * canvas.scale - 0.5).floor().max(0.0)) as usize;
        let j0 = (((elo[1] - canvas.origin[1]) * canvas.scale - 0.5).floor().max(0.0)) as usize;
        let i1 = ((((ehi[0] - canvas.origin[0]) * canvas.scale - 0.5).ceil()) as usize).min(w - 1);
        let j1 = ((((ehi[1] - canvas.origin[1]) * canvas.scale - 0.5).ceil()) as usize).min(h - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let k = idx(w, i, j);
                if !footprint[k] || assigned[k] {
                    continue;
                }
                if let Some(v) = interpolate(e, canvas.pixel_center(i, j), false) {
                    for c in 0..3 {
                        values[c][k] = v[c];
                    }
                    assigned[k] = true;
                }
            }
        }
    }

    let missing: Vec<usize> = (0..w * h).filter(|&k| footprint[k] && !assigned[k]).collect();
    if !missing.is_empty() {
        let centroids: Vec<[f64; 2]> = (0..mesh.num_elements())
            .map(|e| {
                let xy = mesh.element_coords(e);
                let n = xy.len() as f64;
                xy.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n])
            })
            .collect();
        for k in missing {
            let p = canvas.pixel_center(k % w, k / w);
            let e = (0..centroids.len())
                .min_by(|&a, &b| {
                    let da = (centroids[a][0] - p[0]).powi(2) + (centroids[a][1] - p[1]).powi(2);
                    let db = (centroids[b][0] - p[0]).powi(2) + (centroids[b][1] - p[1]).powi(2);
                    da.total_cmp(&db)
                })
                .expect("mesh has elements");
            let v = interpolate(e, p, true).expect("clamped interpolation");
            for c in 0..3 {
                values[c][k] = v[c];
            }
        }
    }
    Ok(StressRasters { width: w, height: h, footprint, values })
}

/// Applies the contour map to sampled stresses. Background is white and the
/// domain is clamped to [0, 1].
pub fn encode(stress: &StressRasters, map: ContourMap, case_id: impl Into<String>) -> ImageTriple {
    let n = stress.width * stress.height;
    let mut channels = [vec![BACKGROUND; n], vec![BACKGROUND; n], vec![BACKGROUND; n]];
    for c in 0..3 {
        for k in 0..n {
            if stress.footprint[k] {
                channels[c][k] = map.intensity(stress.values[c][k]).clamp(0.0, 1.0);
            }
        }
    }
    ImageTriple { width: stress.width, height: stress.height, channels, contour_map: map, case_id: case_id.into() }
}

pub fn rasterize(
    field: &StressField,
    map: ContourMap,
    canvas: &Canvas,
    case_id: impl Into<String>,
) -> Result<ImageTriple, CodecError> {
    Ok(encode(&sample_field(field, canvas)?, map, case_id))
}

/// Stresses recovered from intensities with the image's contour map.
pub fn decode(image: &ImageTriple, epsilon: f64) -> DecodedStress {
    let background = image.background(epsilon);
    let values = std::array::from_fn(|c| {
        image.channels[c]
            .iter()
            .zip(&background)
            .map(|(&v, &b)| if b { f64::NAN } else { image.contour_map.stress(v) })
            .collect()
    });
    DecodedStress { values, background }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{build_mesh_cantilever, build_mesh_truss_like, solve, Axis, Constraint, LoadCase, Material};

    fn uniform_field(mesh: Arc<Mesh>, sx: f64) -> StressField {
        let n = mesh.num_nodes();
        StressField::new(mesh, vec![sx; n], vec![0.0; n], vec![0.0; n]).unwrap()
    }

    #[test]
    fn uniform_field_gives_constant_channel() {
        let mesh = Arc::new(build_mesh_cantilever(1.0, 0.1).unwrap());
        let canvas = Canvas::fit(&mesh.outline, 64, 48);
        let field = uniform_field(mesh, 3.0);
        let map = ContourMap::new(10.0, -0.2);
        let img = rasterize(&field, map, &canvas, "u").unwrap();
        let fp = canvas.footprint(&field.mesh.outline);
        for k in 0..canvas.len() {
            if fp[k] {
                assert!((img.channels[0][k] - (3.0 / 10.0 + 0.2)).abs() < 1e-12);
            } else {
                assert_eq!(img.channels[0][k], 1.0);
            }
        }
    }

    #[test]
    fn canvas_too_small_rejected() {
        let mesh = Arc::new(build_mesh_cantilever(1.0, 0.025).unwrap());
        let canvas = Canvas::fit(&mesh.outline, 64, 48);
        let field = uniform_field(mesh, 1.0);
        assert!(matches!(
            rasterize(&field, ContourMap::new(1.0, 0.0), &canvas, "x"),
            Err(CodecError::CanvasTooSmall { .. })
        ));
    }

    #[test]
    fn decode_inverts_encode_and_matches_nodes() {
        let mesh = Arc::new(build_mesh_truss_like("truss_cantilever_v1", 1.0, 0.1).unwrap());
        let field =
            solve(&mesh, &Material::default(), &LoadCase::concentrated(Constraint::Fixed, Axis::Y, 1, 100.0)).unwrap();
        let canvas = Canvas::fit(&mesh.outline, 128, 96);
        let map = fit_contour_map(&field);
        let s = sample_field(&field, &canvas).unwrap();
        let img = encode(&s, map, "t");
        assert!(img.is_valid(DEFAULT_EPSILON));
        let d = decode(&img, DEFAULT_EPSILON);
        for c in 0..3 {
            for k in 0..canvas.len() {
                if s.footprint[k] {
                    assert!((d.values[c][k] - s.values[c][k]).abs() <= 1e-9 * map.c.abs());
                } else {
                    assert!(d.background[k]);
                }
            }
        }
    }

    #[test]
    fn coarse_and_fine_share_footprint() {
        let coarse = Arc::new(build_mesh_cantilever(1.0, 0.1).unwrap());
        let fine = Arc::new(build_mesh_cantilever(1.0, 0.025).unwrap());
        let canvas = Canvas::fit(&coarse.outline, 256, 192);
        let a = rasterize(&uniform_field(coarse, 1.0), ContourMap::new(2.0, 0.0), &canvas, "c").unwrap();
        let b = rasterize(&uniform_field(fine, 1.0), ContourMap::new(2.0, 0.0), &canvas, "f").unwrap();
        assert_eq!(a.background(DEFAULT_EPSILON), b.background(DEFAULT_EPSILON));
    }
}
