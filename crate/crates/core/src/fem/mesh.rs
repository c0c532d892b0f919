//! Structured meshers for the cantilever, L-shape and truss-like families.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::element::{quad4_jacobian_det, GAUSS_2X2};
use super::geometry::{bundled_template, Outline, Segment};
use super::FemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Quad4,
    Tri3,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Quad4 => 4,
            ElementKind::Tri3 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

/// Names of the node sets every generated mesh carries.
pub mod sets {
    pub const FIXED_EDGE: &str = "fixed_edge";
    pub const FIXED_PIN: &str = "fixed_pin";
    pub const LOAD_EDGE: &str = "load_edge";
    pub const TOP_EDGE: &str = "top_edge";
    pub const BOTTOM_EDGE: &str = "bottom_edge";

    pub fn load_point(station: usize) -> String {
        format!("load_point_{station}")
    }
}

/// Number of equal spans the loaded edge is divided into for concentrated
/// load stations; stations are `0..=LOAD_STATIONS`.
pub const LOAD_STATIONS: usize = 5;

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub kind: ElementKind,
    connectivity: Vec<usize>,
    /// Node sets, edge sets ordered along the edge.
    pub boundary_sets: BTreeMap<String, Vec<usize>>,
    /// Outward-normal axis of the constrained edge.
    pub fixed_normal: Axis,
    pub outline: Outline,
    pub element_size: f64,
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 2]>,
        kind: ElementKind,
        connectivity: Vec<usize>,
        boundary_sets: BTreeMap<String, Vec<usize>>,
        fixed_normal: Axis,
        outline: Outline,
        element_size: f64,
    ) -> Result<Self, FemError> {
        let mesh = Mesh { nodes, kind, connectivity, boundary_sets, fixed_normal, outline, element_size };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.connectivity.len() / self.kind.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.kind.nodes_per_element();
        &self.connectivity[e * n..(e + 1) * n]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.kind.nodes_per_element())
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.element(e).iter().map(|&n| self.nodes[n]).collect()
    }

    pub fn element_area(&self, e: usize) -> f64 {
        polygon_area(&self.element_coords(e))
    }

    pub fn set(&self, name: &str) -> Result<&[usize], FemError> {
        self.boundary_sets.get(name).map(|v| v.as_slice()).ok_or_else(|| FemError::MissingSet(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), FemError> {
        let npe = self.kind.nodes_per_element();
        if self.connectivity.len() % npe != 0 {
            return Err(FemError::InvalidMesh("connectivity length is not a multiple of the element size".into()));
        }
        if let Some(&bad) = self.connectivity.iter().find(|&&n| n >= self.nodes.len()) {
            return Err(FemError::InvalidMesh(format!("element references missing node {bad}")));
        }
        for (name, set) in &self.boundary_sets {
            if set.iter().any(|&n| n >= self.nodes.len()) {
                return Err(FemError::InvalidMesh(format!("set {name} references a missing node")));
            }
        }
        let domain_area = self.outline.area();
        for e in 0..self.num_elements() {
            let xy = self.element_coords(e);
            match self.kind {
                ElementKind::Quad4 => {
                    let q: [[f64; 2]; 4] = [xy[0], xy[1], xy[2], xy[3]];
                    for &(xi, eta, _) in GAUSS_2X2.iter() {
                        if quad4_jacobian_det(&q, xi, eta) <= 0.0 {
                            return Err(FemError::InvalidMesh(format!("quad {e} is not convex and counter-clockwise")));
                        }
                    }
                }
                ElementKind::Tri3 => {
                    if polygon_area(&xy) < 1e-10 * domain_area {
                        return Err(FemError::DegenerateElement(e));
                    }
                }
            }
        }
        let tol = 1e-12 * self.outline.characteristic_length();
        let mut seen: HashMap<(i64, i64), usize> = HashMap::with_capacity(self.nodes.len());
        let cell = (tol * 1e3).max(f64::MIN_POSITIVE);
        for (i, p) in self.nodes.iter().enumerate() {
            let key = ((p[0] / cell).round() as i64, (p[1] / cell).round() as i64);
            if let Some(&j) = seen.get(&key) {
                let q = self.nodes[j];
                if (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol {
                    return Err(FemError::InvalidMesh(format!("nodes {j} and {i} coincide")));
                }
            }
            seen.insert(key, i);
        }
        Ok(())
    }
}

pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

/// Number of element spans of `size` in `length`, or an error if it does not divide.
fn spans(length: f64, size: f64, what: &str) -> Result<usize, FemError> {
    if !(size > 0.0 && length > 0.0 && size.is_finite() && length.is_finite()) {
        return Err(FemError::NotDivisible { what: what.to_string(), length, element_size: size });
    }
    let n = length / size;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-9 * n.max(1.0) {
        return Err(FemError::NotDivisible { what: what.to_string(), length, element_size: size });
    }
    Ok(r as usize)
}

/// Lazily numbered lattice nodes on an `h`-spaced grid (plus optional cell centres).
struct Lattice {
    h: f64,
    origin: [f64; 2],
    ids: HashMap<(i64, i64), usize>,
    nodes: Vec<[f64; 2]>,
}

impl Lattice {
    fn new(h: f64, origin: [f64; 2]) -> Self {
        Lattice { h, origin, ids: HashMap::new(), nodes: Vec::new() }
    }

    /// Node at half-grid coordinates `(2i, 2j)` are vertices, odd pairs are centres.
    fn node(&mut self, hi: i64, hj: i64) -> usize {
        if let Some(&id) = self.ids.get(&(hi, hj)) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push([self.origin[0] + 0.5 * hi as f64 * self.h, self.origin[1] + 0.5 * hj as f64 * self.h]);
        self.ids.insert((hi, hj), id);
        id
    }

    fn lookup(&self, p: [f64; 2]) -> Option<usize> {
        let hi = (2.0 * (p[0] - self.origin[0]) / self.h).round() as i64;
        let hj = (2.0 * (p[1] - self.origin[1]) / self.h).round() as i64;
        self.ids.get(&(hi, hj)).copied()
    }
}

/// Nodes of `nodes` lying on `seg`, sorted by distance from `seg.a`.
fn nodes_on_segment(nodes: &[[f64; 2]], seg: &Segment, tol: f64) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = nodes
        .iter()
        .enumerate()
        .filter(|(_, p)| seg.contains(**p, tol))
        .map(|(i, p)| (((p[0] - seg.a[0]).powi(2) + (p[1] - seg.a[1]).powi(2)).sqrt(), i))
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Adds `load_point_{i}` sets for stations at `i/LOAD_STATIONS` of the edge length,
/// when the station falls on a node.
fn add_load_points(sets: &mut BTreeMap<String, Vec<usize>>, nodes: &[[f64; 2]], edge: &Segment, tol: f64) {
    for i in 0..=LOAD_STATIONS {
        let t = i as f64 / LOAD_STATIONS as f64;
        let p = [edge.a[0] + t * (edge.b[0] - edge.a[0]), edge.a[1] + t * (edge.b[1] - edge.a[1])];
        if let Some(n) = nodes.iter().position(|q| (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol) {
            sets.insert(sets::load_point(i), vec![n]);
        }
    }
}

fn nearest_node(nodes: &[[f64; 2]], candidates: &[usize], p: [f64; 2]) -> usize {
    *candidates
        .iter()
        .min_by(|&&a, &&b| {
            let da = (nodes[a][0] - p[0]).powi(2) + (nodes[a][1] - p[1]).powi(2);
            let db = (nodes[b][0] - p[0]).powi(2) + (nodes[b][1] - p[1]).powi(2);
            da.total_cmp(&db)
        })
        .expect("non-empty edge")
}

/// Structured quad4 mesh of the `2H x H` cantilever, constrained on `x = 0`
/// and loaded on `x = 2H`.
pub fn build_mesh_cantilever(height: f64, element_size: f64) -> Result<Mesh, FemError> {
    let ny = spans(height, element_size, "cantilever height")?;
    let nx = 2 * ny;
    let width = 2.0 * height;
    let h = height / ny as f64;
    let mut lattice = Lattice::new(h, [0.0, 0.0]);
    // column-major numbering keeps the stiffness profile narrow
    for ix in 0..=nx as i64 {
        for iy in 0..=ny as i64 {
            lattice.node(2 * ix, 2 * iy);
        }
    }
    let mut conn = Vec::with_capacity(4 * nx * ny);
    for ix in 0..nx as i64 {
        for iy in 0..ny as i64 {
            conn.extend_from_slice(&[
                lattice.node(2 * ix, 2 * iy),
                lattice.node(2 * ix + 2, 2 * iy),
                lattice.node(2 * ix + 2, 2 * iy + 2),
                lattice.node(2 * ix, 2 * iy + 2),
            ]);
        }
    }
    let nodes = lattice.nodes.clone();
    let tol = 1e-9 * h;
    let fixed = Segment { a: [0.0, 0.0], b: [0.0, height] };
    let load = Segment { a: [width, 0.0], b: [width, height] };
    let top = Segment { a: [0.0, height], b: [width, height] };
    let bottom = Segment { a: [0.0, 0.0], b: [width, 0.0] };

    let mut sets = BTreeMap::new();
    let fixed_nodes = nodes_on_segment(&nodes, &fixed, tol);
    let pin = nearest_node(&nodes, &fixed_nodes, [0.0, 0.5 * height]);
    sets.insert(sets::FIXED_EDGE.to_string(), fixed_nodes);
    sets.insert(sets::FIXED_PIN.to_string(), vec![pin]);
    sets.insert(sets::LOAD_EDGE.to_string(), nodes_on_segment(&nodes, &load, tol));
    sets.insert(sets::TOP_EDGE.to_string(), nodes_on_segment(&nodes, &top, tol));
    sets.insert(sets::BOTTOM_EDGE.to_string(), nodes_on_segment(&nodes, &bottom, tol));
    add_load_points(&mut sets, &nodes, &load, tol);

    Mesh::new(nodes, ElementKind::Quad4, conn, sets, Axis::X, Outline::rectangle(0.0, 0.0, width, height), h)
}

/// Outline of the L-shape with arm length `3d` and arm width `d`: the union of
/// `[0, 3d] x [0, d]` (loaded arm) and `[0, d] x [0, 3d]` (constrained arm).
pub fn lshape_outline(d: f64) -> Outline {
    let l = 3.0 * d;
    Outline { outer: vec![[0.0, 0.0], [l, 0.0], [l, d], [d, d], [d, l], [0.0, l]], holes: Vec::new() }
}

/// Structured quad4 mesh of the L-shape, constrained on the top of the vertical
/// arm (`y = 3d`) and loaded on the end of the horizontal arm (`x = 3d`).
pub fn build_mesh_lshape(d: f64, element_size: f64) -> Result<Mesh, FemError> {
    let n = spans(d, element_size, "L-shape arm width")?;
    let h = d / n as f64;
    let m = 3 * n;
    let l = 3.0 * d;
    let mut lattice = Lattice::new(h, [0.0, 0.0]);
    let inside = |cx: usize, cy: usize| cx < n || cy < n;
    let mut conn = Vec::new();
    for cx in 0..m {
        for cy in 0..m {
            if !inside(cx, cy) {
                continue;
            }
            let (ix, iy) = (cx as i64, cy as i64);
            conn.extend_from_slice(&[
                lattice.node(2 * ix, 2 * iy),
                lattice.node(2 * ix + 2, 2 * iy),
                lattice.node(2 * ix + 2, 2 * iy + 2),
                lattice.node(2 * ix, 2 * iy + 2),
            ]);
        }
    }
    let nodes = lattice.nodes.clone();
    let tol = 1e-9 * h;
    let fixed = Segment { a: [0.0, l], b: [d, l] };
    let load = Segment { a: [l, 0.0], b: [l, d] };
    let mut sets = BTreeMap::new();
    let fixed_nodes = nodes_on_segment(&nodes, &fixed, tol);
    // outer corner: present on every refinement level
    let pin = lattice.lookup([0.0, l]).expect("corner node");
    sets.insert(sets::FIXED_EDGE.to_string(), fixed_nodes);
    sets.insert(sets::FIXED_PIN.to_string(), vec![pin]);
    sets.insert(sets::LOAD_EDGE.to_string(), nodes_on_segment(&nodes, &load, tol));
    add_load_points(&mut sets, &nodes, &load, tol);

    Mesh::new(nodes, ElementKind::Quad4, conn, sets, Axis::Y, lshape_outline(d), h)
}

/// Cross-split (four triangles per cell) tri3 mesh of a bundled truss outline,
/// scaled by `scale` (the template is given in units of its height).
pub fn build_mesh_truss_like(template_id: &str, scale: f64, element_size: f64) -> Result<Mesh, FemError> {
    let template = bundled_template(template_id)?;
    let s = |p: [f64; 2]| [p[0] * scale, p[1] * scale];
    let outline = Outline {
        outer: template.outline.outer.iter().map(|&p| s(p)).collect(),
        holes: template.outline.holes.iter().map(|h| h.iter().map(|&p| s(p)).collect()).collect(),
    };
    let (lo, hi) = outline.bbox();
    let nx = spans(hi[0] - lo[0], element_size, "truss width")?;
    let ny = spans(hi[1] - lo[1], element_size, "truss height")?;
    let h = (hi[0] - lo[0]) / nx as f64;
    let on_grid = |v: f64, o: f64| {
        let k = (v - o) / h;
        (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
    };
    let all_vertices = outline.outer.iter().chain(outline.holes.iter().flatten());
    for v in all_vertices {
        if !on_grid(v[0], lo[0]) || !on_grid(v[1], lo[1]) {
            return Err(FemError::NotDivisible {
                what: format!("truss vertex ({}, {})", v[0], v[1]),
                length: v[0].max(v[1]),
                element_size,
            });
        }
    }

    let mut lattice = Lattice::new(h, lo);
    let mut conn = Vec::new();
    for cx in 0..nx as i64 {
        for cy in 0..ny as i64 {
            let corners = [(2 * cx, 2 * cy), (2 * cx + 2, 2 * cy), (2 * cx + 2, 2 * cy + 2), (2 * cx, 2 * cy + 2)];
            let centre = (2 * cx + 1, 2 * cy + 1);
            for k in 0..4 {
                let a = corners[k];
                let b = corners[(k + 1) % 4];
                let xy = |q: (i64, i64)| [lo[0] + 0.5 * q.0 as f64 * h, lo[1] + 0.5 * q.1 as f64 * h];
                let (pc, pa, pb) = (xy(centre), xy(a), xy(b));
                let centroid = [(pc[0] + pa[0] + pb[0]) / 3.0, (pc[1] + pa[1] + pb[1]) / 3.0];
                if outline.contains(centroid) {
                    conn.extend_from_slice(&[
                        lattice.node(centre.0, centre.1),
                        lattice.node(a.0, a.1),
                        lattice.node(b.0, b.1),
                    ]);
                }
            }
        }
    }
    if conn.is_empty() {
        return Err(FemError::InvalidMesh("template produced no elements".into()));
    }
    let nodes = lattice.nodes.clone();
    let tol = 1e-9 * h;
    let fixed = Segment { a: s(template.fixed_edge.a), b: s(template.fixed_edge.b) };
    let load = Segment { a: s(template.load_edge.a), b: s(template.load_edge.b) };
    let mut sets = BTreeMap::new();
    let fixed_nodes = nodes_on_segment(&nodes, &fixed, tol);
    let mid = [0.5 * (fixed.a[0] + fixed.b[0]), 0.5 * (fixed.a[1] + fixed.b[1])];
    let pin = nearest_node(&nodes, &fixed_nodes, mid);
    sets.insert(sets::FIXED_EDGE.to_string(), fixed_nodes);
    sets.insert(sets::FIXED_PIN.to_string(), vec![pin]);
    sets.insert(sets::LOAD_EDGE.to_string(), nodes_on_segment(&nodes, &load, tol));
    add_load_points(&mut sets, &nodes, &load, tol);
    let normal = if (fixed.a[0] - fixed.b[0]).abs() < tol { Axis::X } else { Axis::Y };

    Mesh::new(nodes, ElementKind::Tri3, conn, sets, normal, outline, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cantilever_counts() {
        let m = build_mesh_cantilever(1.0, 0.1).unwrap();
        assert_eq!(m.num_elements(), 200);
        assert_eq!(m.num_nodes(), 21 * 11);
        let f = build_mesh_cantilever(1.0, 1.0 / 40.0).unwrap();
        assert_eq!(f.num_elements(), 80 * 40);
        assert_eq!(m.set(sets::FIXED_EDGE).unwrap().len(), 11);
        for i in 0..=LOAD_STATIONS {
            let n = m.set(&sets::load_point(i)).unwrap()[0];
            assert!((m.nodes[n][1] - i as f64 / 5.0).abs() < 1e-12);
            assert!((m.nodes[n][0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cantilever_rejects_non_divisible() {
        assert!(matches!(build_mesh_cantilever(1.0, 0.3), Err(FemError::NotDivisible { .. })));
        assert!(build_mesh_cantilever(1.0, 0.0).is_err());
    }

    #[test]
    fn lshape_counts() {
        let c = build_mesh_lshape(1.0, 0.2).unwrap();
        // five unit squares of footprint, 25 cells each
        assert_eq!(c.num_elements(), 125);
        let f = build_mesh_lshape(1.0, 0.05).unwrap();
        assert_eq!(f.num_elements(), 16 * c.num_elements());
        assert!(build_mesh_lshape(1.0, 0.3).is_err());
        let total: f64 = (0..c.num_elements()).map(|e| c.element_area(e)).sum();
        assert!((total - c.outline.area()).abs() < 1e-12);
    }

    #[test]
    fn truss_mesh_is_valid_and_refines() {
        let c = build_mesh_truss_like("truss_cantilever_v1", 1.0, 0.1).unwrap();
        let f = build_mesh_truss_like("truss_cantilever_v1", 1.0, 0.025).unwrap();
        assert_eq!(c.kind, ElementKind::Tri3);
        assert!(f.num_nodes() > c.num_nodes());
        for m in [&c, &f] {
            assert!((0..m.num_elements()).all(|e| m.element_area(e) > 0.0));
            assert!(!m.set(sets::FIXED_EDGE).unwrap().is_empty());
            assert!(!m.set(sets::LOAD_EDGE).unwrap().is_empty());
            let total: f64 = (0..m.num_elements()).map(|e| m.element_area(e)).sum();
            assert!((total - m.outline.area()).abs() < 1e-9, "mesh covers the outline exactly");
        }
        assert!(matches!(build_mesh_truss_like("nonexistent", 1.0, 0.1), Err(FemError::UnknownTemplate(_))));
        assert!(build_mesh_truss_like("truss_cantilever_v1", 1.0, 0.3).is_err());
    }

    #[test]
    fn validation_catches_bad_connectivity() {
        let m = build_mesh_cantilever(1.0, 0.5).unwrap();
        let mut conn: Vec<usize> = m.elements().flatten().copied().collect();
        conn.swap(1, 3); // clockwise
        let r =
            Mesh::new(m.nodes.clone(), m.kind, conn, m.boundary_sets.clone(), m.fixed_normal, m.outline.clone(), 0.5);
        assert!(r.is_err());
        let r =
            Mesh::new(m.nodes.clone(), m.kind, vec![0, 1, 2, 999], BTreeMap::new(), Axis::X, m.outline.clone(), 0.5);
        assert!(r.is_err());
    }
}
