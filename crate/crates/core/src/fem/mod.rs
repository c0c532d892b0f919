//! Plane-stress linear elasticity on structured quad4 and tri3 meshes.
//!
//! The solver assembles element stiffness matrices into a profile matrix
//! ordered by reverse Cuthill-McKee, eliminates constrained dofs, factors
//! with Cholesky and recovers nodal stresses by area-weighted averaging of
//! the element values at each node.

pub mod element;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod solver;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{Outline, Segment};
pub use mesh::{
    build_mesh_cantilever, build_mesh_lshape, build_mesh_truss_like, sets, Axis, ElementKind, Mesh, LOAD_STATIONS,
};

use solver::{reverse_cuthill_mckee, SkylineMatrix};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("{what} of {length} is not divisible by element size {element_size}")]
    NotDivisible { what: String, length: f64, element_size: f64 },
    #[error("unknown geometry template `{0}`")]
    UnknownTemplate(String),
    #[error("template: {0}")]
    Template(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate triangle {0}")]
    DegenerateElement(usize),
    #[error("mesh has no boundary set `{0}`")]
    MissingSet(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid load case: {0}")]
    InvalidLoad(String),
    #[error("constraints leave the {0} rigid-body mode free")]
    Unconstrained(&'static str),
    #[error("stiffness matrix is singular at node {node} dof {dof}")]
    Singular { node: usize, dof: usize },
    #[error("solution contains non-finite values")]
    NonFinite,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub thickness: f64,
}

impl Default for Material {
    /// Structural steel in N, mm, MPa: E = 200 GPa, nu = 0.3, t = 10 mm.
    fn default() -> Self {
        Material { youngs_modulus: 200_000.0, poissons_ratio: 0.3, thickness: 10.0 }
    }
}

impl Material {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(FemError::InvalidMaterial("Young's modulus must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.poissons_ratio) {
            return Err(FemError::InvalidMaterial("Poisson's ratio must lie in [0, 0.5)".into()));
        }
        if !(self.thickness > 0.0 && self.thickness.is_finite()) {
            return Err(FemError::InvalidMaterial("thickness must be positive".into()));
        }
        Ok(())
    }

    pub fn plane_stress_matrix(&self) -> [[f64; 3]; 3] {
        let (e, nu) = (self.youngs_modulus, self.poissons_ratio);
        let c = e / (1.0 - nu * nu);
        [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * 0.5 * (1.0 - nu)]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// Both displacement components vanish on the constrained edge.
    Fixed,
    /// The normal component vanishes on the edge; the tangential one at a single pin.
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadKind {
    Concentrated,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadEdge {
    FreeEnd,
    Top,
    Bottom,
}

impl LoadEdge {
    pub fn set_name(self) -> &'static str {
        match self {
            LoadEdge::FreeEnd => sets::LOAD_EDGE,
            LoadEdge::Top => sets::TOP_EDGE,
            LoadEdge::Bottom => sets::BOTTOM_EDGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadLocation {
    /// Station `i` at ordinate `i / LOAD_STATIONS` of the free-end edge.
    Station(usize),
    Edge(LoadEdge),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    pub constraint: Constraint,
    pub kind: LoadKind,
    pub direction: Axis,
    pub location: LoadLocation,
    /// Signed resultant of the applied load along `direction`.
    pub total_magnitude: f64,
}

impl LoadCase {
    pub fn concentrated(constraint: Constraint, direction: Axis, station: usize, total: f64) -> Self {
        LoadCase {
            constraint,
            kind: LoadKind::Concentrated,
            direction,
            location: LoadLocation::Station(station),
            total_magnitude: total,
        }
    }

    pub fn distributed(constraint: Constraint, direction: Axis, edge: LoadEdge, total: f64) -> Self {
        LoadCase {
            constraint,
            kind: LoadKind::Distributed,
            direction,
            location: LoadLocation::Edge(edge),
            total_magnitude: total,
        }
    }

    fn validate(&self) -> Result<(), FemError> {
        match (self.kind, self.location) {
            (LoadKind::Concentrated, LoadLocation::Station(i)) if i <= LOAD_STATIONS => {}
            (LoadKind::Distributed, LoadLocation::Edge(_)) => {}
            _ => return Err(FemError::InvalidLoad(format!("{self} has an inconsistent location"))),
        }
        if !self.total_magnitude.is_finite() {
            return Err(FemError::InvalidLoad("non-finite magnitude".into()));
        }
        Ok(())
    }

    /// Short stable label used in case identifiers.
    pub fn label(&self) -> String {
        let c = match self.constraint {
            Constraint::Fixed => "fix",
            Constraint::Sliding => "sld",
        };
        let d = match self.direction {
            Axis::X => "x",
            Axis::Y => "y",
        };
        let l = match self.location {
            LoadLocation::Station(i) => format!("pt{i}"),
            LoadLocation::Edge(LoadEdge::FreeEnd) => "end".into(),
            LoadLocation::Edge(LoadEdge::Top) => "top".into(),
            LoadLocation::Edge(LoadEdge::Bottom) => "bot".into(),
        };
        let sign = if self.total_magnitude < 0.0 { "n" } else { "" };
        format!("{c}_{l}_{sign}{d}")
    }
}

impl fmt::Display for LoadCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} N)", self.label(), self.total_magnitude)
    }
}

/// Per-node stress tensor components on a mesh.
#[derive(Debug, Clone)]
pub struct StressField {
    pub mesh: Arc<Mesh>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub tau_xy: Vec<f64>,
}

impl StressField {
    pub fn new(mesh: Arc<Mesh>, sigma_x: Vec<f64>, sigma_y: Vec<f64>, tau_xy: Vec<f64>) -> Result<Self, FemError> {
        let n = mesh.num_nodes();
        if sigma_x.len() != n || sigma_y.len() != n || tau_xy.len() != n {
            return Err(FemError::InvalidMesh("stress arrays do not match the node count".into()));
        }
        if sigma_x.iter().chain(&sigma_y).chain(&tau_xy).any(|v| !v.is_finite()) {
            return Err(FemError::NonFinite);
        }
        Ok(StressField { mesh, sigma_x, sigma_y, tau_xy })
    }

    pub fn component(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.sigma_x,
            1 => &self.sigma_y,
            2 => &self.tau_xy,
            _ => panic!("stress component {c} out of range"),
        }
    }

    /// (min, max) over all three components.
    pub fn range(&self) -> (f64, f64) {
        self.sigma_x
            .iter()
            .chain(&self.sigma_y)
            .chain(&self.tau_xy)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Full result of a linear solve.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Interleaved (u, v) per node.
    pub displacements: Vec<f64>,
    /// Interleaved applied nodal forces.
    pub applied: Vec<f64>,
    /// Interleaved reaction forces, zero on unconstrained dofs.
    pub reactions: Vec<f64>,
    pub strain_energy: f64,
    pub stress: StressField,
}

impl Solution {
    pub fn displacement(&self, node: usize) -> [f64; 2] {
        [self.displacements[2 * node], self.displacements[2 * node + 1]]
    }
}

/// Solves the case and returns only the recovered nodal stresses.
pub fn solve(mesh: &Arc<Mesh>, material: &Material, load: &LoadCase) -> Result<StressField, FemError> {
    analyze(mesh, material, load).map(|s| s.stress)
}

/// Nodal force vector for a load case.
pub fn load_vector(mesh: &Mesh, load: &LoadCase) -> Result<Vec<f64>, FemError> {
    load.validate()?;
    let mut f = vec![0.0; 2 * mesh.num_nodes()];
    let c = load.direction.index();
    match load.location {
        LoadLocation::Station(i) => {
            let name = sets::load_point(i);
            let node = *mesh
                .set(&name)
                .map_err(|_| FemError::InvalidLoad(format!("station {i} does not fall on a mesh node")))?
                .first()
                .ok_or(FemError::MissingSet(name))?;
            f[2 * node + c] += load.total_magnitude;
        }
        LoadLocation::Edge(edge) => {
            let nodes = mesh.set(edge.set_name())?;
            if nodes.len() < 2 {
                return Err(FemError::InvalidLoad(format!("edge {:?} has fewer than two nodes", edge)));
            }
            let seg_len = |a: usize, b: usize| {
                let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            };
            let total_len: f64 = nodes.windows(2).map(|w| seg_len(w[0], w[1])).sum();
            let q = load.total_magnitude / total_len;
            for w in nodes.windows(2) {
                let half = 0.5 * q * seg_len(w[0], w[1]);
                f[2 * w[0] + c] += half;
                f[2 * w[1] + c] += half;
            }
        }
    }
    Ok(f)
}

/// Nodes carrying the applied load, in boundary-set order.
pub fn load_nodes(mesh: &Mesh, load: &LoadCase) -> Result<Vec<usize>, FemError> {
    match load.location {
        LoadLocation::Station(i) => Ok(mesh.set(&sets::load_point(i))?.to_vec()),
        LoadLocation::Edge(edge) => Ok(mesh.set(edge.set_name())?.to_vec()),
    }
}

/// Constrained dofs (global index `2 * node + component`), sorted and deduplicated.
pub fn constrained_dofs(mesh: &Mesh, constraint: Constraint) -> Result<Vec<usize>, FemError> {
    let edge = mesh.set(sets::FIXED_EDGE)?;
    let normal = mesh.fixed_normal.index();
    let mut dofs: Vec<usize> = match constraint {
        Constraint::Fixed => edge.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect(),
        Constraint::Sliding => {
            let pin = mesh.set(sets::FIXED_PIN)?;
            let tangential = mesh.fixed_normal.other().index();
            edge.iter().map(|&n| 2 * n + normal).chain(pin.iter().map(|&n| 2 * n + tangential)).collect()
        }
    };
    dofs.sort_unstable();
    dofs.dedup();
    Ok(dofs)
}

/// Checks that the constrained dofs suppress both translations and the rotation.
fn check_rigid_modes(mesh: &Mesh, constrained: &[usize]) -> Result<(), FemError> {
    let n = mesh.num_nodes() as f64;
    let c = mesh.nodes.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
    let scale = mesh.outline.characteristic_length();
    let mut g = [[0.0f64; 3]; 3];
    for &dof in constrained {
        let p = mesh.nodes[dof / 2];
        let (x, y) = ((p[0] - c[0]) / scale, (p[1] - c[1]) / scale);
        let row = if dof % 2 == 0 { [1.0, 0.0, -y] } else { [0.0, 1.0, x] };
        for a in 0..3 {
            for b in 0..3 {
                g[a][b] += row[a] * row[b];
            }
        }
    }
    let (vals, vecs) = jacobi_eigen3(g);
    let vmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    const NAMES: [&str; 3] = ["x-translation", "y-translation", "rotation"];
    for k in 0..3 {
        if vals[k] <= 1e-10 * vmax.max(1e-300) {
            let v = vecs[k];
            let dominant = (0..3).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            return Err(FemError::Unconstrained(NAMES[dominant]));
        }
    }
    Ok(())
}

/// Eigenvalues and unit eigenvectors of a symmetric 3x3 matrix.
fn jacobi_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off < 1e-300 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let cs = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * cs;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = cs * akp - sn * akq;
                a[k][q] = sn * akp + cs * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = cs * apk - sn * aqk;
                a[q][k] = sn * apk + cs * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = cs * vp - sn * vq;
                row[q] = sn * vp + cs * vq;
            }
        }
    }
    let vals = [a[0][0], a[1][1], a[2][2]];
    let vecs = [[v[0][0], v[1][0], v[2][0]], [v[0][1], v[1][1], v[2][1]], [v[0][2], v[1][2], v[2][2]]];
    (vals, vecs)
}

/// Assembles, solves and post-processes one load case.
pub fn analyze(mesh: &Arc<Mesh>, material: &Material, load: &LoadCase) -> Result<Solution, FemError> {
    material.validate()?;
    mesh.validate()?;
    let applied = load_vector(mesh, load)?;
    let constrained = constrained_dofs(mesh, load.constraint)?;
    check_rigid_modes(mesh, &constrained)?;

    let nn = mesh.num_nodes();
    let ndof = 2 * nn;
    let mut is_fixed = vec![false; ndof];
    for &d in &constrained {
        is_fixed[d] = true;
    }

    let mut adjacency = vec![Vec::new(); nn];
    for el in mesh.elements() {
        for &a in el {
            for &b in el {
                if a != b {
                    adjacency[a].push(b);
                }
            }
        }
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let order = reverse_cuthill_mckee(&adjacency);

    const FREE: usize = usize::MAX;
    let mut eq = vec![FREE; ndof];
    let mut neq = 0;
    for &node in &order {
        for c in 0..2 {
            let d = 2 * node + c;
            if !is_fixed[d] {
                eq[d] = neq;
                neq += 1;
            }
        }
    }

    let mut first: Vec<usize> = (0..neq).collect();
    for el in mesh.elements() {
        let eqs: Vec<usize> = el.iter().flat_map(|&n| [eq[2 * n], eq[2 * n + 1]]).filter(|&e| e != FREE).collect();
        if let Some(&lo) = eqs.iter().min() {
            for &e in &eqs {
                first[e] = first[e].min(lo);
            }
        }
    }

    let mut k = SkylineMatrix::from_profile(first);
    let element_matrices: Vec<Vec<f64>> =
        (0..mesh.num_elements()).map(|e| element::stiffness(&mesh.element_coords(e), material)).collect();
    for (e, ke) in element_matrices.iter().enumerate() {
        let dofs: Vec<usize> = mesh.element(e).iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        let m = dofs.len();
        for (a, &da) in dofs.iter().enumerate() {
            let ea = eq[da];
            if ea == FREE {
                continue;
            }
            for (b, &db) in dofs.iter().enumerate() {
                let eb = eq[db];
                if eb == FREE || eb > ea {
                    continue;
                }
                k.add(ea, eb, ke[a * m + b]);
            }
        }
    }

    let mut rhs = vec![0.0; neq];
    for d in 0..ndof {
        if eq[d] != FREE {
            rhs[eq[d]] = applied[d];
        }
    }
    k.factorize().map_err(|row| {
        let d = eq.iter().position(|&e| e == row).unwrap_or(0);
        FemError::Singular { node: d / 2, dof: d % 2 }
    })?;
    k.solve(&mut rhs);
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(FemError::NonFinite);
    }

    let mut u = vec![0.0; ndof];
    for d in 0..ndof {
        if eq[d] != FREE {
            u[d] = rhs[eq[d]];
        }
    }

    // internal forces K u, element by element; reactions live on the constrained dofs
    let mut internal = vec![0.0; ndof];
    for (e, ke) in element_matrices.iter().enumerate() {
        let dofs: Vec<usize> = mesh.element(e).iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        let m = dofs.len();
        for a in 0..m {
            let s: f64 = (0..m).map(|b| ke[a * m + b] * u[dofs[b]]).sum();
            internal[dofs[a]] += s;
        }
    }
    let mut reactions = vec![0.0; ndof];
    for &d in &constrained {
        reactions[d] = internal[d] - applied[d];
    }
    let strain_energy = 0.5 * u.iter().zip(&internal).map(|(a, b)| a * b).sum::<f64>();

    let stress = recover_stress(mesh, material, &u)?;
    Ok(Solution { displacements: u, applied, reactions, strain_energy, stress })
}

/// Area-weighted nodal averaging of element stresses evaluated at the nodes.
pub fn recover_stress(mesh: &Arc<Mesh>, material: &Material, u: &[f64]) -> Result<StressField, FemError> {
    let nn = mesh.num_nodes();
    let mut acc = vec![[0.0f64; 3]; nn];
    let mut weight = vec![0.0f64; nn];
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element(e);
        let xy = mesh.element_coords(e);
        let ue: Vec<f64> = nodes.iter().flat_map(|&n| [u[2 * n], u[2 * n + 1]]).collect();
        let area = mesh.element_area(e).abs();
        for (k, s) in element::nodal_stresses(&xy, &ue, material).into_iter().enumerate() {
            let n = nodes[k];
            for c in 0..3 {
                acc[n][c] += area * s[c];
            }
            weight[n] += area;
        }
    }
    let mut sx = Vec::with_capacity(nn);
    let mut sy = Vec::with_capacity(nn);
    let mut txy = Vec::with_capacity(nn);
    for n in 0..nn {
        let w = if weight[n] > 0.0 { weight[n] } else { 1.0 };
        sx.push(acc[n][0] / w);
        sy.push(acc[n][1] / w);
        txy.push(acc[n][2] / w);
    }
    StressField::new(Arc::clone(mesh), sx, sy, txy)
}
