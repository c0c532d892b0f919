//! Plane-stress element kernels: bilinear quadrilateral (2x2 Gauss) and
//! constant-strain triangle (one point).

use super::Material;

const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// (xi, eta, weight)
pub const GAUSS_2X2: [(f64, f64, f64); 4] = [(-G, -G, 1.0), (G, -G, 1.0), (G, G, 1.0), (-G, G, 1.0)];

const QUAD_CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

pub fn quad4_shape(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (k, &(a, b)) in QUAD_CORNERS.iter().enumerate() {
        n[k] = 0.25 * (1.0 + a * xi) * (1.0 + b * eta);
    }
    n
}

/// Derivatives of the shape functions with respect to (xi, eta).
fn quad4_dshape(xi: f64, eta: f64) -> [[f64; 4]; 2] {
    let mut d = [[0.0; 4]; 2];
    for (k, &(a, b)) in QUAD_CORNERS.iter().enumerate() {
        d[0][k] = 0.25 * a * (1.0 + b * eta);
        d[1][k] = 0.25 * b * (1.0 + a * xi);
    }
    d
}

fn quad4_jacobian(xy: &[[f64; 2]; 4], xi: f64, eta: f64) -> [[f64; 2]; 2] {
    let d = quad4_dshape(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for k in 0..4 {
        for r in 0..2 {
            j[r][0] += d[r][k] * xy[k][0];
            j[r][1] += d[r][k] * xy[k][1];
        }
    }
    j
}

pub fn quad4_jacobian_det(xy: &[[f64; 2]; 4], xi: f64, eta: f64) -> f64 {
    let j = quad4_jacobian(xy, xi, eta);
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// Cartesian shape-function gradients and det J at (xi, eta).
fn quad4_gradients(xy: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([[f64; 4]; 2], f64) {
    let j = quad4_jacobian(xy, xi, eta);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let d = quad4_dshape(xi, eta);
    let mut g = [[0.0; 4]; 2];
    for k in 0..4 {
        g[0][k] = inv[0][0] * d[0][k] + inv[0][1] * d[1][k];
        g[1][k] = inv[1][0] * d[0][k] + inv[1][1] * d[1][k];
    }
    (g, det)
}

/// Inverse isoparametric map for a quad by Newton iteration. Returns (xi, eta).
pub fn quad4_natural(xy: &[[f64; 2]; 4], p: [f64; 2]) -> (f64, f64) {
    let (mut xi, mut eta) = (0.0, 0.0);
    for _ in 0..20 {
        let n = quad4_shape(xi, eta);
        let mut x = [0.0; 2];
        for k in 0..4 {
            x[0] += n[k] * xy[k][0];
            x[1] += n[k] * xy[k][1];
        }
        let r = [p[0] - x[0], p[1] - x[1]];
        let j = quad4_jacobian(xy, xi, eta);
        // dx/dxi = J^T
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let dxi = (j[1][1] * r[0] - j[1][0] * r[1]) / det;
        let deta = (-j[0][1] * r[0] + j[0][0] * r[1]) / det;
        xi += dxi;
        eta += deta;
        if dxi.abs() + deta.abs() < 1e-14 {
            break;
        }
    }
    (xi, eta)
}

/// Barycentric coordinates of `p` in a triangle.
pub fn tri3_barycentric(xy: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = *xy;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l0, l1, 1.0 - l0 - l1]
}

fn tri3_gradients(xy: &[[f64; 2]; 3]) -> ([[f64; 3]; 2], f64) {
    let [a, b, c] = *xy;
    let two_a = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let g = [
        [(b[1] - c[1]) / two_a, (c[1] - a[1]) / two_a, (a[1] - b[1]) / two_a],
        [(c[0] - b[0]) / two_a, (a[0] - c[0]) / two_a, (b[0] - a[0]) / two_a],
    ];
    (g, 0.5 * two_a)
}

/// Strain-displacement matrix (3 x 2n) from Cartesian gradients, row-major.
fn b_matrix(gx: &[f64], gy: &[f64]) -> Vec<[f64; 3]> {
    // stored column-wise: one [exx, eyy, gxy] triple per dof
    let mut b = Vec::with_capacity(2 * gx.len());
    for k in 0..gx.len() {
        b.push([gx[k], 0.0, gy[k]]);
        b.push([0.0, gy[k], gx[k]]);
    }
    b
}

fn add_btdb(ke: &mut [f64], ndof: usize, b: &[[f64; 3]], d: &[[f64; 3]; 3], w: f64) {
    let db: Vec<[f64; 3]> = b
        .iter()
        .map(|col| {
            let mut out = [0.0; 3];
            for r in 0..3 {
                out[r] = d[r][0] * col[0] + d[r][1] * col[1] + d[r][2] * col[2];
            }
            out
        })
        .collect();
    for i in 0..ndof {
        for j in 0..ndof {
            ke[i * ndof + j] += w * (b[i][0] * db[j][0] + b[i][1] * db[j][1] + b[i][2] * db[j][2]);
        }
    }
}

/// Element stiffness, dense row-major `2n x 2n` with dofs ordered (u0, v0, u1, v1, ...).
pub fn stiffness(xy: &[[f64; 2]], mat: &Material) -> Vec<f64> {
    let d = mat.plane_stress_matrix();
    let ndof = 2 * xy.len();
    let mut ke = vec![0.0; ndof * ndof];
    match xy.len() {
        4 => {
            let q = [xy[0], xy[1], xy[2], xy[3]];
            for &(xi, eta, w) in GAUSS_2X2.iter() {
                let (g, det) = quad4_gradients(&q, xi, eta);
                let b = b_matrix(&g[0], &g[1]);
                add_btdb(&mut ke, ndof, &b, &d, w * det * mat.thickness);
            }
        }
        3 => {
            let t = [xy[0], xy[1], xy[2]];
            let (g, area) = tri3_gradients(&t);
            let b = b_matrix(&g[0], &g[1]);
            add_btdb(&mut ke, ndof, &b, &d, area * mat.thickness);
        }
        n => unreachable!("unsupported element with {n} nodes"),
    }
    ke
}

fn stress_from_gradients(gx: &[f64], gy: &[f64], u: &[f64], d: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut eps = [0.0; 3];
    for k in 0..gx.len() {
        let (ux, uy) = (u[2 * k], u[2 * k + 1]);
        eps[0] += gx[k] * ux;
        eps[1] += gy[k] * uy;
        eps[2] += gy[k] * ux + gx[k] * uy;
    }
    let mut s = [0.0; 3];
    for r in 0..3 {
        s[r] = d[r][0] * eps[0] + d[r][1] * eps[1] + d[r][2] * eps[2];
    }
    s
}

/// Stresses (sx, sy, txy) evaluated at the element's nodes.
///
/// Quads extrapolate their 2x2 Gauss-point stresses bilinearly to the corners;
/// triangles are constant.
pub fn nodal_stresses(xy: &[[f64; 2]], u: &[f64], mat: &Material) -> Vec<[f64; 3]> {
    let d = mat.plane_stress_matrix();
    match xy.len() {
        4 => {
            let q = [xy[0], xy[1], xy[2], xy[3]];
            let gp: Vec<[f64; 3]> = GAUSS_2X2
                .iter()
                .map(|&(xi, eta, _)| {
                    let (g, _) = quad4_gradients(&q, xi, eta);
                    stress_from_gradients(&g[0], &g[1], u, &d)
                })
                .collect();
            // corner (a, b) sits at (a*sqrt3, b*sqrt3) in Gauss-point natural coords
            let s3 = 3f64.sqrt();
            QUAD_CORNERS
                .iter()
                .map(|&(a, b)| {
                    let w = quad4_shape(a * s3, b * s3);
                    let mut s = [0.0; 3];
                    for (k, sk) in gp.iter().enumerate() {
                        for c in 0..3 {
                            s[c] += w[k] * sk[c];
                        }
                    }
                    s
                })
                .collect()
        }
        3 => {
            let t = [xy[0], xy[1], xy[2]];
            let (g, _) = tri3_gradients(&t);
            let s = stress_from_gradients(&g[0], &g[1], u, &d);
            vec![s; 3]
        }
        n => unreachable!("unsupported element with {n} nodes"),
    }
}
