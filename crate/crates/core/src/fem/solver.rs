//! Profile (skyline) Cholesky factorization with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

/// Symmetric positive definite matrix stored as the lower profile, row by row.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` is the leftmost stored column of row `i` (must be `<= i`).
    pub fn from_profile(first: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offsets.push(acc);
            acc += i - f + 1;
        }
        offsets.push(acc);
        SkylineMatrix { first, offsets, values: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    /// Adds `v` at (i, j); only the lower triangle is kept, so callers add each
    /// symmetric pair once via `j <= i`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        debug_assert!(j >= self.first[i], "entry outside profile");
        self.values[self.offsets[i] + j - self.first[i]] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        if j < self.first[i] {
            0.0
        } else {
            self.values[self.offsets[i] + j - self.first[i]]
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    /// In-place Cholesky `A = L L^T`. On a non-positive pivot returns the
    /// offending row.
    pub fn factorize(&mut self) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let pivot_scale = self.get(i, i).abs();
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let dot = {
                    let ri = &self.values[self.offsets[i] + k0 - fi..self.offsets[i] + j - fi];
                    let rj = &self.values[self.offsets[j] + k0 - fj..self.offsets[j] + j - fj];
                    ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>()
                };
                let ljj = self.values[self.offsets[j + 1] - 1];
                let idx = self.offsets[i] + j - fi;
                self.values[idx] = (self.values[idx] - dot) / ljj;
            }
            let row = &self.values[self.offsets[i]..self.offsets[i + 1] - 1];
            let sq: f64 = row.iter().map(|v| v * v).sum();
            let d = self.values[self.offsets[i + 1] - 1] - sq;
            if !(d > 1e-11 * pivot_scale) || !d.is_finite() {
                return Err(i);
            }
            self.values[self.offsets[i + 1] - 1] = d.sqrt();
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place (after `factorize`).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let dot: f64 = row[..row.len() - 1].iter().zip(&b[fi..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - dot) / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            b[i] /= row[row.len() - 1];
            let xi = b[i];
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                b[fi + k] -= l * xi;
            }
        }
    }
}

/// Reverse Cuthill-McKee permutation: `order[k]` is the original vertex placed at position `k`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree = |v: usize| adjacency[v].len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, placed: &[bool]| -> (usize, usize) {
        // (farthest vertex, eccentricity) within the unplaced component
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut far = (start, 0);
        while let Some(v) = q.pop_front() {
            let dv = dist[v];
            if dv > far.1 || (dv == far.1 && degree(v) < degree(far.0)) {
                far = (v, dv);
            }
            for &w in &adjacency[v] {
                if !placed[w] && dist[w] == usize::MAX {
                    dist[w] = dv + 1;
                    q.push_back(w);
                }
            }
        }
        far
    };

    while order.len() < n {
        let seed = (0..n).filter(|&v| !placed[v]).min_by_key(|&v| (degree(v), v)).expect("unplaced vertex");
        // pseudo-peripheral start
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let (far, e) = bfs_levels(start, &placed);
            if e <= ecc {
                break;
            }
            start = far;
            ecc = e;
        }
        let mut q = VecDeque::new();
        placed[start] = true;
        q.push_back(start);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !placed[w]).collect();
            nbrs.sort_by_key(|&w| (degree(w), w));
            for w in nbrs {
                if !placed[w] {
                    placed[w] = true;
                    q.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // tridiagonal 2,-1 matrix
        let n: usize = 6;
        let first: Vec<usize> = (0..n).map(|i| i.saturating_sub(1)).collect();
        let mut a = SkylineMatrix::from_profile(first);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 2.0 * x_true[i];
                if i > 0 {
                    s -= x_true[i - 1];
                }
                if i + 1 < n {
                    s -= x_true[i + 1];
                }
                s
            })
            .collect();
        a.factorize().unwrap();
        a.solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular_matrix() {
        let mut a = SkylineMatrix::from_profile(vec![0, 0]);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        assert_eq!(a.factorize(), Err(1));
    }

    #[test]
    fn rcm_is_a_permutation_and_narrows_band() {
        // 2D grid numbered row-major along the long side
        let (nx, ny) = (30, 4);
        let id = |i: usize, j: usize| j * nx + i;
        let mut adj = vec![Vec::new(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx {
                    adj[id(i, j)].push(id(i + 1, j));
                    adj[id(i + 1, j)].push(id(i, j));
                }
                if j + 1 < ny {
                    adj[id(i, j)].push(id(i, j + 1));
                    adj[id(i, j + 1)].push(id(i, j));
                }
            }
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut seen = order.clone();
        seen.sort();
        assert_eq!(seen, (0..nx * ny).collect::<Vec<_>>());
        let mut pos = vec![0; nx * ny];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let band = |p: &dyn Fn(usize) -> usize| {
            (0..nx * ny)
                .flat_map(|v| adj[v].iter().map(move |&w| (v, w)))
                .map(|(v, w)| p(v).abs_diff(p(w)))
                .max()
                .unwrap()
        };
        assert!(band(&|v| pos[v]) < band(&|v| v));
    }
}
