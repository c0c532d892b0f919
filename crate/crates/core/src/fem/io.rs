//! Plain-text mesh and stress-field serialization.
//!
//! ```text
//! pistress-mesh 1
//! kind quad4
//! element_size <h>
//! fixed_normal x
//! nodes <N>
//! <x> <y>                 (N lines)
//! elements <M>
//! <n0> <n1> <n2> [<n3>]   (M lines)
//! outer <K>
//! <x> <y>                 (K lines)
//! hole <K>                (zero or more rings)
//! <x> <y>
//! set <name> <count>
//! <id> <id> ...           (one line)
//! end
//! ```
//!
//! A stress field is `pistress-stress 1`, `nodes <N>`, then one
//! `<sx> <sy> <txy>` line per node. Floats use Rust's shortest round-trip
//! formatting, so write/read is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::{Axis, ElementKind, FemError, Mesh, Outline, StressField};

pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let kind = match mesh.kind {
        ElementKind::Quad4 => "quad4",
        ElementKind::Tri3 => "tri3",
    };
    let normal = match mesh.fixed_normal {
        Axis::X => "x",
        Axis::Y => "y",
    };
    writeln!(s, "pistress-mesh 1").unwrap();
    writeln!(s, "kind {kind}").unwrap();
    writeln!(s, "element_size {:?}", mesh.element_size).unwrap();
    writeln!(s, "fixed_normal {normal}").unwrap();
    writeln!(s, "nodes {}", mesh.num_nodes()).unwrap();
    for p in &mesh.nodes {
        writeln!(s, "{:?} {:?}", p[0], p[1]).unwrap();
    }
    writeln!(s, "elements {}", mesh.num_elements()).unwrap();
    for el in mesh.elements() {
        let ids: Vec<String> = el.iter().map(|n| n.to_string()).collect();
        writeln!(s, "{}", ids.join(" ")).unwrap();
    }
    let ring = |s: &mut String, tag: &str, r: &[[f64; 2]]| {
        writeln!(s, "{tag} {}", r.len()).unwrap();
        for p in r {
            writeln!(s, "{:?} {:?}", p[0], p[1]).unwrap();
        }
    };
    ring(&mut s, "outer", &mesh.outline.outer);
    for h in &mesh.outline.holes {
        ring(&mut s, "hole", h);
    }
    for (name, ids) in &mesh.boundary_sets {
        writeln!(s, "set {name} {}", ids.len()).unwrap();
        let ids: Vec<String> = ids.iter().map(|n| n.to_string()).collect();
        writeln!(s, "{}", ids.join(" ")).unwrap();
    }
    writeln!(s, "end").unwrap();
    s
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, FemError> {
        loop {
            let (n, l) = self.it.next().ok_or_else(|| FemError::Parse("unexpected end of input".into()))?;
            self.line = n + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Ok(l);
            }
        }
    }

    fn err(&self, msg: &str) -> FemError {
        FemError::Parse(format!("line {}: {msg}", self.line))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, FemError> {
        let l = self.next()?;
        l.strip_prefix(key).map(str::trim).ok_or_else(|| self.err(&format!("expected `{key}`")))
    }

    fn nums<T: std::str::FromStr>(&mut self, l: &str) -> Result<Vec<T>, FemError> {
        l.split_whitespace().map(|t| t.parse::<T>().map_err(|_| self.err("bad number"))).collect()
    }

    fn point(&mut self) -> Result<[f64; 2], FemError> {
        let l = self.next()?;
        let v: Vec<f64> = self.nums(l)?;
        if v.len() != 2 {
            return Err(self.err("expected two coordinates"));
        }
        Ok([v[0], v[1]])
    }

    fn count(&mut self, l: &str) -> Result<usize, FemError> {
        l.parse().map_err(|_| self.err("bad count"))
    }
}

pub fn read_mesh(text: &str) -> Result<Mesh, FemError> {
    let mut ls = Lines { it: text.lines().enumerate(), line: 0 };
    if ls.next()? != "pistress-mesh 1" {
        return Err(ls.err("not a pistress mesh (version 1)"));
    }
    let kind = match ls.keyed("kind")? {
        "quad4" => ElementKind::Quad4,
        "tri3" => ElementKind::Tri3,
        _ => return Err(ls.err("unknown element kind")),
    };
    let h = ls.keyed("element_size")?;
    let element_size: f64 = h.parse().map_err(|_| ls.err("bad element size"))?;
    let fixed_normal = match ls.keyed("fixed_normal")? {
        "x" => Axis::X,
        "y" => Axis::Y,
        _ => return Err(ls.err("bad axis")),
    };
    let c = ls.keyed("nodes")?;
    let nn = ls.count(c)?;
    let nodes = (0..nn).map(|_| ls.point()).collect::<Result<Vec<_>, _>>()?;
    let c = ls.keyed("elements")?;
    let ne = ls.count(c)?;
    let mut conn = Vec::with_capacity(ne * kind.nodes_per_element());
    for _ in 0..ne {
        let l = ls.next()?;
        let ids: Vec<usize> = ls.nums(l)?;
        if ids.len() != kind.nodes_per_element() {
            return Err(ls.err("wrong number of element nodes"));
        }
        conn.extend(ids);
    }
    let c = ls.keyed("outer")?;
    let k = ls.count(c)?;
    let outer = (0..k).map(|_| ls.point()).collect::<Result<Vec<_>, _>>()?;
    let mut outline = Outline { outer, holes: Vec::new() };
    let mut sets = BTreeMap::new();
    loop {
        let l = ls.next()?;
        if l == "end" {
            break;
        } else if let Some(c) = l.strip_prefix("hole ") {
            let k = ls.count(c.trim())?;
            let ring = (0..k).map(|_| ls.point()).collect::<Result<Vec<_>, _>>()?;
            outline.holes.push(ring);
        } else if let Some(rest) = l.strip_prefix("set ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(ls.err("set header needs a name and a count"));
            }
            let k = ls.count(parts[1])?;
            let ids: Vec<usize> = if k == 0 {
                Vec::new()
            } else {
                let l = ls.next()?;
                ls.nums(l)?
            };
            if ids.len() != k {
                return Err(ls.err("set size mismatch"));
            }
            sets.insert(parts[0].to_string(), ids);
        } else {
            return Err(ls.err("unexpected record"));
        }
    }
    Mesh::new(nodes, kind, conn, sets, fixed_normal, outline, element_size)
}

pub fn write_stress(field: &StressField) -> String {
    let mut s = String::new();
    writeln!(s, "pistress-stress 1").unwrap();
    writeln!(s, "nodes {}", field.sigma_x.len()).unwrap();
    for n in 0..field.sigma_x.len() {
        writeln!(s, "{:?} {:?} {:?}", field.sigma_x[n], field.sigma_y[n], field.tau_xy[n]).unwrap();
    }
    s
}

pub fn read_stress(text: &str, mesh: Arc<Mesh>) -> Result<StressField, FemError> {
    let mut ls = Lines { it: text.lines().enumerate(), line: 0 };
    if ls.next()? != "pistress-stress 1" {
        return Err(ls.err("not a pistress stress table (version 1)"));
    }
    let c = ls.keyed("nodes")?;
    let n = ls.count(c)?;
    let (mut sx, mut sy, mut txy) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let l = ls.next()?;
        let v: Vec<f64> = ls.nums(l)?;
        if v.len() != 3 {
            return Err(ls.err("expected three stress components"));
        }
        sx.push(v[0]);
        sy.push(v[1]);
        txy.push(v[2]);
    }
    StressField::new(mesh, sx, sy, txy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh_truss_like, solve, Constraint, LoadCase, Material};

    #[test]
    fn mesh_and_stress_roundtrip() {
        let mesh = Arc::new(build_mesh_truss_like("truss_cantilever_v1", 1.0, 0.1).unwrap());
        let text = write_mesh(&mesh);
        let back = read_mesh(&text).unwrap();
        assert_eq!(back.nodes, mesh.nodes);
        assert_eq!(back.boundary_sets, mesh.boundary_sets);
        assert_eq!(back.outline, mesh.outline);
        assert_eq!(write_mesh(&back), text);

        let field = solve(
            &mesh,
            &Material::default(),
            &LoadCase::concentrated(Constraint::Fixed, crate::fem::Axis::Y, 2, 1000.0),
        )
        .unwrap();
        let back = read_stress(&write_stress(&field), Arc::clone(&mesh)).unwrap();
        assert_eq!(back.sigma_x, field.sigma_x);
        assert_eq!(back.tau_xy, field.tau_xy);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_mesh("hello").is_err());
        assert!(read_mesh("pistress-mesh 1\nkind hex8\n").is_err());
    }
}
