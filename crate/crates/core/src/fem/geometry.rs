//! Polygonal domain outlines and the bundled truss template files.

use super::FemError;

/// A polygonal region: one outer boundary and any number of holes.
///
/// Vertices are listed counter-clockwise for the outer ring; hole
/// orientation is not significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outline {
    pub outer: Vec<[f64; 2]>,
    pub holes: Vec<Vec<[f64; 2]>>,
}

impl Outline {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Outline { outer: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], holes: Vec::new() }
    }

    /// Even-odd point containment against the outer ring and every hole.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        point_in_ring(&self.outer, p) && !self.holes.iter().any(|h| point_in_ring(h, p))
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.outer {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn area(&self) -> f64 {
        ring_area(&self.outer).abs() - self.holes.iter().map(|h| ring_area(h).abs()).sum::<f64>()
    }

    /// Characteristic length used for duplicate-node and degeneracy tolerances.
    pub fn characteristic_length(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    }

    /// Mirror image about the vertical line `x = axis`.
    pub fn mirrored_x(&self, axis: f64) -> Self {
        let flip =
            |ring: &Vec<[f64; 2]>| -> Vec<[f64; 2]> { ring.iter().rev().map(|p| [2.0 * axis - p[0], p[1]]).collect() };
        Outline { outer: flip(&self.outer), holes: self.holes.iter().map(flip).collect() }
    }
}

fn ring_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn point_in_ring(ring: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// A straight boundary segment named in a template file.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = ((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2;
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            return false;
        }
        let q = [self.a[0] + t * d[0], self.a[1] + t * d[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= tol
    }

    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }
}

/// Parsed contents of a versioned truss outline file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrussTemplate {
    pub id: String,
    pub version: u32,
    pub outline: Outline,
    pub fixed_edge: Segment,
    pub load_edge: Segment,
}

const TRUSS_CANTILEVER_V1: &str = include_str!("../../templates/truss_cantilever_v1.outline");

/// Identifiers of the templates compiled into the crate.
pub const TEMPLATE_IDS: &[&str] = &["truss_cantilever_v1"];

pub fn bundled_template(id: &str) -> Result<TrussTemplate, FemError> {
    match id {
        "truss_cantilever_v1" => parse_template(TRUSS_CANTILEVER_V1),
        other => Err(FemError::UnknownTemplate(other.to_string())),
    }
}

/// Parse the outline text format.
///
/// ```text
/// template <id>
/// version <n>
/// outer
/// x y
/// ...
/// hole
/// x y
/// ...
/// fixed x0 y0 x1 y1
/// load x0 y0 x1 y1
/// ```
/// Blank lines and `#` comments are ignored.
pub fn parse_template(text: &str) -> Result<TrussTemplate, FemError> {
    let bad = |line: usize, msg: &str| FemError::Template(format!("line {line}: {msg}"));
    let mut id = None;
    let mut version = None;
    let mut outer: Vec<[f64; 2]> = Vec::new();
    let mut holes: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut fixed = None;
    let mut load = None;
    enum Ring {
        None,
        Outer,
        Hole,
    }
    let mut ring = Ring::None;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let nums = |toks: &[&str]| -> Result<Vec<f64>, FemError> {
            toks.iter().map(|t| t.parse::<f64>().map_err(|_| bad(line_no, "expected a number"))).collect()
        };
        match toks[0] {
            "template" => id = toks.get(1).map(|s| s.to_string()),
            "version" => {
                version =
                    Some(toks.get(1).and_then(|v| v.parse::<u32>().ok()).ok_or_else(|| bad(line_no, "bad version"))?)
            }
            "outer" => ring = Ring::Outer,
            "hole" => {
                holes.push(Vec::new());
                ring = Ring::Hole;
            }
            "fixed" | "load" => {
                let v = nums(&toks[1..])?;
                if v.len() != 4 {
                    return Err(bad(line_no, "segment needs four coordinates"));
                }
                let seg = Segment { a: [v[0], v[1]], b: [v[2], v[3]] };
                if toks[0] == "fixed" {
                    fixed = Some(seg);
                } else {
                    load = Some(seg);
                }
                ring = Ring::None;
            }
            _ => {
                let v = nums(&toks)?;
                if v.len() != 2 {
                    return Err(bad(line_no, "vertex needs two coordinates"));
                }
                match ring {
                    Ring::Outer => outer.push([v[0], v[1]]),
                    Ring::Hole => holes.last_mut().expect("hole started").push([v[0], v[1]]),
                    Ring::None => return Err(bad(line_no, "vertex outside of a ring")),
                }
            }
        }
    }

    if outer.len() < 3 || holes.iter().any(|h| h.len() < 3) {
        return Err(FemError::Template("rings need at least three vertices".into()));
    }
    Ok(TrussTemplate {
        id: id.ok_or_else(|| FemError::Template("missing template id".into()))?,
        version: version.ok_or_else(|| FemError::Template("missing version".into()))?,
        outline: Outline { outer, holes },
        fixed_edge: fixed.ok_or_else(|| FemError::Template("missing fixed segment".into()))?,
        load_edge: load.ok_or_else(|| FemError::Template("missing load segment".into()))?,
    })
}
