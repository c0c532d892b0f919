//! Binary weight checkpoints.
//!
//! Layout (all integers little-endian `u32`, weights little-endian `f32`):
//!
//! ```text
//! magic "PISTRESS" | version | config length | config JSON bytes
//! layer count | per layer: out_ch, in_ch, k, weights[out*in*k*k], biases[out]
//! ```
//!
//! Adam moments are not stored; a checkpoint restores an inference model.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::graph::Network;
use super::tensor::Scalar;
use super::NnError;

pub const MAGIC: &[u8; 8] = b"PISTRESS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model configuration echoed as JSON.
    pub config: String,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, config: impl Into<String>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerRecord {
                out_ch: l.out_ch,
                in_ch: l.in_ch,
                k: l.k,
                weight: l.weight.iter().map(|v| v.as_f64() as f32).collect(),
                bias: l.bias.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint { config: config.into(), layers }
    }

    /// Copies weights into a network of identical layer shapes.
    pub fn apply_to<T: Scalar>(&self, net: &mut Network<T>) -> Result<(), NnError> {
        if self.layers.len() != net.layers.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} layers, network {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (i, (rec, l)) in self.layers.iter().zip(net.layers.iter_mut()).enumerate() {
            if (rec.out_ch, rec.in_ch, rec.k) != (l.out_ch, l.in_ch, l.k) {
                return Err(NnError::Checkpoint(format!("layer {i} shape differs from the network")));
            }
            for (d, &s) in l.weight.iter_mut().zip(&rec.weight) {
                *d = T::of(s as f64);
            }
            for (d, &s) in l.bias.iter_mut().zip(&rec.bias) {
                *d = T::of(s as f64);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        u(&mut out, VERSION as usize);
        u(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        u(&mut out, self.layers.len());
        for l in &self.layers {
            u(&mut out, l.out_ch);
            u(&mut out, l.in_ch);
            u(&mut out, l.k);
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let config =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| NnError::Checkpoint("config is not UTF-8".into()))?;
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let (out_ch, in_ch, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let weight = r.f32s(out_ch * in_ch * k * k)?;
            let bias = r.f32s(out_ch)?;
            layers.push(LayerRecord { out_ch, in_ch, k, weight, bias });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, layers })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Line-oriented dump for diffing: one header line per layer followed by
    /// one kernel row per line and the biases.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pistress-checkpoint {VERSION}");
        let _ = writeln!(s, "config {}", self.config);
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i} out {} in {} k {}", l.out_ch, l.in_ch, l.k);
            let row = l.in_ch * l.k * l.k;
            for o in 0..l.out_ch {
                let vals: Vec<String> = l.weight[o * row..(o + 1) * row].iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "w {}", vals.join(" "));
            }
            let vals: Vec<String> = l.bias.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "b {}", vals.join(" "));
        }
        s
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NnError> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("layer too large".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}
