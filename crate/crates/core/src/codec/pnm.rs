//! Raster files: single-channel little-endian PFM for lossless float storage,
//! binary PGM (P5) and 8-bit grayscale PNG for inspection.
//!
//! In-memory rasters run bottom-to-top; PFM stores rows the same way, while
//! PGM and PNG are written top row first so they display upright.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CodecError, ContourMap, ImageTriple, CHANNEL_NAMES};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn top_down_bytes(width: usize, height: usize, data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(width * height);
    for j in (0..height).rev() {
        out.extend(data[j * width..(j + 1) * width].iter().map(|&v| to_u8(v)));
    }
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), CodecError> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&top_down_bytes(width, height, data))?;
    f.flush()?;
    Ok(())
}

/// Reads a P5 file back into bottom-to-top intensities in [0, 1].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>), CodecError> {
    let bytes = fs::read(path)?;
    let (fields, body) = header_fields(&bytes, 4)?;
    if fields[0] != "P5" {
        return Err(CodecError::Format(format!("{}: not a binary PGM", path.display())));
    }
    let (w, h, maxval) = (parse_dim(&fields[1])?, parse_dim(&fields[2])?, parse_dim(&fields[3])?);
    if maxval != 255 || body.len() != w * h {
        return Err(CodecError::Format(format!("{}: expected 8-bit {w}x{h} raster", path.display())));
    }
    let mut data = vec![0.0; w * h];
    for (r, row) in body.chunks(w).enumerate() {
        let j = h - 1 - r;
        for (i, &b) in row.iter().enumerate() {
            data[j * w + i] = b as f64 / 255.0;
        }
    }
    Ok((w, h, data))
}

pub fn write_png(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), CodecError> {
    let f = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(f, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| CodecError::Format(e.to_string()))?;
    w.write_image_data(&top_down_bytes(width, height, data)).map_err(|e| CodecError::Format(e.to_string()))?;
    w.finish().map_err(|e| CodecError::Format(e.to_string()))?;
    Ok(())
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), CodecError> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    write!(f, "Pf\n{width} {height}\n-1.0\n")?;
    for &v in data {
        f.write_all(&(v as f32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>), CodecError> {
    let bytes = fs::read(path)?;
    let (fields, body) = header_fields(&bytes, 4)?;
    if fields[0] != "Pf" {
        return Err(CodecError::Format(format!("{}: not a single-channel PFM", path.display())));
    }
    let (w, h) = (parse_dim(&fields[1])?, parse_dim(&fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| CodecError::Format("bad PFM scale".into()))?;
    if scale >= 0.0 {
        return Err(CodecError::Format(format!("{}: big-endian PFM is not supported", path.display())));
    }
    if body.len() != 4 * w * h {
        return Err(CodecError::Format(format!("{}: truncated raster", path.display())));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect::<Vec<_>>();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::Format(format!("{}: non-finite intensity", path.display())));
    }
    Ok((w, h, data))
}

fn parse_dim(s: &str) -> Result<usize, CodecError> {
    s.parse().map_err(|_| CodecError::Format(format!("bad header field {s:?}")))
}

/// Splits `n` whitespace-separated header tokens from the binary body, which
/// starts after the single whitespace byte following the last token.
fn header_fields(bytes: &[u8], n: usize) -> Result<(Vec<String>, &[u8]), CodecError> {
    let mut fields = Vec::with_capacity(n);
    let mut pos = 0;
    while fields.len() < n {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Format("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return Err(CodecError::Format("missing raster body".into()));
    }
    Ok((fields, &bytes[pos + 1..]))
}

/// File path `{dir}/{case_id}_{sx|sy|txy}_{tag}.{ext}`.
pub fn channel_path(dir: &Path, case_id: &str, channel: usize, tag: &str, ext: &str) -> PathBuf {
    dir.join(format!("{case_id}_{}_{tag}.{ext}", CHANNEL_NAMES[channel]))
}

/// Writes the float rasters and, if `export` is set, 8-bit PGM and PNG copies.
/// Returns the float raster paths.
pub fn write_triple(dir: &Path, image: &ImageTriple, tag: &str, export: bool) -> Result<[PathBuf; 3], CodecError> {
    let paths: [PathBuf; 3] = std::array::from_fn(|c| channel_path(dir, &image.case_id, c, tag, "pfm"));
    for c in 0..3 {
        let data = &image.channels[c];
        write_pfm(&paths[c], image.width, image.height, data)?;
        if export {
            write_pgm(&channel_path(dir, &image.case_id, c, tag, "pgm"), image.width, image.height, data)?;
            write_png(&channel_path(dir, &image.case_id, c, tag, "png"), image.width, image.height, data)?;
        }
    }
    Ok(paths)
}

pub fn read_triple(paths: &[PathBuf; 3], contour_map: ContourMap, case_id: &str) -> Result<ImageTriple, CodecError> {
    let mut dims = None;
    let mut channels: [Vec<f64>; 3] = Default::default();
    for c in 0..3 {
        let (w, h, data) = read_pfm(&paths[c])?;
        if dims.is_some_and(|d| d != (w, h)) {
            return Err(CodecError::DimensionMismatch(format!(
                "{} differs from its sibling channels",
                paths[c].display()
            )));
        }
        dims = Some((w, h));
        channels[c] = data;
    }
    let (w, h) = dims.expect("three channels");
    ImageTriple::new(w, h, channels, contour_map, case_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Vec<f64> {
        (0..w * h).map(|k| (k as f64) / (w * h - 1) as f64).collect()
    }

    #[test]
    fn pfm_round_trip_is_single_precision_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        let data = ramp(5, 3);
        write_pfm(&p, 5, 3, &data).unwrap();
        let (w, h, back) = read_pfm(&p).unwrap();
        assert_eq!((w, h), (5, 3));
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn pgm_round_trip_within_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let data = ramp(4, 6);
        write_pgm(&p, 4, 6, &data).unwrap();
        let (_, _, back) = read_pgm(&p).unwrap();
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn png_is_written_top_row_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        // bottom row black, top row white
        write_png(&p, 2, 2, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..4], &[255, 255, 0, 0]);
    }

    #[test]
    fn corrupt_pfm_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        fs::write(&p, b"Pf\n4 4\n-1.0\n\x00\x00").unwrap();
        assert!(read_pfm(&p).is_err());
    }
}
