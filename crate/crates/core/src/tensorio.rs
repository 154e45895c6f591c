//! Persistence: the ARCT binary tensor container, calibration profile
//! documents, and synthetic activation generation.
//!
//! ARCT layout (all little-endian):
//!
//! ```text
//! "ARCT" | version: u32 | dtype: u32 (0 = binary32) | ndim: u32
//! dims: ndim x u64 | payload: f32 row-major
//! ```
//!
//! Quantized tensors ride in a companion section appended after the payload,
//! tagged `QSEC` with its own length fields; the payload before it holds the
//! dequantized values so plain readers still get a usable tensor. Block
//! scales and the tensor scale are binary32 by construction, so the
//! round-trip is field-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockquant::{Layout, QuantizedTensor};
use crate::calibration::CalibrationProfile;
use crate::error::{Error, Result};
use crate::formats::FormatSpec;
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"ARCT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
const QSEC_MAGIC: [u8; 4] = *b"QSEC";
const QSEC_VERSION: u32 = 1;

fn write_header<W: Write>(w: &mut W, rows: usize, cols: usize) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&DTYPE_F32.to_le_bytes())?;
    w.write_all(&2u32.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    Ok(())
}

fn write_payload<W: Write>(w: &mut W, x: &Matrix) -> Result<()> {
    for &v in x.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Write a matrix as an ARCT file. Values are stored as binary32.
pub fn write_tensor<P: AsRef<Path>>(path: P, x: &Matrix) -> Result<()> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("write_tensor: empty dims".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, x.rows(), x.cols())?;
    write_payload(&mut w, x)?;
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_header_and_payload<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = read_u32(r)?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 2 {
        return Err(Error::Payload(format!(
            "ndim {ndim} unsupported (expected 1 or 2)"
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u64(r)? as usize);
    }
    if dims.contains(&0) {
        return Err(Error::Payload(format!("empty dims {dims:?}")));
    }
    let (rows, cols) = if ndim == 1 {
        (1, dims[0])
    } else {
        (dims[0], dims[1])
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Payload("dims overflow".into()))?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Payload("truncated payload".into()))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Read an ARCT file into a matrix. Trailing sections are ignored.
pub fn read_tensor<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    read_header_and_payload(&mut r)
}

/// Write a quantized tensor: dequantized payload followed by the `QSEC`
/// companion section holding codes, scales and layout.
pub fn write_quantized<P: AsRef<Path>>(path: P, q: &QuantizedTensor) -> Result<()> {
    if q.rows == 0 || q.k_logical == 0 {
        return Err(Error::EmptyInput("write_quantized: empty dims".into()));
    }
    let dq = q.dequantize();
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, dq.rows(), dq.cols())?;
    write_payload(&mut w, &dq)?;

    w.write_all(&QSEC_MAGIC)?;
    w.write_all(&QSEC_VERSION.to_le_bytes())?;
    let name = q.format.name.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&(q.format.g as u32).to_le_bytes())?;
    match q.layout {
        Layout::Contiguous => w.write_all(&[0u8])?,
        Layout::Interleaved { k_primary, s } => {
            w.write_all(&[1u8])?;
            w.write_all(&(k_primary as u64).to_le_bytes())?;
            w.write_all(&(s as u64).to_le_bytes())?;
        }
    }
    w.write_all(&(q.rows as u64).to_le_bytes())?;
    w.write_all(&(q.k_logical as u64).to_le_bytes())?;
    w.write_all(&(q.k_padded as u64).to_le_bytes())?;
    w.write_all(&(q.codes.len() as u64).to_le_bytes())?;
    w.write_all(&q.codes)?;
    w.write_all(&(q.block_scales.len() as u64).to_le_bytes())?;
    for &s in &q.block_scales {
        w.write_all(&(s as f32).to_le_bytes())?;
    }
    match q.tensor_scale {
        Some(ts) => {
            w.write_all(&[1u8])?;
            w.write_all(&(ts as f32).to_le_bytes())?;
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Read a quantized tensor and its dequantized payload.
pub fn read_quantized<P: AsRef<Path>>(path: P) -> Result<(Matrix, QuantizedTensor)> {
    let mut r = BufReader::new(File::open(path)?);
    let payload = read_header_and_payload(&mut r)?;

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Payload("missing QSEC section".into()))?;
    if magic != QSEC_MAGIC {
        return Err(Error::Payload(format!("bad section tag {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != QSEC_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let name_len = read_u32(&mut r)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Payload("format name".into()))?;
    let g = read_u32(&mut r)? as usize;
    let mut format = FormatSpec::from_name(&name)?;
    if format.name == "int4" {
        format = FormatSpec::int4_with_group(g);
    } else if format.g != g {
        return Err(Error::Payload(format!(
            "format {name} with unexpected g = {g}"
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let layout = match tag[0] {
        0 => Layout::Contiguous,
        1 => {
            let k_primary = read_u64(&mut r)? as usize;
            let s = read_u64(&mut r)? as usize;
            Layout::Interleaved { k_primary, s }
        }
        t => return Err(Error::Payload(format!("unknown layout tag {t}"))),
    };
    let rows = read_u64(&mut r)? as usize;
    let k_logical = read_u64(&mut r)? as usize;
    let k_padded = read_u64(&mut r)? as usize;
    let codes_len = read_u64(&mut r)? as usize;
    if codes_len != rows * k_padded {
        return Err(Error::Payload(format!(
            "codes length {codes_len} does not match {rows} x {k_padded}"
        )));
    }
    let mut codes = vec![0u8; codes_len];
    r.read_exact(&mut codes)
        .map_err(|_| Error::Payload("truncated codes".into()))?;
    let scales_len = read_u64(&mut r)? as usize;
    let mut block_scales = Vec::with_capacity(scales_len);
    for _ in 0..scales_len {
        block_scales.push(read_f32(&mut r)? as f64);
    }
    r.read_exact(&mut tag)?;
    let tensor_scale = if tag[0] == 1 {
        Some(read_f32(&mut r)? as f64)
    } else {
        None
    };

    let q = QuantizedTensor {
        format,
        rows,
        k_logical,
        k_padded,
        codes,
        block_scales,
        tensor_scale,
        layout,
    };
    Ok((payload, q))
}

/// Write a calibration profile as pretty-printed JSON with the fixed field
/// names.
pub fn write_profile<P: AsRef<Path>>(path: P, profile: &CalibrationProfile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, profile)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_profile<P: AsRef<Path>>(path: P) -> Result<CalibrationProfile> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Unit-variance Gaussian activations with a deterministic set of channels
/// scaled up to act as outliers. Values are truncated to binary32 so files
/// reproduce bit-for-bit across runs.
pub fn gen_synthetic(
    rows: usize,
    cols: usize,
    outlier_channels: usize,
    outlier_scale: f64,
    seed: u64,
) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("gen_synthetic".into()));
    }
    if outlier_channels > cols {
        return Err(Error::ShapeMismatch(format!(
            "{outlier_channels} outlier channels in {cols} columns"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut x = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v: f64 = normal.sample(&mut rng);
            x.set(i, j, (v as f32) as f64);
        }
    }
    let chosen = rand::seq::index::sample(&mut rng, cols, outlier_channels);
    for j in chosen {
        for i in 0..rows {
            let v = x.get(i, j) * outlier_scale;
            x.set(i, j, (v as f32) as f64);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockquant::quantize_tensor;
    use crate::calibration::build_profile;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("arcquant-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn tensor_roundtrip_is_bit_identical() {
        let x = gen_synthetic(3, 32, 1, 10.0, 42).unwrap();
        let path = tmp("roundtrip.arct");
        write_tensor(&path, &x).unwrap();
        let y = read_tensor(&path).unwrap();
        assert_eq!(x, y);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn empty_dims_rejected() {
        assert!(write_tensor(tmp("nope.arct"), &Matrix::zeros(0, 4)).is_err());
        assert!(write_tensor(tmp("nope.arct"), &Matrix::zeros(4, 0)).is_err());
    }

    #[test]
    fn corrupted_magic_is_a_distinct_error() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let path = tmp("magic.arct");
        write_tensor(&path, &x).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_tensor(&path) {
            Err(Error::BadMagic(m)) => assert_eq!(&m[1..], b"RCT"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_payload_detected() {
        let x = Matrix::from_vec(2, 8, (0..16).map(|i| i as f64).collect()).unwrap();
        let path = tmp("trunc.arct");
        write_tensor(&path, &x).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Payload(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn quantized_roundtrip_is_field_exact() {
        let x = gen_synthetic(4, 40, 2, 20.0, 7).unwrap();
        for spec in [
            FormatSpec::nvfp4(),
            FormatSpec::mxfp8(),
            FormatSpec::int4_with_group(32),
        ] {
            let q = quantize_tensor(&x, &spec).unwrap();
            let path = tmp(&format!("q-{}.arct", spec.name));
            write_quantized(&path, &q).unwrap();
            let (payload, q2) = read_quantized(&path).unwrap();
            assert_eq!(q, q2, "{}", spec.name);
            // Payload carries the dequantized values at f32 precision.
            let dq = q.dequantize();
            for (a, b) in dq.data().iter().zip(payload.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
            std::fs::remove_file(&path).ok();
        }
    }

    #[test]
    fn profile_json_roundtrip_field_exact() {
        let x = gen_synthetic(8, 24, 2, 30.0, 3).unwrap();
        let p = build_profile(&[x], "blk.attn.o_proj").unwrap();
        let path = tmp("profile.json");
        write_profile(&path, &p).unwrap();
        let q = read_profile(&path).unwrap();
        assert_eq!(p, q);
        let text = std::fs::read_to_string(&path).unwrap();
        for field in [
            "layer",
            "reorder",
            "channel_max",
            "m",
            "tau",
            "s_raw",
            "\"s\"",
        ] {
            assert!(text.contains(field), "missing {field}");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn synthetic_generator_is_deterministic_and_triggers_calibration() {
        let a = gen_synthetic(16, 64, 1, 100.0, 0).unwrap();
        let b = gen_synthetic(16, 64, 1, 100.0, 0).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(16, 64, 1, 100.0, 1).unwrap();
        assert_ne!(a, c);
        // outlier_scale = 1 leaves the base distribution untouched.
        let base = gen_synthetic(16, 64, 0, 1.0, 0).unwrap();
        let with = gen_synthetic(16, 64, 1, 1.0, 0).unwrap();
        assert_eq!(base, with);
        // A strong outlier lands above the calibration threshold.
        let p = build_profile(&[a], "l").unwrap();
        assert!(p.s_raw >= 1);
        assert!(p.m > p.tau);
    }
}
