//! The IMTS binary stack format and per-slice PGM export.
//!
//! Layout: 8-byte magic `IMTMRD01`, three little-endian `u32` (S, H, W),
//! one dtype byte (0 = complex interleaved `f32` pairs, 1 = real `f32`),
//! then the payload, slice-major and row-major.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;

use crate::error::{ImtError, Result};
use crate::stack::{ComplexImageStack, GFactorMap, U16Stack};

pub const MAGIC: &[u8; 8] = b"IMTMRD01";
pub const HEADER_LEN: usize = 21;

const DTYPE_COMPLEX: u8 = 0;
const DTYPE_REAL: u8 = 1;

/// Payloads beyond this are rejected as corrupt headers rather than allocated.
const MAX_PAYLOAD_BYTES: u64 = 1 << 36;

/// Contents of an IMTS file before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub enum ImtsData {
    Complex(ComplexImageStack),
    Real {
        slices: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    },
}

fn format_err(offset: u64, reason: impl Into<String>) -> ImtError {
    ImtError::Format {
        offset,
        reason: reason.into(),
    }
}

pub fn encode_header(slices: u32, height: u32, width: u32, dtype: u8) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(MAGIC);
    header[8..12].copy_from_slice(&slices.to_le_bytes());
    header[12..16].copy_from_slice(&height.to_le_bytes());
    header[16..20].copy_from_slice(&width.to_le_bytes());
    header[20] = dtype;
    header
}

fn dim_u32(value: usize, name: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| ImtError::invalid(format!("{name} {value} exceeds u32")))
}

/// Serializes a complex stack to bytes.
pub fn encode_stack(stack: &ComplexImageStack) -> Result<Vec<u8>> {
    let (s, h, w) = stack.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + stack.len() * 8);
    out.extend_from_slice(&encode_header(
        dim_u32(s, "slices")?,
        dim_u32(h, "height")?,
        dim_u32(w, "width")?,
        DTYPE_COMPLEX,
    ));
    for z in stack.data() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

fn encode_real(slices: usize, height: usize, width: usize, data: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&encode_header(
        dim_u32(slices, "slices")?,
        dim_u32(height, "height")?,
        dim_u32(width, "width")?,
        DTYPE_REAL,
    ));
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses IMTS bytes, reporting the byte offset of the first problem.
pub fn decode(bytes: &[u8]) -> Result<ImtsData> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(format_err(0, "bad magic, expected IMTMRD01"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len() as u64, "truncated header"));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as u64;
    let (s, h, w) = (read_u32(8), read_u32(12), read_u32(16));
    if s == 0 || h == 0 || w == 0 {
        return Err(format_err(8, format!("zero dimension {s}x{h}x{w}")));
    }
    let dtype = bytes[20];
    let width_bytes = match dtype {
        DTYPE_COMPLEX => 8u64,
        DTYPE_REAL => 4u64,
        other => return Err(format_err(20, format!("unknown dtype flag {other}"))),
    };
    let payload_len = s
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(width_bytes))
        .filter(|&v| v <= MAX_PAYLOAD_BYTES)
        .ok_or_else(|| format_err(8, format!("dimensions {s}x{h}x{w} overflow")))?;
    let available = (bytes.len() - HEADER_LEN) as u64;
    if available < payload_len {
        return Err(format_err(
            bytes.len() as u64,
            format!("truncated payload: header needs {payload_len} bytes, found {available}"),
        ));
    }
    if available > payload_len {
        return Err(format_err(
            HEADER_LEN as u64 + payload_len,
            "trailing bytes after payload",
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let (s, h, w) = (s as usize, h as usize, w as usize);
    let f32_at = |i: usize| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap());
    match dtype {
        DTYPE_COMPLEX => {
            let data: Vec<Complex32> = (0..s * h * w)
                .map(|i| Complex32::new(f32_at(2 * i), f32_at(2 * i + 1)))
                .collect();
            if let Some(i) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(format_err(
                    (HEADER_LEN + 8 * i) as u64,
                    "non-finite sample",
                ));
            }
            Ok(ImtsData::Complex(ComplexImageStack::new(s, h, w, data)?))
        }
        _ => {
            let data: Vec<f32> = (0..s * h * w).map(f32_at).collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(format_err((HEADER_LEN + 4 * i) as u64, "non-finite sample"));
            }
            Ok(ImtsData::Real {
                slices: s,
                height: h,
                width: w,
                data,
            })
        }
    }
}

/// Writes through a sibling temporary file and renames, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| ImtError::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(ImtError::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ImtError::io(path, e))
}

pub fn save_stack(stack: &ComplexImageStack, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_stack(stack)?)
}

/// Loads a complex stack. Real-valued files are promoted with zero imaginary part.
pub fn load_stack(path: impl AsRef<Path>) -> Result<ComplexImageStack> {
    match decode(&read_file(path.as_ref())?)? {
        ImtsData::Complex(stack) => Ok(stack),
        ImtsData::Real {
            slices,
            height,
            width,
            data,
        } => ComplexImageStack::new(
            slices,
            height,
            width,
            data.into_iter().map(|v| Complex32::new(v, 0.0)).collect(),
        ),
    }
}

pub fn save_gmap(gmap: &GFactorMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_real(1, gmap.height(), gmap.width(), gmap.values())?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_gmap(path: impl AsRef<Path>) -> Result<GFactorMap> {
    match decode(&read_file(path.as_ref())?)? {
        ImtsData::Real {
            slices: 1,
            height,
            width,
            data,
        } => GFactorMap::new(height, width, data),
        ImtsData::Real { slices, .. } => Err(format_err(
            8,
            format!("g-factor map must have one slice, found {slices}"),
        )),
        ImtsData::Complex(_) => Err(format_err(20, "g-factor map must be real (dtype 1)")),
    }
}

/// Binary PGM (`P5`, maxval 65535, big-endian samples) for one slice.
pub fn encode_pgm(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(samples.len() * 2);
    for v in samples {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Writes `<stem>_s<index>.pgm` for every slice and returns the paths.
pub fn write_pgm_slices(
    export: &U16Stack,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    (0..export.slices)
        .map(|s| {
            let path = dir.join(format!("{stem}_s{s}.pgm"));
            write_atomic(
                &path,
                &encode_pgm(export.width, export.height, export.slice(s)),
            )?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ComplexImageStack {
        ComplexImageStack::from_fn(2, 3, 5, |s, r, c| {
            Complex32::new(s as f32 - 0.25 * r as f32, 1e-7 * c as f32 - 3.0)
        })
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_stack(&sample()).unwrap();
        assert_eq!(&bytes[..8], b"IMTMRD01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &5u32.to_le_bytes());
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes.len(), 21 + 30 * 8);
        // first sample: re = 0.0, im = -3.0
        assert_eq!(&bytes[21..25], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &(-3.0f32).to_le_bytes());
    }

    #[test]
    fn wrong_magic_is_rejected_at_offset_zero() {
        let mut bytes = encode_stack(&sample()).unwrap();
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(ImtError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = encode_stack(&sample()).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn oversized_header_is_rejected() {
        let bytes = encode_header(u32::MAX, u32::MAX, u32::MAX, 0);
        match decode(&bytes) {
            Err(ImtError::Format { offset, reason }) => {
                assert_eq!(offset, 8);
                assert!(reason.contains("overflow"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let mut bytes = encode_stack(&sample()).unwrap();
        bytes[20] = 7;
        assert!(matches!(decode(&bytes), Err(ImtError::Format { offset: 20, .. })));
    }

    #[test]
    fn gmap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.imts");
        let gmap = GFactorMap::new(2, 3, vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5]).unwrap();
        save_gmap(&gmap, &path).unwrap();
        assert_eq!(load_gmap(&path).unwrap(), gmap);
        // a g-factor file read as a stack is promoted to complex
        let promoted = load_stack(&path).unwrap();
        assert_eq!(promoted.get(0, 1, 2), Complex32::new(3.5, 0.0));
    }

    #[test]
    fn pgm_header_and_byte_order() {
        let pgm = encode_pgm(2, 1, &[0x0102, 8192]);
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0x01, 0x02, 0x20, 0x00]);
    }

    #[test]
    fn pgm_files_are_named_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let export = crate::stack::export_u16(&sample());
        let paths = write_pgm_slices(&export, dir.path(), "case").unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[1].ends_with("case_s1.pgm"));
        assert!(paths.iter().all(|p| p.exists()));
    }
}
