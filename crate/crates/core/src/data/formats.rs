//! Readers for IDX (MNIST) and MATLAB level-5 (SVHN) files.

use std::io::Read;
use std::path::Path;

use flate2::read::{GzDecoder, ZlibDecoder};

use crate::error::{Error, Result};

/// An unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| corrupt(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX file with `u8` elements, plain or gzip-compressed.
pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = read_maybe_gz(path)?;
    parse_idx(&bytes).map_err(|m| corrupt(path, m))
}

fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxArray, String> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err("bad IDX magic".into());
    }
    if bytes[2] != 0x08 {
        return Err(format!("unsupported IDX element type 0x{:02x}", bytes[2]));
    }
    let rank = usize::from(bytes[3]);
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(format!("expected {len} data bytes, found {}", bytes.len() - header));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// A numeric MATLAB array converted to `f64`, in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

struct Element<'a> {
    kind: u32,
    body: &'a [u8],
}

/// Splits one tagged element off `buf`, returning it and the remainder.
fn next_element<'a>(buf: &'a [u8], swap: bool) -> std::result::Result<(Element<'a>, &'a [u8]), String> {
    let word = |b: &[u8]| {
        let a = [b[0], b[1], b[2], b[3]];
        if swap {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    };
    if buf.len() < 8 {
        return Err("truncated element tag".into());
    }
    let first = word(&buf[..4]);
    if first >> 16 != 0 {
        // Small data element: tag and up to four bytes packed into eight.
        let kind = first & 0xffff;
        let len = (first >> 16) as usize;
        if len > 4 {
            return Err("invalid small element".into());
        }
        return Ok((Element { kind, body: &buf[4..4 + len] }, &buf[8..]));
    }
    let len = word(&buf[4..8]) as usize;
    let end = 8 + len;
    if buf.len() < end {
        return Err("truncated element body".into());
    }
    let padded = if first == MI_COMPRESSED { end } else { end.div_ceil(8) * 8 };
    Ok((Element { kind: first, body: &buf[8..end] }, &buf[padded.min(buf.len())..]))
}

fn numeric(el: &Element<'_>, swap: bool) -> std::result::Result<Vec<f64>, String> {
    fn conv<const N: usize>(b: &[u8], swap: bool, f: impl Fn([u8; N]) -> f64) -> Vec<f64> {
        b.chunks_exact(N)
            .map(|c| {
                let mut a: [u8; N] = c.try_into().expect("exact chunk");
                if swap {
                    a.reverse();
                }
                f(a)
            })
            .collect()
    }
    let b = el.body;
    Ok(match el.kind {
        MI_INT8 => b.iter().map(|&v| f64::from(v as i8)).collect(),
        MI_UINT8 => b.iter().map(|&v| f64::from(v)).collect(),
        MI_INT16 => conv::<2>(b, swap, |a| f64::from(i16::from_le_bytes(a))),
        MI_UINT16 => conv::<2>(b, swap, |a| f64::from(u16::from_le_bytes(a))),
        MI_INT32 => conv::<4>(b, swap, |a| f64::from(i32::from_le_bytes(a))),
        MI_UINT32 => conv::<4>(b, swap, |a| f64::from(u32::from_le_bytes(a))),
        MI_SINGLE => conv::<4>(b, swap, |a| f64::from(f32::from_le_bytes(a))),
        MI_DOUBLE => conv::<8>(b, swap, f64::from_le_bytes),
        MI_INT64 => conv::<8>(b, swap, |a| i64::from_le_bytes(a) as f64),
        MI_UINT64 => conv::<8>(b, swap, |a| u64::from_le_bytes(a) as f64),
        other => return Err(format!("unsupported numeric element type {other}")),
    })
}

fn parse_matrix(body: &[u8], swap: bool) -> std::result::Result<Option<MatArray>, String> {
    let (flags, rest) = next_element(body, swap)?;
    let class = numeric(&flags, swap)?.first().copied().unwrap_or(0.0) as u32 & 0xff;
    // Numeric classes are 6 (double) through 15 (uint64).
    if !(6..=15).contains(&class) {
        return Ok(None);
    }
    let (dims, rest) = next_element(rest, swap)?;
    let dims: Vec<usize> = numeric(&dims, swap)?.into_iter().map(|v| v as usize).collect();
    let (name, rest) = next_element(rest, swap)?;
    let name = String::from_utf8_lossy(name.body).into_owned();
    let (real, _) = next_element(rest, swap)?;
    let data = numeric(&real, swap)?;
    if data.len() != dims.iter().product::<usize>() {
        return Err(format!("variable {name}: {} values for dimensions {dims:?}", data.len()));
    }
    Ok(Some(MatArray { name, dims, data }))
}

fn collect_elements(mut buf: &[u8], swap: bool, out: &mut Vec<MatArray>) -> std::result::Result<(), String> {
    while buf.len() >= 8 {
        let (el, rest) = next_element(buf, swap)?;
        match el.kind {
            MI_COMPRESSED => {
                let mut inner = Vec::new();
                ZlibDecoder::new(el.body)
                    .read_to_end(&mut inner)
                    .map_err(|e| format!("zlib: {e}"))?;
                collect_elements(&inner, swap, out)?;
            }
            MI_MATRIX => {
                if let Some(m) = parse_matrix(el.body, swap)? {
                    out.push(m);
                }
            }
            _ => {}
        }
        buf = rest;
    }
    Ok(())
}

/// Reads every real numeric variable of a level-5 `.mat` file.
pub fn read_mat_numeric(path: &Path) -> Result<Vec<MatArray>> {
    let bytes = std::fs::read(path)?;
    parse_mat(&bytes).map_err(|m| corrupt(path, m))
}

fn parse_mat(bytes: &[u8]) -> std::result::Result<Vec<MatArray>, String> {
    if bytes.len() < 128 {
        return Err("file shorter than the MAT header".into());
    }
    let swap = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err("not a level-5 MAT file".into()),
    };
    let mut out = Vec::new();
    collect_elements(&bytes[128..], swap, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::ZlibEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn idx_round_trip() {
        let mut bytes = vec![0, 0, 8, 2];
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(3u32.to_be_bytes());
        bytes.extend([1, 2, 3, 4, 5, 6]);
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 3]);
        assert_eq!(a.data, vec![1, 2, 3, 4, 5, 6]);
        assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    }

    fn tag(kind: u32, body: &[u8]) -> Vec<u8> {
        let mut v = kind.to_le_bytes().to_vec();
        v.extend((body.len() as u32).to_le_bytes());
        v.extend(body);
        while v.len() % 8 != 0 {
            v.push(0);
        }
        v
    }

    fn matrix(name: &str, class: u32, dims: &[i32], data_kind: u32, data: &[u8]) -> Vec<u8> {
        let mut body = tag(MI_UINT32, &[class.to_le_bytes(), 0u32.to_le_bytes()].concat());
        let d: Vec<u8> = dims.iter().flat_map(|v| v.to_le_bytes()).collect();
        body.extend(tag(MI_INT32, &d));
        body.extend(tag(MI_INT8, name.as_bytes()));
        body.extend(tag(data_kind, data));
        tag(MI_MATRIX, &body)
    }

    #[test]
    fn mat_reads_compressed_and_plain_variables() {
        let mut file = vec![b' '; 116];
        file.extend([0u8; 8]);
        file.extend(0x0100u16.to_le_bytes());
        file.extend(b"IM");
        let x = matrix("X", 9, &[2, 2], MI_UINT8, &[1, 2, 3, 4]);
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&x).unwrap();
        let z = enc.finish().unwrap();
        let mut compressed = MI_COMPRESSED.to_le_bytes().to_vec();
        compressed.extend((z.len() as u32).to_le_bytes());
        compressed.extend(z);
        file.extend(compressed);
        let y: Vec<u8> = [10.0f64, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        file.extend(matrix("y", 6, &[2, 1], MI_DOUBLE, &y));
        let vars = parse_mat(&file).unwrap();
        assert_eq!(vars.len(), 2);
        assert_eq!(vars[0].name, "X");
        assert_eq!(vars[0].data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vars[1].name, "y");
        assert_eq!(vars[1].dims, vec![2, 1]);
        assert_eq!(vars[1].data, vec![10.0, 3.0]);
    }

    #[test]
    fn mat_rejects_garbage() {
        assert!(parse_mat(&[0u8; 10]).is_err());
        assert!(parse_mat(&[0u8; 200]).is_err());
    }
}
