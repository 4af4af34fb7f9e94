//! Flat binary parameter container.
//!
//! Layout: a UTF-8 text header followed by a raw little-endian f64 blob.
//!
//! ```text
//! COMPOSITOR-CKPT v1
//! meta <key>=<value>
//! param <name> f64 <d0>x<d1>x<d2>x<d3> <byte-offset> <element-count>
//! blob
//! <packed f64 values>
//! ```
//!
//! Offsets are relative to the first byte after the `blob` line. Saving
//! the result of a load reproduces the input byte for byte, and a fixed
//! store always serializes identically, so checkpoint files can be
//! compared with plain equality.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "COMPOSITOR-CKPT v1";

fn bad(detail: impl Into<String>) -> Error {
    Error::CheckpointFormat(detail.into())
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '\n') {
        return Err(bad(format!("{kind} {s:?} is empty or contains whitespace")));
    }
    Ok(())
}

/// Serialize every parameter of `store`, in registration order, plus
/// free-form metadata lines. Parent directories are created.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &[(String, String)]) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for (k, v) in meta {
        check_token("meta key", k)?;
        if v.contains('\n') {
            return Err(bad(format!("meta value for {k} contains a newline")));
        }
        header.push_str(&format!("meta {k}={v}\n"));
    }

    let mut blob: Vec<u8> = Vec::new();
    for name in store.names() {
        check_token("param name", name)?;
        let t = store.get(name)?;
        let [d0, d1, d2, d3] = t.shape();
        header.push_str(&format!(
            "param {name} f64 {d0}x{d1}x{d2}x{d3} {} {}\n",
            blob.len(),
            t.numel()
        ));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.push_str("blob\n");

    let io_err = |e| Error::io(path, e);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(header.as_bytes()).map_err(io_err)?;
    f.write_all(&blob).map_err(io_err)?;
    Ok(())
}

/// Read a checkpoint back into a fresh [`ParamStore`] (parameters in
/// header order) plus its metadata.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.to_path_buf() }
        } else {
            Error::io(path, e)
        }
    })?;

    // The header is everything up to and including the "blob\n" line; it
    // must be valid UTF-8 even though the blob usually is not.
    let marker = b"\nblob\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or_else(|| bad("missing blob marker"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| bad("header is not valid UTF-8"))?;
    let blob = &bytes[header_end..];

    let mut lines = header.lines();
    let magic = lines.next().ok_or_else(|| bad("empty file"))?;
    if magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }

    let mut meta = BTreeMap::new();
    let mut store = ParamStore::new();
    for line in lines {
        if line == "blob" {
            break;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed meta line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("param ") {
            let fields: Vec<&str> = rest.split(' ').collect();
            let [name, dtype, dims, offset, count] = fields[..] else {
                return Err(bad(format!("malformed param line {line:?}")));
            };
            if dtype != "f64" {
                return Err(bad(format!("unsupported dtype {dtype:?} for {name}")));
            }
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dims {dims:?}"))))
                .collect::<Result<_>>()?;
            let [d0, d1, d2, d3] = shape[..] else {
                return Err(bad(format!("expected 4 dims, got {dims:?}")));
            };
            let offset: usize =
                offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
            let count: usize =
                count.parse().map_err(|_| bad(format!("bad count in {line:?}")))?;
            if d0 * d1 * d2 * d3 != count {
                return Err(bad(format!("{name}: {dims} does not hold {count} values")));
            }
            let end = offset
                .checked_add(count.checked_mul(8).ok_or_else(|| bad("count overflow"))?)
                .ok_or_else(|| bad("offset overflow"))?;
            if end > blob.len() {
                return Err(bad(format!(
                    "{name}: needs {end} blob bytes, file has {}",
                    blob.len()
                )));
            }
            let data: Vec<f64> = blob[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let tensor = Tensor::from_vec([d0, d1, d2, d3], data)
                .map_err(|e| bad(format!("{name}: {e}")))?;
            store.register(name, tensor)?;
        } else {
            return Err(bad(format!("unrecognized header line {line:?}")));
        }
    }
    Ok((store, meta))
}
