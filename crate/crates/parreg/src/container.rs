use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use ndarray::{Array4, Array5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::grid::Grid;

/// On-disk layout identifier. Axis order is `(t, c, x, y, z)` for vectors
/// and `(t, x, y, z)` for the pressure, with z the fastest axis.
pub const LAYOUT: &str = "t,c,x,y,z;z-fastest";
pub const DTYPE: &str = "f64le";
pub const VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// `header.json` of a field container directory. The payloads are raw
/// little-endian f64 streams in `u.bin`, `p.bin` and optionally `b.bin`,
/// each protected by a CRC-64 recorded here.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub nt: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub t0: f64,
    pub dt: f64,
    pub has_b: bool,
    pub layout: String,
    pub dtype: String,
    pub checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

fn write_payload(path: &Path, data: &[f64]) -> Result<String> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut digest = CRC64.digest();
    let mut buf = Vec::with_capacity(8 * 8192);
    for chunk in data.chunks(8192) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        digest.update(&buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(format!("{:016x}", digest.finalize()))
}

fn read_payload(path: &Path, expect_len: usize, expect_crc: &str) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::TruncatedPayload(format!("{} is missing", path.display()))
        }
        _ => Error::Io(e),
    })?;
    if bytes.len() != expect_len * 8 {
        return Err(Error::TruncatedPayload(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expect_len * 8,
            bytes.len()
        )));
    }
    let crc = format!("{:016x}", CRC64.checksum(&bytes));
    if !crc.eq_ignore_ascii_case(expect_crc) {
        return Err(Error::ChecksumMismatch(format!(
            "{}: header says {expect_crc}, payload hashes to {crc}",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Write `field` as a container directory (created if needed).
pub fn store(field: &SpaceTimeField, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut checksums = BTreeMap::new();
    let u = field.u.as_slice().ok_or_else(|| Error::Internal("velocity not contiguous".into()))?;
    checksums.insert("u.bin".to_string(), write_payload(&dir.join("u.bin"), u)?);
    let p = field.p.as_slice().ok_or_else(|| Error::Internal("pressure not contiguous".into()))?;
    checksums.insert("p.bin".to_string(), write_payload(&dir.join("p.bin"), p)?);
    if let Some(b) = &field.b {
        let b = b.as_slice().ok_or_else(|| Error::Internal("b not contiguous".into()))?;
        checksums.insert("b.bin".to_string(), write_payload(&dir.join("b.bin"), b)?);
    }
    let header = Header {
        version: VERSION,
        nx: field.grid.nx,
        ny: field.grid.ny,
        nz: field.grid.nz,
        nt: field.grid.nt,
        lx: field.grid.lx,
        ly: field.grid.ly,
        lz: field.grid.lz,
        t0: field.grid.t0,
        dt: field.grid.dt,
        has_b: field.b.is_some(),
        layout: LAYOUT.to_string(),
        dtype: DTYPE.to_string(),
        checksums,
        metadata: field.metadata.clone(),
    };
    let mut json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Internal(format!("header serialization: {e}")))?;
    json.push('\n');
    fs::write(dir.join("header.json"), json)?;
    Ok(())
}

/// Read a container directory back into memory, verifying sizes and
/// checksums.
pub fn load(dir: &Path) -> Result<SpaceTimeField> {
    let header_path = dir.join("header.json");
    let text = fs::read_to_string(&header_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::MalformedHeader(format!("{} is missing", header_path.display()))
        }
        _ => Error::Io(e),
    })?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.version != VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {} (expected {VERSION})",
            header.version
        )));
    }
    if header.layout != LAYOUT {
        return Err(Error::MalformedHeader(format!("unsupported layout {:?}", header.layout)));
    }
    if header.dtype != DTYPE {
        return Err(Error::MalformedHeader(format!("unsupported dtype {:?}", header.dtype)));
    }
    let grid = Grid::new(
        header.nx, header.ny, header.nz, header.lx, header.ly, header.lz, header.nt, header.t0,
        header.dt,
    )
    .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let crc_for = |name: &str| -> Result<&str> {
        header
            .checksums
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::MalformedHeader(format!("missing checksum for {name}")))
    };
    let vec_len = grid.nt * 3 * grid.spatial_len();
    let scalar_len = grid.nt * grid.spatial_len();
    let u = read_payload(&dir.join("u.bin"), vec_len, crc_for("u.bin")?)?;
    let p = read_payload(&dir.join("p.bin"), scalar_len, crc_for("p.bin")?)?;
    let b = if header.has_b {
        Some(read_payload(&dir.join("b.bin"), vec_len, crc_for("b.bin")?)?)
    } else {
        None
    };
    let u = Array5::from_shape_vec((grid.nt, 3, grid.nx, grid.ny, grid.nz), u)
        .map_err(|e| Error::Internal(format!("u reshape: {e}")))?;
    let p = Array4::from_shape_vec((grid.nt, grid.nx, grid.ny, grid.nz), p)
        .map_err(|e| Error::Internal(format!("p reshape: {e}")))?;
    let b = match b {
        Some(b) => Some(
            Array5::from_shape_vec((grid.nt, 3, grid.nx, grid.ny, grid.nz), b)
                .map_err(|e| Error::Internal(format!("b reshape: {e}")))?,
        ),
        None => None,
    };
    SpaceTimeField::new(grid, u, p, b, header.metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::generate_beltrami;

    fn sample_field() -> SpaceTimeField {
        let l = 2.0 * std::f64::consts::PI;
        let g = Grid::new(8, 8, 8, l, l, l, 3, 0.5, 0.125).unwrap();
        generate_beltrami(&g, 1.0, -0.5, 0.25).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample_field();
        store(&f, dir.path()).unwrap();
        let g = load(dir.path()).unwrap();
        assert_eq!(f.u, g.u);
        assert_eq!(f.p, g.p);
        assert_eq!(f.b.is_some(), g.b.is_some());
        assert_eq!(f.grid, g.grid);
        assert_eq!(f.metadata, g.metadata);
    }

    #[test]
    fn detects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        store(&sample_field(), dir.path()).unwrap();
        let upath = dir.path().join("u.bin");
        let bytes = fs::read(&upath).unwrap();
        fs::write(&upath, &bytes[..bytes.len() - 8]).unwrap();
        match load(dir.path()) {
            Err(Error::TruncatedPayload(_)) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        store(&sample_field(), dir.path()).unwrap();
        let ppath = dir.path().join("p.bin");
        let mut bytes = fs::read(&ppath).unwrap();
        bytes[17] ^= 0xff;
        fs::write(&ppath, &bytes).unwrap();
        match load(dir.path()) {
            Err(Error::ChecksumMismatch(_)) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        store(&sample_field(), dir.path()).unwrap();
        let hpath = dir.path().join("header.json");
        // nx = 0 must be rejected as malformed
        let text = fs::read_to_string(&hpath).unwrap().replace("\"nx\": 8", "\"nx\": 0");
        fs::write(&hpath, text).unwrap();
        match load(dir.path()) {
            Err(Error::MalformedHeader(_)) => {}
            other => panic!("expected malformed header, got {other:?}"),
        }
        // unknown keys are also malformed
        let f = sample_field();
        store(&f, dir.path()).unwrap();
        let text = fs::read_to_string(&hpath).unwrap().replace("\"version\": 1", "\"version\": 1, \"surprise\": true");
        fs::write(&hpath, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::MalformedHeader(_))));
    }
}
