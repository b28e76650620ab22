//! Field persistence: a bit-exact binary container, legacy ASCII VTK export
//! and small CSV writers.
//!
//! Binary field layout (all little-endian):
//!
//! ```text
//! magic    8 bytes  "RFFIELD\0"
//! version  u32      1
//! kind     u8       0 = scalar, 1 = vector2
//! count    u64      number of cells
//! mesh_id  u64
//! time     f64
//! values   count * components f64
//! ```
//!
//! Wall-shear files use magic `"RFWSS\0\0\0"` and store `count` face ids
//! (u64) ahead of the `2 * count` traction values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{check_finite, Field, FieldKind, WssField};
use crate::mesh::StructuredMesh;

const FIELD_MAGIC: &[u8; 8] = b"RFFIELD\0";
const WSS_MAGIC: &[u8; 8] = b"RFWSS\0\0\0";
const VERSION: u32 = 1;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }

    pub(crate) fn finish(self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    path: &'a Path,
    data: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Opens `path`, checks the magic and returns the stored version.
    pub(crate) fn open(path: &'a Path, magic: &[u8; 8]) -> Result<(Self, u32)> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Self { path, data, pos: 0 };
        let head = r.take(8)?;
        if head != magic {
            return Err(Error::format(path, "bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        Ok((r, version))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::format(self.path, "truncated header"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `n` floats, reporting a length mismatch if the payload is short.
    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let available = (self.data.len() - self.pos) / 8;
        if available < n {
            return Err(Error::LengthMismatch {
                path: self.path.to_path_buf(),
                expected: n,
                found: available,
            });
        }
        let out = self.data[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        Ok(out)
    }

    pub(crate) fn expect_end(&self, expected_values: usize) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::LengthMismatch {
                path: self.path.to_path_buf(),
                expected: expected_values,
                found: expected_values + (self.data.len() - self.pos) / 8,
            });
        }
        Ok(())
    }
}

pub fn write_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut w = Writer::new(FIELD_MAGIC, VERSION);
    w.u8(field.kind().tag());
    w.u64(field.n_cells() as u64);
    w.u64(field.mesh_id());
    w.f64(field.time());
    w.f64s(field.values());
    w.finish(path.as_ref())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let (mut r, version) = Reader::open(path, FIELD_MAGIC)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = FieldKind::from_tag(r.u8()?).ok_or_else(|| Error::format(path, "unknown field kind"))?;
    let count = r.u64()? as usize;
    let mesh_id = r.u64()?;
    let time = r.f64()?;
    let n = count * kind.components();
    let values = r.f64s(n)?;
    r.expect_end(n)?;
    Field::from_parts(kind, values, mesh_id, time, n)
}

pub fn write_wss(path: impl AsRef<Path>, wss: &WssField) -> Result<()> {
    let mut w = Writer::new(WSS_MAGIC, VERSION);
    w.u64(wss.face_ids.len() as u64);
    w.u64(wss.mesh_id);
    w.f64(wss.time);
    for &f in &wss.face_ids {
        w.u64(f as u64);
    }
    w.f64s(&wss.values);
    w.finish(path.as_ref())
}

pub fn read_wss(path: impl AsRef<Path>) -> Result<WssField> {
    let path = path.as_ref();
    let (mut r, version) = Reader::open(path, WSS_MAGIC)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let mesh_id = r.u64()?;
    let time = r.f64()?;
    let mut face_ids = Vec::with_capacity(count);
    for _ in 0..count {
        face_ids.push(r.u64()? as usize);
    }
    let values = r.f64s(2 * count)?;
    r.expect_end(2 * count)?;
    check_finite(&values)?;
    Ok(WssField {
        face_ids,
        values,
        mesh_id,
        time,
    })
}

/// Legacy ASCII VTK structured grid with one CELL_DATA array per field.
pub fn write_vtk(path: impl AsRef<Path>, mesh: &StructuredMesh, fields: &[(&str, &Field)]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "romforge cell data");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_GRID");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", mesh.nx() + 1, mesh.ny() + 1);
    let _ = writeln!(s, "POINTS {} double", mesh.vertices().len());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", v[0], v[1]);
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {}", mesh.n_cells());
    }
    for (name, field) in fields {
        if field.n_cells() != mesh.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_cells(),
                found: field.n_cells(),
            });
        }
        match field.kind() {
            FieldKind::Scalar => {
                let _ = writeln!(s, "SCALARS {name} double 1");
                let _ = writeln!(s, "LOOKUP_TABLE default");
                for v in field.values() {
                    let _ = writeln!(s, "{v}");
                }
            }
            FieldKind::Vector2 => {
                let _ = writeln!(s, "VECTORS {name} double");
                for v in field.values().chunks_exact(2) {
                    let _ = writeln!(s, "{} {} 0", v[0], v[1]);
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes a header line followed by comma-separated rows.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut out = Vec::new();
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", row.as_ref().join(","));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Numeric CSV convenience wrapper.
pub fn write_numeric_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_csv(
        path,
        header,
        rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
    )
}

/// 1D profile of a cell field along the cell column nearest to `x`.
pub fn write_profile_csv(path: impl AsRef<Path>, mesh: &StructuredMesh, field: &Field, x: f64) -> Result<()> {
    let i = (0..mesh.nx())
        .min_by(|&a, &b| {
            let da = (mesh.cell_centers()[mesh.cell_index(a, 0)][0] - x).abs();
            let db = (mesh.cell_centers()[mesh.cell_index(b, 0)][0] - x).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0);
    let comps = field.kind().components();
    let mut rows = Vec::with_capacity(mesh.ny());
    for j in 0..mesh.ny() {
        let c = mesh.cell_index(i, j);
        let xc = mesh.cell_centers()[c];
        let mut row = vec![xc[0], xc[1]];
        row.extend_from_slice(&field.values()[comps * c..comps * (c + 1)]);
        rows.push(row);
    }
    let header: &[&str] = if comps == 1 { &["x", "y", "value"] } else { &["x", "y", "ux", "uy"] };
    write_numeric_csv(path, header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;
    use proptest::prelude::*;

    #[test]
    fn truncated_file_reports_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let f = Field::vector(&m, (0..80).map(|i| i as f64 * 0.5).collect(), 0.25).unwrap();
        let p = dir.path().join("u.bin");
        write_field(&p, &f).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 12]).unwrap();
        assert!(matches!(read_field(&p), Err(Error::LengthMismatch { expected: 80, found: 78, .. })));
        fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format { .. })));
        fs::write(&p, b"NOTAFIELD-at-all-really").unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn vtk_has_one_entry_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let p = Field::scalar(&m, (0..40).map(|i| i as f64).collect(), 0.0).unwrap();
        let path = dir.path().join("p.vtk");
        write_vtk(&path, &m, &[("p", &p)]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let lut = lines.iter().position(|l| l.starts_with("LOOKUP_TABLE")).unwrap();
        assert!(text.contains("CELL_DATA 40"));
        assert_eq!(lines.len() - lut - 1, 40);
    }

    #[test]
    fn wss_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = WssField {
            face_ids: vec![3, 4, 9],
            values: vec![0.1, -0.2, 1e-300, 5.0, -0.0, 7.25],
            mesh_id: 42,
            time: 0.64,
        };
        let p = dir.path().join("w.bin");
        write_wss(&p, &w).unwrap();
        assert_eq!(read_wss(&p).unwrap(), w);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn binary_round_trip_is_bit_exact(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 80),
                                          time in 0.0f64..1.0, vector in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
            let f = if vector {
                Field::vector(&m, values, time).unwrap()
            } else {
                Field::scalar(&m, values[..40].to_vec(), time).unwrap()
            };
            let p = dir.path().join("f.bin");
            write_field(&p, &f).unwrap();
            let g = read_field(&p).unwrap();
            prop_assert_eq!(f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(f, g);
        }
    }
}
