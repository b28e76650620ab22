//! Basis container (little-endian):
//!
//! ```text
//! magic     8 bytes "RFPOD\0\0\0", version u32 = 1
//! variable  u8, layout u8 (0 scalar cells, 1 vector cells, 2 wall)
//! [wall]    u64 count, count * u64 face ids
//! mesh_id   u64, delta f64, criterion u8
//! spectrum  u64 R, R * f64
//! modes     u64 rows, u64 L, rows * L f64 (column-major)
//! mean      u8 flag, [rows * f64]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{cumulative_energy, EnergyCriterion, Layout, PodBasis, Variable};
use crate::error::{Error, Result};
use crate::field::FieldKind;
use crate::io::{write_csv, Reader, Writer};

const MAGIC: &[u8; 8] = b"RFPOD\0\0\0";
const VERSION: u32 = 1;

pub fn write_basis(path: impl AsRef<Path>, basis: &PodBasis) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u8(basis.variable.tag());
    match &basis.layout {
        Layout::Cells(k) => w.u8(k.tag()),
        Layout::Wall(ids) => {
            w.u8(2);
            w.u64(ids.len() as u64);
            for &f in ids {
                w.u64(f as u64);
            }
        }
    }
    w.u64(basis.mesh_id);
    w.f64(basis.energy_delta);
    w.u8(match basis.criterion {
        EnergyCriterion::Sigma => 0,
        EnergyCriterion::SigmaSquared => 1,
    });
    w.u64(basis.singular_values.len() as u64);
    w.f64s(&basis.singular_values);
    w.u64(basis.modes.nrows() as u64);
    w.u64(basis.modes.ncols() as u64);
    w.f64s(basis.modes.as_slice());
    match &basis.mean {
        None => w.u8(0),
        Some(m) => {
            w.u8(1);
            w.f64s(m.as_slice());
        }
    }
    w.finish(path.as_ref())
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<PodBasis> {
    let path = path.as_ref();
    let (mut r, version) = Reader::open(path, MAGIC)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported basis version {version}")));
    }
    let variable = Variable::from_tag(r.u8()?).ok_or_else(|| Error::format(path, "unknown variable tag"))?;
    let layout = match r.u8()? {
        2 => {
            let n = r.u64()? as usize;
            Layout::Wall((0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?)
        }
        t => Layout::Cells(FieldKind::from_tag(t).ok_or_else(|| Error::format(path, "unknown layout tag"))?),
    };
    let mesh_id = r.u64()?;
    let energy_delta = r.f64()?;
    let criterion = match r.u8()? {
        0 => EnergyCriterion::Sigma,
        1 => EnergyCriterion::SigmaSquared,
        _ => return Err(Error::format(path, "unknown energy criterion")),
    };
    let n_sigma = r.u64()? as usize;
    let singular_values = r.f64s(n_sigma)?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    if cols > n_sigma {
        return Err(Error::format(path, "more modes than singular values"));
    }
    let modes = DMatrix::from_vec(rows, cols, r.f64s(rows * cols)?);
    let mean = match r.u8()? {
        0 => None,
        1 => Some(DVector::from_vec(r.f64s(rows)?)),
        _ => return Err(Error::format(path, "bad mean flag")),
    };
    r.expect_end(n_sigma + rows * cols)?;
    Ok(PodBasis { variable, layout, mesh_id, modes, singular_values, energy_delta, criterion, mean })
}

/// `index,sigma,cumulative_energy_sigma,cumulative_energy_sigma2`, index from 1.
pub fn write_spectrum_csv(path: impl AsRef<Path>, sigma: &[f64]) -> Result<()> {
    let e1 = cumulative_energy(sigma, EnergyCriterion::Sigma);
    let e2 = cumulative_energy(sigma, EnergyCriterion::SigmaSquared);
    write_csv(
        path,
        &["index", "sigma", "cumulative_energy_sigma", "cumulative_energy_sigma2"],
        sigma
            .iter()
            .enumerate()
            .map(|(i, s)| vec![(i + 1).to_string(), s.to_string(), e1[i].to_string(), e2[i].to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::super::{compute_pod, PodOptions, SnapshotMatrix};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(layout: Layout, center: bool) -> PodBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let s = SnapshotMatrix::new(Variable::Wss, layout, 99, &refs, (0..6).map(|k| k as f64).collect()).unwrap();
        compute_pod(&s, &PodOptions { center, ..PodOptions::default() })
            .unwrap()
            .truncate(0.9, EnergyCriterion::SigmaSquared)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (i, b) in [basis(Layout::Wall((100..120).collect()), false), basis(Layout::Cells(FieldKind::Vector2), true)]
            .into_iter()
            .enumerate()
        {
            let p = dir.path().join(format!("b{i}.bin"));
            write_basis(&p, &b).unwrap();
            assert_eq!(read_basis(&p).unwrap(), b);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        write_basis(&p, &basis(Layout::Cells(FieldKind::Scalar), false)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_basis(&p).is_err());
        std::fs::write(&p, b"RFFIELD\0").unwrap();
        assert!(matches!(read_basis(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn spectrum_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_spectrum_csv(&p, &[3.0, 2.0, 1.0]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,sigma,cumulative_energy_sigma,cumulative_energy_sigma2");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,1,1,1"));
        let e: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert!((e - 5.0 / 6.0).abs() < 1e-15);
    }
}
