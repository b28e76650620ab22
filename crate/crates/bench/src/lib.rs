//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romforge_core::ann::{Activation, MlpModel};
use romforge_core::pod::{compute_pod, Layout, PodOptions, SnapshotMatrix, Variable};
use romforge_core::field::FieldKind;

/// Snapshot matrix whose columns are smooth travelling waves plus a little
/// seeded noise, so its spectrum decays like a flow snapshot set.
pub fn wave_snapshots(rows: usize, cols: usize, seed: u64) -> SnapshotMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = DMatrix::from_fn(rows, cols, |i, j| {
        let x = i as f64 / rows as f64;
        let t = (j + 1) as f64 / cols as f64;
        (2.0 * std::f64::consts::PI * (x - t)).sin() + 0.3 * (6.0 * std::f64::consts::PI * (x + t)).cos() + 1e-3 * rng.random::<f64>()
    });
    let columns: Vec<&[f64]> = (0..cols).map(|j| &data.as_slice()[j * rows..(j + 1) * rows]).collect();
    let times = (1..=cols).map(|j| j as f64 / cols as f64).collect();
    SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 0, &columns, times).expect("valid fixture")
}

/// Network with the desk layout `1 -> 3 x width -> outputs`.
pub fn desk_network(width: usize, outputs: usize) -> MlpModel {
    MlpModel::init(&[1, width, width, width, outputs], Activation::Tanh, 7).expect("valid layout")
}

/// Truncated basis of a wave fixture, for reconstruction timings.
pub fn wave_basis(rows: usize, cols: usize, modes: usize) -> romforge_core::pod::PodBasis {
    compute_pod(&wave_snapshots(rows, cols, 1), &PodOptions::default()).and_then(|b| b.truncate_to(modes.min(b.rank()))).expect("valid fixture")
}
