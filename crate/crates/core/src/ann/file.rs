//! Model container (little-endian):
//!
//! ```text
//! magic       8 bytes "RFMLP\0\0\0", version u32 = 1
//! activation  u8 (0 tanh, 1 relu)
//! n_sizes     u64, sizes as u64
//! scalers     input offset/scale, output offset/scale (f64 each)
//! layers      per layer: weights (column-major), biases
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Activation, Layer, LossHistory, MlpModel, Scaler};
use crate::error::{Error, Result};
use crate::io::{write_csv, Reader, Writer};

const MAGIC: &[u8; 8] = b"RFMLP\0\0\0";
const VERSION: u32 = 1;

pub fn write_model(path: impl AsRef<Path>, model: &MlpModel) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u8(match model.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    });
    let sizes = model.layer_sizes();
    w.u64(sizes.len() as u64);
    for s in &sizes {
        w.u64(*s as u64);
    }
    for s in [&model.input_scaler, &model.output_scaler] {
        w.f64s(&s.offset);
        w.f64s(&s.scale);
    }
    for l in &model.layers {
        w.f64s(l.weights.as_slice());
        w.f64s(l.biases.as_slice());
    }
    w.finish(path.as_ref())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let (mut r, version) = Reader::open(path, MAGIC)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported model version {version}")));
    }
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        _ => return Err(Error::format(path, "unknown activation tag")),
    };
    let n = r.u64()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::format(path, format!("implausible layer count {n}")));
    }
    let sizes: Vec<usize> = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
    if sizes.iter().any(|&s| s == 0 || s > 1 << 24) {
        return Err(Error::format(path, "implausible layer size"));
    }
    let mut scaler = |dim: usize| -> Result<Scaler> {
        let offset = r.f64s(dim)?;
        let scale = r.f64s(dim)?;
        Scaler::new(offset, scale).map_err(|e| Error::format(path, e.to_string()))
    };
    let input = scaler(sizes[0])?;
    let output = scaler(sizes[n - 1])?;
    let mut layers = Vec::with_capacity(n - 1);
    let mut total = 4 * (sizes[0] + sizes[n - 1]);
    for w in sizes.windows(2) {
        let weights = DMatrix::from_vec(w[1], w[0], r.f64s(w[0] * w[1])?);
        let biases = DVector::from_vec(r.f64s(w[1])?);
        total += w[0] * w[1] + w[1];
        layers.push(Layer { weights, biases });
    }
    r.expect_end(total)?;
    MlpModel::from_layers(layers, activation, input, output).map_err(|e| Error::format(path, e.to_string()))
}

/// `epoch,train_loss,val_loss`, one row per epoch (epochs counted from 1).
pub fn write_loss_csv(path: impl AsRef<Path>, history: &LossHistory) -> Result<()> {
    write_csv(
        path,
        &["epoch", "train_loss", "val_loss"],
        history
            .train
            .iter()
            .zip(&history.validation)
            .enumerate()
            .map(|(k, (t, v))| vec![(k + 1).to_string(), t.to_string(), v.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MlpModel::init(&[1, 9, 7, 3], Activation::Relu, 21).unwrap();
        m.set_scalers(Scaler::new(vec![0.004], vec![0.796]).unwrap(), Scaler::new(vec![1e-3, -2.0, 7.0], vec![0.1, 3.0, 1e-5]).unwrap())
            .unwrap();
        let p = dir.path().join("m.bin");
        write_model(&p, &m).unwrap();
        let back = read_model(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.forward(0.3).unwrap(), m.forward(0.3).unwrap());
    }

    #[test]
    fn corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_model(&p, &MlpModel::init(&[1, 4, 2], Activation::Tanh, 0).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_model(&p), Err(Error::LengthMismatch { .. })));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        std::fs::write(&p, &extra).unwrap();
        assert!(read_model(&p).is_err());
        let mut bad = bytes;
        bad[12] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_model(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn loss_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = LossHistory { train: vec![1.0, 0.5], validation: vec![2.0, 1.5], final_train: 0.25, final_validation: 1.0 };
        write_loss_csv(&p, &h).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,train_loss,val_loss\n1,1,2\n2,0.5,1.5\n");
    }
}
