//! Persistent file formats.
//!
//! Dataset files (magic `LSBS`):
//!
//! ```text
//! bytes 0..4   magic "LSBS"
//! bytes 4..8   format version, u32 little-endian (currently 1)
//! bytes 8..16  d, u64 little-endian
//! bytes 16..24 m, u64 little-endian
//! then         d·m IEEE-754 f64 values, little-endian, row-major
//! ```
//!
//! Round trips are bit-exact. Model files (magic `LSBM`) store the
//! bandwidth, the metric scales, the dependency sets (1-based indices on
//! disk), the per-set Sinkhorn weights, and a SHA-256 digest of the
//! dataset file the model was fitted to; loading validates the digest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Metric, SampleMatrix};
use crate::error::{Error, Result};
use crate::localize::{DependencySet, LocalizedBridgeModel};

const DATASET_MAGIC: &[u8; 4] = b"LSBS";
const MODEL_MAGIC: &[u8; 4] = b"LSBM";
const FORMAT_VERSION: u32 = 1;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes a dataset file (one sample per column in memory, row-major on
/// disk). `m = 0` is allowed.
pub fn write_dataset(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path_str(path), e);
    w.write_all(DATASET_MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(data.nrows() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(data.ncols() as u64).to_le_bytes()).map_err(io_err)?;
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            w.write_all(&data[(i, j)].to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a dataset file back into a matrix with one sample per column.
pub fn read_dataset(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut cursor = Cursor::new(path, &bytes);
    cursor.expect_magic(DATASET_MAGIC)?;
    let version = cursor.read_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path_str(path),
            format!("unsupported format version {version}"),
        ));
    }
    let d = cursor.read_u64()? as usize;
    let m = cursor.read_u64()? as usize;
    let expected = d
        .checked_mul(m)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(path_str(path), "dimensions overflow"))?;
    if cursor.remaining() != expected {
        return Err(Error::format(
            path_str(path),
            format!(
                "payload holds {} bytes, header implies {expected}",
                cursor.remaining()
            ),
        ));
    }
    let mut out = DMatrix::zeros(d, m);
    for i in 0..d {
        for j in 0..m {
            out[(i, j)] = cursor.read_f64()?;
        }
    }
    Ok(out)
}

/// Writes a CSV mirror of a dataset (one sample per column, samples as
/// CSV rows for easy plotting).
pub fn write_dataset_csv(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path_str(path), e);
    for j in 0..data.ncols() {
        let row: Vec<String> = (0..data.nrows()).map(|i| format!("{}", data[(i, j)])).collect();
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// SHA-256 digest of a file's bytes; datasets are referenced by content.
pub fn file_digest(path: &Path) -> Result<[u8; 32]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().into())
}

/// Sidecar metadata written next to generated datasets.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub experiment: String,
    pub seed: u64,
    pub d: u64,
    pub m: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub params: std::collections::BTreeMap<String, f64>,
}

impl DatasetMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path_str(path), e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path_str(path), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path_str(path), e.to_string()))
    }
}

/// A persisted localized model: everything needed to rebuild a
/// [`LocalizedBridgeModel`] given the dataset it references.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub epsilon: f64,
    pub d: u64,
    pub m: u64,
    pub data_digest: [u8; 32],
    pub scales: Vec<f64>,
    pub sets: Vec<DependencySet>,
    pub weights: Vec<DVector<f64>>,
}

impl ModelFile {
    pub fn from_model(model: &LocalizedBridgeModel, data_digest: [u8; 32]) -> Self {
        Self {
            epsilon: model.epsilon(),
            d: model.dim() as u64,
            m: model.len() as u64,
            data_digest,
            scales: model.metric().scales().to_vec(),
            sets: model.sets().cloned().collect(),
            weights: model
                .sets()
                .map(|s| model.local_weights(s.alpha()).unwrap().clone())
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path_str(path), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path_str(path), e);
        w.write_all(MODEL_MAGIC).map_err(io_err)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.epsilon.to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.d.to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.m.to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.data_digest).map_err(io_err)?;
        for &s in &self.scales {
            w.write_all(&s.to_le_bytes()).map_err(io_err)?;
        }
        w.write_all(&(self.sets.len() as u64).to_le_bytes()).map_err(io_err)?;
        // Dependency sets are stored with 1-based indices.
        for set in &self.sets {
            w.write_all(&(set.alpha() as u64 + 1).to_le_bytes()).map_err(io_err)?;
            w.write_all(&(set.cardinality() as u64).to_le_bytes()).map_err(io_err)?;
            for &i in set.members() {
                w.write_all(&(i as u64 + 1).to_le_bytes()).map_err(io_err)?;
            }
        }
        for v in &self.weights {
            for value in v.iter() {
                w.write_all(&value.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
        let mut cursor = Cursor::new(path, &bytes);
        cursor.expect_magic(MODEL_MAGIC)?;
        let version = cursor.read_u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path_str(path),
                format!("unsupported format version {version}"),
            ));
        }
        let epsilon = cursor.read_f64()?;
        let d = cursor.read_u64()?;
        let m = cursor.read_u64()?;
        let mut data_digest = [0u8; 32];
        data_digest.copy_from_slice(cursor.read_bytes(32)?);
        let mut scales = Vec::with_capacity(d as usize);
        for _ in 0..d {
            scales.push(cursor.read_f64()?);
        }
        let n_sets = cursor.read_u64()? as usize;
        let mut sets = Vec::with_capacity(n_sets);
        for _ in 0..n_sets {
            let alpha = cursor.read_u64()?;
            let len = cursor.read_u64()? as usize;
            let mut members = Vec::with_capacity(len);
            for _ in 0..len {
                let idx = cursor.read_u64()?;
                if idx == 0 {
                    return Err(Error::format(
                        path_str(path),
                        "dependency indices on disk are 1-based; found 0",
                    ));
                }
                members.push(idx as usize - 1);
            }
            if alpha == 0 {
                return Err(Error::format(path_str(path), "coordinate index 0 in set header"));
            }
            let set = DependencySet::new(alpha as usize - 1, members)
                .map_err(|e| Error::format(path_str(path), e.to_string()))?;
            sets.push(set);
        }
        let mut weights = Vec::with_capacity(n_sets);
        for _ in 0..n_sets {
            let mut v = DVector::zeros(m as usize);
            for i in 0..m as usize {
                v[i] = cursor.read_f64()?;
            }
            weights.push(v);
        }
        if cursor.remaining() != 0 {
            return Err(Error::format(
                path_str(path),
                format!("{} trailing bytes", cursor.remaining()),
            ));
        }
        Ok(Self {
            epsilon,
            d,
            m,
            data_digest,
            scales,
            sets,
            weights,
        })
    }

    /// Checks that `digest` matches the dataset this model references.
    pub fn validate_digest(&self, digest: &[u8; 32], dataset_path: &Path) -> Result<()> {
        if &self.data_digest != digest {
            return Err(Error::format(
                path_str(dataset_path),
                "dataset content hash does not match the model's reference",
            ));
        }
        Ok(())
    }

    /// Rebuilds the model against its dataset.
    pub fn into_model(self, data: SampleMatrix) -> Result<LocalizedBridgeModel> {
        if data.dim() != self.d as usize || data.len() != self.m as usize {
            return Err(Error::Data(format!(
                "dataset is {}x{}, model was fitted to {}x{}",
                data.dim(),
                data.len(),
                self.d,
                self.m
            )));
        }
        let metric = Metric::new(self.scales)?;
        LocalizedBridgeModel::from_parts(data, self.sets, self.epsilon, metric, self.weights)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self {
            path,
            bytes,
            offset: 0,
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(path_str(self.path), "unexpected end of file"));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.read_bytes(4)?;
        if found != magic {
            return Err(Error::format(
                path_str(self.path),
                format!("bad magic {found:?}"),
            ));
        }
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.read_bytes(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.read_bytes(8)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.read_bytes(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::periodic_stencil_sets;
    use nalgebra::dmatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use tempfile::tempdir;

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.lsbs");
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(7, 13, |_, _| rng.gen_range(-10.0..10.0));
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(data, back);
        // Bit-level check, including signed zero.
        let tricky = dmatrix![-0.0, 1.0e-308; 5.0, -3.125];
        write_dataset(&path, &tricky).unwrap();
        let back = read_dataset(&path).unwrap();
        for (a, b) in tricky.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_header_layout_is_fixed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.lsbs");
        write_dataset(&path, &dmatrix![1.0, 2.0; 3.0, 4.0]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"LSBS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 24 + 4 * 8);
        // Row-major payload: first row is (1.0, 2.0).
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 2.0);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.lsbs");
        write_dataset(&path, &DMatrix::zeros(3, 0)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.nrows(), 3);
        assert_eq!(back.ncols(), 0);
    }

    #[test]
    fn truncated_dataset_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.lsbs");
        write_dataset(&path, &dmatrix![1.0, 2.0; 3.0, 4.0]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn model_round_trip_preserves_weights_bitwise() {
        use crate::bridge::DEFAULT_MAX_ITER;
        use crate::data::Metric;

        let dir = tempdir().unwrap();
        let data_path = dir.path().join("train.lsbs");
        let model_path = dir.path().join("model.lsbm");
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let raw = DMatrix::from_fn(4, 9, |_, _| rng.gen_range(-1.0..1.0));
        write_dataset(&data_path, &raw).unwrap();
        let samples = SampleMatrix::new(raw).unwrap();
        let model = LocalizedBridgeModel::fit(
            samples.clone(),
            periodic_stencil_sets(4, 1).unwrap(),
            0.3,
            Metric::euclidean(4),
            1e-10,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        let digest = file_digest(&data_path).unwrap();
        ModelFile::from_model(&model, digest).write(&model_path).unwrap();

        let loaded_file = ModelFile::read(&model_path).unwrap();
        loaded_file.validate_digest(&digest, &data_path).unwrap();
        let loaded = loaded_file.into_model(samples).unwrap();
        for alpha in 0..4 {
            assert_eq!(
                loaded.local_weights(alpha).unwrap().as_slice(),
                model.local_weights(alpha).unwrap().as_slice()
            );
        }
        assert_eq!(loaded.epsilon(), model.epsilon());
    }

    #[test]
    fn corrupted_dataset_digest_is_rejected() {
        let dir = tempdir().unwrap();
        let data_path = dir.path().join("train.lsbs");
        write_dataset(&data_path, &dmatrix![1.0, 2.0, 3.0]).unwrap();
        let digest = file_digest(&data_path).unwrap();
        let model_file = ModelFile {
            epsilon: 0.5,
            d: 1,
            m: 3,
            data_digest: digest,
            scales: vec![1.0],
            sets: vec![DependencySet::new(0, vec![0]).unwrap()],
            weights: vec![DVector::from_vec(vec![1.0, 1.0, 1.0])],
        };
        // Corrupt the dataset afterwards.
        fs::write(&data_path, b"LSBS-corrupted").unwrap();
        let new_digest = file_digest(&data_path).unwrap();
        assert!(model_file.validate_digest(&new_digest, &data_path).is_err());
    }

    #[test]
    fn meta_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("train.meta.json");
        let mut meta = DatasetMeta {
            experiment: "lorenz96".into(),
            seed: 12,
            d: 24,
            m: 100,
            sigma_z: Some(3.5),
            sigma_psi: Some(2.25),
            ..Default::default()
        };
        meta.params.insert("forcing".into(), 20.0);
        meta.write(&path).unwrap();
        let back = DatasetMeta::read(&path).unwrap();
        assert_eq!(back.experiment, "lorenz96");
        assert_eq!(back.sigma_z, Some(3.5));
        assert_eq!(back.params["forcing"], 20.0);
    }
}
