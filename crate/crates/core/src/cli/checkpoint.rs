//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `magic[8] | version u32 | meta_len u64 | meta (TOML) | block_count u32 | blocks`,
//! where each block is `name_len u32 | name | rows u32 | cols u32 | rows·cols f64` in
//! row-major order. Trained parameters are blocks; dense pseudo-inputs and the input
//! standardizer are stored as `aux.*` blocks.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::DataFormat;
use crate::data::{Standardizer, TaskKind};
use crate::error::{Error, Result};
use crate::inference::TrainConfig;
use crate::kernels::Inputs;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"GPDRFCK\0";
pub const FORMAT_VERSION: u32 = 1;

const AUX_PSEUDO: &str = "aux.pseudo_inputs";
const AUX_MEAN: &str = "aux.standardizer.mean";
const AUX_SCALE: &str = "aux.standardizer.scale";
const AUX_CONSTANT: &str = "aux.standardizer.constant";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub task: TaskKind,
    pub format: DataFormat,
    pub label_column: String,
    /// Class names in index order, for classification.
    pub classes: Option<Vec<String>>,
    pub standardizer: Option<Standardizer>,
    pub train: TrainConfig,
    pub histogram_bins: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    task: TaskKind,
    format: DataFormat,
    label_column: String,
    classes: Option<Vec<String>>,
    histogram_bins: usize,
    sequence_pseudo_inputs: Option<Vec<String>>,
    train: TrainConfig,
    model: ModelConfig,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn put_block(out: &mut Vec<u8>, name: &str, m: &DMatrix<f64>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((m.nrows() as u32).to_le_bytes());
    out.extend((m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend(m[(i, j)].to_le_bytes());
        }
    }
}

fn row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (pseudo_dense, pseudo_seqs) = match self.model.gp.as_ref().map(|g| &g.pseudo_inputs) {
            Some(Inputs::Dense(z)) => (Some(z.clone()), None),
            Some(Inputs::Sequences(s)) => {
                let strings = s
                    .iter()
                    .map(|q| String::from_utf8(q.clone()).map_err(|_| corrupt("pseudo-input sequence is not UTF-8")))
                    .collect::<Result<Vec<_>>>()?;
                (None, Some(strings))
            }
            None => (None, None),
        };
        let meta = Meta {
            task: self.task,
            format: self.format,
            label_column: self.label_column.clone(),
            classes: self.classes.clone(),
            histogram_bins: self.histogram_bins,
            sequence_pseudo_inputs: pseudo_seqs,
            train: self.train.clone(),
            model: self.model.config.clone(),
        };
        let meta = toml::to_string(&meta).map_err(|e| corrupt(format!("cannot encode metadata: {e}")))?;

        let mut blocks: Vec<(&str, DMatrix<f64>)> =
            self.model.store.iter().map(|(n, m)| (n, m.clone())).collect();
        if let Some(z) = pseudo_dense {
            blocks.push((AUX_PSEUDO, z));
        }
        if let Some(s) = &self.standardizer {
            blocks.push((AUX_MEAN, row(&s.mean)));
            blocks.push((AUX_SCALE, row(&s.scale)));
            let constant: Vec<f64> = s.constant_columns.iter().map(|&c| c as f64).collect();
            blocks.push((AUX_CONSTANT, row(&constant)));
        }

        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((meta.len() as u64).to_le_bytes());
        out.extend(meta.as_bytes());
        out.extend((blocks.len() as u32).to_le_bytes());
        for (name, m) in &blocks {
            put_block(&mut out, name, m);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(corrupt("not a gpdrf checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, supported: FORMAT_VERSION });
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| corrupt("metadata length overflows"))?;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| corrupt("metadata is not UTF-8"))?;
        let meta: Meta = toml::from_str(meta).map_err(|e| corrupt(format!("bad metadata: {e}")))?;

        let count = r.u32()?;
        let mut store = ParamStore::new();
        let mut aux: Vec<(String, DMatrix<f64>)> = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("block name is not UTF-8"))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()));
            let n = n.ok_or_else(|| corrupt(format!("block {name} has an impossible size {rows}x{cols}")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            let m = DMatrix::from_row_slice(rows, cols, &data);
            if name.starts_with("aux.") {
                aux.push((name, m));
            } else {
                if store.id_of(&name).is_some() {
                    return Err(corrupt(format!("duplicate block {name}")));
                }
                store.add(name, m);
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let take_aux = |key: &str| aux.iter().find(|(n, _)| n == key).map(|(_, m)| m.clone());

        let pseudo = match (meta.sequence_pseudo_inputs, take_aux(AUX_PSEUDO)) {
            (Some(s), _) => Some(Inputs::Sequences(s.into_iter().map(String::into_bytes).collect())),
            (None, Some(z)) => Some(Inputs::Dense(z)),
            (None, None) => None,
        };
        let standardizer = match (take_aux(AUX_MEAN), take_aux(AUX_SCALE), take_aux(AUX_CONSTANT)) {
            (Some(mean), Some(scale), Some(constant)) => Some(Standardizer {
                mean: mean.iter().copied().collect(),
                scale: scale.iter().copied().collect(),
                constant_columns: constant.iter().map(|&c| c as usize).collect(),
            }),
            (None, None, None) => None,
            _ => return Err(corrupt("incomplete standardizer blocks")),
        };
        let model = Model::restore(meta.model, pseudo, store)?;
        Ok(Self {
            model,
            task: meta.task,
            format: meta.format,
            label_column: meta.label_column,
            classes: meta.classes,
            standardizer,
            train: meta.train,
            histogram_bins: meta.histogram_bins,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drf::SpectraOption;
    use crate::kernels::{ArdParams, KernelSpec, SpectrumParams};
    use crate::likelihood::LikelihoodSpec;
    use crate::model::ModelKind;

    fn checkpoint(kernel: KernelSpec, z: Inputs) -> Checkpoint {
        let config = ModelConfig {
            kind: ModelKind::GpDrf,
            kernel,
            widths: vec![2, 3],
            features: vec![6],
            likelihood: LikelihoodSpec::Softmax { classes: 3 },
            spectra: SpectraOption::VarFixed,
            per_dim_kernel: false,
            jitter: 1e-6,
            lambda_init: 1.0,
            alpha_init: 1.0,
        };
        Checkpoint {
            model: Model::new(config, Some(z), 7).unwrap(),
            task: TaskKind::Classification,
            format: DataFormat::Tabular,
            label_column: "y".into(),
            classes: Some(vec!["a".into(), "b".into(), "c".into()]),
            standardizer: Some(Standardizer {
                mean: vec![0.5, 1.5],
                scale: vec![2.0, 1.0],
                constant_columns: vec![1],
            }),
            train: TrainConfig { seed: 11, ..TrainConfig::default() },
            histogram_bins: 7,
        }
    }

    fn dense() -> Checkpoint {
        let z = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 * 0.3 - 0.7);
        checkpoint(KernelSpec::Ard(ArdParams::new(1.3, vec![0.4, 2.0]).unwrap()), Inputs::Dense(z))
    }

    #[test]
    fn round_trip_is_exact() {
        let c = dense();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.store, c.model.store);
        assert_eq!(back.model.config, c.model.config);
        assert_eq!(back.standardizer, c.standardizer);
        assert_eq!(back.classes, c.classes);
        assert_eq!(back.train, c.train);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model.gp.unwrap().pseudo_inputs, c.model.gp.unwrap().pseudo_inputs);
    }

    #[test]
    fn sequence_pseudo_inputs_round_trip() {
        let p = SpectrumParams::new(2, 0, b"ACGT".to_vec(), 1.0, true).unwrap();
        let z = Inputs::Sequences(vec![b"ACGTA".to_vec(), b"TTGCA".to_vec(), b"GGGAC".to_vec()]);
        let c = checkpoint(KernelSpec::Spectrum(p), z.clone());
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.model.gp.unwrap().pseudo_inputs, z);
    }

    #[test]
    fn header_damage_is_reported() {
        let bytes = dense().to_bytes().unwrap();
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Version { found: 9, supported: 1 })));
        let mut v = bytes.clone();
        v[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    }
}
