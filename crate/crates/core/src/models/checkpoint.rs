//! Flat named-tensor archive with a JSON header.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"GGRAPHCK" | u32 version | u64 header_len | header JSON
//! u64 tensor_count
//! repeated: u64 name_len | name (UTF-8) | u64 rows | u64 cols | rows*cols f64, row-major
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::dcca::{ProjectionNets, Standardizer};
use super::gcn_lp::LpInput;
use super::{
    mlp_input, DccaConfig, DccaModel, Features, GcnConfig, GcnLpModel, GcnModel, MlpConfig,
    MlpModel, ModelKind,
};
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, ParamSet};
use crate::views::ViewMatrices;

const MAGIC: &[u8; 8] = b"GGRAPHCK";
const VERSION: u32 = 1;
/// Refuse absurd lengths before allocating.
const MAX_LEN: u64 = 1 << 40;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub header: Map<String, Value>,
    pub tensors: Vec<(String, DenseMatrix)>,
}

impl Archive {
    pub fn tensor(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, value: DenseMatrix) {
        self.tensors.push((name.into(), value));
    }

    fn require_tensor(&self, name: &str) -> Result<&DenseMatrix> {
        self.tensor(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    fn header_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::Format(format!("header lacks {key:?}")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Format(format!("header field {key:?}: {e}")))
    }
}

pub fn write_archive<W: Write>(archive: &Archive, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&archive.header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(archive.tensors.len() as u64).to_le_bytes())?;
    for (name, t) in &archive.tensors {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rows() as u64).to_le_bytes())?;
        out.write_all(&(t.cols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.as_slice().len() * 8);
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let n = read_u64(r)?;
    if n > MAX_LEN {
        return Err(Error::Format(format!("{what} length {n} is implausible")));
    }
    Ok(n as usize)
}

pub fn read_archive<R: Read>(mut input: R) -> Result<Archive> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = read_len(&mut input, "header")?;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let header: Map<String, Value> = serde_json::from_slice(&header)?;
    let count = read_len(&mut input, "tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = read_len(&mut input, "name")?;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = read_len(&mut input, "rows")?;
        let cols = read_len(&mut input, "cols")?;
        let len = rows
            .checked_mul(cols)
            .filter(|&n| (n as u64) <= MAX_LEN)
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let mut bytes = vec![0u8; len * 8];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, DenseMatrix::from_vec(rows, cols, data)?));
    }
    Ok(Archive { header, tensors })
}

fn push_params(archive: &mut Archive, prefix: &str, params: &ParamSet) {
    for (name, value) in params.iter() {
        archive.push(format!("{prefix}{name}"), value.clone());
    }
}

fn load_params(archive: &Archive, prefix: &str, params: &mut ParamSet) -> Result<()> {
    let mut found = 0;
    let tensors = archive
        .tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n, t)))
        .filter(|(n, _)| params.id(n).is_some())
        .inspect(|_| found += 1)
        .collect::<Vec<_>>();
    params.load_values(tensors)?;
    if found != params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {found} of {} parameters",
            params.len()
        )));
    }
    Ok(())
}

/// Any trained model, for saving, loading and prediction.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Gcn(GcnModel),
    GcnLp(GcnLpModel),
    Mlp(MlpModel),
    Dcca(DccaModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Gcn(_) => ModelKind::Gcn,
            TrainedModel::GcnLp(_) => ModelKind::GcnLp,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
            TrainedModel::Dcca(_) => ModelKind::Dcca,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TrainedModel::Gcn(m) => m.num_classes(),
            TrainedModel::GcnLp(m) => m.gcn().num_classes(),
            TrainedModel::Mlp(m) => m.num_classes(),
            TrainedModel::Dcca(m) => m.classifier().num_classes(),
        }
    }

    /// Class probabilities for every user in `views`.
    pub fn predict_proba(&self, views: &ViewMatrices) -> Result<DenseMatrix> {
        match self {
            TrainedModel::Gcn(m) => {
                m.predict_proba(&Features::Sparse(Arc::clone(&views.x)), &views.a_hat)
            }
            TrainedModel::GcnLp(m) => m.predict_proba(&views.a, &views.a_hat),
            TrainedModel::Mlp(m) => {
                m.predict_proba(&Features::from(mlp_input(&views.x, &views.a_hat)?))
            }
            TrainedModel::Dcca(m) => m.predict_proba(&views.x, &views.a_hat),
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        a.header.insert("kind".into(), json!(self.kind()));
        match self {
            TrainedModel::Gcn(m) => {
                a.header.insert("config".into(), json!(m.config()));
                a.header.insert("input_dim".into(), json!(m.input_dim()));
                a.header
                    .insert("num_classes".into(), json!(m.num_classes()));
                push_params(&mut a, "", m.params());
            }
            TrainedModel::GcnLp(m) => {
                let g = m.gcn();
                a.header.insert("config".into(), json!(g.config()));
                a.header.insert("input_dim".into(), json!(g.input_dim()));
                a.header
                    .insert("num_classes".into(), json!(g.num_classes()));
                a.header.insert("lp_input".into(), json!(m.input));
                a.header.insert("trigger".into(), json!(m.trigger));
                push_params(&mut a, "", g.params());
                a.push("labels.block", m.label_block.clone());
            }
            TrainedModel::Mlp(m) => {
                a.header.insert("config".into(), json!(m.config()));
                a.header.insert("input_dim".into(), json!(m.input_dim()));
                a.header
                    .insert("num_classes".into(), json!(m.num_classes()));
                push_params(&mut a, "", m.params());
            }
            TrainedModel::Dcca(m) => {
                a.header.insert("config".into(), json!(m.nets.config()));
                a.header
                    .insert("input_dims".into(), json!(m.nets.input_dims()));
                a.header
                    .insert("num_classes".into(), json!(m.classifier.num_classes()));
                push_params(&mut a, "nets/", m.nets.params());
                push_params(&mut a, "classifier/", m.classifier.params());
                a.push("standardize.mean", m.standardizer.mean.clone());
                a.push("standardize.scale", m.standardizer.scale.clone());
            }
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let kind: ModelKind = a.header_field("kind")?;
        let num_classes: usize = a.header_field("num_classes")?;
        Ok(match kind {
            ModelKind::Gcn => {
                let config: GcnConfig = a.header_field("config")?;
                let mut m = GcnModel::new(a.header_field("input_dim")?, num_classes, config, 0)?;
                load_params(a, "", m.params_mut())?;
                TrainedModel::Gcn(m)
            }
            ModelKind::GcnLp => {
                let config: GcnConfig = a.header_field("config")?;
                let mut gcn = GcnModel::new(a.header_field("input_dim")?, num_classes, config, 0)?;
                load_params(a, "", gcn.params_mut())?;
                let label_block = a.require_tensor("labels.block")?.clone();
                if label_block.cols() != num_classes {
                    return Err(Error::Format(
                        "label block width differs from class count".into(),
                    ));
                }
                let input: LpInput = a.header_field("lp_input")?;
                TrainedModel::GcnLp(GcnLpModel {
                    gcn,
                    input,
                    trigger: a.header_field("trigger")?,
                    label_block,
                })
            }
            ModelKind::Mlp => {
                let config: MlpConfig = a.header_field("config")?;
                let mut m = MlpModel::new(a.header_field("input_dim")?, num_classes, config, 0)?;
                load_params(a, "", m.params_mut())?;
                TrainedModel::Mlp(m)
            }
            ModelKind::Dcca => {
                let config: DccaConfig = a.header_field("config")?;
                let mut nets = ProjectionNets::new(a.header_field("input_dims")?, config, 0)?;
                load_params(a, "nets/", nets.params_mut())?;
                let mlp_config = MlpConfig {
                    hidden_size: config.supervised_hidden,
                    dropout: config.dropout,
                };
                let mut classifier =
                    MlpModel::new(2 * config.proj_out, num_classes, mlp_config, 0)?;
                load_params(a, "classifier/", classifier.params_mut())?;
                let standardizer = Standardizer {
                    mean: a.require_tensor("standardize.mean")?.clone(),
                    scale: a.require_tensor("standardize.scale")?.clone(),
                };
                if standardizer.mean.shape() != (1, 2 * config.proj_out)
                    || standardizer.scale.shape() != standardizer.mean.shape()
                {
                    return Err(Error::Format(
                        "standardizer shape differs from projection width".into(),
                    ));
                }
                TrainedModel::Dcca(DccaModel {
                    nets,
                    standardizer,
                    classifier,
                })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip() {
        let mut a = Archive::default();
        a.header.insert("kind".into(), json!("gcn"));
        a.push(
            "w",
            DenseMatrix::from_rows(&[[1.5, -2.0], [f64::MIN_POSITIVE, 3.0]]),
        );
        a.push("empty", DenseMatrix::zeros(0, 3));
        let mut bytes = Vec::new();
        write_archive(&a, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(read_archive(bytes.as_slice()).unwrap(), a);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            read_archive(&b"NOTACKPT\x01\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let mut bytes = Vec::new();
        let mut a = Archive::default();
        a.push("w", DenseMatrix::identity(3));
        write_archive(&a, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(read_archive(bytes.as_slice()).is_err());
    }

    #[test]
    fn model_round_trip() {
        let m = GcnModel::new(
            5,
            3,
            GcnConfig {
                hidden_size: 4,
                ..GcnConfig::default()
            },
            9,
        )
        .unwrap();
        let model = TrainedModel::Gcn(m.clone());
        let mut bytes = Vec::new();
        write_archive(&model.to_archive(), &mut bytes).unwrap();
        let back = TrainedModel::from_archive(&read_archive(bytes.as_slice()).unwrap()).unwrap();
        let TrainedModel::Gcn(back) = back else {
            panic!("wrong kind")
        };
        for id in m.params().ids() {
            assert_eq!(m.params().value(id), back.params().value(id));
        }
    }

    #[test]
    fn missing_parameter_rejected() {
        let m = MlpModel::new(3, 2, MlpConfig::default(), 0).unwrap();
        let mut a = TrainedModel::Mlp(m).to_archive();
        a.tensors.pop();
        assert!(matches!(
            TrainedModel::from_archive(&a),
            Err(Error::Format(_))
        ));
    }
}
