//! Binary tensor archives (`.lsck` checkpoints, `.lsw` backbone weights),
//! `head_config.json`, and a weight provider reading a weights directory.
//!
//! Archive layout, all integers little-endian:
//! `b"LSCK"`, `u32` version, `u32` entry count, then per entry a `u32` name
//! length, UTF-8 name, `u8` dtype (0 = f32, 1 = f64), `u32` rank, `u64`
//! dimensions and the raw values.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use leafscope_core::backbone::{Backbone, WeightProvider};
use leafscope_core::classifier::{Classifier, ClassifierState, Phase};
use leafscope_core::head::HeadParams;
use leafscope_core::nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::{io, Error, Result};

pub const MAGIC: &[u8; 4] = b"LSCK";
pub const ARCHIVE_VERSION: u32 = 1;
pub const WEIGHTS_EXTENSION: &str = "lsw";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub tensors: Vec<NamedTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl TensorArchive {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(match t.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            });
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    /// Parses an archive; the error string describes the first defect.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err("not a tensor archive (bad magic)".into());
        }
        let version = c.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(format!("unsupported archive version {version}"));
        }
        let count = c.u32()? as usize;
        let mut out = TensorArchive::default();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| "tensor name is not UTF-8".to_string())?
                .to_owned();
            if !seen.insert(name.clone()) {
                return Err(format!("duplicate tensor {name:?}"));
            }
            let dtype = c.u8()?;
            let rank = c.u32()? as usize;
            let shape = (0..rank)
                .map(|_| c.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format!("tensor {name:?} shape overflows"))?;
            let data = match dtype {
                0 => TensorData::F32(
                    c.take(n.checked_mul(4).ok_or("size overflow")?)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => TensorData::F64(
                    c.take(n.checked_mul(8).ok_or("size overflow")?)?
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => return Err(format!("tensor {name:?} has unknown dtype {other}")),
            };
            out.push(name, shape, data);
        }
        if c.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - c.pos));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}

fn param_key(name: &str) -> String {
    format!("backbone/param/{name}")
}

fn buffer_key(name: &str) -> String {
    format!("backbone/buffer/{name}")
}

fn push_store(archive: &mut TensorArchive, store: &ParamStore) {
    for p in &store.params {
        archive.push(param_key(&p.name), p.shape.clone(), TensorData::F32(p.value.clone()));
    }
    for b in &store.buffers {
        archive.push(buffer_key(&b.name), vec![b.value.len()], TensorData::F32(b.value.clone()));
    }
}

fn f32_entry<'a>(archive: &'a TensorArchive, key: &str, len: usize) -> std::result::Result<&'a [f32], String> {
    match archive.get(key).map(|t| &t.data) {
        Some(TensorData::F32(v)) if v.len() == len => Ok(v),
        Some(TensorData::F32(v)) => Err(format!("{key} holds {} values, expected {len}", v.len())),
        Some(TensorData::F64(_)) => Err(format!("{key} is f64, expected f32")),
        None => Err(format!("missing tensor {key}")),
    }
}

fn f64_entry(archive: &TensorArchive, key: &str, len: usize) -> std::result::Result<Vec<f64>, String> {
    match archive.get(key).map(|t| &t.data) {
        Some(TensorData::F64(v)) if v.len() == len => Ok(v.clone()),
        Some(TensorData::F64(v)) => Err(format!("{key} holds {} values, expected {len}", v.len())),
        Some(TensorData::F32(_)) => Err(format!("{key} is f32, expected f64")),
        None => Err(format!("missing tensor {key}")),
    }
}

/// Overwrites every parameter and buffer of `store` from `archive`.
fn fill_store(archive: &TensorArchive, store: &mut ParamStore) -> std::result::Result<(), String> {
    for p in &mut store.params {
        let v = f32_entry(archive, &param_key(&p.name), p.value.len())?;
        p.value.copy_from_slice(v);
    }
    for b in &mut store.buffers {
        let v = f32_entry(archive, &buffer_key(&b.name), b.value.len())?;
        b.value.copy_from_slice(v);
    }
    Ok(())
}

/// Archive of every backbone parameter and buffer plus the head.
pub fn checkpoint_archive(state: &ClassifierState) -> TensorArchive {
    let mut a = TensorArchive::default();
    push_store(&mut a, &state.backbone);
    let h = &state.head;
    for (name, v) in [
        ("gamma", &h.gamma),
        ("beta", &h.beta),
        ("running_mean", &h.running_mean),
        ("running_var", &h.running_var),
    ] {
        a.push(format!("head/{name}"), vec![h.depth], TensorData::F64(v.clone()));
    }
    a.push("head/weights", vec![h.depth, h.classes], TensorData::F64(h.weights.clone()));
    a.push("head/bias", vec![h.classes], TensorData::F64(h.bias.clone()));
    a
}

pub fn save_checkpoint(path: &Path, classifier: &Classifier) -> Result<()> {
    checkpoint_archive(&classifier.snapshot()).save(path)
}

/// Loads a checkpoint into a classifier built with the same backbone and
/// head shape.
pub fn load_checkpoint(path: &Path, classifier: &mut Classifier) -> Result<()> {
    let archive = TensorArchive::load(path)?;
    let mut state = classifier.snapshot();
    let fill = |state: &mut ClassifierState| -> std::result::Result<(), String> {
        fill_store(&archive, &mut state.backbone)?;
        let h = &mut state.head;
        let (d, c) = (h.depth, h.classes);
        h.gamma = f64_entry(&archive, "head/gamma", d)?;
        h.beta = f64_entry(&archive, "head/beta", d)?;
        h.running_mean = f64_entry(&archive, "head/running_mean", d)?;
        h.running_var = f64_entry(&archive, "head/running_var", d)?;
        h.weights = f64_entry(&archive, "head/weights", d * c)?;
        h.bias = f64_entry(&archive, "head/bias", c)?;
        Ok(())
    };
    fill(&mut state).map_err(|m| Error::format(path, m))?;
    state.head.validate().map_err(|e| Error::format(path, e))?;
    classifier.restore(&state)?;
    Ok(())
}

/// Writes the backbone's values as a `.lsw` weights file.
pub fn export_backbone_weights(path: &Path, backbone: &Backbone) -> Result<()> {
    let mut a = TensorArchive::default();
    push_store(&mut a, backbone.graph().params());
    a.save(path)
}

/// Reads `<dir>/<backbone>.lsw`. Checkpoints also qualify as weights files:
/// head entries are ignored.
#[derive(Debug, Clone)]
pub struct WeightsDir {
    pub dir: PathBuf,
}

impl WeightsDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, backbone: &str) -> PathBuf {
        self.dir.join(format!("{backbone}.{WEIGHTS_EXTENSION}"))
    }
}

impl WeightProvider for WeightsDir {
    fn load(&self, backbone: &str, params: &mut ParamStore) -> leafscope_core::Result<()> {
        let path = self.path_for(backbone);
        let env_err = |message: String| leafscope_core::Error::Environment {
            message,
            hint: format!(
                "export {backbone} weights to {} or set model.pretrained = false",
                path.display()
            ),
        };
        let bytes = std::fs::read(&path).map_err(|e| env_err(format!("cannot read {}: {e}", path.display())))?;
        let archive = TensorArchive::decode(&bytes).map_err(|m| env_err(format!("{}: {m}", path.display())))?;
        fill_store(&archive, params).map_err(|m| env_err(format!("{}: {m}", path.display())))
    }
}

/// `head_config.json`: what is needed to rebuild the classifier that a
/// checkpoint belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub backbone: String,
    pub pretrained: bool,
    pub depth: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub input_size: usize,
    pub phase: Phase,
    pub class_names: Vec<String>,
    pub config_hash: String,
}

impl HeadConfig {
    pub fn describe(classifier: &Classifier, class_names: &[String], config_hash: &str) -> Self {
        let head: &HeadParams = classifier.head();
        Self {
            backbone: classifier.backbone().name().into(),
            pretrained: classifier.backbone().pretrained(),
            depth: head.depth,
            num_classes: head.classes,
            dropout_rate: head.dropout_rate,
            input_size: classifier.input_size(),
            phase: classifier.phase(),
            class_names: class_names.to_vec(),
            config_hash: config_hash.into(),
        }
    }
}
