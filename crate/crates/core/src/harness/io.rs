//! Binary dataset and checkpoint files.
//!
//! Both formats start with an 8-byte magic and a little-endian `u64`
//! length followed by a JSON header. Datasets then hold every bag's frames
//! as little-endian `f32` and end with a length-prefixed JSON label table.
//! Checkpoints hold each parameter tensor as little-endian `f64`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::expert::{ExpertModel, ExpertSpec};
use crate::gate::{GateModel, GateSpec};
use crate::simdata::{FeatureBag, RaterLabels, Split};

pub const FORMAT_VERSION: u32 = 1;
const DATASET_MAGIC: &[u8; 8] = b"EVFDATA\0";
const CHECKPOINT_MAGIC: &[u8; 8] = b"EVFCKPT\0";

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_hash(path: &Path, found: &str, expected: Option<&str>) -> Result<()> {
    match expected {
        Some(exp) if exp != found => Err(Error::ConfigHash {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: exp.to_string(),
        }),
        _ => Ok(()),
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.fail(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.fail("bad magic"));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = usize::try_from(self.u64()?).map_err(|_| self.fail("oversized block"))?;
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| self.fail(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let json = serde_json::to_vec(value).expect("header serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub split: Split,
    pub feature_dim: usize,
    /// Frame count of each bag, in file order.
    pub frames: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    bag_id: u64,
    local: u8,
    central: u8,
    adjudicator: Option<u8>,
    final_label: u8,
    true_class: u8,
    difficulty: f64,
}

/// Serializes one split. Frames are stored as `f32`, so values must
/// already be `f32`-representable for an exact round trip.
pub fn encode_split(
    split: Split,
    bags: &[FeatureBag],
    feature_dim: usize,
    seed: u64,
    config_hash: &str,
) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        split,
        feature_dim,
        frames: bags.iter().map(|b| b.n_frames()).collect(),
        seed,
        config_hash: config_hash.to_string(),
    };
    let mut out = DATASET_MAGIC.to_vec();
    push_json(&mut out, &header);
    let mut labels = Vec::with_capacity(bags.len());
    for b in bags {
        if b.split != split {
            return Err(Error::Config(format!("bag {} belongs to {:?}", b.bag_id, b.split)));
        }
        if b.feature_dim() != feature_dim {
            return Err(Error::Shape(format!(
                "bag {} has feature dim {}, expected {feature_dim}",
                b.bag_id,
                b.feature_dim()
            )));
        }
        for &v in b.frames.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        labels.push(LabelRecord {
            bag_id: b.bag_id,
            local: b.labels.local,
            central: b.labels.central,
            adjudicator: b.labels.adjudicator,
            final_label: b.final_label,
            true_class: b.true_class,
            difficulty: b.difficulty,
        });
    }
    push_json(&mut out, &labels);
    Ok(out)
}

/// Parses one split, checking the embedded config hash when `expected_hash`
/// is given.
pub fn decode_split(
    path: &Path,
    bytes: &[u8],
    expected_hash: Option<&str>,
) -> Result<(DatasetHeader, Vec<FeatureBag>)> {
    let mut r = Reader::new(path, bytes);
    r.magic(DATASET_MAGIC)?;
    let header: DatasetHeader = r.json()?;
    if header.format_version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported format version {}", header.format_version)));
    }
    check_hash(path, &header.config_hash, expected_hash)?;
    let d = header.feature_dim;
    let mut frames = Vec::with_capacity(header.frames.len());
    for &n in &header.frames {
        let len = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| r.fail("frame block too large"))?;
        let raw = r.take(len)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        frames.push(Tensor::matrix(n, d, data).map_err(|e| r.fail(e.to_string()))?);
    }
    let labels: Vec<LabelRecord> = r.json()?;
    r.finish()?;
    if labels.len() != frames.len() {
        return Err(r.fail(format!("{} label rows for {} bags", labels.len(), frames.len())));
    }
    let bags = frames
        .into_iter()
        .zip(labels)
        .map(|(frames, l)| {
            let bag = FeatureBag {
                bag_id: l.bag_id,
                split: header.split,
                frames,
                labels: RaterLabels {
                    local: l.local,
                    central: l.central,
                    adjudicator: l.adjudicator,
                },
                final_label: l.final_label,
                true_class: l.true_class,
                difficulty: l.difficulty,
            };
            bag.validate().map_err(|e| r.fail(e.to_string()))?;
            Ok(bag)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, bags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Expert,
    Gate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: ModelKind,
    /// The model's spec.
    pub architecture: serde_json::Value,
    /// Frame feature width for experts.
    pub input_dim: Option<usize>,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet,
}

fn tensor_entries(params: &ParamSet) -> Vec<TensorEntry> {
    params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_expert(model: &ExpertModel, config_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: ModelKind::Expert,
                architecture: serde_json::to_value(&model.spec).expect("spec serializes"),
                input_dim: Some(model.input_dim),
                tensors: tensor_entries(&model.params),
                seed: model.spec.seed,
                config_hash: config_hash.to_string(),
            },
            params: model.params.clone(),
        }
    }

    pub fn from_gate(model: &GateModel, config_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: ModelKind::Gate,
                architecture: serde_json::to_value(&model.spec).expect("spec serializes"),
                input_dim: None,
                tensors: tensor_entries(&model.params),
                seed: model.spec.seed,
                config_hash: config_hash.to_string(),
            },
            params: model.params.clone(),
        }
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: PathBuf::from("<checkpoint>"),
            reason: reason.into(),
        }
    }

    pub fn into_expert(self) -> Result<ExpertModel> {
        if self.header.kind != ModelKind::Expert {
            return Err(self.bad("not an expert checkpoint"));
        }
        let spec: ExpertSpec = serde_json::from_value(self.header.architecture.clone())
            .map_err(|e| self.bad(e.to_string()))?;
        let input_dim = self.header.input_dim.ok_or_else(|| self.bad("missing input_dim"))?;
        ExpertModel::from_params(spec, input_dim, self.params)
    }

    pub fn into_gate(self) -> Result<GateModel> {
        if self.header.kind != ModelKind::Gate {
            return Err(self.bad("not a gate checkpoint"));
        }
        let spec: GateSpec = serde_json::from_value(self.header.architecture.clone())
            .map_err(|e| self.bad(e.to_string()))?;
        GateModel::from_params(spec, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        push_json(&mut out, &self.header);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8], expected_hash: Option<&str>) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let header: CheckpointHeader = r.json()?;
        if header.format_version != FORMAT_VERSION {
            return Err(r.fail(format!("unsupported format version {}", header.format_version)));
        }
        check_hash(path, &header.config_hash, expected_hash)?;
        let mut params = ParamSet::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.fail("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| r.fail(format!("{}: {e}", entry.name)))?;
            params.push(entry.name.clone(), t);
        }
        r.finish()?;
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?, expected_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{AttentionKind, HeadKind, LabelSource};

    fn expert() -> ExpertModel {
        ExpertModel::new(
            ExpertSpec {
                name: "e".into(),
                head: HeadKind::Evidential,
                label_source: LabelSource::Local,
                hidden: 5,
                attention: 3,
                feature: 4,
                dropout: 0.1,
                attention_kind: AttentionKind::Gated,
                seed: 17,
            },
            6,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let m = expert();
        let ck = Checkpoint::from_expert(&m, "abc");
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(Path::new("x"), &bytes, Some("abc")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.into_expert().unwrap(), m);
    }

    #[test]
    fn checkpoint_hash_mismatch() {
        let bytes = Checkpoint::from_expert(&expert(), "abc").to_bytes();
        let err = Checkpoint::from_bytes(Path::new("x"), &bytes, Some("def")).unwrap_err();
        assert_eq!(err.kind(), "config_hash");
        assert!(Checkpoint::from_bytes(Path::new("x"), &bytes, None).is_ok());
    }

    #[test]
    fn truncated_checkpoint_is_format_error() {
        let bytes = Checkpoint::from_expert(&expert(), "abc").to_bytes();
        let err = Checkpoint::from_bytes(Path::new("x"), &bytes[..bytes.len() - 3], None).unwrap_err();
        assert_eq!(err.kind(), "format");
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(Checkpoint::from_bytes(Path::new("x"), &extra, None).unwrap_err().kind(), "format");
    }

    #[test]
    fn wrong_kind_rejected() {
        let ck = Checkpoint::from_expert(&expert(), "abc");
        assert_eq!(ck.into_gate().unwrap_err().kind(), "format");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("f.bin");
        write_atomic(&p, b"hello").unwrap();
        write_atomic(&p, b"world").unwrap();
        assert_eq!(read_file(&p).unwrap(), b"world");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
        assert_eq!(read_file(&dir.path().join("nope")).unwrap_err().kind(), "missing_file");
    }
}
