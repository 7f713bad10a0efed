//! `.sdnf` layout: magic `SDNF`, `u32` version, `u64` header length, a JSON
//! header, then every tensor as raw little-endian `f32` at the byte offsets
//! listed in the header. All integers are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DynamicField, FieldConfig, FieldError};
use crate::numcore::{Activation, AdamConfig, AdamState, Layer, MlpParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SDNF";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREAMBLE: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file not found")]
    MissingFile(PathBuf),
    #[error("not an .sdnf checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checkpoint has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: u64 },
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Camera presets and bounds of the scene a field was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub camera_angle_x: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub poses: Vec<[[f64; 4]; 4]>,
    /// Samples per ray the field was trained with; renders default to it.
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

fn default_samples() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub deformation: AdamState<f32>,
    pub canonical: AdamState<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub field: DynamicField<f32>,
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
    pub scene: Option<SceneMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    activation: Option<Activation>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    deformation_steps: u64,
    canonical_steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    field: FieldConfig,
    step: u64,
    optimizer: Option<OptimizerHeader>,
    scene: Option<SceneMeta>,
    tensors: Vec<TensorEntry>,
    data_bytes: u64,
}

struct Writer {
    tensors: Vec<TensorEntry>,
    data: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Vec<usize>, act: Option<Activation>, values: &[f32]) {
        self.tensors.push(TensorEntry {
            name,
            shape,
            activation: act,
            offset: self.data.len() as u64,
        });
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn net(&mut self, prefix: &str, net: &MlpParams<f32>, with_activation: bool) {
        for (i, l) in net.layers().iter().enumerate() {
            let act = with_activation.then_some(l.activation);
            let w: Vec<f32> = l.weights.iter().copied().collect();
            let b: Vec<f32> = l.biases.iter().copied().collect();
            self.push(format!("{prefix}.{i}.weight"), l.weights.shape().to_vec(), act, &w);
            self.push(format!("{prefix}.{i}.bias"), vec![l.biases.len()], None, &b);
        }
    }
}

impl Checkpoint {
    pub fn new(field: DynamicField<f32>) -> Self {
        Self {
            field,
            step: 0,
            optimizer: None,
            scene: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer {
            tensors: Vec::new(),
            data: Vec::new(),
        };
        w.net("deformation", &self.field.deformation, true);
        w.net("canonical", &self.field.canonical, true);
        let optimizer = self.optimizer.as_ref().map(|o| {
            w.net("adam.m.deformation", &o.deformation.first_moment, false);
            w.net("adam.v.deformation", &o.deformation.second_moment, false);
            w.net("adam.m.canonical", &o.canonical.first_moment, false);
            w.net("adam.v.canonical", &o.canonical.second_moment, false);
            OptimizerHeader {
                config: o.canonical.config,
                deformation_steps: o.deformation.step_count,
                canonical_steps: o.canonical.step_count,
            }
        });
        let header = Header {
            field: *self.field.config(),
            step: self.step,
            optimizer,
            scene: self.scene.clone(),
            data_bytes: w.data.len() as u64,
            tensors: w.tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + w.data.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&w.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let found = bytes.len() as u64;
        if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(CheckpointError::Truncated {
                expected: PREAMBLE as u64,
                found,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = PREAMBLE as u64 + header_len;
        if found < header_end {
            return Err(CheckpointError::Truncated {
                expected: header_end,
                found,
            });
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end as usize])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let expected = header_end + header.data_bytes;
        if found < expected {
            return Err(CheckpointError::Truncated { expected, found });
        }
        if found > expected {
            return Err(CheckpointError::TrailingBytes {
                extra: found - expected,
            });
        }
        let reader = Reader {
            header: &header,
            data: &bytes[header_end as usize..],
        };
        let cfg = header.field;
        let deformation = reader.net("deformation", &cfg.deformation_specs(), true)?;
        let canonical = reader.net("canonical", &cfg.canonical_specs(), true)?;
        let field = DynamicField::from_parts(cfg, deformation, canonical)?;
        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => {
                let state = |prefix: &str, specs, steps| -> Result<AdamState<f32>, CheckpointError> {
                    Ok(AdamState {
                        first_moment: reader.net(&format!("adam.m.{prefix}"), specs, false)?,
                        second_moment: reader.net(&format!("adam.v.{prefix}"), specs, false)?,
                        step_count: steps,
                        config: o.config,
                    })
                };
                Some(OptimizerState {
                    deformation: state("deformation", &cfg.deformation_specs(), o.deformation_steps)?,
                    canonical: state("canonical", &cfg.canonical_specs(), o.canonical_steps)?,
                })
            }
        };
        Ok(Self {
            field,
            step: header.step,
            optimizer,
            scene: header.scene,
        })
    }
}

struct Reader<'a> {
    header: &'a Header,
    data: &'a [u8],
}

impl Reader<'_> {
    fn tensor(&self, name: &str, shape: &[usize]) -> Result<(&TensorEntry, Vec<f32>), CheckpointError> {
        let entry = self
            .header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Manifest(format!("missing tensor `{name}`")))?;
        if entry.shape != shape {
            return Err(CheckpointError::Manifest(format!(
                "tensor `{name}` has shape {:?}, architecture needs {shape:?}",
                entry.shape
            )));
        }
        let len = shape.iter().product::<usize>() as u64 * 4;
        let end = entry.offset.checked_add(len).filter(|&e| e <= self.data.len() as u64);
        let Some(end) = end else {
            return Err(CheckpointError::Manifest(format!(
                "tensor `{name}` extends past the data block"
            )));
        };
        let values = self.data[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((entry, values))
    }

    fn net(
        &self,
        prefix: &str,
        specs: &[crate::numcore::LayerSpec],
        check_activation: bool,
    ) -> Result<MlpParams<f32>, CheckpointError> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let (entry, w) = self.tensor(&format!("{prefix}.{i}.weight"), &[s.out_width, s.in_width])?;
            if check_activation && entry.activation != Some(s.activation) {
                return Err(CheckpointError::Manifest(format!(
                    "layer `{prefix}.{i}` activation {:?} disagrees with the architecture ({:?})",
                    entry.activation, s.activation
                )));
            }
            let (_, b) = self.tensor(&format!("{prefix}.{i}.bias"), &[s.out_width])?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((s.out_width, s.in_width), w).expect("shape checked"),
                biases: Array1::from(b),
                activation: s.activation,
            });
        }
        MlpParams::from_layers(layers).map_err(|e| CheckpointError::Manifest(e.to_string()))
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, checkpoint.to_bytes()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CheckpointError::MissingFile(path.to_path_buf())
        } else {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    Checkpoint::from_bytes(&bytes)
}
