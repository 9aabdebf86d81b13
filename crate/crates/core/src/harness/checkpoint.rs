//! Binary network checkpoints and student-group directories.
//!
//! File layout: magic `O2MK`, `u32` LE version, `u64` LE header length, the
//! JSON header, then every parameter tensor in declaration order as LE `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::ensemble::{GroupMetadata, Partition, StudentGroup};
use crate::error::{Error, Result};
use crate::numerics::{Architecture, DenoiserNet, Parameters};

pub const MAGIC: &[u8; 4] = b"O2MK";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub schedule: ScheduleKind,
    pub total_steps: usize,
    /// `teacher`, `student_<i>` or `merged`.
    pub role: String,
    pub partition: Option<Partition>,
    pub config_hash: String,
    pub seed: u64,
}

fn checkpoint_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_checkpoint(net: &DenoiserNet, header: &CheckpointHeader) -> Result<Vec<u8>> {
    if &header.architecture != net.architecture() {
        return Err(Error::ArchitectureMismatch("checkpoint header does not describe the network".into()));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for tensor in net.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode_checkpoint`]; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(DenoiserNet, CheckpointHeader)> {
    let err = |m: String| checkpoint_error(path, m);
    if bytes.len() < 16 {
        return Err(err(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| err(format!("header length {header_len} exceeds file size")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| err(format!("bad header: {e}")))?;
    header
        .architecture
        .validate()
        .map_err(|e| err(format!("bad architecture: {e}")))?;
    let mut net = DenoiserNet::zeros(header.architecture.clone())?;
    let payload = &bytes[payload_start..];
    let expected = 8 * net.param_count();
    if payload.len() != expected {
        return Err(err(format!(
            "payload holds {} bytes, architecture needs {expected}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(8);
    for tensor in net.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
        }
    }
    Ok((net, header))
}

pub fn save_checkpoint(path: &Path, net: &DenoiserNet, header: &CheckpointHeader) -> Result<()> {
    let bytes = encode_checkpoint(net, header)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserNet, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupManifest {
    pub partition: Partition,
    pub schedule: ScheduleKind,
    pub metadata: GroupMetadata,
    /// Student checkpoint files relative to the directory, in student order.
    pub students: Vec<String>,
}

pub fn student_file_name(i: usize) -> String {
    format!("student_{i}.o2mk")
}

/// Write `manifest.json` plus one checkpoint per student into `dir`.
pub fn save_group(dir: &Path, group: &StudentGroup, schedule: ScheduleKind) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(group.len());
    for (i, student) in group.students().iter().enumerate() {
        let name = student_file_name(i + 1);
        let header = CheckpointHeader {
            architecture: student.architecture().clone(),
            schedule,
            total_steps: group.partition().total_steps,
            role: format!("student_{}", i + 1),
            partition: Some(group.partition().clone()),
            config_hash: group.metadata.config_hash.clone(),
            seed: group.metadata.seed,
        };
        save_checkpoint(&dir.join(&name), student, &header)?;
        files.push(name);
    }
    let manifest = GroupManifest {
        partition: group.partition().clone(),
        schedule,
        metadata: group.metadata.clone(),
        students: files,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_group(dir: &Path) -> Result<(StudentGroup, GroupManifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: GroupManifest =
        serde_json::from_str(&text).map_err(|e| checkpoint_error(&path, format!("bad manifest: {e}")))?;
    manifest
        .partition
        .validate()
        .map_err(|e| checkpoint_error(&path, e.to_string()))?;
    let mut students = Vec::with_capacity(manifest.students.len());
    for name in &manifest.students {
        let file = dir.join(name);
        let (net, header) = load_checkpoint(&file)?;
        if header.total_steps != manifest.partition.total_steps || header.schedule != manifest.schedule {
            return Err(checkpoint_error(&file, "schedule disagrees with the group manifest"));
        }
        students.push(net);
    }
    let group = StudentGroup::new(students, manifest.partition.clone(), manifest.metadata.clone())?;
    Ok((group, manifest))
}

/// A single network or a routed group, whichever `path` holds.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Net {
        net: DenoiserNet,
        header: CheckpointHeader,
    },
    Group {
        group: StudentGroup,
        manifest: GroupManifest,
    },
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let (group, manifest) = load_group(path)?;
            Ok(Self::Group { group, manifest })
        } else {
            let (net, header) = load_checkpoint(path)?;
            Ok(Self::Net { net, header })
        }
    }

    pub fn schedule(&self) -> (ScheduleKind, usize) {
        match self {
            Self::Net { header, .. } => (header.schedule, header.total_steps),
            Self::Group { manifest, .. } => (manifest.schedule, manifest.partition.total_steps),
        }
    }

    pub fn as_denoiser(&self) -> &dyn crate::diffusion::Denoiser {
        match self {
            Self::Net { net, .. } => net,
            Self::Group { group, .. } => group,
        }
    }
}

/// Sidecar path sharing `path`'s stem, e.g. `teacher.o2mk` -> `teacher.report.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
