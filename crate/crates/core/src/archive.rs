//! `NTA1` named-tensor archive.
//!
//! Layout: the 4 magic bytes `NTA1`, the manifest length as a little-endian
//! `u64`, the UTF-8 JSON manifest (an array of
//! `{name, dtype, shape, byte_offset}`), then the payload of little-endian
//! IEEE-754 `f32` values in row-major order. Offsets are relative to the
//! start of the payload.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{numel, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"NTA1";
const DTYPE: &str = "f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> u64 {
        4 * numel(&self.shape) as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensorArchive {
    manifest: Vec<ManifestEntry>,
    payload: Vec<u8>,
}

impl NamedTensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, shape: &[usize], values: &[T]) -> Result<()> {
        let name = name.into();
        if self.manifest.iter().any(|e| e.name == name) {
            return Err(Error::Manifest(format!("duplicate tensor name {name:?}")));
        }
        if numel(shape) != values.len() {
            return Err(Error::dim(format!("tensor {name:?}: shape {shape:?} does not hold {} values", values.len())));
        }
        let byte_offset = self.payload.len() as u64;
        self.payload.reserve(values.len() * 4);
        for v in values {
            let x = v.to_f32().unwrap_or(f32::NAN);
            self.payload.extend_from_slice(&x.to_le_bytes());
        }
        self.manifest.push(ManifestEntry { name, dtype: DTYPE.into(), shape: shape.to_vec(), byte_offset });
        Ok(())
    }

    /// Appends every tensor of `store` under `prefix`.
    pub fn push_store<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}{}", p.name), &p.shape, p.values())?;
        }
        Ok(())
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let mut a = Self::new();
        a.push_store("", store)?;
        Ok(a)
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.iter().map(|e| e.name.as_str())
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.manifest.iter().find(|e| e.name == name)
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// Number of scalars in the payload.
    pub fn scalar_count(&self) -> usize {
        self.payload.len() / 4
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.entry(name).ok_or_else(|| Error::Manifest(format!("archive has no tensor named {name:?}")))?;
        let start = e.byte_offset as usize;
        let bytes = &self.payload[start..start + e.byte_len() as usize];
        let data = bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        Tensor::new(e.shape.clone(), data)
    }

    /// Overwrites every tensor of `store` from entries named `prefix + name`.
    /// Missing and unexpected names are reported together; shape clashes
    /// name the offending tensor.
    pub fn load_into<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let expected: BTreeSet<String> = store.names().into_iter().map(|n| format!("{prefix}{n}")).collect();
        let present: BTreeSet<String> = self.names().filter(|n| n.starts_with(prefix)).map(String::from).collect();
        let missing: Vec<&String> = expected.difference(&present).collect();
        let extra: Vec<&String> = present.difference(&expected).collect();
        if !missing.is_empty() || !extra.is_empty() {
            let mut msg = Vec::new();
            if !missing.is_empty() {
                msg.push(format!("missing tensors: {}", join(&missing)));
            }
            if !extra.is_empty() {
                msg.push(format!("unexpected tensors: {}", join(&extra)));
            }
            return Err(Error::Manifest(msg.join("; ")));
        }
        let mut clashes = Vec::new();
        for (id, p) in store.iter() {
            let e = self.entry(&format!("{prefix}{}", p.name)).expect("checked above");
            if e.shape != p.shape {
                clashes.push((id, format!("{} expects {:?}, archive has {:?}", e.name, p.shape, e.shape)));
            }
        }
        if !clashes.is_empty() {
            let msg: Vec<String> = clashes.into_iter().map(|(_, m)| m).collect();
            return Err(Error::dim(format!("shape mismatch: {}", msg.join("; "))));
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", store.get(id).name);
            let t: Tensor<T> = self.tensor(&name)?;
            store.set_values(id, t.data())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(12 + manifest.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NTA1 magic bytes".into()));
        }
        let mlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if mlen > body.len() {
            return Err(Error::Format(format!("manifest length {mlen} exceeds remaining {} bytes", body.len())));
        }
        let text =
            std::str::from_utf8(&body[..mlen]).map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?;
        let manifest: Vec<ManifestEntry> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
        let archive = NamedTensorArchive { manifest, payload: body[mlen..].to_vec() };
        archive.validate()?;
        Ok(archive)
    }

    /// Checks unique names, supported dtype, non-overlapping offsets and that
    /// the payload length is exactly what the manifest describes.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.manifest {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate tensor name {:?}", e.name)));
            }
            if e.dtype != DTYPE {
                return Err(Error::Format(format!("tensor {:?} has unsupported dtype {:?}", e.name, e.dtype)));
            }
            if e.shape.is_empty() || e.shape.contains(&0) {
                return Err(Error::Format(format!("tensor {:?} has invalid shape {:?}", e.name, e.shape)));
            }
        }
        let mut spans: Vec<(u64, u64, &str)> =
            self.manifest.iter().map(|e| (e.byte_offset, e.byte_offset + e.byte_len(), e.name.as_str())).collect();
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!("tensors {:?} and {:?} overlap", w[0].2, w[1].2)));
            }
        }
        let expected = spans.iter().map(|s| s.1).max().unwrap_or(0);
        if expected != self.payload.len() as u64 {
            return Err(Error::Format(format!(
                "payload length mismatch: manifest describes {expected} bytes, found {}",
                self.payload.len()
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn join(names: &[&String]) -> String {
    names.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
}
