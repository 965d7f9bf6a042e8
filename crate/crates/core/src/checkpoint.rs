//! Portable checkpoint files: named parameter tensors in a fixed
//! little-endian layout.
//!
//! Layout: 8 magic bytes, format version (u32), array count (u32), then per
//! array: name length (u32), UTF-8 name, rank (u32), dims (u32 each), and the
//! row-major f32 payload. Everything little-endian, so a file written on one
//! platform loads bit-identically on another.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, ParamTensor};

const MAGIC: &[u8; 8] = b"MUSICNET";
const FORMAT_VERSION: u32 = 1;

/// An ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, ParamTensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ParamTensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| n == &name) {
            return Err(Error::Usage(format!("duplicate checkpoint entry '{name}'")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Store a network's tensors under `prefix/w0, prefix/b0, ...`.
    pub fn insert_mlp(&mut self, prefix: &str, net: &Mlp) -> Result<()> {
        for (i, tensor) in net.to_tensors().into_iter().enumerate() {
            let kind = if i % 2 == 0 { "w" } else { "b" };
            self.insert(format!("{prefix}/{kind}{}", i / 2), tensor)?;
        }
        Ok(())
    }

    /// Rebuild a network stored with [`Checkpoint::insert_mlp`].
    pub fn read_mlp(&self, prefix: &str, spec: MlpSpec) -> Result<Mlp> {
        let mut tensors = Vec::with_capacity(2 * spec.num_layers());
        for l in 0..spec.num_layers() {
            for kind in ["w", "b"] {
                let name = format!("{prefix}/{kind}{l}");
                let t = self.get(&name).ok_or_else(|| {
                    Error::Compatibility(format!("checkpoint is missing tensor '{name}'"))
                })?;
                tensors.push(t.clone());
            }
        }
        Mlp::from_tensors(spec, &tensors).map_err(|e| match e {
            Error::Dimension(msg) => Error::Compatibility(msg),
            other => other,
        })
    }

    /// Layer sizes implied by the stored `prefix/w*` tensor shapes.
    pub fn mlp_layer_sizes(&self, prefix: &str) -> Result<Vec<usize>> {
        let mut sizes = Vec::new();
        let mut l = 0;
        while let Some(t) = self.get(&format!("{prefix}/w{l}")) {
            if t.shape.len() != 2 {
                return Err(Error::Compatibility(format!(
                    "tensor '{prefix}/w{l}' is not a weight matrix"
                )));
            }
            if l == 0 {
                sizes.push(t.shape[0]);
            } else if sizes[l] != t.shape[0] {
                return Err(Error::Compatibility(format!(
                    "inconsistent layer widths at '{prefix}/w{l}'"
                )));
            }
            sizes.push(t.shape[1]);
            l += 1;
        }
        if sizes.len() < 2 {
            return Err(Error::Compatibility(format!(
                "checkpoint holds no network under prefix '{prefix}'"
            )));
        }
        Ok(sizes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&(tensor.shape.len() as u32).to_le_bytes())?;
            for &dim in &tensor.shape {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            for &v in &tensor.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Integrity("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = read_u32(&mut r)? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::Integrity("implausible name length".into()));
            }
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Integrity("entry name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Integrity("implausible tensor rank".into()));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut values = Vec::with_capacity(len);
            let mut buf = [0u8; 4];
            for _ in 0..len {
                read_exact(&mut r, &mut buf)?;
                values.push(f32::from_le_bytes(buf));
            }
            ckpt.insert(name, ParamTensor::new(shape, values)?)?;
        }
        let mut trailing = [0u8; 1];
        match r.read(&mut trailing)? {
            0 => Ok(ckpt),
            _ => Err(Error::Integrity("trailing bytes after last tensor".into())),
        }
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Integrity("file truncated".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// FNV-1a content hash of a file, hex-encoded. Used for run-manifest lineage.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path.as_ref())?;
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{hash:016x}"))
}
