//! Named-tensor binary format: `P2W1`, then records of
//! `[name_len u32, name, rank u32, dims u32.., f32 payload]`, little endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"P2W1";

/// Record holding the 32-byte hash of the config that produced a file, one
/// byte per element.
pub const HASH_RECORD: &str = "meta/config_hash";

const MAX_RANK: u32 = 8;

pub fn write_records<W: Write>(mut w: W, records: &[(String, Tensor<f32>)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "file ends inside {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
    }
}

pub fn read_records(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let got = &bytes[..bytes.len().min(4)];
        return Err(Error::UnsupportedFormat(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(got)
        )));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let n = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(n, "record name")?)
            .map_err(|_| Error::CorruptCheckpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::CorruptCheckpoint(format!("record {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(c.u32("dimensions")? as usize);
        }
        if shape.contains(&0) {
            return Err(Error::CorruptCheckpoint(format!("record {name:?} has a zero dimension")));
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("record {name:?} is too large")))?;
        let payload = c.take(count, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)));
    }
    Ok(out)
}

fn hash_tensor(hash: &[u8; 32]) -> Tensor<f32> {
    Tensor::new(vec![32], hash.iter().map(|&b| b as f32).collect())
}

fn hash_of(t: &Tensor<f32>) -> Option<[u8; 32]> {
    if t.shape() != [32] {
        return None;
    }
    let mut h = [0u8; 32];
    for (o, &x) in h.iter_mut().zip(t.data()) {
        if !(0.0..=255.0).contains(&x) || x.fract() != 0.0 {
            return None;
        }
        *o = x as u8;
    }
    Some(h)
}

/// A checkpoint file: tensors by name plus the producing config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: Option<[u8; 32]>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet<f32>, config_hash: Option<[u8; 32]>) -> Self {
        Self {
            config_hash,
            tensors: params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::with_capacity(self.tensors.len() + 1);
        if let Some(h) = &self.config_hash {
            records.push((HASH_RECORD.to_string(), hash_tensor(h)));
        }
        records.extend(self.tensors.iter().cloned());
        let mut buf = Vec::new();
        write_records(&mut buf, &records).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut config_hash = None;
        let mut tensors = Vec::new();
        for (name, t) in read_records(bytes)? {
            if name == HASH_RECORD {
                config_hash = Some(hash_of(&t).ok_or_else(|| {
                    Error::CorruptCheckpoint("malformed config hash record".into())
                })?);
            } else {
                tensors.push((name, t));
            }
        }
        Ok(Self {
            config_hash,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("p2w.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => Error::StaleArtifact {
                    path: path.to_path_buf(),
                    reason: "file is missing; run the stage that produces it".into(),
                },
                _ => e.into(),
            })?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the embedded config hash.
    pub fn load_verified(path: &Path, expected: &[u8; 32]) -> Result<Self> {
        let ck = Self::load(path)?;
        match ck.config_hash {
            Some(h) if &h == expected => Ok(ck),
            Some(h) => Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                reason: format!(
                    "built with config {} but the current config is {}",
                    hex(&h),
                    hex(expected)
                ),
            }),
            None => Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                reason: "no config hash recorded".into(),
            }),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn into_params(self) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        for (n, t) in self.tensors {
            p.insert(n, t);
        }
        p
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
