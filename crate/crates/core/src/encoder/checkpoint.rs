//! Versioned binary key-to-array map used for model and trainer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"VTCK"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name utf-8, ndim u32, dims u32 x ndim, data f32 x prod(dims) }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::Network;
use crate::autodiff::BatchNormStats;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f32>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
        for (name, t) in &self.entries {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.ndim() as u32)?;
            for &d in t.shape() {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in t.data() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> std::result::Result<Self, String> {
        let io = |e: std::io::Error| e.to_string();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let count = r.read_u32::<LittleEndian>().map_err(io)?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            if len > 4096 {
                return Err(format!("entry name length {len} too large"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|e| e.to_string())?;
            let ndim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            if ndim > 8 {
                return Err(format!("{name}: {ndim} dimensions"));
            }
            let shape = (0..ndim)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
            let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
            ck.insert(name, t);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f)).map_err(|m| Error::format(path, m))
    }
}

fn stats_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.running_mean"), format!("{prefix}.running_var"))
}

impl<T: Real> Network<T> {
    /// Parameters, running batchnorm statistics and GeM exponents.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for p in self.params() {
            ck.insert(p.name.clone(), p.value.cast());
        }
        for s in self.stats() {
            let (m, v) = stats_names(&s.name);
            let c = s.stats.mean.len();
            let cast = |xs: &[T]| Tensor::new(vec![c], xs.iter().map(|x| x.as_f64() as f32).collect());
            ck.insert(m, cast(&s.stats.mean).expect("stats shape"));
            ck.insert(v, cast(&s.stats.var).expect("stats shape"));
        }
        ck
    }

    /// Overwrites parameters and statistics from `ck`. Every expected key
    /// must be present with a matching shape.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::config(format!(
                    "`{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        for s in self.stats_mut() {
            let (m, v) = stats_names(&s.name);
            let load = |key: &str, dst: &mut Vec<T>| -> Result<()> {
                let t = ck
                    .get(key)
                    .ok_or_else(|| Error::config(format!("checkpoint lacks `{key}`")))?;
                if t.len() != dst.len() {
                    return Err(Error::config(format!("`{key}` has the wrong width")));
                }
                *dst = t.data().iter().map(|&x| T::of(x as f64)).collect();
                Ok(())
            };
            load(&m, &mut s.stats.mean)?;
            load(&v, &mut s.stats.var)?;
        }
        Ok(())
    }
}

impl<T: Real> BatchNormStats<T> {
    pub fn width(&self) -> usize {
        self.mean.len()
    }
}
