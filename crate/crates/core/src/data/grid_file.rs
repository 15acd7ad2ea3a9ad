//! Numeric-grid image files.
//!
//! Little-endian: magic `u32` (the bytes `GRID`), version `u32`, then
//! `H`, `W`, `C` as `u32`, followed by `H*W*C` `f32` values in row-major
//! (row, col, channel) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_MAGIC: u32 = u32::from_le_bytes(*b"GRID");
pub const GRID_VERSION: u32 = 1;
pub const GRID_EXTENSION: &str = "grid";

pub fn write_grid(w: &mut impl Write, image: &Tensor<f32>) -> std::io::Result<()> {
    let s = image.shape();
    w.write_u32::<LittleEndian>(GRID_MAGIC)?;
    w.write_u32::<LittleEndian>(GRID_VERSION)?;
    for &d in s {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in image.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_grid(r: &mut impl Read) -> std::result::Result<Tensor<f32>, String> {
    let io = |e: std::io::Error| e.to_string();
    let magic = r.read_u32::<LittleEndian>().map_err(io)?;
    if magic != GRID_MAGIC {
        return Err(format!("bad magic {magic:#010x}"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != GRID_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    }
    if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
        return Err(format!("implausible extents {dims:?}"));
    }
    let mut data = vec![0f32; dims.iter().product()];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err("trailing bytes after grid data".into());
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err("non-finite value".into());
    }
    Tensor::new(dims.to_vec(), data).map_err(|e| e.to_string())
}

pub fn save_grid(path: &Path, image: &Tensor<f32>) -> Result<()> {
    if image.ndim() != 3 {
        return Err(Error::invalid(format!("grid images are 3-D, got {:?}", image.shape())));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_grid(&mut w, image).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<Tensor<f32>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(&mut BufReader::new(f)).map_err(|m| Error::format(path, m))
}
