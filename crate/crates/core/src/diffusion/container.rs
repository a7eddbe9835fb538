//! Flat binary model container.
//!
//! ```text
//! magic    8 bytes  "GAZEDIFF"
//! version  u32
//! count    u32
//! count × tensor:
//!   name_len u32, name (UTF-8), ndim u32, dims u64 × ndim, data f64 × Π dims
//! ```
//!
//! All integers and floats are little-endian. Besides the denoiser tensors the
//! container holds `schedule.beta` [T], `model.velocity_scale` [1] and
//! `model.variance` [1] (0 = posterior β̃, 1 = β).

use std::io::{Read, Write};

use super::denoiser::ReferenceDenoiser;
use super::process::VarianceMode;
use super::train::DiffusionModel;
use super::NoiseSchedule;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"GAZEDIFF";
pub const CONTAINER_VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 256;
const MAX_NDIM: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 28;

type Tensor = (String, Vec<usize>, Vec<f64>);

fn io_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Container("truncated container".into())
    } else {
        Error::io("model container", e)
    }
}

fn put_tensor(out: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + name.len() + 8 * (shape.len() + data.len()));
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)
}

pub fn write_model(mut out: impl Write, model: &DiffusionModel) -> Result<()> {
    let n = ReferenceDenoiser::specs().len() + 3;
    let mut head = Vec::with_capacity(16);
    head.extend_from_slice(CONTAINER_MAGIC);
    head.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    head.extend_from_slice(&(n as u32).to_le_bytes());
    out.write_all(&head).map_err(io_err)?;
    for (spec, data) in model.denoiser.tensors() {
        put_tensor(&mut out, spec.name, spec.shape, data)?;
    }
    let betas = model.schedule.betas();
    put_tensor(&mut out, "schedule.beta", &[betas.len()], betas)?;
    put_tensor(&mut out, "model.velocity_scale", &[1], &[model.velocity_scale])?;
    let variance = match model.variance {
        VarianceMode::PosteriorTilde => 0.0,
        VarianceMode::Beta => 1.0,
    };
    put_tensor(&mut out, "model.variance", &[1], &[variance])?;
    out.flush().map_err(io_err)
}

fn u32_le(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_le(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let name_len = u32_le(r)?;
    if name_len > MAX_NAME_LEN {
        return Err(Error::Container(format!("tensor name length {name_len} is too large")));
    }
    let mut name = vec![0u8; name_len as usize];
    r.read_exact(&mut name).map_err(io_err)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?;
    let ndim = u32_le(r)?;
    if ndim > MAX_NDIM {
        return Err(Error::Container(format!("tensor {name} has {ndim} dimensions")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    let mut count: u64 = 1;
    for _ in 0..ndim {
        let d = u64_le(r)?;
        count = count
            .checked_mul(d)
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Container(format!("tensor {name} is too large")))?;
        shape.push(d as usize);
    }
    let mut bytes = vec![0u8; count as usize * 8];
    r.read_exact(&mut bytes).map_err(io_err)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((name, shape, data))
}

fn scalar(tensors: &[Tensor], name: &str) -> Result<f64> {
    match tensors.iter().find(|(n, _, _)| n == name) {
        Some((_, shape, data)) if shape.as_slice() == [1] => Ok(data[0]),
        Some(_) => Err(Error::Container(format!("tensor {name} must have shape [1]"))),
        None => Err(Error::Container(format!("missing tensor {name}"))),
    }
}

pub fn read_model(mut input: impl Read) -> Result<DiffusionModel> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Container("bad magic bytes".into()));
    }
    let version = u32_le(&mut input)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {version} (expected {CONTAINER_VERSION})"
        )));
    }
    let count = u32_le(&mut input)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        tensors.push(read_tensor(&mut input)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io_err)? != 0 {
        return Err(Error::Container("trailing bytes after last tensor".into()));
    }

    let denoiser = ReferenceDenoiser::from_tensors(&tensors)?;
    let betas = tensors
        .iter()
        .find(|(n, _, _)| n == "schedule.beta")
        .ok_or_else(|| Error::Container("missing tensor schedule.beta".into()))?;
    let schedule = NoiseSchedule::from_betas(betas.2.clone())
        .map_err(|e| Error::Container(format!("schedule.beta: {e}")))?;
    let velocity_scale = scalar(&tensors, "model.velocity_scale")?;
    if !(velocity_scale > 0.0 && velocity_scale.is_finite()) {
        return Err(Error::Container(format!("invalid velocity scale {velocity_scale}")));
    }
    let variance = match scalar(&tensors, "model.variance")? {
        0.0 => VarianceMode::PosteriorTilde,
        1.0 => VarianceMode::Beta,
        v => return Err(Error::Container(format!("unknown variance code {v}"))),
    };
    Ok(DiffusionModel {
        denoiser,
        schedule,
        velocity_scale,
        variance,
    })
}
