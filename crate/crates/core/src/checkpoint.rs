//! Binary model checkpoints.
//!
//! Layout, all little-endian: the 8-byte magic, a `u32` format version, a
//! `u32` dimension count followed by that many `u64` dimensions, one byte
//! each for activation, tied and attention ablation, the `u64` seed, then
//! every parameter as `f64` in [`GateModel::parameters`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{init_model, Activation, GateModel, ModelError};

pub const MAGIC: &[u8; 8] = b"GATECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Sigmoid => 1,
        Activation::Tanh => 2,
    }
}

fn activation_from_code(code: u8) -> Result<Activation, CheckpointError> {
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Sigmoid),
        2 => Ok(Activation::Tanh),
        c => Err(CheckpointError::Corrupt(format!("activation code {c}"))),
    }
}

fn flag(byte: u8) -> Result<bool, CheckpointError> {
    match byte {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(CheckpointError::Corrupt(format!("flag byte {b}"))),
    }
}

pub fn write_checkpoint<W: Write>(model: &GateModel, mut out: W) -> Result<(), CheckpointError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(model.dims().len() as u32).to_le_bytes())?;
    for &d in model.dims() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    out.write_all(&[
        activation_code(model.activation()),
        model.is_tied() as u8,
        model.attention_ablated() as u8,
    ])?;
    out.write_all(&model.seed().to_le_bytes())?;
    for p in model.parameters() {
        for v in p.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Corrupt("truncated".into()),
        _ => CheckpointError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<GateModel, CheckpointError> {
    if &read_array::<8, _>(&mut input)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32::from_le_bytes(read_array(&mut input)?) as usize;
    if count > 1024 {
        return Err(CheckpointError::Corrupt(format!("{count} dimensions")));
    }
    let dims = (0..count)
        .map(|_| {
            let d = u64::from_le_bytes(read_array(&mut input)?);
            usize::try_from(d).map_err(|_| CheckpointError::Corrupt(format!("dimension {d}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let [act, tied, ablate] = read_array::<3, _>(&mut input)?;
    let activation = activation_from_code(act)?;
    let tied = flag(tied)?;
    let ablate = flag(ablate)?;
    let seed = u64::from_le_bytes(read_array(&mut input)?);
    let mut model = init_model(&dims, seed, tied, activation)?.with_attention_ablated(ablate);
    for p in model.parameters_mut() {
        for v in p.iter_mut() {
            *v = f64::from_le_bytes(read_array(&mut input)?);
            if !v.is_finite() {
                return Err(CheckpointError::Corrupt("non-finite parameter".into()));
            }
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GateModel, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<GateModel, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
