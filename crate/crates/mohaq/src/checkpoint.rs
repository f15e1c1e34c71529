//! Model checkpoint container.
//!
//! Layout, all integers and floats little endian:
//!
//! ```text
//! 8  bytes  magic "MOHAQNET"
//! u32       format version (currently 1)
//! u32 x 5   input_dim, hidden, directions, classes, sru_layers
//! u32       layer count
//! per layer u32 x 4: kind (0 SRU, 1 projection, 2 FC), in_dim, out_dim, directions
//! f32 array parameters, layer order (see SruNetwork::flatten)
//! ```
//!
//! Load and save round-trip bit-exactly.

use crate::sru::{layer_specs, LayerKind, NetDims, SruNetwork};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"MOHAQNET";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn kind_code(kind: LayerKind) -> u32 {
    match kind {
        LayerKind::BiSru => 0,
        LayerKind::Projection => 1,
        LayerKind::Fc => 2,
    }
}

pub fn save(net: &SruNetwork, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let dims = &net.dims;
    for v in [
        VERSION,
        dims.input_dim as u32,
        dims.hidden as u32,
        dims.directions as u32,
        dims.classes as u32,
        dims.sru_layers as u32,
        net.specs.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for spec in &net.specs {
        for v in [
            kind_code(spec.kind),
            spec.in_dim as u32,
            spec.out_dim as u32,
            spec.directions as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for value in net.flatten() {
        w.write_all(&value.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<SruNetwork, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dims = NetDims {
        input_dim: read_u32(&mut r)? as usize,
        hidden: read_u32(&mut r)? as usize,
        directions: read_u32(&mut r)? as usize,
        classes: read_u32(&mut r)? as usize,
        sru_layers: read_u32(&mut r)? as usize,
    };
    if dims.sru_layers == 0 || !(1..=2).contains(&dims.directions) {
        return Err(CheckpointError::Corrupt(format!("invalid dims {dims:?}")));
    }
    let layer_count = read_u32(&mut r)? as usize;
    let expected = layer_specs(&dims);
    if layer_count != expected.len() {
        return Err(CheckpointError::Corrupt(format!(
            "layer table length {layer_count} does not match dims ({} expected)",
            expected.len()
        )));
    }
    for (l, spec) in expected.iter().enumerate() {
        let row = [
            read_u32(&mut r)?,
            read_u32(&mut r)?,
            read_u32(&mut r)?,
            read_u32(&mut r)?,
        ];
        let want = [
            kind_code(spec.kind),
            spec.in_dim as u32,
            spec.out_dim as u32,
            spec.directions as u32,
        ];
        if row != want {
            return Err(CheckpointError::Corrupt(format!(
                "layer {l} table entry {row:?} does not match dims {want:?}"
            )));
        }
    }
    let mut net = SruNetwork::zeros(dims);
    let count = net.param_count();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let flat: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    net.load_flat(&flat)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(net)
}
