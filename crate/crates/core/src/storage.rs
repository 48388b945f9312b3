//! Columnar binary persistence for ensemble checkpoint data plus a JSON
//! sidecar with the generating configuration.
//!
//! Layout (all little-endian):
//!   magic "FPLENS01" | version u32 | n_modes u32 | n_checkpoints u32 |
//!   n_paths u64 | checkpoint times (f64 × n_checkpoints) |
//!   path ids (u64 × n_paths) |
//!   body: path-major f64 blocks, one state per (path, checkpoint).
//!
//! The writer is bit-stable: identical ensembles produce identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Ensemble, ExplodedPath, PathRecord, SimConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FPLENS01";
const VERSION: u32 = 1;

/// JSON sidecar written next to the binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSidecar {
    pub schema_version: u32,
    pub n_modes: usize,
    pub initial_law: String,
    pub config: SimConfig,
    pub exploded: Vec<(u64, f64)>,
}

pub fn write_ensemble(bin_path: &Path, sidecar_path: &Path, ens: &Ensemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(bin_path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ens.n_modes as u32).to_le_bytes())?;
    w.write_all(&(ens.config.checkpoints.len() as u32).to_le_bytes())?;
    w.write_all(&(ens.members.len() as u64).to_le_bytes())?;
    for &t in &ens.config.checkpoints {
        w.write_all(&t.to_le_bytes())?;
    }
    for p in &ens.members {
        w.write_all(&p.path_id.to_le_bytes())?;
    }
    for p in &ens.members {
        for state in &p.states {
            for &v in state {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;

    let sidecar = EnsembleSidecar {
        schema_version: VERSION,
        n_modes: ens.n_modes,
        initial_law: ens.initial_law.clone(),
        config: ens.config.clone(),
        exploded: ens.exploded.iter().map(|e| (e.path_id, e.time)).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut sw = BufWriter::new(File::create(sidecar_path)?);
    sw.write_all(json.as_bytes())?;
    sw.write_all(b"\n")?;
    sw.flush()?;
    Ok(())
}

fn read_exact_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_exact_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_ensemble(bin_path: &Path, sidecar_path: &Path) -> Result<Ensemble> {
    let sidecar: EnsembleSidecar = serde_json::from_reader(BufReader::new(File::open(
        sidecar_path,
    )?))
    .map_err(|e| Error::Format(format!("sidecar: {e}")))?;

    let mut r = BufReader::new(File::open(bin_path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_exact_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_modes = read_exact_u32(&mut r)? as usize;
    let n_cp = read_exact_u32(&mut r)? as usize;
    let n_paths = read_exact_u64(&mut r)? as usize;
    if n_modes != sidecar.n_modes || n_cp != sidecar.config.checkpoints.len() {
        return Err(Error::Format("sidecar/binary dimension mismatch".into()));
    }
    let mut checkpoints = Vec::with_capacity(n_cp);
    for _ in 0..n_cp {
        checkpoints.push(read_exact_f64(&mut r)?);
    }
    for (a, b) in checkpoints.iter().zip(&sidecar.config.checkpoints) {
        if a.to_bits() != b.to_bits() {
            return Err(Error::Format("checkpoint times disagree with sidecar".into()));
        }
    }
    let mut path_ids = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        path_ids.push(read_exact_u64(&mut r)?);
    }
    let mut members = Vec::with_capacity(n_paths);
    for &path_id in &path_ids {
        let mut states = Vec::with_capacity(n_cp);
        for _ in 0..n_cp {
            let mut state = Vec::with_capacity(n_modes);
            for _ in 0..n_modes {
                state.push(read_exact_f64(&mut r)?);
            }
            states.push(state);
        }
        members.push(PathRecord {
            path_id,
            states,
            convolution_states: None,
            exploded: None,
        });
    }
    Ok(Ensemble {
        config: sidecar.config,
        n_modes,
        initial_law: sidecar.initial_law,
        members,
        exploded: sidecar
            .exploded
            .into_iter()
            .map(|(path_id, time)| ExplodedPath { path_id, time })
            .collect(),
    })
}
