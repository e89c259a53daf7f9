//! Versioned simulation checkpoints.
//!
//! Layout: magic `TFCK`, format version (u32 LE), header length (u64 LE), a
//! JSON header, the spectra as little-endian `f64` pairs in component order
//! `n⁺, n⁻, u⁺, u⁻[, v⁺, v⁻]`, and a SHA-256 of everything before it.
//! Spectra are stored rather than samples so that a reload is bit-identical.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use twofluid_core::dynamics::SimulationState;
use twofluid_core::field::GridField;
use twofluid_core::grid::Grid;
use twofluid_core::spectral::TwoFluidFields;

pub const MAGIC: &[u8; 4] = b"TFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint grid (d={d}, N={n}, Λ={lambda}) does not match the configured grid")]
    GridMismatch { d: usize, n: usize, lambda: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    t_bits: u64,
    step: u64,
    kappa_bits: u64,
    dim: usize,
    points: usize,
    lambda_bits: u64,
    real: bool,
    has_reference: bool,
    config_hash: String,
    seed: u64,
}

/// Extra identification stored alongside a state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
}

fn all_spectra(state: &SimulationState) -> Vec<&[Complex64]> {
    let mut out = state.fields.spectra();
    if let Some((vp, vm)) = &state.reference {
        for f in [vp, vm] {
            out.extend(f.spectra().iter().map(|s| s.as_slice()));
        }
    }
    out
}

pub fn encode(state: &SimulationState, meta: &CheckpointMeta) -> Vec<u8> {
    let grid = state.grid();
    let header = Header {
        t_bits: state.t.to_bits(),
        step: state.step,
        kappa_bits: state.kappa.to_bits(),
        dim: grid.dim(),
        points: grid.points(),
        lambda_bits: grid.lambda().to_bits(),
        real: state.fields.is_real(),
        has_reference: state.reference.is_some(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for s in all_spectra(state) {
        for z in s {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// Decodes a checkpoint; with `expect` the grid must match it.
pub fn decode(bytes: &[u8], expect: Option<&Arc<Grid>>) -> Result<(SimulationState, CheckpointMeta)> {
    let corrupt = |m: &str| CheckpointError::CorruptCheckpoint(m.into());
    if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing magic or truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let json = body.get(16..16 + hlen).ok_or_else(|| corrupt("header length"))?;
    let h: Header = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
    let lambda = f64::from_bits(h.lambda_bits);
    if let Some(g) = expect {
        if g.dim() != h.dim || g.points() != h.points || g.lambda() != lambda {
            return Err(CheckpointError::GridMismatch { d: h.dim, n: h.points, lambda });
        }
    }
    let grid = match expect {
        Some(g) => g.clone(),
        None => Grid::new(h.dim, h.points, lambda).map_err(|e| corrupt(&e.to_string()))?,
    };
    let d = h.dim;
    let ncomp = 2 + 2 * d + if h.has_reference { 2 * d } else { 0 };
    let data = &body[16 + hlen..];
    if data.len() != ncomp * grid.len() * 16 {
        return Err(corrupt("payload length"));
    }
    let mut comps: Vec<Vec<Complex64>> = data
        .chunks_exact(grid.len() * 16)
        .map(|c| {
            c.chunks_exact(16)
                .map(|z| {
                    Complex64::new(
                        f64::from_le_bytes(z[..8].try_into().expect("8 bytes")),
                        f64::from_le_bytes(z[8..].try_into().expect("8 bytes")),
                    )
                })
                .collect()
        })
        .collect();
    let reference = if h.has_reference {
        let vm = comps.split_off(comps.len() - d);
        let vp = comps.split_off(comps.len() - d);
        Some((GridField::from_spectra(&grid, vp, h.real), GridField::from_spectra(&grid, vm, h.real)))
    } else {
        None
    };
    let state = SimulationState {
        t: f64::from_bits(h.t_bits),
        step: h.step,
        kappa: f64::from_bits(h.kappa_bits),
        fields: TwoFluidFields::from_spectra(&grid, comps, h.real),
        reference,
    };
    Ok((state, CheckpointMeta { config_hash: h.config_hash, seed: h.seed }))
}

pub fn checkpoint_save(state: &SimulationState, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    // Write then rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state, meta))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path, expect: Option<&Arc<Grid>>) -> Result<(SimulationState, CheckpointMeta)> {
    decode(&std::fs::read(path)?, expect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use twofluid_core::besov::random_besov_field;

    fn state(grid: &Arc<Grid>, reference: bool) -> SimulationState {
        let fields = TwoFluidFields {
            n_plus: random_besov_field(grid, 1, 0.0, 1).unwrap(),
            n_minus: random_besov_field(grid, 2, 0.0, 1).unwrap(),
            u_plus: random_besov_field(grid, 3, 0.0, 2).unwrap(),
            u_minus: random_besov_field(grid, 4, 0.0, 2).unwrap(),
        };
        let mut s = SimulationState::new(9.0, fields, reference);
        s.t = 0.1 + 0.2;
        s.step = 7;
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let grid = Grid::new(2, 16, 1.0).unwrap();
        for reference in [false, true] {
            let s = state(&grid, reference);
            let meta = CheckpointMeta { config_hash: "abc".into(), seed: 5 };
            let (back, m) = decode(&encode(&s, &meta), Some(&grid)).unwrap();
            assert_eq!(m, meta);
            assert_eq!(back.t.to_bits(), s.t.to_bits());
            assert_eq!(back, s);
        }
    }

    #[test]
    fn damage_is_detected() {
        let grid = Grid::new(2, 16, 1.0).unwrap();
        let bytes = encode(&state(&grid, true), &CheckpointMeta::default());
        assert!(matches!(decode(&bytes[..bytes.len() - 10], None), Err(CheckpointError::CorruptCheckpoint(_))));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode(&flipped, None), Err(CheckpointError::CorruptCheckpoint(_))));
        let mut old = bytes.clone();
        old[4] = 9;
        assert!(matches!(decode(&old, None), Err(CheckpointError::VersionMismatch { found: 9, .. })));
        let other = Grid::new(2, 32, 1.0).unwrap();
        assert!(matches!(decode(&bytes, Some(&other)), Err(CheckpointError::GridMismatch { .. })));
    }
}
