//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `SLAPCKPT` |
//! | 2     | version (u16) |
//! | 4     | observation dim (u32) |
//! | 4     | action dim (u32) |
//! | 4     | signature length `n` (u32) |
//! | n     | signature JSON |
//! | 4     | parameter count `p` (u32) |
//! | 4p    | parameters as f32: policy layers, `log_std`, value layers; each layer weights (row-major) then biases |

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PolicyParams;
use crate::error::{Error, Result};
use crate::model::{AtomRecord, ObjectType};

pub const MAGIC: &[u8; 8] = b"SLAPCKPT";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub name: String,
    pub otype: ObjectType,
}

/// What a checkpoint was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSignature {
    /// Objects of the training task, so the atoms below can be resolved.
    pub objects: Vec<ObjectRef>,
    pub s_init: Vec<AtomRecord>,
    pub s_term: Vec<AtomRecord>,
    pub rel_objects: Vec<String>,
    /// Objects whose features form the observation, in order.
    pub observed: Vec<String>,
    pub hidden: usize,
    /// Goal-encoding vocabulary for shared policies; empty otherwise.
    #[serde(default)]
    pub vocabulary: Vec<AtomRecord>,
}

pub fn save_checkpoint<W: Write>(mut out: W, params: &PolicyParams, sig: &CheckpointSignature) -> Result<()> {
    let u32_of = |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::Format(format!("{what} too large")));
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&u32_of(params.obs_dim, "observation dim")?.to_le_bytes())?;
    out.write_all(&u32_of(params.act_dim, "action dim")?.to_le_bytes())?;
    let json = serde_json::to_vec(sig)?;
    out.write_all(&u32_of(json.len(), "signature")?.to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&u32_of(params.theta.len(), "parameter block")?.to_le_bytes())?;
    for &v in &params.theta {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<(PolicyParams, CheckpointSignature)> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::IncompatibleCheckpoint(format!("version {version}, expected {VERSION}")));
    }
    let obs_dim = read_u32(&mut r)?;
    let act_dim = read_u32(&mut r)?;
    let n = read_u32(&mut r)?;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json).map_err(|e| Error::Format(format!("truncated signature: {e}")))?;
    let sig: CheckpointSignature = serde_json::from_slice(&json)?;
    let count = read_u32(&mut r)?;
    let expected = PolicyParams::param_count(obs_dim, act_dim, sig.hidden);
    if count != expected {
        return Err(Error::IncompatibleCheckpoint(format!("{count} parameters, architecture needs {expected}")));
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        theta.push(f32::from_le_bytes(read_array(&mut r)?) as f64);
    }
    Ok((PolicyParams { obs_dim, act_dim, hidden: sig.hidden, theta }, sig))
}

/// Loads and rejects checkpoints whose dimensions or signature differ
/// from what the caller expects.
pub fn load_checkpoint_checked<R: Read>(r: R, obs_dim: usize, act_dim: usize, expected: &CheckpointSignature) -> Result<PolicyParams> {
    let (params, sig) = load_checkpoint(r)?;
    if params.obs_dim != obs_dim || params.act_dim != act_dim {
        return Err(Error::IncompatibleCheckpoint(format!(
            "dims {}x{}, expected {}x{}",
            params.obs_dim, params.act_dim, obs_dim, act_dim
        )));
    }
    if &sig != expected {
        return Err(Error::IncompatibleCheckpoint("signature differs".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig() -> CheckpointSignature {
        CheckpointSignature {
            objects: vec![ObjectRef { name: "robot".into(), otype: ObjectType::Robot }],
            s_init: vec![AtomRecord { predicate: "GripperEmpty".into(), args: vec!["robot".into()] }],
            s_term: vec![],
            rel_objects: vec!["robot".into()],
            observed: vec!["robot".into()],
            hidden: 4,
            vocabulary: vec![],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = PolicyParams::init(3, 3, 4, &[-0.5], &mut ChaCha8Rng::seed_from_u64(5));
        p.quantize_f32();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &p, &sig()).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let (q, s) = load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(s, sig());
        assert!(p.theta.iter().zip(&q.theta).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(load_checkpoint_checked(buf.as_slice(), 3, 3, &sig()).is_ok());
        assert!(matches!(load_checkpoint_checked(buf.as_slice(), 4, 3, &sig()), Err(Error::IncompatibleCheckpoint(_))));
        let mut other = sig();
        other.rel_objects.push("target".into());
        assert!(matches!(load_checkpoint_checked(buf.as_slice(), 3, 3, &other), Err(Error::IncompatibleCheckpoint(_))));
        // Altered observation dim in the header no longer matches the block.
        buf[10] = 9;
        assert!(matches!(load_checkpoint(buf.as_slice()), Err(Error::IncompatibleCheckpoint(_))));
    }
}
