//! DRFT binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic "DRFT" | version u32 | config hash (32 bytes) | meta_len u64 |
//! meta JSON | n_arrays u64 | manifest entries | payload_len u64 | payload.
//! Manifest entry: name_len u16, name bytes, dtype u8 (0 = f32, 1 = f64),
//! ndim u8, dims u64 each, payload offset u64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{ActionNormalizer, NetConfig, NetState};
use crate::harness::{Dataset, SessionConfig, SessionState, Step, Trajectory};
use crate::numerics::Array;
use crate::DriftError;
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRFT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(DriftError::Checkpoint(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedArray {
    pub name: String,
    pub dtype: Dtype,
    pub array: Array,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajMeta {
    pub len: usize,
    pub success: bool,
}

/// Everything non-array a resume needs, stored as JSON inside the file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run_id: String,
    pub session: SessionConfig,
    /// Net architecture including the mode at save time (may differ from the
    /// strategy's initial mode after a phase transition).
    pub net: NetConfig,
    pub block_ranks: Vec<usize>,
    pub normalizer: ActionNormalizer,
    pub offline_done: u32,
    pub online_done: u32,
    pub nel: u64,
    pub gate_threshold: f64,
    /// Adam step counters per parameter, aligned with the opt.* arrays.
    pub opt_t: Vec<(String, u64)>,
    pub traj: Vec<TrajMeta>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub meta: CheckpointMeta,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.array)
            .ok_or_else(|| DriftError::Checkpoint(format!("missing array {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        let mut offset = 0u64;
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.dtype.code());
            out.push(a.array.shape().len() as u8);
            for &d in a.array.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (a.array.numel() * a.dtype.size()) as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for a in &self.arrays {
            match a.dtype {
                Dtype::F64 => {
                    for &v in a.array.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Dtype::F32 => {
                    for &v in a.array.data() {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(DriftError::Checkpoint("bad magic, not a DRFT file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DriftError::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let meta_len = r.u64()? as usize;
        let meta_bytes = r.take(meta_len)?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| DriftError::Checkpoint(format!("bad meta JSON: {e}")))?;
        let n_arrays = r.u64()? as usize;
        let mut manifest = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| DriftError::Checkpoint("non-utf8 array name".into()))?;
            let dtype = Dtype::from_code(r.u8()?)?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            manifest.push((name, dtype, shape, offset));
        }
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?;
        if r.pos != bytes.len() {
            return Err(DriftError::Checkpoint("trailing bytes after payload".into()));
        }
        // Offsets must tile the payload without overlap, in manifest order.
        let mut expect = 0usize;
        let mut arrays = Vec::with_capacity(n_arrays);
        for (name, dtype, shape, offset) in manifest {
            if offset != expect {
                return Err(DriftError::Checkpoint(format!(
                    "array {name:?}: offset {offset} overlaps or leaves a gap (expected {expect})"
                )));
            }
            let numel: usize = shape.iter().product();
            let size = numel * dtype.size();
            if offset + size > payload_len {
                return Err(DriftError::Checkpoint(format!(
                    "array {name:?}: extends past payload end"
                )));
            }
            let raw = &payload[offset..offset + size];
            let data: Vec<f64> = match dtype {
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            arrays.push(NamedArray {
                name,
                dtype,
                array: Array::new(shape, data)?,
            });
            expect = offset + size;
        }
        if expect != payload_len {
            return Err(DriftError::Checkpoint("payload larger than manifest".into()));
        }
        Ok(Checkpoint {
            version,
            config_hash,
            meta,
            arrays,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DriftError::Checkpoint(format!(
                "truncated file: need {} bytes at offset {}",
                n, self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| DriftError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

/// Snapshot a training session into a checkpoint.
pub fn checkpoint_from_session(
    run_id: &str,
    config_hash: [u8; 32],
    session_cfg: &SessionConfig,
    net_cfg: &NetConfig,
    state: &SessionState,
) -> Checkpoint {
    let mut arrays = Vec::new();
    for (name, arr) in &state.net_state.params {
        arrays.push(NamedArray {
            name: format!("param.{name}"),
            dtype: Dtype::F64,
            array: arr.clone(),
        });
    }
    let mut opt_t = Vec::new();
    for (name, m, v, t) in &state.opt_state {
        arrays.push(NamedArray {
            name: format!("opt.m.{name}"),
            dtype: Dtype::F64,
            array: m.clone(),
        });
        arrays.push(NamedArray {
            name: format!("opt.v.{name}"),
            dtype: Dtype::F64,
            array: v.clone(),
        });
        opt_t.push((name.clone(), *t));
    }
    let mut traj_meta = Vec::new();
    for (i, traj) in state.dataset.trajectories.iter().enumerate() {
        let l = traj.steps.len();
        let obs_dim = traj.steps.first().map_or(0, |s| s.obs.len());
        let act_dim = traj.steps.first().map_or(0, |s| s.action.len());
        let mut obs = Vec::with_capacity(l * obs_dim);
        let mut act = Vec::with_capacity(l * act_dim);
        let mut lbl = Vec::with_capacity(l);
        for s in &traj.steps {
            obs.extend_from_slice(&s.obs);
            act.extend_from_slice(&s.action);
            lbl.push(if s.expert_label { 1.0 } else { 0.0 });
        }
        arrays.push(NamedArray {
            name: format!("data.{i}.obs"),
            dtype: Dtype::F64,
            array: Array::new(vec![l, obs_dim], obs).unwrap(),
        });
        arrays.push(NamedArray {
            name: format!("data.{i}.act"),
            dtype: Dtype::F64,
            array: Array::new(vec![l, act_dim], act).unwrap(),
        });
        arrays.push(NamedArray {
            name: format!("data.{i}.lbl"),
            dtype: Dtype::F64,
            array: Array::new(vec![l], lbl).unwrap(),
        });
        traj_meta.push(TrajMeta {
            len: l,
            success: traj.success,
        });
    }
    let mut net = net_cfg.clone();
    net.mode = state.net_state.mode;
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash,
        meta: CheckpointMeta {
            run_id: run_id.to_string(),
            session: session_cfg.clone(),
            net,
            block_ranks: state.net_state.block_ranks.clone(),
            normalizer: state.net_state.normalizer.clone(),
            offline_done: state.offline_done,
            online_done: state.online_done,
            nel: state.nel,
            gate_threshold: state.gate_threshold,
            opt_t,
            traj: traj_meta,
        },
        arrays,
    }
}

/// Rebuild the session state a checkpoint was taken from.
pub fn session_from_checkpoint(ck: &Checkpoint) -> Result<SessionState> {
    let mut params = Vec::new();
    for a in &ck.arrays {
        if let Some(name) = a.name.strip_prefix("param.") {
            params.push((name.to_string(), a.array.clone()));
        }
    }
    let net_state = NetState {
        mode: ck.meta.net.mode,
        block_ranks: ck.meta.block_ranks.clone(),
        params,
        normalizer: ck.meta.normalizer.clone(),
    };
    let mut opt_state = Vec::new();
    for (name, t) in &ck.meta.opt_t {
        let m = ck.array(&format!("opt.m.{name}"))?.clone();
        let v = ck.array(&format!("opt.v.{name}"))?.clone();
        opt_state.push((name.clone(), m, v, *t));
    }
    let mut dataset = Dataset::new();
    for (i, tm) in ck.meta.traj.iter().enumerate() {
        let obs = ck.array(&format!("data.{i}.obs"))?;
        let act = ck.array(&format!("data.{i}.act"))?;
        let lbl = ck.array(&format!("data.{i}.lbl"))?;
        let obs_dim = obs.shape()[1];
        let act_dim = act.shape()[1];
        if obs.shape()[0] != tm.len || act.shape()[0] != tm.len || lbl.shape()[0] != tm.len {
            return Err(DriftError::Checkpoint(format!(
                "trajectory {i}: array lengths disagree with meta"
            )));
        }
        let steps = (0..tm.len)
            .map(|t| Step {
                obs: obs.data()[t * obs_dim..(t + 1) * obs_dim].to_vec(),
                action: act.data()[t * act_dim..(t + 1) * act_dim].to_vec(),
                expert_label: lbl.data()[t] != 0.0,
            })
            .collect();
        dataset.push(Trajectory {
            steps,
            success: tm.success,
        });
    }
    Ok(SessionState {
        net_state,
        opt_state,
        dataset,
        offline_done: ck.meta.offline_done,
        online_done: ck.meta.online_done,
        nel: ck.meta.nel,
        gate_threshold: ck.meta.gate_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_checkpoint() -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: [7u8; 32],
            meta: CheckpointMeta {
                run_id: "t".into(),
                session: SessionConfig::default(),
                net: NetConfig::default(),
                block_ranks: vec![2, 32],
                normalizer: ActionNormalizer::identity(2),
                offline_done: 3,
                online_done: 1,
                nel: 42,
                gate_threshold: 0.9,
                opt_t: vec![],
                traj: vec![],
            },
            arrays: vec![
                NamedArray {
                    name: "param.a".into(),
                    dtype: Dtype::F64,
                    array: Array::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-30, 7.25]).unwrap(),
                },
                NamedArray {
                    name: "param.b".into(),
                    dtype: Dtype::F32,
                    array: Array::new(vec![2], vec![0.5, -1.5]).unwrap(),
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = tiny_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.arrays[0].array.data(), ck.arrays[0].array.data());
        assert_eq!(back.meta.nel, 42);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = tiny_checkpoint().to_bytes();
        for cut in [3, 7, 50, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DriftError::Checkpoint(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn version_mismatch_is_its_own_error() {
        let mut bytes = tiny_checkpoint().to_bytes();
        bytes[4] = 99;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(
            err,
            DriftError::CheckpointVersion {
                found: 99,
                expected: CHECKPOINT_VERSION
            }
        ));
    }

    #[test]
    fn bad_magic_is_corruption() {
        let mut bytes = tiny_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            DriftError::Checkpoint(_)
        ));
    }

    #[test]
    fn corrupt_offset_names_the_field() {
        let ck = tiny_checkpoint();
        let bytes = ck.to_bytes();
        // Find the first manifest offset (after name "param.a" entry header)
        // and corrupt it by scanning for its dims; easier: flip a known byte.
        // The first entry's offset field sits right after its single dim pair.
        // Rather than hand-compute, corrupt via a rebuilt manifest: change the
        // second array's recorded offset by editing bytes where it differs.
        // The offset of entry 2 equals numel(a) * 8 = 48; find those bytes.
        let needle = 48u64.to_le_bytes();
        let pos = bytes
            .windows(8)
            .position(|w| w == needle)
            .expect("offset bytes present");
        let mut bad = bytes.clone();
        bad[pos] = 47;
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("param.b"), "{msg}");
    }
}
