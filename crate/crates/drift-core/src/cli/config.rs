//! Run configuration: JSON document mirroring the library config types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::harness::SessionConfig;
use crate::DriftError;
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    PointReach2d,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
}

/// Top-level experiment configuration. A run is reproducible from
/// (config, seed) alone; the resolved snapshot written next to the outputs
/// replays it exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub session: SessionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            session: SessionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DriftError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            DriftError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.resolve();
        Ok(cfg)
    }

    /// Derive dependent fields: the net mode follows the strategy, and the net
    /// observation layout follows the environment.
    pub fn resolve(&mut self) {
        self.session.net.mode = self.session.strategy.initial_mode();
        match self.env.kind {
            EnvKind::PointReach2d => {
                self.session.net.obs_dim = 6;
                self.session.net.action_dim = 2;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable hash of the serialized config, embedded in checkpoints. The
    /// output directory is excluded: where results land does not change what
    /// the run computes, and a resumed run may redirect its outputs.
    pub fn hash(&self) -> [u8; 32] {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(canon.to_json().as_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Strategy;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = std::env::temp_dir().join("drift-cfg-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("min.json");
        std::fs::write(&p, r#"{"run_id": "t", "session": {"strategy": "bc"}}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.session.strategy, Strategy::Bc);
        assert_eq!(cfg.session.net.mode, Strategy::Bc.initial_mode());
        assert_eq!(cfg.session.net.obs_dim, 6);
    }

    #[test]
    fn unknown_field_is_a_config_error_with_position() {
        let dir = std::env::temp_dir().join("drift-cfg-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.json");
        std::fs::write(&p, "{\n  \"run_idd\": \"t\"\n}").unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("config error"), "{msg}");
        assert!(msg.contains(":2:"), "expected line info in {msg}");
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.session.seed = 123;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
    }
}
