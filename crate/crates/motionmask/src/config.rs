//! Run configuration: a schema-versioned TOML document driving data
//! generation, training and evaluation. Unknown keys are rejected so a
//! config file is a faithful record of an experiment.

use crate::data::SyntheticGaitParams;
use crate::kinematics::{Joint, KinError, SkeletonTopology};
use crate::masking::MaskSpec;
use crate::model::{ModelConfig, ModelError, PatchScheme};
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kin(#[from] KinError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    /// Parent joint index; omit for the root.
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    /// Built-in skeleton name; currently `default22`.
    pub preset: Option<String>,
    /// Explicit joint list, alternative to `preset`.
    pub joints: Option<Vec<JointSpec>>,
    /// Explicit patch groups (joint indices); overrides the model's variant.
    pub patches: Option<Vec<Vec<usize>>>,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<SkeletonTopology, ConfigError> {
        match (&self.preset, &self.joints) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "topology takes either a preset or explicit joints, not both".into(),
            )),
            (Some(name), None) => match name.as_str() {
                "default22" => Ok(SkeletonTopology::default22()),
                other => Err(ConfigError::Invalid(format!("unknown preset '{other}'"))),
            },
            (None, Some(joints)) => {
                let joints = joints
                    .iter()
                    .map(|j| Joint {
                        name: j.name.clone(),
                        parent: j.parent,
                        offset: j.offset,
                    })
                    .collect();
                Ok(SkeletonTopology::new("custom", joints)?)
            }
            (None, None) => Ok(SkeletonTopology::default22()),
        }
    }

    /// Patch scheme for this topology honoring an explicit `patches` list.
    pub fn build_scheme(
        &self,
        topology: &SkeletonTopology,
        model: &ModelConfig,
    ) -> Result<PatchScheme, ConfigError> {
        match &self.patches {
            Some(groups) => Ok(PatchScheme::custom(
                "custom",
                topology.joint_count(),
                groups.clone(),
            )?),
            None => Ok(PatchScheme::from_variant(model.patch_variant, topology)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// Procedural gait motions, generated on demand.
    Synthetic,
    /// Directory of `.motion.txt` files with `train/` and `test/` splits.
    MotionDir,
    /// Directory of `.bvh` files with `train/` and `test/` splits.
    BvhDir,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub dir: PathBuf,
    pub synthetic: SyntheticGaitParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Synthetic,
            dir: PathBuf::from("data/gait"),
            synthetic: SyntheticGaitParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub topology: TopologyConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Mask used by eval/synthesize when no CLI flags override it.
    pub mask: Option<MaskSpec>,
    pub data: DataConfig,
    /// MPJPE horizons, milliseconds past the observed prefix.
    pub horizons_ms: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: PathBuf::from("runs/out"),
            topology: TopologyConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mask: None,
            data: DataConfig::default(),
            horizons_ms: vec![80, 160, 320, 400, 560, 1000],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {} unsupported (expected {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Short digest of the canonical serialized config, for report headers.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.fingerprint(), config.fingerprint());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "schema_version = 1\nnonsense = true\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
        let nested = "schema_version = 1\n[model]\nbogus_field = 3\n";
        assert!(toml::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn schema_version_checked() {
        let config = RunConfig {
            schema_version: 99,
            ..RunConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn topology_preset_and_custom() {
        let preset = TopologyConfig {
            preset: Some("default22".into()),
            ..TopologyConfig::default()
        };
        assert_eq!(preset.build().unwrap().joint_count(), 22);

        let custom = TopologyConfig {
            joints: Some(vec![
                JointSpec {
                    name: "root".into(),
                    parent: None,
                    offset: [0.0; 3],
                },
                JointSpec {
                    name: "child".into(),
                    parent: Some(0),
                    offset: [1.0, 0.0, 0.0],
                },
            ]),
            patches: Some(vec![vec![0], vec![1]]),
            ..TopologyConfig::default()
        };
        let topo = custom.build().unwrap();
        let scheme = custom
            .build_scheme(&topo, &ModelConfig::default())
            .unwrap();
        assert_eq!(scheme.patch_count(), 2);

        let both = TopologyConfig {
            preset: Some("default22".into()),
            joints: custom.joints.clone(),
            patches: None,
        };
        assert!(both.build().is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn mask_spec_parses_from_toml() {
        let text = r#"
schema_version = 1
[mask]
kind = "inbetween"
past = 10
transition = 15
future = 1
"#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(
            config.mask,
            Some(MaskSpec::Inbetween {
                past: 10,
                transition: 15,
                future: 1
            })
        );
    }
}
