//! Gateway configuration file and its resolution into validated documents.
//!
//! Every key is optional. Document paths are relative to the config file's
//! directory; absent paths fall back to the shipped GX11/EX12 rig and cup.

use std::path::{Component, Path, PathBuf};

use gex_core::bus::ServoProfile;
use gex_core::fixtures;
use gex_core::kinematics::{load_model, HandModel};
use gex_core::retarget::RetargetConfig;
use gex_core::teleop::{ContactDetector, ImpedanceParams, OperatorParams, RigSpec, SceneObject, TeleopConfig};
use serde::Deserialize;

pub const DEFAULT_PORT: u16 = 8750;

/// Value of `scene` that runs without any object.
pub const NO_SCENE: &str = "none";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {message}")]
    Document { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub glove_model: Option<PathBuf>,
    pub hand_model: Option<PathBuf>,
    pub glove_profile: Option<PathBuf>,
    pub hand_profile: Option<PathBuf>,
    /// Scene document, or `"none"` for an empty scene.
    pub scene: Option<PathBuf>,
    pub bind: String,
    pub port: u16,
    /// Teleop loop rate, Hz.
    pub control_rate: f64,
    /// `state` push rate per client, Hz.
    pub broadcast_rate: f64,
    /// Real-time (FIFO) priority, 1 to 99, for the control thread. Unset
    /// leaves it under the normal scheduler.
    pub control_priority: Option<u8>,
    /// Root for files named by `/ws` record and replay commands.
    pub data_dir: PathBuf,
    pub hand_goal_pwm: u16,
    pub tip_radius: f64,
    pub retarget: RetargetConfig,
    pub detector: ContactDetector,
    pub impedance: ImpedanceParams,
    pub operator: OperatorParams,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let t = TeleopConfig::default();
        Self {
            glove_model: None,
            hand_model: None,
            glove_profile: None,
            hand_profile: None,
            scene: None,
            bind: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            control_rate: 100.0,
            broadcast_rate: 30.0,
            control_priority: None,
            data_dir: PathBuf::from("."),
            hand_goal_pwm: t.hand_goal_pwm,
            tip_radius: t.tip_radius,
            retarget: t.retarget,
            detector: t.detector,
            impedance: t.impedance,
            operator: t.operator,
        }
    }
}

/// A configuration with every referenced document loaded and validated.
#[derive(Debug, Clone)]
pub struct Settings {
    pub rig: RigSpec,
    pub scene: Option<SceneObject>,
    pub teleop: TeleopConfig,
    pub bind: String,
    pub port: u16,
    pub broadcast_rate: f64,
    pub control_priority: Option<u8>,
    pub data_dir: PathBuf,
}

impl Settings {
    /// Read and resolve a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let cfg: GatewayConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    /// Shipped rig and scene with default parameters.
    pub fn shipped() -> Self {
        GatewayConfig::default().resolve(Path::new(".")).expect("shipped documents are valid")
    }
}

impl GatewayConfig {
    pub fn resolve(self, base: &Path) -> Result<Settings, ConfigError> {
        let doc = |p: &Option<PathBuf>| -> Result<Option<(PathBuf, String)>, ConfigError> {
            p.as_ref()
                .map(|p| {
                    let full = base.join(p);
                    read(&full).map(|t| (full, t))
                })
                .transpose()
        };
        let model = |p: &Option<PathBuf>, shipped: fn() -> HandModel| -> Result<HandModel, ConfigError> {
            match doc(p)? {
                None => Ok(shipped()),
                Some((path, text)) => load_model(&text).map_err(|e| ConfigError::Document { path, message: e.to_string() }),
            }
        };
        let profile = |p: &Option<PathBuf>, shipped: fn() -> ServoProfile| -> Result<ServoProfile, ConfigError> {
            match doc(p)? {
                None => Ok(shipped()),
                Some((path, text)) => {
                    ServoProfile::load(&text).map_err(|e| ConfigError::Document { path, message: e.to_string() })
                }
            }
        };
        let rig = RigSpec {
            glove: model(&self.glove_model, fixtures::ex12)?,
            glove_profile: profile(&self.glove_profile, fixtures::m077)?,
            hand: model(&self.hand_model, fixtures::gx11)?,
            hand_profile: profile(&self.hand_profile, fixtures::m288)?,
        };
        let scene = match &self.scene {
            Some(p) if p.as_os_str() == NO_SCENE => None,
            None => Some(fixtures::cup()),
            some => {
                let (path, text) = doc(some)?.expect("path present");
                Some(SceneObject::load(&text).map_err(|e| ConfigError::Document { path, message: e.to_string() })?)
            }
        };
        if !(self.control_rate.is_finite() && self.control_rate >= 10.0) {
            return Err(ConfigError::Invalid("control_rate must be at least 10 Hz".into()));
        }
        if !(self.broadcast_rate > 0.0 && self.broadcast_rate <= self.control_rate) {
            return Err(ConfigError::Invalid("broadcast_rate must lie in (0, control_rate]".into()));
        }
        if self.control_priority.is_some_and(|p| !(1..=99).contains(&p)) {
            return Err(ConfigError::Invalid("control_priority must lie in 1..=99".into()));
        }
        let teleop = TeleopConfig {
            dt: 1.0 / self.control_rate,
            hand_goal_pwm: self.hand_goal_pwm,
            tip_radius: self.tip_radius,
            detector: self.detector,
            impedance: self.impedance,
            operator: self.operator,
            retarget: self.retarget,
        };
        check_setup(&rig, &teleop, scene.as_ref()).map_err(ConfigError::Invalid)?;
        Ok(Settings {
            rig,
            scene,
            teleop,
            bind: self.bind,
            port: self.port,
            broadcast_rate: self.broadcast_rate,
            control_priority: self.control_priority,
            data_dir: base.join(self.data_dir),
        })
    }
}

/// Everything a session would check at start-up, without building one.
pub fn check_setup(rig: &RigSpec, teleop: &TeleopConfig, scene: Option<&SceneObject>) -> Result<(), String> {
    teleop.validate(&rig.glove_profile).map_err(|e| e.to_string())?;
    teleop.retarget.validate_for(&rig.glove).map_err(|e| format!("retarget on glove: {e}"))?;
    teleop.retarget.validate_for(&rig.hand).map_err(|e| format!("retarget on hand: {e}"))?;
    if let Some(s) = scene {
        s.validate().map_err(|e| e.to_string())?;
    }
    if rig.glove.fingers.iter().map(|f| f.name).ne(rig.hand.fingers.iter().map(|f| f.name)) {
        return Err("glove and hand must declare the same fingers in the same order".into());
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Resolve a client-supplied relative path under `root`, refusing anything
/// that could escape it.
pub fn data_path(root: &Path, requested: &str) -> Result<PathBuf, String> {
    let rel = Path::new(requested);
    if requested.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(format!("path `{requested}` must be relative and stay inside the data directory"));
    }
    Ok(root.join(rel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_shipped_rig() {
        let s = GatewayConfig::default().resolve(Path::new(".")).unwrap();
        assert_eq!(s.rig.hand.name, fixtures::gx11().name);
        assert_eq!(s.rig.glove.dof(), 12);
        assert_eq!(s.scene, Some(fixtures::cup()));
        assert_eq!(s.teleop, TeleopConfig::default());
    }

    #[test]
    fn shipped_config_files_resolve() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
        let full = Settings::load(&dir.join("gateway.toml")).unwrap();
        let shipped = Settings::shipped();
        assert_eq!(full.rig.hand, shipped.rig.hand);
        assert_eq!(full.rig.glove, shipped.rig.glove);
        assert_eq!(full.scene, shipped.scene);
        assert_eq!(full.teleop, shipped.teleop);
        assert!(Settings::load(&dir.join("empty_scene.toml")).unwrap().scene.is_none());
    }

    #[test]
    fn scene_none_and_sections() {
        let cfg: GatewayConfig = toml::from_str(
            "scene = \"none\"\ncontrol_rate = 200.0\n[impedance]\nkp = 0.3\nkd = 0.003\ntorque_cap = 0.1\n",
        )
        .unwrap();
        let s = cfg.resolve(Path::new(".")).unwrap();
        assert!(s.scene.is_none());
        assert_eq!(s.teleop.dt, 0.005);
        assert_eq!(s.teleop.impedance.kp, 0.3);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(toml::from_str::<GatewayConfig>("speed = 3").is_err());
        let cfg: GatewayConfig = toml::from_str("control_rate = 1.0").unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
        let cfg: GatewayConfig = toml::from_str("hand_model = \"missing.toml\"").unwrap();
        assert!(matches!(cfg.resolve(Path::new(".")), Err(ConfigError::Io { .. })));
        let cfg: GatewayConfig = toml::from_str("[impedance]\nkp = 1.0\nkd = 0.0\ntorque_cap = 9.0").unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn data_paths_stay_inside_the_root() {
        let root = Path::new("/data");
        assert_eq!(data_path(root, "a/b.jsonl").unwrap(), Path::new("/data/a/b.jsonl"));
        for bad in ["", "/etc/passwd", "../x", "a/../../x", "./x"] {
            assert!(data_path(root, bad).is_err(), "{bad}");
        }
    }
}
