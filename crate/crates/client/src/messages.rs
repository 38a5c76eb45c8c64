//! `/ws` message schema. Every message is one JSON text frame carrying a
//! `type` tag and a `seq` number.
//!
//! Clients number their requests from 1 upwards. The server echoes the
//! request `seq` in `ack`, `error` and `replay_finished`, numbers its own
//! `state`, `scene` and `model` pushes from a separate counter, and uses
//! `seq = 0` for errors it cannot tie to a request.

use gex_core::kinematics::{Finger, HandModel, Transform};
use gex_core::retarget::RetargetConfig;
use gex_core::teleop::{ContactDetector, ImpedanceParams, OperatorParams, ReplaySummary, SceneObject, TickReport};
use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    /// Operator pose target for the virtual glove, degrees.
    SetGloveQ { q: Vec<f64> },
    /// Drive the live session from a gesture file (or a shipped gesture
    /// name) on the server.
    Replay { path: String },
    /// Start (`on = true`, `path` required) or stop recording.
    Record {
        on: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    /// Replace the scene object; `null` empties the scene.
    SetScene { scene: Option<SceneObject> },
    SetParams { params: ParamsPatch },
}

/// Parameter sections to replace; absent sections are left as they are.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsPatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector: Option<ContactDetector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impedance: Option<ImpedanceParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retarget: Option<RetargetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    State(StateFrame),
    Scene { scene: Option<SceneObject> },
    /// Sent once on connect.
    Model { glove: ModelSummary, hand: ModelSummary },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Error { message: String },
    /// A `replay` command ran to its end.
    ReplayFinished { summary: ReplaySummary },
}

/// A control-cycle snapshot plus the world frame of every joint, so that
/// viewers need no kinematics of their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    #[serde(flatten)]
    pub report: TickReport,
    pub frames_glove: Vec<JointFrame>,
    pub frames_hand: Vec<JointFrame>,
    pub recording: bool,
    pub replaying: bool,
}

/// Joint frame in world coordinates: position in metres, rotation as a unit
/// quaternion `[x, y, z, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFrame {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
}

impl From<&Transform> for JointFrame {
    fn from(t: &Transform) -> Self {
        let p = t.translation.vector;
        let q = UnitQuaternion::from_rotation_matrix(&t.rotation);
        Self { position: [p.x, p.y, p.z], rotation: [q.i, q.j, q.k, q.w] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub joints: Vec<JointSummary>,
}

/// Joint limits and home in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSummary {
    pub name: String,
    pub finger: Finger,
    pub lower: f64,
    pub upper: f64,
    pub home: f64,
}

impl From<&HandModel> for ModelSummary {
    fn from(model: &HandModel) -> Self {
        let joints = model
            .fingers
            .iter()
            .flat_map(|f| {
                f.joints.iter().map(|j| JointSummary {
                    name: j.name.clone(),
                    finger: f.name,
                    lower: j.limit_lo.to_degrees(),
                    upper: j.limit_hi.to_degrees(),
                    home: j.home.to_degrees(),
                })
            })
            .collect();
        Self { name: model.name.clone(), joints }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gex_core::fixtures;
    use serde_json::json;

    #[test]
    fn commands_use_flat_tagged_objects() {
        let msg = ClientMessage { seq: 3, command: Command::SetGloveQ { q: vec![1.0, 2.0] } };
        assert_eq!(serde_json::to_value(&msg).unwrap(), json!({"seq": 3, "type": "set_glove_q", "q": [1.0, 2.0]}));
        let off: ClientMessage = serde_json::from_value(json!({"seq": 4, "type": "record", "on": false})).unwrap();
        assert_eq!(off.command, Command::Record { on: false, path: None });
        let clear: ClientMessage = serde_json::from_value(json!({"seq": 5, "type": "set_scene", "scene": null})).unwrap();
        assert_eq!(clear.command, Command::SetScene { scene: None });
    }

    #[test]
    fn unknown_type_is_rejected() {
        assert!(serde_json::from_value::<ClientMessage>(json!({"seq": 1, "type": "explode"})).is_err());
        assert!(serde_json::from_value::<ClientMessage>(json!({"type": "set_glove_q", "q": []})).is_err());
    }

    #[test]
    fn params_patch_rejects_unknown_sections() {
        let bad = json!({"seq": 1, "type": "set_params", "params": {"gain": 2}});
        assert!(serde_json::from_value::<ClientMessage>(bad).is_err());
        let ok = json!({"seq": 1, "type": "set_params", "params": {"impedance": {"kp": 0.4, "kd": 0.004, "torque_cap": 0.1}}});
        let msg: ClientMessage = serde_json::from_value(ok).unwrap();
        let Command::SetParams { params } = msg.command else { panic!() };
        assert!(params.impedance.is_some() && params.detector.is_none());
    }

    #[test]
    fn state_round_trips_with_report_fields_at_top_level() {
        let report = TickReport {
            timestamp: 0.01,
            q_glove: vec![0.5; 12],
            q_hand: vec![0.25; 11],
            tips_glove: vec![[0.0, 0.1, 0.2]; 3],
            tips_hand: vec![[0.0, 0.1, 0.2]; 3],
            modes: vec![gex_core::teleop::FingerMode::Free; 3],
            contact_flags: vec![false; 3],
            feedback_torques: vec![0.0; 12],
        };
        let frame = JointFrame { position: [0.0; 3], rotation: [0.0, 0.0, 0.0, 1.0] };
        let msg = ServerMessage {
            seq: 9,
            event: Event::State(StateFrame {
                report,
                frames_glove: vec![frame; 12],
                frames_hand: vec![frame; 11],
                recording: false,
                replaying: false,
            }),
        };
        let v = serde_json::to_value(&msg).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["seq"], 9);
        for field in ["timestamp", "q_glove", "q_hand", "modes", "contact_flags", "feedback_torques"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(serde_json::from_value::<ServerMessage>(v).unwrap(), msg);
    }

    #[test]
    fn model_summary_is_in_degrees() {
        let s = ModelSummary::from(&fixtures::gx11());
        assert_eq!(s.joints.len(), 11);
        assert!((s.joints[0].upper - 60.0).abs() < 1e-9);
        let v = serde_json::to_value(ServerMessage { seq: 1, event: Event::Model { glove: s.clone(), hand: s } }).unwrap();
        assert_eq!(v["type"], "model");
    }

    #[test]
    fn joint_frame_quaternion_matches_rotation() {
        use gex_core::kinematics::forward_kinematics;
        let model = fixtures::gx11();
        let fk = forward_kinematics(&model, &model.mid_range()).unwrap();
        for t in &fk.frames {
            let f = JointFrame::from(t);
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(f.rotation[3], f.rotation[0], f.rotation[1], f.rotation[2]));
            assert!((q.to_rotation_matrix().matrix() - t.rotation.matrix()).norm() < 1e-12);
        }
    }
}
