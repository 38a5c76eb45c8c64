//! One-shot operations behind `/api`. Each is synchronous and self-contained;
//! handlers run them on the blocking pool.

use gex_client::api::*;
use gex_core::gesture::HandRecord;
use gex_core::kinematics::{self, load_model, Finger, HandModel};
use gex_core::protocol::{parse_hex, to_hex, FrameEvent, Packet, StreamDecoder};
use gex_core::retarget;
use gex_core::teleop::{replay_gesture, Session};

use crate::config::{check_setup, Settings};

/// Upper bound on workspace samples per request.
pub const MAX_WORKSPACE_SAMPLES: usize = 10_000_000;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct OpError(pub String);

impl OpError {
    fn from<E: std::fmt::Display>(e: E) -> Self {
        Self(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, OpError>;

/// `glove`, `hand`, the name of either configured model, or a document.
pub fn resolve_model(settings: &Settings, model: &ModelRef) -> Result<HandModel> {
    match model {
        ModelRef::Document(text) => load_model(text).map_err(OpError::from),
        ModelRef::Name(name) => {
            let rig = &settings.rig;
            match name.as_str() {
                "glove" => Ok(rig.glove.clone()),
                "hand" => Ok(rig.hand.clone()),
                n if n.eq_ignore_ascii_case(&rig.glove.name) => Ok(rig.glove.clone()),
                n if n.eq_ignore_ascii_case(&rig.hand.name) => Ok(rig.hand.clone()),
                n => Err(OpError(format!(
                    "unknown model `{n}` (expected glove, hand, {}, {} or a model document)",
                    rig.glove.name, rig.hand.name
                ))),
            }
        }
    }
}

pub fn workspace(settings: &Settings, req: &WorkspaceRequest) -> Result<WorkspaceResponse> {
    let model = resolve_model(settings, &req.model)?;
    let finger: Finger = req.finger.parse().map_err(OpError::from)?;
    if req.n == 0 || req.n > MAX_WORKSPACE_SAMPLES {
        return Err(OpError(format!("n must lie in 1..={MAX_WORKSPACE_SAMPLES}")));
    }
    let cloud = kinematics::sample_workspace(&model, finger, req.n, req.seed).map_err(OpError::from)?;
    Ok(WorkspaceResponse {
        hull_volume: kinematics::hull_volume(&cloud),
        points: cloud.iter().map(|p| [p.x, p.y, p.z]).collect(),
    })
}

fn pinch_distance(model: &HandModel, q_deg: &[f64]) -> Option<f64> {
    let q: Vec<f64> = q_deg.iter().map(|d| d.to_radians()).collect();
    let tips = kinematics::forward_kinematics(model, &q).ok()?.tips;
    let thumb = model.finger_index(Finger::Thumb).ok()?;
    let index = model.finger_index(Finger::Index).ok()?;
    Some((tips[thumb] - tips[index]).norm())
}

pub fn retarget(settings: &Settings, req: &RetargetRequest) -> Result<RetargetResponse> {
    let glove = resolve_model(settings, req.glove.as_ref().unwrap_or(&ModelRef::Name("glove".into())))?;
    let hand = resolve_model(settings, req.hand.as_ref().unwrap_or(&ModelRef::Name("hand".into())))?;
    if req.gesture.is_empty() {
        return Err(OpError("gesture is empty".into()));
    }
    for (i, pair) in req.gesture.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(OpError(format!("record {}: t does not increase", i + 2)));
        }
    }
    if let Some((i, r)) = req.gesture.iter().enumerate().find(|(_, r)| r.q_glove.len() != glove.dof()) {
        return Err(OpError(format!("record {}: expected {} joint values, found {}", i + 1, glove.dof(), r.q_glove.len())));
    }
    let config = settings.teleop.retarget.clone();
    let traj: Vec<Vec<f64>> =
        req.gesture.iter().map(|r| r.q_glove.iter().map(|d| d.to_radians()).collect()).collect();
    let out = retarget::retarget_trajectory(&glove, &hand, &traj, &config).map_err(OpError::from)?;
    let trajectory: Vec<HandRecord> = req
        .gesture
        .iter()
        .zip(&out)
        .map(|(r, q)| HandRecord { t: r.t, q_hand: q.iter().map(|x| x.to_degrees()).collect() })
        .collect();
    let last_glove = &req.gesture.last().expect("non-empty").q_glove;
    let last_hand = &trajectory.last().expect("non-empty").q_hand;
    Ok(RetargetResponse {
        final_pinch_hand: pinch_distance(&hand, last_hand),
        final_pinch_glove: pinch_distance(&glove, last_glove),
        trajectory,
        config,
    })
}

fn describe(packet: &Packet) -> DecodedFrame {
    let (id, kind, params, extra) = match packet {
        Packet::Instruction(p) => (p.id, p.instruction.name().to_string(), &p.params, String::new()),
        Packet::Status(p) => (p.id, "STATUS".to_string(), &p.params, format!(" error=0x{:02X}", p.error.code())),
    };
    let hex = to_hex(params);
    let shown = if hex.is_empty() { String::new() } else { format!(" params={hex}") };
    DecodedFrame { id, line: format!("{kind} id={id}{extra}{shown} crc=ok"), kind, params: hex, crc_ok: true }
}

pub fn decode(req: &DecodeRequest) -> Result<DecodeResponse> {
    let bytes = parse_hex(&req.hex).map_err(OpError)?;
    let mut decoder = StreamDecoder::new();
    let mut frames = Vec::new();
    let mut bad = 0;
    for event in decoder.feed_events(&bytes) {
        frames.push(match event {
            FrameEvent::Packet(p) => describe(&p),
            FrameEvent::CrcError { id, expected, got } => {
                bad += 1;
                DecodedFrame {
                    id,
                    kind: "?".into(),
                    params: String::new(),
                    crc_ok: false,
                    line: format!("? id={id} crc=bad (expected 0x{expected:04X}, got 0x{got:04X})"),
                }
            }
            FrameEvent::Malformed { id, error } => {
                bad += 1;
                DecodedFrame {
                    id,
                    kind: "?".into(),
                    params: String::new(),
                    crc_ok: true,
                    line: format!("? id={id} crc=ok malformed: {error}"),
                }
            }
        });
    }
    Ok(DecodeResponse { frames, bad, trailing: decoder.buffered() })
}

pub fn replay(settings: &Settings, req: &ReplayRequest) -> Result<ReplayResponse> {
    let (teleop, scene) = match &req.setup {
        Some(s) => {
            check_setup(&settings.rig, &s.teleop, s.scene.as_ref()).map_err(OpError)?;
            (s.teleop.clone(), s.scene.clone())
        }
        None => (settings.teleop.clone(), settings.scene.clone()),
    };
    let first = req.gesture.first().ok_or_else(|| OpError("gesture is empty".into()))?;
    let mut session =
        Session::new(teleop, settings.rig.clone(), scene, Some(&first.q_glove), false).map_err(OpError::from)?;
    let mut ticks = Vec::new();
    let summary = replay_gesture(&mut session, &req.gesture, |r| ticks.push(r.clone())).map_err(OpError::from)?;
    Ok(ReplayResponse { ticks, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gex_core::protocol::{encode, InstructionPacket};

    #[test]
    fn decode_renders_ping() {
        let hex = to_hex(&encode(&InstructionPacket::ping(1)).unwrap());
        let out = decode(&DecodeRequest { hex }).unwrap();
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.frames[0].line, "PING id=1 crc=ok");
        assert_eq!((out.bad, out.trailing), (0, 0));
    }

    #[test]
    fn decode_flags_bad_crc() {
        let mut bytes = encode(&InstructionPacket::ping(1)).unwrap();
        *bytes.last_mut().unwrap() ^= 0xFF;
        let out = decode(&DecodeRequest { hex: to_hex(&bytes) }).unwrap();
        assert_eq!(out.bad, 1);
        assert!(out.frames[0].line.contains("crc=bad"));
    }

    #[test]
    fn models_resolve_by_role_and_name() {
        let s = Settings::shipped();
        assert_eq!(resolve_model(&s, &ModelRef::Name("hand".into())).unwrap().dof(), 11);
        assert_eq!(resolve_model(&s, &ModelRef::Name(s.rig.glove.name.clone())).unwrap().dof(), 12);
        assert!(resolve_model(&s, &ModelRef::Name("foot".into())).is_err());
    }

    #[test]
    fn workspace_rejects_bad_input() {
        let s = Settings::shipped();
        let req = |finger: &str, n| WorkspaceRequest { model: ModelRef::Name("hand".into()), finger: finger.into(), n, seed: 1 };
        assert!(workspace(&s, &req("pinky", 10)).is_err());
        assert!(workspace(&s, &req("thumb", 0)).is_err());
        let one = workspace(&s, &req("thumb", 1)).unwrap();
        assert_eq!((one.points.len(), one.hull_volume), (1, 0.0));
    }
}
