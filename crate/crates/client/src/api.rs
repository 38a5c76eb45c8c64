//! Request and response bodies of the one-shot HTTP operations under `/api`.

use gex_core::gesture::{GestureRecord, HandRecord};
use gex_core::retarget::RetargetConfig;
use gex_core::teleop::{ReplaySummary, SceneObject, TeleopConfig, TickReport};
use serde::{Deserialize, Serialize};

/// Which hand model an operation runs on: the configured `glove` or `hand`,
/// a configured model by name, or an inline model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRef {
    Name(String),
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRequest {
    pub model: ModelRef,
    pub finger: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceResponse {
    pub points: Vec<[f64; 3]>,
    /// Convex-hull volume of the cloud, m³.
    pub hull_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetRequest {
    /// Defaults to the configured glove.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glove: Option<ModelRef>,
    /// Defaults to the configured hand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<ModelRef>,
    pub gesture: Vec<GestureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetResponse {
    pub trajectory: Vec<HandRecord>,
    /// Thumb to index fingertip distance at the last frame, m, when both
    /// models have those fingers.
    pub final_pinch_hand: Option<f64>,
    pub final_pinch_glove: Option<f64>,
    pub config: RetargetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    /// Hex pairs, whitespace ignored.
    pub hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedFrame {
    pub id: u8,
    /// Instruction name, `STATUS`, or `?` for a frame that failed.
    pub kind: String,
    pub params: String,
    pub crc_ok: bool,
    /// Human-readable one-line rendering.
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub frames: Vec<DecodedFrame>,
    /// Frames with a bad CRC or an unparseable body.
    pub bad: usize,
    /// Bytes left over that never formed a complete frame.
    pub trailing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub gesture: Vec<GestureRecord>,
    /// Overrides the configured control parameters and scene when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<SessionSetup>,
}

/// Control parameters and scene a session ran with. Recordings store one
/// next to the gesture so that they replay under the same conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSetup {
    pub teleop: TeleopConfig,
    pub scene: Option<SceneObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub ticks: Vec<TickReport>,
    pub summary: ReplaySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}
