//! Shipped reference documents: nominal GX11/EX12 models, servo profiles,
//! the cup scene and the recorded gestures.

use crate::bus::ServoProfile;
use crate::gesture::{read_gesture, GestureRecord};
use crate::kinematics::{load_model, HandModel};
use crate::teleop::SceneObject;

pub const GX11_DOC: &str = include_str!("../../../fixtures/gx11.toml");
pub const EX12_DOC: &str = include_str!("../../../fixtures/ex12.toml");
pub const M288_DOC: &str = include_str!("../../../fixtures/m288.toml");
pub const M077_DOC: &str = include_str!("../../../fixtures/m077.toml");
pub const CUP_DOC: &str = include_str!("../../../fixtures/cup.toml");
pub const PINCH_GESTURE: &str = include_str!("../../../fixtures/pinch.jsonl");
pub const CONSTANT_GESTURE: &str = include_str!("../../../fixtures/constant.jsonl");

pub fn gx11() -> HandModel {
    load_model(GX11_DOC).expect("shipped gx11 document is valid")
}

pub fn ex12() -> HandModel {
    load_model(EX12_DOC).expect("shipped ex12 document is valid")
}

pub fn m288() -> ServoProfile {
    ServoProfile::load(M288_DOC).expect("shipped M288 profile is valid")
}

pub fn m077() -> ServoProfile {
    ServoProfile::load(M077_DOC).expect("shipped M077 profile is valid")
}

pub fn cup() -> SceneObject {
    SceneObject::load(CUP_DOC).expect("shipped cup scene is valid")
}

pub fn pinch_gesture() -> Vec<GestureRecord> {
    read_gesture(PINCH_GESTURE.as_bytes(), Some(12)).expect("shipped pinch gesture is valid")
}

pub fn constant_gesture() -> Vec<GestureRecord> {
    read_gesture(CONSTANT_GESTURE.as_bytes(), Some(12)).expect("shipped constant gesture is valid")
}
