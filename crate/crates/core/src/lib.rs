//! Hardware-free GX11 hand / EX12 glove teleoperation stack.
//!
//! - [`kinematics`]: model documents, forward kinematics, Jacobians.
//! - [`retarget`]: glove-to-hand key-vector retargeting.
//! - [`protocol`]: servo bus protocol 2.0 codec.
//! - [`bus`], [`transport`]: virtual servo bus and byte transports.
//! - [`sdk`]: `Hand` / `Glove` device API in degrees.
//! - [`teleop`]: force-feedback teleoperation loop over a contact scene.
//! - [`gesture`]: line-delimited glove and hand trajectory records.
//! - [`fixtures`]: the shipped rig, servo profiles, scene and gestures.

// Negated comparisons in validation also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod fixtures;
pub mod gesture;
pub mod kinematics;
pub mod protocol;
pub mod retarget;
pub mod sdk;
pub mod teleop;
pub mod transport;
