//! The gex service: configuration, the one-shot operations behind `/api`,
//! the live teleop loop behind `/ws`, and the axum server tying them
//! together.

pub mod config;
pub mod live;
pub mod ops;
pub mod server;

pub use config::{GatewayConfig, Settings};
pub use server::Gateway;
