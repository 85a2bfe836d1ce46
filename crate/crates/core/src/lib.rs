//! Software twin of a programmable calibration source built from a digital
//! potentiometer and a bank of switched resistors.
//!
//! The crate models the output stage exactly in fixed-point arithmetic,
//! runs the potentiometer/switch sweep ladder against a transport, simulates
//! nonideal ADCs and a reference meter, pairs their readings through the
//! settling-time log, and fits correction functions.

pub mod calibration;
pub mod circuit;
pub mod config;
pub mod hal;
pub mod instruments;
pub mod pipeline;
pub mod planner;
pub mod presets;
pub mod sweep;
pub mod sync;
pub mod units;
