//! Acceptance criteria for the calibration rig. The checks live in `tests/acceptance.rs`.
