//! Acceptance checks for `manipgp`; see `tests/acceptance.rs`.
