//! Certified phase-error bounds for QKD protocols with imperfect state
//! preparation, computed from Gram-matrix semidefinite programs.

pub mod hermitian;
pub mod sdp;
pub mod scenario;
pub mod channel;
pub mod gram;
pub mod keyrate;
