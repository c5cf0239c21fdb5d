//! Constrained optimal fuel consumption workbench: drive cycles, a simplified
//! hybrid powertrain, the SOC-corridor constrained MDP, two constrained RL
//! trainers and an exact dynamic-programming oracle.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crl;
pub mod cvpo;
pub mod drive_cycle;
pub mod env;
pub mod lagrangian;
pub mod oracle;
pub mod powertrain;
