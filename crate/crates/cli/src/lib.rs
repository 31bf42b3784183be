//! Output formats shared by the `netdyn` binary and its tests.

pub mod solution;
