//! Helpers shared by the integration tests; each test target uses a subset.
#![allow(dead_code)]

pub mod oracles;
pub mod ops;
