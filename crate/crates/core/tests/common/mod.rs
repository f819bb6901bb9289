//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod penalty;
pub mod service;
