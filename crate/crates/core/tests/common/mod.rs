//! Independent reference implementations shared by the test targets.

#![allow(dead_code)]

pub mod fd;
pub mod oracles;
