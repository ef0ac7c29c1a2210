//! Helpers shared by several integration-test targets. Not every target
//! uses every helper.
#![allow(dead_code)]

pub mod fd;
pub mod oracles;
