#![allow(dead_code)]

pub mod brokerkit;
pub mod e2e;
pub mod hs;
pub mod privacy;
pub mod vectors;
