#![allow(dead_code)]

pub mod gradients;
pub mod metrics;
pub mod reduction;
