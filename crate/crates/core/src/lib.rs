#![no_std]
extern crate alloc;

pub mod agent;
pub mod cot;
pub mod dataset;
pub mod geo;
pub mod mcq;
pub mod model;
pub mod plan;
pub mod stats;
pub mod text;
pub mod tools;
