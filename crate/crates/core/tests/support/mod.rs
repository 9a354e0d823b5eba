#![allow(dead_code)]

pub mod conditionals;
pub mod geweke;
