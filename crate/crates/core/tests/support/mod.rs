#![allow(dead_code)]

pub mod attacks;
pub mod planted;
