#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numerics;
pub mod oracle;
pub mod runner;
pub mod stark;
pub mod acceptance;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod waveguide;
