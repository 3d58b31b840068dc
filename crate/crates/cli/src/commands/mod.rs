pub mod analyze;
pub mod frequencies;
pub mod rope;
pub mod selftest;
pub mod synth;
pub mod theory;
