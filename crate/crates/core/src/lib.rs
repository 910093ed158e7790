pub mod fnv;
pub mod nn;
pub mod signal;
pub mod sisa;
pub mod experiment;
