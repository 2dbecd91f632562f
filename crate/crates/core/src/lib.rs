//! emkit-core: potential-energy models, local and global energy minimizers,
//! cluster seed generators, a protein contact analyzer, and a benchmark
//! harness against reference cluster minima.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod forcefield;
pub mod global_opt;
pub mod local_opt;
pub mod potential;
pub mod seeding;
