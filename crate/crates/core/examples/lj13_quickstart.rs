//! Minimal library walkthrough: relax an LJ-13 cluster three ways.
//!
//! Run with: cargo run -p emkit-core --example lj13_quickstart

use emkit_core::global_opt::{basin_hopping, BasinHopOptions};
use emkit_core::local_opt::{lbfgs, OptimizerOptions};
use emkit_core::potential::LjCluster;
use emkit_core::seeding::{make_seed, SeedMode, SeedSpec};

fn main() {
    let model = LjCluster::reduced(13);

    // Deterministic icosahedral seed, tight local minimization.
    let start = make_seed(&SeedSpec {
        n_atoms: 13,
        mode: SeedMode::Icosahedral,
        rng_seed: 0,
        scale: 1.0,
    })
    .expect("13 is a valid icosahedral size");
    let local = lbfgs(&model, &start, &OptimizerOptions::tight()).expect("minimization runs");
    println!(
        "local:  E = {:.9} after {} steps ({})",
        local.final_energy,
        local.iterations,
        local.reason.name()
    );

    // Random start, global search by basin hopping.
    let random = make_seed(&SeedSpec {
        n_atoms: 13,
        mode: SeedMode::RandomSphere,
        rng_seed: 7,
        scale: 1.0,
    })
    .expect("random seed");
    let opts = BasinHopOptions {
        iterations: 200,
        rng_seed: 7,
        ..BasinHopOptions::default()
    };
    let hop = basin_hopping(&model, &random, &opts).expect("basin hopping runs");
    let accepted = hop.steps.iter().filter(|s| s.accepted).count();
    println!(
        "global: E = {:.9} after {} hops ({} accepted)",
        hop.best_energy,
        hop.steps.len(),
        accepted
    );
}
