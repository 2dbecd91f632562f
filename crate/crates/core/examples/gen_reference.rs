//! Regenerates the benchmark reference table of best-known Lennard-Jones
//! cluster energies for N = 2..=150.
//!
//! Protocol: build upward by adding one atom to the previous best structure
//! (several surface placements, each quenched), compare against a relaxed
//! icosahedral seed, then alternate shrink (drop the weakest atom of N+1)
//! and growth refinement passes, and finish with a basin-hopping pass per
//! size. Results are cross-checked against spot values from the published
//! global-minimum tables; a small set of well-documented non-icosahedral
//! sizes (truncated-octahedral 38, Marks-decahedral 75-77 and 102-104,
//! tetrahedral 98) is taken from those tables outright when the stochastic
//! search stalls above them, since their basins are famously hard to reach.
//!
//! Usage:
//!   cargo run --release -p emkit-core --example gen_reference > crates/core/data/lj_reference.csv
//!
//! Progress goes to stderr; the CSV goes to stdout.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emkit_core::config::Configuration;
use emkit_core::global_opt::{basin_hopping, BasinHopOptions};
use emkit_core::local_opt::{lbfgs, Method, OptimizerOptions};
use emkit_core::potential::{lj_pair_energy, LjCluster, LjParams, REDUCED_R_MIN};
use emkit_core::seeding::icosahedral_seed;

const N_MAX: usize = 150;

/// Spot-check values from the published Lennard-Jones global-minimum tables.
const ANCHORS: &[(usize, f64)] = &[
    (2, -1.000000),
    (3, -3.000000),
    (4, -6.000000),
    (5, -9.103852),
    (6, -12.712062),
    (7, -16.505384),
    (8, -19.821489),
    (9, -24.113360),
    (10, -28.422532),
    (11, -32.765970),
    (12, -37.967600),
    (13, -44.326801),
    (14, -47.845157),
    (15, -52.322627),
    (19, -72.659782),
    (26, -108.315616),
    (38, -173.928427),
    (55, -279.248470),
    (75, -397.492331),
    (76, -402.894866),
    (77, -409.083517),
    (98, -543.665361),
    (102, -569.363652),
    (103, -575.766131),
    (104, -582.086642),
    (147, -876.461207),
];

/// Hard multi-funnel sizes whose table values win over a stalled search.
const TRUSTED_HARD: &[usize] = &[38, 75, 76, 77, 98, 102, 103, 104];

fn quench(config: &Configuration, force_tol: f64) -> Option<(f64, Configuration)> {
    let model = LjCluster::reduced(config.n_atoms());
    let opts = OptimizerOptions {
        max_steps: 20_000,
        energy_tol: 0.0,
        force_tol,
        ..Default::default()
    };
    let trace = lbfgs(&model, config, &opts).ok()?;
    Some((trace.final_energy, trace.final_config))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Candidates for N atoms grown from a best (N-1)-atom structure: surface
/// placements in random directions, quenched.
fn grow(base: &Configuration, tries: usize, rng: &mut ChaCha8Rng) -> Option<(f64, Configuration)> {
    let centroid = base.centroid();
    let r_max = base
        .positions()
        .iter()
        .map(|p| {
            ((p[0] - centroid[0]).powi(2)
                + (p[1] - centroid[1]).powi(2)
                + (p[2] - centroid[2]).powi(2))
            .sqrt()
        })
        .fold(0.0f64, f64::max);
    let mut best: Option<(f64, Configuration)> = None;
    for _ in 0..tries {
        let dir = random_unit(rng);
        let radius = r_max + REDUCED_R_MIN * rng.random_range(0.8..=1.1);
        let mut positions = base.positions().to_vec();
        positions.push([
            centroid[0] + radius * dir[0],
            centroid[1] + radius * dir[1],
            centroid[2] + radius * dir[2],
        ]);
        let Ok(start) = Configuration::new(positions) else {
            continue;
        };
        if let Some((e, c)) = quench(&start, 1e-6) {
            if best.as_ref().is_none_or(|(be, _)| e < *be) {
                best = Some((e, c));
            }
        }
    }
    best
}

/// Candidate for N atoms made by deleting the most weakly bound atoms of a
/// best (N+1)-atom structure.
fn shrink(base: &Configuration) -> Vec<Configuration> {
    let params = LjParams::REDUCED;
    let pos = base.positions();
    let n = pos.len();
    let mut binding = vec![0.0f64; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = [
                pos[i][0] - pos[j][0],
                pos[i][1] - pos[j][1],
                pos[i][2] - pos[j][2],
            ];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if let Ok(e) = lj_pair_energy(r, &params) {
                binding[i] += e;
                binding[j] += e;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| binding[b].total_cmp(&binding[a]));
    order
        .into_iter()
        .take(2)
        .filter_map(|drop| {
            let kept: Vec<[f64; 3]> = pos
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != drop)
                .map(|(_, p)| *p)
                .collect();
            Configuration::new(kept).ok()
        })
        .collect()
}

fn improve(
    best: &mut BTreeMap<usize, (f64, Configuration)>,
    n: usize,
    e: f64,
    c: Configuration,
) -> bool {
    match best.get(&n) {
        Some((old, _)) if *old <= e + 1e-9 => false,
        _ => {
            best.insert(n, (e, c));
            true
        }
    }
}

fn main() {
    let mut best: BTreeMap<usize, (f64, Configuration)> = BTreeMap::new();

    // Dimer start.
    let dimer = Configuration::new(vec![[0.0; 3], [REDUCED_R_MIN, 0.0, 0.0]]).unwrap();
    let (e2, c2) = quench(&dimer, 1e-10).unwrap();
    best.insert(2, (e2, c2));

    // Upward growth sweep with an icosahedral-seed competitor at every size.
    for n in 3..=N_MAX {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + n as u64);
        let base = best[&(n - 1)].1.clone();
        if let Some((e, c)) = grow(&base, 8, &mut rng) {
            improve(&mut best, n, e, c);
        }
        if let Ok(seed) = icosahedral_seed(n) {
            if let Some((e, c)) = quench(&seed, 1e-6) {
                improve(&mut best, n, e, c);
            }
        }
        eprintln!("grow  n={n:3} e={:.6}", best[&n].0);
    }

    // Alternating shrink/grow refinement until a pass stops helping.
    for pass in 0..4 {
        let mut changed = 0usize;
        for n in (2..N_MAX).rev() {
            let base = best[&(n + 1)].1.clone();
            for cand in shrink(&base) {
                if let Some((e, c)) = quench(&cand, 1e-6) {
                    if improve(&mut best, n, e, c) {
                        changed += 1;
                    }
                }
            }
        }
        for n in 3..=N_MAX {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 * (pass + 2) as u64 + n as u64);
            let base = best[&(n - 1)].1.clone();
            if let Some((e, c)) = grow(&base, 4, &mut rng) {
                if improve(&mut best, n, e, c) {
                    changed += 1;
                }
            }
        }
        eprintln!("refine pass {pass}: {changed} improvements");
        if changed == 0 {
            break;
        }
    }

    // Basin-hopping polish, budget scaled down as the quench cost grows.
    for n in 2..=N_MAX {
        let iterations = if n <= 60 {
            600
        } else if n <= 110 {
            400
        } else {
            250
        };
        let opts = BasinHopOptions {
            iterations,
            temperature: 0.9,
            max_displacement: 0.35,
            local_method: Method::Lbfgs,
            local_opts: OptimizerOptions {
                max_steps: 20_000,
                energy_tol: 0.0,
                force_tol: 1e-5,
                ..Default::default()
            },
            rng_seed: 77_000 + n as u64,
        };
        let model = LjCluster::reduced(n);
        let start = best[&n].1.clone();
        match basin_hopping(&model, &start, &opts) {
            Ok(trace) => {
                // Re-quench tightly so recorded energies are stable digits.
                if let Some((e, c)) = quench(&trace.best_config, 1e-9) {
                    if improve(&mut best, n, e, c) {
                        eprintln!("bh    n={n:3} improved to {e:.6}");
                    }
                }
            }
            Err(err) => eprintln!("bh    n={n:3} failed: {err}"),
        }
        eprintln!("done  n={n:3} e={:.6}", best[&n].0);
    }

    // Anchor comparison and merge.
    let anchors: BTreeMap<usize, f64> = ANCHORS.iter().copied().collect();
    let mut table: BTreeMap<usize, f64> = BTreeMap::new();
    for n in 2..=N_MAX {
        let (computed, _) = best[&n];
        let value = match anchors.get(&n) {
            Some(&a) => {
                if (computed - a).abs() <= 2e-4 {
                    computed
                } else if computed < a {
                    eprintln!(
                        "WARN n={n}: computed {computed:.6} beats anchor {a:.6}; keeping computed"
                    );
                    computed
                } else if TRUSTED_HARD.contains(&n) {
                    eprintln!(
                        "NOTE n={n}: search stalled at {computed:.6}; using table value {a:.6}"
                    );
                    a
                } else {
                    eprintln!(
                        "WARN n={n}: computed {computed:.6} above anchor {a:.6}; keeping computed"
                    );
                    computed
                }
            }
            None => computed,
        };
        table.insert(n, value);
    }

    // Energies must strictly decrease with N.
    let mut prev = f64::INFINITY;
    for (&n, &e) in &table {
        assert!(
            e < prev,
            "table not strictly decreasing at N={n}: {e} !< {prev}"
        );
        prev = e;
    }

    println!("# Best-known Lennard-Jones cluster minima (reduced units).");
    println!("# Generated by examples/gen_reference.rs: growth/shrink seeding plus");
    println!("# basin-hopping, spot-checked against published global-minimum tables.");
    println!("# N,energy");
    for (n, e) in &table {
        println!("{n},{e:.6}");
    }
}
