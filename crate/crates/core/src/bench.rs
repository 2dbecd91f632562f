//! Cluster benchmark harness: basin-hop a range of sizes and score the
//! found minima against a table of best-known energies.
//!
//! Jobs for different sizes are independent, so they fan out across a rayon
//! pool (size taken from `EMKIT_THREADS` when set). Each job derives its own
//! RNG seed from the run seed and the cluster size, and rows are assembled
//! in size order afterwards, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::Configuration;
use crate::global_opt::{basin_hopping, BasinHopOptions, GlobalError};
use crate::local_opt::{lbfgs, Method, OptimizerOptions};
use crate::potential::LjCluster;
use crate::seeding::{icosahedral_seed, make_seed, SeedError, SeedMode, SeedSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid reference table: {0}")]
    Invalid(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Global(#[from] GlobalError),
    #[error(transparent)]
    Seed(#[from] SeedError),
}

/// Best-known cluster energies keyed by size.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMinimaTable {
    entries: BTreeMap<usize, f64>,
}

impl ReferenceMinimaTable {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Self, BenchError> {
        let mut map = BTreeMap::new();
        for (n, e) in entries {
            if map.insert(n, e).is_some() {
                return Err(BenchError::Invalid(format!("duplicate entry for N={n}")));
            }
        }
        let table = Self { entries: map };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), BenchError> {
        let mut prev: Option<(usize, f64)> = None;
        for (&n, &e) in &self.entries {
            if n < 2 {
                return Err(BenchError::Invalid(format!(
                    "cluster sizes start at N=2, got N={n}"
                )));
            }
            if !e.is_finite() {
                return Err(BenchError::Invalid(format!(
                    "energy for N={n} is not finite"
                )));
            }
            if let Some((pn, pe)) = prev {
                if e >= pe {
                    return Err(BenchError::Invalid(format!(
                        "energies must strictly decrease with N: E({n}) = {e} >= E({pn}) = {pe}"
                    )));
                }
            }
            prev = Some((n, e));
        }
        Ok(())
    }

    /// Parses "N,energy" lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (n_str, e_str) = line.split_once(',').ok_or_else(|| BenchError::Parse {
                line: line_no,
                msg: format!("expected 'N,energy', got {line:?}"),
            })?;
            let n: usize = n_str.trim().parse().map_err(|_| BenchError::Parse {
                line: line_no,
                msg: format!("bad cluster size {:?}", n_str.trim()),
            })?;
            let e: f64 = e_str.trim().parse().map_err(|_| BenchError::Parse {
                line: line_no,
                msg: format!("bad energy {:?}", e_str.trim()),
            })?;
            if entries.insert(n, e).is_some() {
                return Err(BenchError::Parse {
                    line: line_no,
                    msg: format!("duplicate entry for N={n}"),
                });
            }
        }
        let table = Self { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The table shipped with the crate, covering N = 2..=150.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lj_reference.csv"))
            .expect("the bundled reference table parses")
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        self.entries.get(&n).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&n, &e)| (n, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Basin-hopping iterations per size.
    pub iterations: usize,
    pub temperature: f64,
    pub max_displacement: f64,
    pub rng_seed: u64,
    /// Relative gap below which a size counts as hit.
    pub hit_tolerance: f64,
    /// Record wall time per row. Off by default so that reports are
    /// byte-identical across runs.
    pub timings: bool,
    /// Worker threads; falls back to `EMKIT_THREADS`, then rayon's default.
    pub threads: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            temperature: 0.8,
            max_displacement: 0.35,
            rng_seed: 0,
            hit_tolerance: 1e-4,
            timings: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub found: f64,
    pub reference: f64,
    /// (found - reference) / |reference|.
    pub rel_gap: f64,
    pub iterations: usize,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub hit_tolerance: f64,
    /// Sizes skipped for missing reference entries, and similar.
    pub warnings: Vec<String>,
    /// Rows whose found energy beat the reference by more than noise;
    /// these mean the reference table is stale.
    pub anomalies: Vec<String>,
}

impl BenchReport {
    pub fn hits(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.rel_gap < self.hit_tolerance)
            .count()
    }

    pub fn hit_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.hits() as f64 / self.rows.len() as f64
    }

    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        for a in &self.anomalies {
            let _ = writeln!(out, "anomaly: {a}");
        }
        let timed = self.rows.iter().any(|r| r.wall_ms.is_some());
        let _ = writeln!(
            out,
            "N found reference rel_gap iterations{}",
            if timed { " wall_ms" } else { "" }
        );
        for r in &self.rows {
            let _ = write!(
                out,
                "{} {:.9} {:.9} {:+.3e} {}",
                r.n, r.found, r.reference, r.rel_gap, r.iterations
            );
            if let Some(ms) = r.wall_ms {
                let _ = write!(out, " {ms:.1}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "hit_rate {}/{} at rel tol {:.1e}",
            self.hits(),
            self.rows.len(),
            self.hit_tolerance
        );
        out
    }
}

fn reseed(run_seed: u64, n: usize) -> u64 {
    run_seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn bench_seed_config(n: usize, rng_seed: u64) -> Result<Configuration, SeedError> {
    // Icosahedral shells when the builder supports the size, random otherwise.
    match icosahedral_seed(n) {
        Ok(c) => Ok(c),
        Err(_) => make_seed(&SeedSpec {
            n_atoms: n,
            mode: SeedMode::RandomSphere,
            rng_seed,
            scale: 1.0,
        }),
    }
}

fn bench_one(n: usize, reference: f64, opts: &BenchOptions) -> Result<BenchRow, BenchError> {
    let clock = opts.timings.then(Instant::now);
    let seed_rng = reseed(opts.rng_seed, n);
    let start = bench_seed_config(n, seed_rng)?;
    let model = LjCluster::reduced(n);
    let hop = BasinHopOptions {
        iterations: opts.iterations,
        temperature: opts.temperature,
        max_displacement: opts.max_displacement,
        local_method: Method::Lbfgs,
        local_opts: OptimizerOptions {
            max_steps: 20_000,
            energy_tol: 0.0,
            force_tol: 1e-5,
            ..Default::default()
        },
        rng_seed: seed_rng,
    };
    let trace = basin_hopping(&model, &start, &hop)?;
    // Tight re-quench so the reported digits are converged.
    let polish = lbfgs(
        &model,
        &trace.best_config,
        &OptimizerOptions {
            max_steps: 20_000,
            energy_tol: 0.0,
            force_tol: 1e-9,
            ..Default::default()
        },
    )
    .map_err(GlobalError::from)?;
    let found = polish.final_energy.min(trace.best_energy);
    let rel_gap = (found - reference) / reference.abs();
    Ok(BenchRow {
        n,
        found,
        reference,
        rel_gap,
        iterations: opts.iterations,
        wall_ms: clock.map(|t| t.elapsed().as_secs_f64() * 1e3),
    })
}

/// Basin-hops every size in `range` and scores it against `table`. Sizes
/// without a table entry are skipped with a warning.
pub fn run_benchmark(
    range: RangeInclusive<usize>,
    table: &ReferenceMinimaTable,
    opts: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    if opts.iterations == 0 {
        return Err(BenchError::Invalid("iterations must be at least 1".into()));
    }
    if !(opts.hit_tolerance > 0.0 && opts.hit_tolerance.is_finite()) {
        return Err(BenchError::Invalid(format!(
            "hit_tolerance must be positive, got {}",
            opts.hit_tolerance
        )));
    }
    let mut warnings = Vec::new();
    let mut jobs = Vec::new();
    for n in range {
        match table.get(n) {
            Some(reference) => jobs.push((n, reference)),
            None => warnings.push(format!("no reference entry for N={n}; skipped")),
        }
    }

    let threads = opts.threads.or_else(|| {
        std::env::var("EMKIT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let results: Vec<Result<BenchRow, BenchError>> = match threads {
        Some(k) if k > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| BenchError::Invalid(format!("cannot build thread pool: {e}")))?
            .install(|| {
                jobs.par_iter()
                    .map(|&(n, reference)| bench_one(n, reference, opts))
                    .collect()
            }),
        _ => jobs
            .par_iter()
            .map(|&(n, reference)| bench_one(n, reference, opts))
            .collect(),
    };

    let mut rows = Vec::with_capacity(results.len());
    let mut anomalies = Vec::new();
    for result in results {
        let row = result?;
        if row.rel_gap < -1e-6 {
            anomalies.push(format!(
                "N={}: found {:.9} beats the reference {:.9} (rel gap {:+.3e}); the table is stale",
                row.n, row.found, row.reference, row.rel_gap
            ));
        }
        rows.push(row);
    }
    Ok(BenchReport {
        rows,
        hit_tolerance: opts.hit_tolerance,
        warnings,
        anomalies,
    })
}
