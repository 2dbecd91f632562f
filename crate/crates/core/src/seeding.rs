//! Starting-cluster generators.
//!
//! Four ways to produce an initial configuration for cluster optimization:
//!
//! * tetrahedral build-up: grow one atom at a time by capping exposed
//!   triangular faces and keeping the lowest-energy placement,
//! * icosahedral shells: a central atom wrapped in complete icosahedral
//!   layers (13, 55, 147, 309 atoms), with a partial outer layer filled
//!   greedily for in-between sizes,
//! * uniform random points in a ball,
//! * "big bang" starts with every coordinate drawn from a normal.
//!
//! All generators keep pairs at least [`MIN_SEED_DISTANCE`] apart so their
//! output is always evaluable by the potential without overlap errors, and
//! all are deterministic: the random modes take an explicit 64-bit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::Configuration;
use crate::local_opt::{lbfgs, OptimizerOptions};
use crate::potential::{lj_pair_energy, LjCluster, LjParams, REDUCED_R_MIN};

/// Lower bound on pair distances in every generated seed.
pub const MIN_SEED_DISTANCE: f64 = 0.5;

/// Largest cluster the icosahedral generator supports (three complete shells
/// around the two-shell core, i.e. the fourth magic number).
pub const MAX_ICOSAHEDRAL: usize = 309;

const MAGIC: [usize; 5] = [1, 13, 55, 147, 309];

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("{mode} seeding supports {min}..={max} atoms, got {n}")]
    BadCount {
        mode: &'static str,
        n: usize,
        min: usize,
        max: usize,
    },
    #[error("scale must be positive and finite, got {scale}")]
    BadScale { scale: f64 },
    #[error("no valid capping site: the cluster has no exposed triangular face")]
    NoCappingSite,
    #[error(
        "could not place atom {atom} at least {MIN_SEED_DISTANCE} from its neighbors \
         after {tries} draws; increase scale"
    )]
    RepairFailed { atom: usize, tries: usize },
    #[error("relaxation of the grown cluster failed: {0}")]
    Relax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    BuildUp,
    Icosahedral,
    RandomSphere,
    BigBang,
}

impl SeedMode {
    pub fn name(self) -> &'static str {
        match self {
            SeedMode::BuildUp => "build_up",
            SeedMode::Icosahedral => "icosahedral",
            SeedMode::RandomSphere => "random_sphere",
            SeedMode::BigBang => "big_bang",
        }
    }
}

impl std::str::FromStr for SeedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "build_up" => Ok(SeedMode::BuildUp),
            "icosahedral" => Ok(SeedMode::Icosahedral),
            "random_sphere" => Ok(SeedMode::RandomSphere),
            "big_bang" => Ok(SeedMode::BigBang),
            other => Err(format!(
                "unknown seed mode {other:?}, expected build_up, icosahedral, random_sphere, or big_bang"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedSpec {
    pub n_atoms: usize,
    pub mode: SeedMode,
    pub rng_seed: u64,
    /// Sphere radius factor or normal sigma for the random modes; ignored by
    /// the deterministic ones.
    pub scale: f64,
}

/// Builds a seed for any mode. The deterministic modes ignore `rng_seed` and
/// `scale`.
pub fn make_seed(spec: &SeedSpec) -> Result<Configuration, SeedError> {
    if spec.n_atoms == 0 {
        return Err(SeedError::BadCount {
            mode: spec.mode.name(),
            n: 0,
            min: 1,
            max: usize::MAX,
        });
    }
    match spec.mode {
        SeedMode::BuildUp => build_up_cluster(spec.n_atoms, LjParams::REDUCED),
        SeedMode::Icosahedral => icosahedral_seed(spec.n_atoms),
        SeedMode::RandomSphere | SeedMode::BigBang => random_seed(spec),
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn min_dist_to(points: &[[f64; 3]], p: [f64; 3]) -> f64 {
    points
        .iter()
        .map(|&q| dist(p, q))
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Icosahedral shells
// ---------------------------------------------------------------------------

/// Which site family fills the partial outer layer: the shell lattice itself
/// (`Ic`) or the face-centered family (`Fc`), which keeps the twelve shell
/// vertices and otherwise offers sites over the face centers of the layer
/// below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceLattice {
    Ic,
    Fc,
}

/// The twelve icosahedron vertices at circumradius `s`, plus the twenty
/// faces as index triples into the vertex list.
fn icosahedron(s: f64) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let r = (1.0 + phi * phi).sqrt();
    let a = s / r;
    let b = s * phi / r;
    let mut v = Vec::with_capacity(12);
    for &(x, y) in &[(a, b), (a, -b), (-a, b), (-a, -b)] {
        v.push([0.0, x, y]);
        v.push([x, y, 0.0]);
        v.push([y, 0.0, x]);
    }

    // Faces = mutually adjacent vertex triples; adjacency = separation close
    // to the icosahedron edge, 2s/sqrt(phi^2 + 1).
    let edge = 2.0 * s / r;
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in (i + 1)..12 {
            if (dist(v[i], v[j]) - edge).abs() > 1e-9 * s {
                continue;
            }
            for k in (j + 1)..12 {
                if (dist(v[i], v[k]) - edge).abs() <= 1e-9 * s
                    && (dist(v[j], v[k]) - edge).abs() <= 1e-9 * s
                {
                    faces.push([i, j, k]);
                }
            }
        }
    }
    debug_assert_eq!(faces.len(), 20);
    (v, faces)
}

fn quantize(p: [f64; 3]) -> [i64; 3] {
    p.map(|c| (c * 1e6).round() as i64)
}

fn dedup_sorted(mut sites: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    sites.sort_by_key(|&p| quantize(p));
    sites.dedup_by_key(|&mut p| quantize(p));
    sites
}

/// All lattice sites of shell `k`: barycentric integer combinations
/// i*A + j*B + l*C with i + j + l = k over each face, deduplicated along the
/// shared edges and vertices. Shell k holds 10k^2 + 2 sites.
fn shell_sites(vertices: &[[f64; 3]], faces: &[[usize; 3]], k: usize) -> Vec<[f64; 3]> {
    let mut sites = Vec::new();
    for f in faces {
        let (va, vb, vc) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        for i in 0..=k {
            for j in 0..=(k - i) {
                let l = k - i - j;
                let (fi, fj, fl) = (i as f64, j as f64, l as f64);
                sites.push([
                    fi * va[0] + fj * vb[0] + fl * vc[0],
                    fi * va[1] + fj * vb[1] + fl * vc[1],
                    fi * va[2] + fj * vb[2] + fl * vc[2],
                ]);
            }
        }
    }
    dedup_sorted(sites)
}

/// Face-centered candidate sites for the partial layer `k`: the twelve layer
/// vertices plus, per face, the offset family (i+1/3, j+1/3, l+1/3) with
/// i + j + l = k - 1. The offsets sit over the face centers of the layer
/// below and map onto each other under the icosahedral symmetry.
fn fc_sites(vertices: &[[f64; 3]], faces: &[[usize; 3]], k: usize) -> Vec<[f64; 3]> {
    let mut sites: Vec<[f64; 3]> = (0..12).map(|i| vertices[i].map(|c| c * k as f64)).collect();
    for f in faces {
        let (va, vb, vc) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        for i in 0..k {
            for j in 0..(k - i) {
                let l = k - 1 - i - j;
                let (fi, fj, fl) = (
                    i as f64 + 1.0 / 3.0,
                    j as f64 + 1.0 / 3.0,
                    l as f64 + 1.0 / 3.0,
                );
                sites.push([
                    fi * va[0] + fj * vb[0] + fl * vc[0],
                    fi * va[1] + fj * vb[1] + fl * vc[1],
                    fi * va[2] + fj * vb[2] + fl * vc[2],
                ]);
            }
        }
    }
    dedup_sorted(sites)
}

/// Greedily fills `want` atoms from `candidates` onto `placed`: most nearest
/// neighbors first, then lowest placement energy, then site order. Sites
/// closer than `clash` to an occupied position are not eligible.
fn greedy_fill(placed: &mut Vec<[f64; 3]>, candidates: &[[f64; 3]], want: usize, clash: f64) {
    let nn_cutoff = 1.35 * REDUCED_R_MIN;
    let mut used = vec![false; candidates.len()];
    for _ in 0..want {
        let mut best: Option<(usize, usize, f64)> = None; // (nn, idx, energy)
        for (idx, &site) in candidates.iter().enumerate() {
            if used[idx] || min_dist_to(placed, site) < clash {
                continue;
            }
            let nn = placed
                .iter()
                .filter(|&&p| dist(p, site) <= nn_cutoff)
                .count();
            let energy: f64 = placed
                .iter()
                .map(|&p| {
                    lj_pair_energy(dist(p, site), &LjParams::REDUCED).unwrap_or(f64::INFINITY)
                })
                .sum();
            // Candidates are visited in sorted site order, so on exact ties
            // the lowest site index wins by arrival.
            let better = match best {
                None => true,
                Some((bn, _, be)) => nn > bn || (nn == bn && energy < be - 1e-9),
            };
            if better {
                best = Some((nn, idx, energy));
            }
        }
        let (_, idx, _) = best.expect("candidate capacity exceeds any partial layer");
        used[idx] = true;
        placed.push(candidates[idx]);
    }
}

/// Central atom plus complete icosahedral shells, with the leftover filled
/// greedily on the next layer. Radial spacing is 2^(1/6) so the tightest
/// pairs sit at the reduced-unit minimum.
pub fn icosahedral_seed(n: usize) -> Result<Configuration, SeedError> {
    icosahedral_seed_with(n, SurfaceLattice::Ic)
}

pub fn icosahedral_seed_with(
    n: usize,
    surface: SurfaceLattice,
) -> Result<Configuration, SeedError> {
    if !(1..=MAX_ICOSAHEDRAL).contains(&n) {
        return Err(SeedError::BadCount {
            mode: "icosahedral",
            n,
            min: 1,
            max: MAX_ICOSAHEDRAL,
        });
    }
    let (vertices, faces) = icosahedron(REDUCED_R_MIN);
    let mut placed = vec![[0.0, 0.0, 0.0]];
    let mut shell = 0;
    while shell + 1 < MAGIC.len() && MAGIC[shell + 1] <= n {
        shell += 1;
        placed.extend(shell_sites(&vertices, &faces, shell));
    }
    let remaining = n - placed.len();
    if remaining > 0 {
        let k = shell + 1;
        let candidates = match surface {
            SurfaceLattice::Ic => shell_sites(&vertices, &faces, k),
            SurfaceLattice::Fc => fc_sites(&vertices, &faces, k),
        };
        greedy_fill(&mut placed, &candidates, remaining, 0.9);
    }
    debug_assert_eq!(placed.len(), n);
    Ok(Configuration::new(placed).expect("icosahedral sites are finite"))
}

// ---------------------------------------------------------------------------
// Tetrahedral build-up
// ---------------------------------------------------------------------------

fn relax(points: Vec<[f64; 3]>, params: LjParams) -> Result<Configuration, SeedError> {
    let config = Configuration::new(points).expect("grown clusters are finite and non-empty");
    if config.n_atoms() < 2 {
        return Ok(config);
    }
    let model = LjCluster::uniform(config.n_atoms(), params);
    let trace = lbfgs(&model, &config, &OptimizerOptions::tight())
        .map_err(|e| SeedError::Relax(e.to_string()))?;
    Ok(trace.final_config)
}

/// Adds one atom to a locally minimized cluster: enumerates the tetrahedral
/// capping positions over every exposed triangular face, keeps the placement
/// with the lowest energy, and relaxes the result.
///
/// This evaluates every capping site instead of guessing, which is cheap at
/// these sizes and can only improve the chosen site.
pub fn build_up_grow(config: &Configuration, params: LjParams) -> Result<Configuration, SeedError> {
    let n = config.n_atoms();
    if n < 3 {
        return Err(SeedError::BadCount {
            mode: "build_up",
            n,
            min: 3,
            max: usize::MAX,
        });
    }
    let pos = config.positions();
    let bond = 1.5 * REDUCED_R_MIN;

    let mut best: Option<([f64; 3], f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            if dist(pos[i], pos[j]) > bond {
                continue;
            }
            for k in (j + 1)..n {
                if dist(pos[i], pos[k]) > bond || dist(pos[j], pos[k]) > bond {
                    continue;
                }
                // Tetrahedral cap over face (i, j, k), on both sides; the
                // buried side disqualifies itself via the clearance check.
                let (a, b, c) = (pos[i], pos[j], pos[k]);
                let centroid = [
                    (a[0] + b[0] + c[0]) / 3.0,
                    (a[1] + b[1] + c[1]) / 3.0,
                    (a[2] + b[2] + c[2]) / 3.0,
                ];
                let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let normal = [
                    ab[1] * ac[2] - ab[2] * ac[1],
                    ab[2] * ac[0] - ab[0] * ac[2],
                    ab[0] * ac[1] - ab[1] * ac[0],
                ];
                let norm = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
                if norm < 1e-12 {
                    continue;
                }
                let mean_edge = (dist(a, b) + dist(a, c) + dist(b, c)) / 3.0;
                let height = mean_edge * (2.0f64 / 3.0).sqrt();
                for side in [1.0, -1.0] {
                    let cap = [
                        centroid[0] + side * height * normal[0] / norm,
                        centroid[1] + side * height * normal[1] / norm,
                        centroid[2] + side * height * normal[2] / norm,
                    ];
                    if min_dist_to(pos, cap) < 0.8 {
                        continue;
                    }
                    let energy: f64 = pos
                        .iter()
                        .map(|&p| lj_pair_energy(dist(p, cap), &params).unwrap_or(f64::INFINITY))
                        .sum();
                    if energy.is_finite() && best.is_none_or(|(_, be)| energy < be) {
                        best = Some((cap, energy));
                    }
                }
            }
        }
    }

    let (cap, _) = best.ok_or(SeedError::NoCappingSite)?;
    let mut grown = pos.to_vec();
    grown.push(cap);
    relax(grown, params)
}

/// Grows a cluster from scratch to `n` atoms by repeated capping. The first
/// four sizes are closed forms (atom, dimer, triangle, tetrahedron).
pub fn build_up_cluster(n: usize, params: LjParams) -> Result<Configuration, SeedError> {
    if n == 0 {
        return Err(SeedError::BadCount {
            mode: "build_up",
            n,
            min: 1,
            max: usize::MAX,
        });
    }
    let r = REDUCED_R_MIN;
    let base: Vec<[f64; 3]> = match n {
        1 => vec![[0.0; 3]],
        2 => vec![[0.0; 3], [r, 0.0, 0.0]],
        _ => {
            let h = r * 3f64.sqrt() / 2.0;
            vec![[0.0; 3], [r, 0.0, 0.0], [r / 2.0, h, 0.0]]
        }
    };
    if n <= 3 {
        return relax(base, params);
    }
    let mut cluster = relax(base, params)?;
    while cluster.n_atoms() < n {
        cluster = build_up_grow(&cluster, params)?;
    }
    Ok(cluster)
}

// ---------------------------------------------------------------------------
// Random starts
// ---------------------------------------------------------------------------

const REPAIR_TRIES: usize = 1000;

/// Draws a random start per `spec.mode` (`random_sphere` or `big_bang`),
/// resampling each atom until it clears its neighbors by
/// [`MIN_SEED_DISTANCE`].
pub fn random_seed(spec: &SeedSpec) -> Result<Configuration, SeedError> {
    if spec.n_atoms == 0 {
        return Err(SeedError::BadCount {
            mode: spec.mode.name(),
            n: 0,
            min: 1,
            max: usize::MAX,
        });
    }
    if !spec.scale.is_finite() || spec.scale <= 0.0 {
        return Err(SeedError::BadScale { scale: spec.scale });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut points: Vec<[f64; 3]> = Vec::with_capacity(spec.n_atoms);
    match spec.mode {
        SeedMode::RandomSphere => {
            let radius = spec.scale * (spec.n_atoms as f64).cbrt();
            for atom in 0..spec.n_atoms {
                place(&mut points, atom, || loop {
                    let p = [
                        rng.random_range(-radius..=radius),
                        rng.random_range(-radius..=radius),
                        rng.random_range(-radius..=radius),
                    ];
                    if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= radius * radius {
                        return p;
                    }
                })?;
            }
        }
        SeedMode::BigBang => {
            let normal = Normal::new(0.0, spec.scale).expect("scale checked above");
            for atom in 0..spec.n_atoms {
                place(&mut points, atom, || {
                    [
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    ]
                })?;
            }
        }
        // Deterministic modes are dispatched by make_seed, not here.
        SeedMode::BuildUp => return build_up_cluster(spec.n_atoms, LjParams::REDUCED),
        SeedMode::Icosahedral => return icosahedral_seed(spec.n_atoms),
    }
    Ok(Configuration::new(points).expect("random seeds are finite"))
}

fn place(
    points: &mut Vec<[f64; 3]>,
    atom: usize,
    mut draw: impl FnMut() -> [f64; 3],
) -> Result<(), SeedError> {
    for _ in 0..REPAIR_TRIES {
        let p = draw();
        if points.is_empty() || min_dist_to(points, p) >= MIN_SEED_DISTANCE {
            points.push(p);
            return Ok(());
        }
    }
    Err(SeedError::RepairFailed {
        atom,
        tries: REPAIR_TRIES,
    })
}
