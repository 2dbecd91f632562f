//! Potential-energy models: the shared model trait, the Lennard-Jones cluster
//! potential, and a finite-difference gradient oracle.
//!
//! The cluster potential is the 12-6 form
//!
//! ```text
//! V(r) = a / r^12 - b / r^6
//! ```
//!
//! summed over distinct pairs. In reduced units (a = b = 4, i.e. epsilon =
//! sigma = 1) a pair sits at its minimum V = -1 at r = 2^(1/6). An optional
//! 12-10 term `c / r^12 - d / r^10` can be stacked on a pair to model
//! hydrogen-bonding contacts.

use crate::config::Configuration;
use thiserror::Error;

/// Pair separations below this are treated as an overlap error rather than
/// letting r^-12 overflow toward infinity.
pub const MIN_PAIR_DISTANCE: f64 = 1e-8;

/// 2^(1/6), the separation at which a reduced-unit pair sits at its minimum.
pub const REDUCED_R_MIN: f64 = 1.122_462_048_309_373;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("atoms {i} and {j} overlap: r = {r:.3e} is below {MIN_PAIR_DISTANCE:.0e}")]
    AtomsTooClose { i: usize, j: usize, r: f64 },
    #[error("pair distance must be positive and finite, got {r}")]
    BadDistance { r: f64 },
    #[error("model describes {expected} atoms, configuration has {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("need at least {min} atoms, configuration has {got}")]
    TooFewAtoms { min: usize, got: usize },
    #[error("{context} produced a non-finite value")]
    NonFinite { context: &'static str },
    #[error("degenerate geometry: {context}")]
    Degenerate { context: &'static str },
    #[error("atom index {atom} out of range for {n_atoms} atoms")]
    AtomOutOfRange { atom: usize, n_atoms: usize },
}

/// A differentiable energy model over atomic configurations.
///
/// Implementations must be pure: same configuration in, same energy out, no
/// interior mutability. That is what makes it safe to share a model across
/// threads, which the benchmark fan-out relies on.
pub trait PotentialModel: Send + Sync {
    /// Number of atoms the model describes.
    fn n_atoms(&self) -> usize;

    fn energy(&self, config: &Configuration) -> Result<f64, PotentialError>;

    /// Analytic gradient of the energy, flattened to 3N components in atom
    /// order. The force on atom i is minus the i-th 3-vector slice.
    fn gradient(&self, config: &Configuration) -> Result<Vec<f64>, PotentialError>;

    fn energy_and_gradient(
        &self,
        config: &Configuration,
    ) -> Result<(f64, Vec<f64>), PotentialError> {
        Ok((self.energy(config)?, self.gradient(config)?))
    }

    /// Energy change from moving a single atom to `new_pos`.
    ///
    /// The default recomputes two full energies; models with pairwise
    /// structure should override it with an O(N) scan, which is what makes
    /// single-particle Monte Carlo sweeps cheap.
    fn move_delta(
        &self,
        config: &Configuration,
        atom: usize,
        new_pos: [f64; 3],
    ) -> Result<f64, PotentialError> {
        if atom >= config.n_atoms() {
            return Err(PotentialError::AtomOutOfRange {
                atom,
                n_atoms: config.n_atoms(),
            });
        }
        let before = self.energy(config)?;
        let mut moved = config.clone();
        moved.set_position(atom, new_pos);
        Ok(self.energy(&moved)? - before)
    }
}

/// Optional 12-10 hydrogen-bond coefficients, added on top of the 12-6 term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbParams {
    pub c: f64,
    pub d: f64,
}

/// Coefficients of the pair potential `a/r^12 - b/r^6 [+ c/r^12 - d/r^10]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LjParams {
    pub a: f64,
    pub b: f64,
    pub hb: Option<HbParams>,
}

impl LjParams {
    /// Reduced units, a = b = 4: pair minimum -1 at r = 2^(1/6).
    pub const REDUCED: Self = Self {
        a: 4.0,
        b: 4.0,
        hb: None,
    };

    /// Pair energy at separation `r`. No overlap guard here; the cluster
    /// model applies its own before calling.
    fn energy_unchecked(&self, r: f64) -> f64 {
        let inv2 = 1.0 / (r * r);
        let inv6 = inv2 * inv2 * inv2;
        let mut v = inv6 * (self.a * inv6 - self.b);
        if let Some(hb) = self.hb {
            // c/r^12 - d/r^10
            v += inv6 * inv6 * (hb.c - hb.d * r * r);
        }
        v
    }

    /// dV/dr divided by r, the factor multiplying (xi - xj) in the gradient.
    fn dv_dr_over_r(&self, r: f64) -> f64 {
        let inv2 = 1.0 / (r * r);
        let inv6 = inv2 * inv2 * inv2;
        let mut w = inv6 * inv2 * (6.0 * self.b - 12.0 * self.a * inv6);
        if let Some(hb) = self.hb {
            w += inv6 * inv6 * (10.0 * hb.d - 12.0 * hb.c * inv2);
        }
        w
    }
}

impl Default for LjParams {
    fn default() -> Self {
        Self::REDUCED
    }
}

/// Pair energy at separation `r`, rejecting non-positive, non-finite, and
/// overlapping distances.
pub fn lj_pair_energy(r: f64, params: &LjParams) -> Result<f64, PotentialError> {
    if !r.is_finite() || r <= 0.0 {
        return Err(PotentialError::BadDistance { r });
    }
    if r < MIN_PAIR_DISTANCE {
        return Err(PotentialError::AtomsTooClose { i: 0, j: 0, r });
    }
    Ok(params.energy_unchecked(r))
}

#[derive(Debug, Clone)]
enum PairTable {
    Uniform(LjParams),
    /// Upper triangle in row-major order: pair (i, j) with i < j lives at
    /// index i*(2n - i - 1)/2 + (j - i - 1).
    PerPair(Vec<LjParams>),
}

/// A cluster of N identical or per-pair-parameterized LJ sites.
///
/// Per-pair tables are taken as given; any combination rule is the caller's
/// responsibility.
#[derive(Debug, Clone)]
pub struct LjCluster {
    n_atoms: usize,
    pairs: PairTable,
}

impl LjCluster {
    pub fn uniform(n_atoms: usize, params: LjParams) -> Self {
        Self {
            n_atoms,
            pairs: PairTable::Uniform(params),
        }
    }

    /// Reduced-unit cluster, the default for cluster optimization work.
    pub fn reduced(n_atoms: usize) -> Self {
        Self::uniform(n_atoms, LjParams::REDUCED)
    }

    /// Builds a cluster with one parameter set per pair, upper triangle in
    /// row-major order (len must be n*(n-1)/2).
    pub fn with_pair_table(n_atoms: usize, table: Vec<LjParams>) -> Result<Self, PotentialError> {
        let expected = n_atoms * n_atoms.saturating_sub(1) / 2;
        if table.len() != expected {
            return Err(PotentialError::SizeMismatch {
                expected,
                got: table.len(),
            });
        }
        Ok(Self {
            n_atoms,
            pairs: PairTable::PerPair(table),
        })
    }

    fn params(&self, i: usize, j: usize) -> &LjParams {
        match &self.pairs {
            PairTable::Uniform(p) => p,
            PairTable::PerPair(t) => {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                &t[i * (2 * self.n_atoms - i - 1) / 2 + (j - i - 1)]
            }
        }
    }

    fn check(&self, config: &Configuration) -> Result<(), PotentialError> {
        if config.n_atoms() != self.n_atoms {
            return Err(PotentialError::SizeMismatch {
                expected: self.n_atoms,
                got: config.n_atoms(),
            });
        }
        if self.n_atoms < 2 {
            return Err(PotentialError::TooFewAtoms {
                min: 2,
                got: self.n_atoms,
            });
        }
        Ok(())
    }

    fn pair_r(
        &self,
        pos: &[[f64; 3]],
        i: usize,
        j: usize,
    ) -> Result<(f64, [f64; 3]), PotentialError> {
        let a = pos[i];
        let b = pos[j];
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let r = r2.sqrt();
        if r < MIN_PAIR_DISTANCE {
            return Err(PotentialError::AtomsTooClose { i, j, r });
        }
        Ok((r, d))
    }
}

impl PotentialModel for LjCluster {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn energy(&self, config: &Configuration) -> Result<f64, PotentialError> {
        self.check(config)?;
        let pos = config.positions();
        let mut e = 0.0;
        for i in 0..self.n_atoms {
            for j in (i + 1)..self.n_atoms {
                let (r, _) = self.pair_r(pos, i, j)?;
                e += self.params(i, j).energy_unchecked(r);
            }
        }
        if !e.is_finite() {
            return Err(PotentialError::NonFinite {
                context: "cluster energy",
            });
        }
        Ok(e)
    }

    fn gradient(&self, config: &Configuration) -> Result<Vec<f64>, PotentialError> {
        self.check(config)?;
        let pos = config.positions();
        let mut g = vec![0.0; 3 * self.n_atoms];
        for i in 0..self.n_atoms {
            for j in (i + 1)..self.n_atoms {
                let (r, d) = self.pair_r(pos, i, j)?;
                let w = self.params(i, j).dv_dr_over_r(r);
                for k in 0..3 {
                    g[3 * i + k] += w * d[k];
                    g[3 * j + k] -= w * d[k];
                }
            }
        }
        if !g.iter().all(|c| c.is_finite()) {
            return Err(PotentialError::NonFinite {
                context: "cluster gradient",
            });
        }
        Ok(g)
    }

    fn energy_and_gradient(
        &self,
        config: &Configuration,
    ) -> Result<(f64, Vec<f64>), PotentialError> {
        self.check(config)?;
        let pos = config.positions();
        let mut e = 0.0;
        let mut g = vec![0.0; 3 * self.n_atoms];
        for i in 0..self.n_atoms {
            for j in (i + 1)..self.n_atoms {
                let (r, d) = self.pair_r(pos, i, j)?;
                let p = self.params(i, j);
                e += p.energy_unchecked(r);
                let w = p.dv_dr_over_r(r);
                for k in 0..3 {
                    g[3 * i + k] += w * d[k];
                    g[3 * j + k] -= w * d[k];
                }
            }
        }
        if !e.is_finite() || !g.iter().all(|c| c.is_finite()) {
            return Err(PotentialError::NonFinite {
                context: "cluster energy/gradient",
            });
        }
        Ok((e, g))
    }

    fn move_delta(
        &self,
        config: &Configuration,
        atom: usize,
        new_pos: [f64; 3],
    ) -> Result<f64, PotentialError> {
        self.check(config)?;
        if atom >= self.n_atoms {
            return Err(PotentialError::AtomOutOfRange {
                atom,
                n_atoms: self.n_atoms,
            });
        }
        let pos = config.positions();
        let mut delta = 0.0;
        for j in 0..self.n_atoms {
            if j == atom {
                continue;
            }
            let (r_old, _) = self.pair_r(pos, atom, j)?;
            let b = pos[j];
            let d = [new_pos[0] - b[0], new_pos[1] - b[1], new_pos[2] - b[2]];
            let r_new = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if r_new < MIN_PAIR_DISTANCE {
                return Err(PotentialError::AtomsTooClose {
                    i: atom,
                    j,
                    r: r_new,
                });
            }
            let p = self.params(atom, j);
            delta += p.energy_unchecked(r_new) - p.energy_unchecked(r_old);
        }
        if !delta.is_finite() {
            return Err(PotentialError::NonFinite {
                context: "cluster move delta",
            });
        }
        Ok(delta)
    }
}

/// Central-difference gradient, the verification oracle for analytic
/// gradients: component k is (E(x + h e_k) - E(x - h e_k)) / 2h.
///
/// Independent of every analytic gradient path by construction; it only calls
/// `energy`. h = 1e-6 balances truncation against round-off for O(1) scales.
pub fn finite_difference_gradient(
    model: &dyn PotentialModel,
    config: &Configuration,
    h: f64,
) -> Result<Vec<f64>, PotentialError> {
    let flat = config.to_flat();
    let mut g = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for k in 0..flat.len() {
        probe[k] = flat[k] + h;
        let plus = model.energy(&Configuration::from_flat(&probe).expect("finite probe"))?;
        probe[k] = flat[k] - h;
        let minus = model.energy(&Configuration::from_flat(&probe).expect("finite probe"))?;
        probe[k] = flat[k];
        g[k] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}
