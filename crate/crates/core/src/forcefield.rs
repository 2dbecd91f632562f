//! Simplified AMBER-form and CHARMM-form molecular mechanics potentials over
//! a user-supplied topology.
//!
//! Bonded terms are harmonic bonds and angles plus periodic dihedrals; the
//! CHARMM form additionally evaluates Urey-Bradley 1,3 springs and harmonic
//! impropers. Nonbonded terms are 12-6 van der Waals and Coulomb
//! `q_i q_j / (eps * r)` electrostatics with an optional hard distance
//! cutoff. Truncation is a plain cut: a pair's contribution drops to zero the
//! instant it crosses the cutoff, so the energy surface has a small step
//! there. No switching function is applied.
//!
//! Angles are radians everywhere in memory; the topology file format takes
//! degrees and the loader converts.
//!
//! Note the two unrelated epsilons: each atom's van der Waals well depth and
//! the global Coulomb dielectric. They are stored as separate fields
//! (`VdwParams::eps`, `ForceFieldTopology::dielectric`) and never combined.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::config::Configuration;
use crate::potential::{PotentialError, PotentialModel, MIN_PAIR_DISTANCE};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("atom index {index} out of range for {n_atoms} atoms")]
    BadIndex { index: usize, n_atoms: usize },
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from the standalone energy helpers, which both validate the
/// topology and evaluate it.
#[derive(Debug, Error)]
pub enum FfError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Which functional family the bonded terms follow.
///
/// Both share harmonic bonds and angles. They differ in the dihedral
/// prefactor (AMBER reads the stored constant as a barrier height V_n and
/// applies V_n/2; CHARMM applies it directly) and in that only the CHARMM
/// form evaluates Urey-Bradley and improper terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfForm {
    Amber,
    Charmm,
}

impl FfForm {
    pub fn name(self) -> &'static str {
        match self {
            FfForm::Amber => "amber",
            FfForm::Charmm => "charmm",
        }
    }
}

impl std::fmt::Display for FfForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FfForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "amber" => Ok(FfForm::Amber),
            "charmm" => Ok(FfForm::Charmm),
            other => Err(format!(
                "unknown force-field form '{other}' (expected amber or charmm)"
            )),
        }
    }
}

/// Harmonic bond `k_b (b - b_0)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub k_b: f64,
    pub b_0: f64,
}

/// Harmonic angle `k_theta (theta - theta_0)^2` centered on atom `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub k_theta: f64,
    /// Equilibrium angle in radians.
    pub theta_0: f64,
}

/// Periodic torsion about the j-k axis.
///
/// The stored constant is V_n under the AMBER form (energy
/// `(V_n/2)(1 + cos(n phi - delta))`) and k_phi under the CHARMM form
/// (energy `k_phi (1 + cos(n phi - delta))`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dihedral {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub k_phi: f64,
    /// Periodicity, at least 1.
    pub n: u32,
    /// Phase in radians.
    pub delta: f64,
}

/// Urey-Bradley 1,3 spring `k_u (u - u_0)^2` (CHARMM form only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UreyBradley {
    pub i: usize,
    pub k: usize,
    pub k_u: f64,
    pub u_0: f64,
}

/// Harmonic improper `k_w (omega - omega_0)^2` (CHARMM form only); omega is
/// the i-j-k-l torsion with the difference wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improper {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub k_w: f64,
    /// Equilibrium improper angle in radians.
    pub w_0: f64,
}

/// Per-atom Lorentz-Berthelot style van der Waals parameters: pair minimum
/// position `R_min_ij = rmin_half_i + rmin_half_j` and well scale
/// `eps_ij = sqrt(eps_i * eps_j)`, giving `A_ij = eps_ij R_min_ij^12` and
/// `B_ij = eps_ij R_min_ij^6`. An atom with `eps = 0` takes no part in van
/// der Waals sums.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VdwParams {
    pub rmin_half: f64,
    pub eps: f64,
}

/// A validated-on-use description of the bonded and nonbonded terms of a
/// molecular system. Freshly constructed topologies carry zero charges and
/// zero van der Waals parameters, a dielectric of 1, and no terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceFieldTopology {
    n_atoms: usize,
    pub bonds: Vec<Bond>,
    pub angles: Vec<Angle>,
    pub dihedrals: Vec<Dihedral>,
    pub urey_bradley: Vec<UreyBradley>,
    pub impropers: Vec<Improper>,
    pub charges: Vec<f64>,
    pub vdw: Vec<VdwParams>,
    /// Coulomb dielectric, strictly positive. Set programmatically; the file
    /// format has no record for it.
    pub dielectric: f64,
    exclusions: BTreeSet<(usize, usize)>,
}

impl ForceFieldTopology {
    pub fn new(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            bonds: Vec::new(),
            angles: Vec::new(),
            dihedrals: Vec::new(),
            urey_bradley: Vec::new(),
            impropers: Vec::new(),
            charges: vec![0.0; n_atoms],
            vdw: vec![VdwParams::default(); n_atoms],
            dielectric: 1.0,
            exclusions: BTreeSet::new(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Marks the pair as excluded from nonbonded sums. Order-insensitive.
    pub fn exclude(&mut self, i: usize, j: usize) {
        self.exclusions.insert((i.min(j), i.max(j)));
    }

    /// Explicitly recorded exclusions as normalized (low, high) pairs.
    pub fn exclusions(&self) -> &BTreeSet<(usize, usize)> {
        &self.exclusions
    }

    /// The 1-2 and 1-3 pairs implied by the bond list and angle records:
    /// bonded pairs, angle end atoms, and second neighbors in the bond graph.
    pub fn derived_exclusions(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); self.n_atoms];
        for b in &self.bonds {
            if b.i < self.n_atoms && b.j < self.n_atoms && b.i != b.j {
                out.insert((b.i.min(b.j), b.i.max(b.j)));
                neighbors[b.i].push(b.j);
                neighbors[b.j].push(b.i);
            }
        }
        for nb in &neighbors {
            for a in 0..nb.len() {
                for b in a + 1..nb.len() {
                    if nb[a] != nb[b] {
                        out.insert((nb[a].min(nb[b]), nb[a].max(nb[b])));
                    }
                }
            }
        }
        for ang in &self.angles {
            if ang.i < self.n_atoms && ang.k < self.n_atoms && ang.i != ang.k {
                out.insert((ang.i.min(ang.k), ang.i.max(ang.k)));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.n_atoms == 0 {
            return Err(TopologyError::Invalid(
                "topology must describe at least one atom".into(),
            ));
        }
        if self.charges.len() != self.n_atoms || self.vdw.len() != self.n_atoms {
            return Err(TopologyError::Invalid(format!(
                "per-atom arrays must have length {} (got {} charges, {} vdw entries)",
                self.n_atoms,
                self.charges.len(),
                self.vdw.len()
            )));
        }
        let check_idx = |index: usize| {
            if index >= self.n_atoms {
                Err(TopologyError::BadIndex {
                    index,
                    n_atoms: self.n_atoms,
                })
            } else {
                Ok(())
            }
        };
        let check_k = |k: f64, what: &str| {
            if !k.is_finite() || k < 0.0 {
                Err(TopologyError::Invalid(format!(
                    "{what} force constant must be finite and non-negative, got {k}"
                )))
            } else {
                Ok(())
            }
        };
        for b in &self.bonds {
            check_idx(b.i)?;
            check_idx(b.j)?;
            if b.i == b.j {
                return Err(TopologyError::Invalid(format!(
                    "bond connects atom {} to itself",
                    b.i
                )));
            }
            check_k(b.k_b, "bond")?;
            if !b.b_0.is_finite() || b.b_0 < 0.0 {
                return Err(TopologyError::Invalid(format!(
                    "bond length b_0 must be non-negative, got {}",
                    b.b_0
                )));
            }
        }
        for a in &self.angles {
            for idx in [a.i, a.j, a.k] {
                check_idx(idx)?;
            }
            if a.i == a.j || a.j == a.k || a.i == a.k {
                return Err(TopologyError::Invalid(format!(
                    "angle atoms must be distinct, got {} {} {}",
                    a.i, a.j, a.k
                )));
            }
            check_k(a.k_theta, "angle")?;
            if !a.theta_0.is_finite() {
                return Err(TopologyError::Invalid(
                    "angle theta_0 must be finite".into(),
                ));
            }
        }
        for d in &self.dihedrals {
            let q = [d.i, d.j, d.k, d.l];
            for idx in q {
                check_idx(idx)?;
            }
            if (0..4).any(|a| (a + 1..4).any(|b| q[a] == q[b])) {
                return Err(TopologyError::Invalid(format!(
                    "dihedral atoms must be distinct, got {} {} {} {}",
                    d.i, d.j, d.k, d.l
                )));
            }
            check_k(d.k_phi, "dihedral")?;
            if d.n == 0 {
                return Err(TopologyError::Invalid(
                    "dihedral periodicity n must be at least 1".into(),
                ));
            }
            if !d.delta.is_finite() {
                return Err(TopologyError::Invalid(
                    "dihedral phase must be finite".into(),
                ));
            }
        }
        for u in &self.urey_bradley {
            check_idx(u.i)?;
            check_idx(u.k)?;
            if u.i == u.k {
                return Err(TopologyError::Invalid(format!(
                    "urey-bradley term connects atom {} to itself",
                    u.i
                )));
            }
            check_k(u.k_u, "urey-bradley")?;
            if !u.u_0.is_finite() || u.u_0 < 0.0 {
                return Err(TopologyError::Invalid(format!(
                    "urey-bradley length u_0 must be non-negative, got {}",
                    u.u_0
                )));
            }
        }
        for im in &self.impropers {
            let q = [im.i, im.j, im.k, im.l];
            for idx in q {
                check_idx(idx)?;
            }
            if (0..4).any(|a| (a + 1..4).any(|b| q[a] == q[b])) {
                return Err(TopologyError::Invalid(format!(
                    "improper atoms must be distinct, got {} {} {} {}",
                    im.i, im.j, im.k, im.l
                )));
            }
            check_k(im.k_w, "improper")?;
            if !im.w_0.is_finite() {
                return Err(TopologyError::Invalid(
                    "improper omega_0 must be finite".into(),
                ));
            }
        }
        for (i, q) in self.charges.iter().enumerate() {
            if !q.is_finite() {
                return Err(TopologyError::Invalid(format!(
                    "charge on atom {i} is not finite"
                )));
            }
        }
        for (i, v) in self.vdw.iter().enumerate() {
            if !v.rmin_half.is_finite() || v.rmin_half < 0.0 || !v.eps.is_finite() || v.eps < 0.0 {
                return Err(TopologyError::Invalid(format!(
                    "vdw parameters on atom {i} must be finite and non-negative"
                )));
            }
        }
        if !(self.dielectric > 0.0 && self.dielectric.is_finite()) {
            return Err(TopologyError::Invalid(format!(
                "dielectric must be positive and finite, got {}",
                self.dielectric
            )));
        }
        for &(i, j) in &self.exclusions {
            check_idx(i)?;
            check_idx(j)?;
            if i == j {
                return Err(TopologyError::Invalid(format!(
                    "atom {i} excluded against itself"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term energies; `total` is always their exact sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub bond: f64,
    pub angle: f64,
    pub dihedral: f64,
    pub urey_bradley: f64,
    pub improper: f64,
    pub vdw: f64,
    pub electrostatic: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn finalized(mut self) -> Self {
        self.total = self.bond
            + self.angle
            + self.dihedral
            + self.urey_bradley
            + self.improper
            + self.vdw
            + self.electrostatic;
        self
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn add_scaled(grad: &mut [f64], atom: usize, factor: f64, v: [f64; 3]) {
    grad[3 * atom] += factor * v[0];
    grad[3 * atom + 1] += factor * v[1];
    grad[3 * atom + 2] += factor * v[2];
}

/// Harmonic spring on the i-j distance; shared by bonds and Urey-Bradley.
fn pair_spring(
    config: &Configuration,
    i: usize,
    j: usize,
    k: f64,
    r0: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64, PotentialError> {
    let d = sub(config.position(i), config.position(j));
    let r = norm(d);
    if r < MIN_PAIR_DISTANCE {
        return Err(PotentialError::AtomsTooClose { i, j, r });
    }
    let stretch = r - r0;
    if let Some(g) = grad {
        let f = 2.0 * k * stretch / r;
        add_scaled(g, i, f, d);
        add_scaled(g, j, -f, d);
    }
    Ok(k * stretch * stretch)
}

/// A unit vector perpendicular to `u`, used when an angle is exactly
/// straight and the usual in-plane bending direction is undefined.
fn any_perpendicular(u: [f64; 3]) -> [f64; 3] {
    let pick = if u[0].abs() < 0.9 * norm(u) {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let p = cross(u, pick);
    let n = norm(p);
    [p[0] / n, p[1] / n, p[2] / n]
}

fn angle_term(
    config: &Configuration,
    a: &Angle,
    grad: Option<&mut [f64]>,
) -> Result<f64, PotentialError> {
    let u = sub(config.position(a.i), config.position(a.j));
    let v = sub(config.position(a.k), config.position(a.j));
    let lu = norm(u);
    let lv = norm(v);
    if lu < MIN_PAIR_DISTANCE {
        return Err(PotentialError::AtomsTooClose {
            i: a.i,
            j: a.j,
            r: lu,
        });
    }
    if lv < MIN_PAIR_DISTANCE {
        return Err(PotentialError::AtomsTooClose {
            i: a.k,
            j: a.j,
            r: lv,
        });
    }
    let uh = [u[0] / lu, u[1] / lu, u[2] / lu];
    let vh = [v[0] / lv, v[1] / lv, v[2] / lv];
    let cos_t = dot(uh, vh).clamp(-1.0, 1.0);
    let theta = cos_t.acos();
    let diff = theta - a.theta_0;
    if let Some(g) = grad {
        let de_dtheta = 2.0 * a.k_theta * diff;
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        let (di, dk) = if sin_t < 1e-8 {
            // Straight (or folded) angle: the bending direction is any
            // perpendicular to the arms. The magnitude is still right; the
            // direction choice is arbitrary at this measure-zero geometry.
            let p = any_perpendicular(uh);
            (
                [p[0] / lu, p[1] / lu, p[2] / lu],
                [p[0] / lv, p[1] / lv, p[2] / lv],
            )
        } else {
            (
                [
                    (cos_t * uh[0] - vh[0]) / (lu * sin_t),
                    (cos_t * uh[1] - vh[1]) / (lu * sin_t),
                    (cos_t * uh[2] - vh[2]) / (lu * sin_t),
                ],
                [
                    (cos_t * vh[0] - uh[0]) / (lv * sin_t),
                    (cos_t * vh[1] - uh[1]) / (lv * sin_t),
                    (cos_t * vh[2] - uh[2]) / (lv * sin_t),
                ],
            )
        };
        add_scaled(g, a.i, de_dtheta, di);
        add_scaled(g, a.k, de_dtheta, dk);
        add_scaled(
            g,
            a.j,
            -de_dtheta,
            [di[0] + dk[0], di[1] + dk[1], di[2] + dk[2]],
        );
    }
    Ok(a.k_theta * diff * diff)
}

/// Signed torsion angle of the i-j-k-l chain (right-handed about j->k, zero
/// at cis) and, optionally, its derivative with respect to each atom.
type TorsionGrad = [[f64; 3]; 4];

fn torsion(
    config: &Configuration,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
    want_grad: bool,
) -> Result<(f64, Option<TorsionGrad>), PotentialError> {
    let b1 = sub(config.position(j), config.position(i));
    let b2 = sub(config.position(k), config.position(j));
    let b3 = sub(config.position(l), config.position(k));
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let n1sq = dot(n1, n1);
    let n2sq = dot(n2, n2);
    let lb2 = norm(b2);
    if lb2 < MIN_PAIR_DISTANCE || n1sq < 1e-16 || n2sq < 1e-16 {
        return Err(PotentialError::Degenerate {
            context: "torsion over collinear or coincident atoms",
        });
    }
    let phi = f64::atan2(dot(cross(n1, n2), b2) / lb2, dot(n1, n2));
    if !want_grad {
        return Ok((phi, None));
    }
    // End-atom derivatives point along the plane normals; the middle atoms
    // follow from translation invariance plus the projections of the outer
    // bonds onto the axis. Signs here assume b1 and b3 point down the chain.
    let fi = [
        -lb2 / n1sq * n1[0],
        -lb2 / n1sq * n1[1],
        -lb2 / n1sq * n1[2],
    ];
    let fl = [lb2 / n2sq * n2[0], lb2 / n2sq * n2[1], lb2 / n2sq * n2[2]];
    let s = dot(b1, b2) / (lb2 * lb2);
    let t = dot(b3, b2) / (lb2 * lb2);
    let fj = [
        (-1.0 - s) * fi[0] + t * fl[0],
        (-1.0 - s) * fi[1] + t * fl[1],
        (-1.0 - s) * fi[2] + t * fl[2],
    ];
    let fk = [
        s * fi[0] + (-1.0 - t) * fl[0],
        s * fi[1] + (-1.0 - t) * fl[1],
        s * fi[2] + (-1.0 - t) * fl[2],
    ];
    Ok((phi, Some([fi, fj, fk, fl])))
}

/// Wraps an angle difference into (-pi, pi].
fn wrap_to_pi(x: f64) -> f64 {
    let m = x.rem_euclid(std::f64::consts::TAU);
    if m > std::f64::consts::PI {
        m - std::f64::consts::TAU
    } else {
        m
    }
}

fn check_size(topo: &ForceFieldTopology, config: &Configuration) -> Result<(), PotentialError> {
    if config.n_atoms() != topo.n_atoms {
        return Err(PotentialError::SizeMismatch {
            expected: topo.n_atoms,
            got: config.n_atoms(),
        });
    }
    Ok(())
}

fn eval_bonded(
    topo: &ForceFieldTopology,
    config: &Configuration,
    form: FfForm,
    mut grad: Option<&mut [f64]>,
) -> Result<EnergyBreakdown, PotentialError> {
    let mut out = EnergyBreakdown::default();
    for b in &topo.bonds {
        out.bond += pair_spring(config, b.i, b.j, b.k_b, b.b_0, grad.as_deref_mut())?;
    }
    for a in &topo.angles {
        out.angle += angle_term(config, a, grad.as_deref_mut())?;
    }
    for d in &topo.dihedrals {
        let prefactor = match form {
            FfForm::Amber => d.k_phi / 2.0,
            FfForm::Charmm => d.k_phi,
        };
        let (phi, dphi) = torsion(config, d.i, d.j, d.k, d.l, grad.is_some())?;
        let arg = f64::from(d.n) * phi - d.delta;
        out.dihedral += prefactor * (1.0 + arg.cos());
        if let Some(g) = grad.as_deref_mut() {
            let de_dphi = -prefactor * f64::from(d.n) * arg.sin();
            let dphi = dphi.expect("torsion returns derivatives when asked");
            for (atom, dv) in [d.i, d.j, d.k, d.l].into_iter().zip(dphi) {
                add_scaled(g, atom, de_dphi, dv);
            }
        }
    }
    if form == FfForm::Charmm {
        for u in &topo.urey_bradley {
            out.urey_bradley += pair_spring(config, u.i, u.k, u.k_u, u.u_0, grad.as_deref_mut())?;
        }
        for im in &topo.impropers {
            let (omega, domega) = torsion(config, im.i, im.j, im.k, im.l, grad.is_some())?;
            let diff = wrap_to_pi(omega - im.w_0);
            out.improper += im.k_w * diff * diff;
            if let Some(g) = grad.as_deref_mut() {
                let de_domega = 2.0 * im.k_w * diff;
                let domega = domega.expect("torsion returns derivatives when asked");
                for (atom, dv) in [im.i, im.j, im.k, im.l].into_iter().zip(domega) {
                    add_scaled(g, atom, de_domega, dv);
                }
            }
        }
    }
    Ok(out.finalized())
}

fn eval_nonbonded(
    topo: &ForceFieldTopology,
    excluded: &BTreeSet<(usize, usize)>,
    config: &Configuration,
    cutoff: Option<f64>,
    mut grad: Option<&mut [f64]>,
) -> Result<EnergyBreakdown, PotentialError> {
    let mut out = EnergyBreakdown::default();
    let n = topo.n_atoms;
    for i in 0..n {
        for j in i + 1..n {
            if excluded.contains(&(i, j)) {
                continue;
            }
            let qq = topo.charges[i] * topo.charges[j];
            let eps = (topo.vdw[i].eps * topo.vdw[j].eps).sqrt();
            if qq == 0.0 && eps == 0.0 {
                continue;
            }
            let d = sub(config.position(i), config.position(j));
            let r = norm(d);
            if r < MIN_PAIR_DISTANCE {
                return Err(PotentialError::AtomsTooClose { i, j, r });
            }
            if let Some(c) = cutoff {
                if r > c {
                    continue;
                }
            }
            let mut de_dr = 0.0;
            if eps > 0.0 {
                let rmin = topo.vdw[i].rmin_half + topo.vdw[j].rmin_half;
                let a = eps * rmin.powi(12);
                let b = eps * rmin.powi(6);
                let inv = 1.0 / r;
                let inv6 = inv.powi(6);
                let inv12 = inv6 * inv6;
                out.vdw += a * inv12 - b * inv6;
                de_dr += (-12.0 * a * inv12 + 6.0 * b * inv6) * inv;
            }
            if qq != 0.0 {
                let e = qq / (topo.dielectric * r);
                out.electrostatic += e;
                de_dr += -e / r;
            }
            if let Some(g) = grad.as_deref_mut() {
                let f = de_dr / r;
                add_scaled(g, i, f, d);
                add_scaled(g, j, -f, d);
            }
        }
    }
    Ok(out.finalized())
}

fn merge(bonded: EnergyBreakdown, nonbonded: EnergyBreakdown) -> EnergyBreakdown {
    EnergyBreakdown {
        bond: bonded.bond,
        angle: bonded.angle,
        dihedral: bonded.dihedral,
        urey_bradley: bonded.urey_bradley,
        improper: bonded.improper,
        vdw: nonbonded.vdw,
        electrostatic: nonbonded.electrostatic,
        total: 0.0,
    }
    .finalized()
}

/// Bonded terms only (bond, angle, dihedral, plus Urey-Bradley and improper
/// under the CHARMM form); nonbonded fields are zero.
pub fn bonded_energy(
    topo: &ForceFieldTopology,
    config: &Configuration,
    form: FfForm,
) -> Result<EnergyBreakdown, FfError> {
    topo.validate()?;
    check_size(topo, config)?;
    Ok(eval_bonded(topo, config, form, None)?)
}

/// Nonbonded terms only, under the default exclusion policy (explicit
/// exclusions plus derived 1-2 and 1-3 pairs); bonded fields are zero.
///
/// Pairs with zero charge product and zero combined well depth take no part
/// in the sum, so they may sit anywhere, including on top of each other; an
/// interacting pair closer than the overlap floor is a domain error.
pub fn nonbonded_energy(
    topo: &ForceFieldTopology,
    config: &Configuration,
    cutoff: Option<f64>,
) -> Result<EnergyBreakdown, FfError> {
    topo.validate()?;
    validate_cutoff(cutoff)?;
    check_size(topo, config)?;
    let mut excluded = topo.derived_exclusions();
    excluded.extend(topo.exclusions.iter().copied());
    Ok(eval_nonbonded(topo, &excluded, config, cutoff, None)?)
}

/// Full breakdown and analytic 3N gradient in one pass.
pub fn total_energy_and_gradient(
    topo: &ForceFieldTopology,
    config: &Configuration,
    form: FfForm,
    cutoff: Option<f64>,
) -> Result<(EnergyBreakdown, Vec<f64>), FfError> {
    let model = ForceFieldModel::new(topo.clone(), form, cutoff)?;
    Ok(model.breakdown_and_gradient(config)?)
}

fn validate_cutoff(cutoff: Option<f64>) -> Result<(), TopologyError> {
    if let Some(c) = cutoff {
        if !(c > 0.0 && c.is_finite()) {
            return Err(TopologyError::Invalid(format!(
                "cutoff must be positive and finite, got {c}"
            )));
        }
    }
    Ok(())
}

/// A force field bound to a topology, form, and cutoff, usable anywhere a
/// `PotentialModel` is.
#[derive(Debug, Clone)]
pub struct ForceFieldModel {
    topology: ForceFieldTopology,
    form: FfForm,
    cutoff: Option<f64>,
    excluded: BTreeSet<(usize, usize)>,
}

impl ForceFieldModel {
    /// Validates the topology and applies the default exclusion policy:
    /// explicit exclusions plus derived 1-2 and 1-3 pairs. 1-4 pairs are
    /// summed at full strength.
    pub fn new(
        topology: ForceFieldTopology,
        form: FfForm,
        cutoff: Option<f64>,
    ) -> Result<Self, TopologyError> {
        Self::with_exclusion_policy(topology, form, cutoff, true)
    }

    /// As `new`, but `auto_exclude_bonded = false` keeps only the explicit
    /// exclusion list, putting 1-2 and 1-3 pairs back into the nonbonded sum.
    pub fn with_exclusion_policy(
        topology: ForceFieldTopology,
        form: FfForm,
        cutoff: Option<f64>,
        auto_exclude_bonded: bool,
    ) -> Result<Self, TopologyError> {
        topology.validate()?;
        validate_cutoff(cutoff)?;
        let mut excluded = if auto_exclude_bonded {
            topology.derived_exclusions()
        } else {
            BTreeSet::new()
        };
        excluded.extend(topology.exclusions.iter().copied());
        Ok(Self {
            topology,
            form,
            cutoff,
            excluded,
        })
    }

    pub fn topology(&self) -> &ForceFieldTopology {
        &self.topology
    }

    pub fn form(&self) -> FfForm {
        self.form
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    pub fn breakdown(&self, config: &Configuration) -> Result<EnergyBreakdown, PotentialError> {
        check_size(&self.topology, config)?;
        let bonded = eval_bonded(&self.topology, config, self.form, None)?;
        let nonbonded = eval_nonbonded(&self.topology, &self.excluded, config, self.cutoff, None)?;
        Ok(merge(bonded, nonbonded))
    }

    pub fn breakdown_and_gradient(
        &self,
        config: &Configuration,
    ) -> Result<(EnergyBreakdown, Vec<f64>), PotentialError> {
        check_size(&self.topology, config)?;
        let mut grad = vec![0.0; 3 * config.n_atoms()];
        let bonded = eval_bonded(&self.topology, config, self.form, Some(&mut grad))?;
        let nonbonded = eval_nonbonded(
            &self.topology,
            &self.excluded,
            config,
            self.cutoff,
            Some(&mut grad),
        )?;
        Ok((merge(bonded, nonbonded), grad))
    }
}

impl PotentialModel for ForceFieldModel {
    fn n_atoms(&self) -> usize {
        self.topology.n_atoms
    }

    fn energy(&self, config: &Configuration) -> Result<f64, PotentialError> {
        Ok(self.breakdown(config)?.total)
    }

    fn gradient(&self, config: &Configuration) -> Result<Vec<f64>, PotentialError> {
        Ok(self.breakdown_and_gradient(config)?.1)
    }

    fn energy_and_gradient(
        &self,
        config: &Configuration,
    ) -> Result<(f64, Vec<f64>), PotentialError> {
        let (breakdown, grad) = self.breakdown_and_gradient(config)?;
        Ok((breakdown.total, grad))
    }
}

/// Parses the line-oriented topology format.
///
/// Records are whitespace-delimited, one per line; `#` starts a comment. The
/// first record must be `atoms N`. Recognized records:
///
/// ```text
/// atoms N
/// bond i j k_b b0
/// angle i j k k_theta theta0_deg
/// dihedral i j k l k_phi n delta_deg
/// ub i k k_u u0
/// improper i j k l k_w w0_deg
/// charge i q
/// vdw i rmin_half eps
/// exclude i j
/// ```
///
/// Angles are degrees in the file and radians in the returned topology. The
/// result has been validated.
pub fn parse_topology(text: &str) -> Result<ForceFieldTopology, TopologyError> {
    let mut topo: Option<ForceFieldTopology> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let record = fields[0];
        let args = &fields[1..];

        let parse_usize = |s: &str, what: &str| -> Result<usize, TopologyError> {
            s.parse().map_err(|_| TopologyError::Parse {
                line,
                msg: format!("bad integer '{s}' for {what}"),
            })
        };
        let parse_f64 = |s: &str, what: &str| -> Result<f64, TopologyError> {
            s.parse().map_err(|_| TopologyError::Parse {
                line,
                msg: format!("bad number '{s}' for {what}"),
            })
        };
        let expect_args = |n: usize, usage: &str| -> Result<(), TopologyError> {
            if args.len() != n {
                Err(TopologyError::Parse {
                    line,
                    msg: format!("{record} takes {n} fields: {usage}"),
                })
            } else {
                Ok(())
            }
        };

        if record == "atoms" {
            if topo.is_some() {
                return Err(TopologyError::Parse {
                    line,
                    msg: "duplicate atoms record".into(),
                });
            }
            expect_args(1, "atoms N")?;
            topo = Some(ForceFieldTopology::new(parse_usize(args[0], "atom count")?));
            continue;
        }
        let t = topo.as_mut().ok_or_else(|| TopologyError::Parse {
            line,
            msg: format!("first record must be 'atoms N', found '{record}'"),
        })?;
        // Records that write into per-atom arrays check the index here;
        // cross-reference checks for term records happen in validate().
        let declared_atoms = t.n_atoms;
        let check_atom = move |index: usize| -> Result<usize, TopologyError> {
            if index >= declared_atoms {
                Err(TopologyError::BadIndex {
                    index,
                    n_atoms: declared_atoms,
                })
            } else {
                Ok(index)
            }
        };
        match record {
            "bond" => {
                expect_args(4, "i j k_b b0")?;
                t.bonds.push(Bond {
                    i: parse_usize(args[0], "atom i")?,
                    j: parse_usize(args[1], "atom j")?,
                    k_b: parse_f64(args[2], "k_b")?,
                    b_0: parse_f64(args[3], "b0")?,
                });
            }
            "angle" => {
                expect_args(5, "i j k k_theta theta0_deg")?;
                t.angles.push(Angle {
                    i: parse_usize(args[0], "atom i")?,
                    j: parse_usize(args[1], "atom j")?,
                    k: parse_usize(args[2], "atom k")?,
                    k_theta: parse_f64(args[3], "k_theta")?,
                    theta_0: parse_f64(args[4], "theta0")?.to_radians(),
                });
            }
            "dihedral" => {
                expect_args(7, "i j k l k_phi n delta_deg")?;
                t.dihedrals.push(Dihedral {
                    i: parse_usize(args[0], "atom i")?,
                    j: parse_usize(args[1], "atom j")?,
                    k: parse_usize(args[2], "atom k")?,
                    l: parse_usize(args[3], "atom l")?,
                    k_phi: parse_f64(args[4], "k_phi")?,
                    n: u32::try_from(parse_usize(args[5], "periodicity n")?).map_err(|_| {
                        TopologyError::Parse {
                            line,
                            msg: format!("periodicity '{}' is out of range", args[5]),
                        }
                    })?,
                    delta: parse_f64(args[6], "delta")?.to_radians(),
                });
            }
            "ub" => {
                expect_args(4, "i k k_u u0")?;
                t.urey_bradley.push(UreyBradley {
                    i: parse_usize(args[0], "atom i")?,
                    k: parse_usize(args[1], "atom k")?,
                    k_u: parse_f64(args[2], "k_u")?,
                    u_0: parse_f64(args[3], "u0")?,
                });
            }
            "improper" => {
                expect_args(6, "i j k l k_w w0_deg")?;
                t.impropers.push(Improper {
                    i: parse_usize(args[0], "atom i")?,
                    j: parse_usize(args[1], "atom j")?,
                    k: parse_usize(args[2], "atom k")?,
                    l: parse_usize(args[3], "atom l")?,
                    k_w: parse_f64(args[4], "k_w")?,
                    w_0: parse_f64(args[5], "w0")?.to_radians(),
                });
            }
            "charge" => {
                expect_args(2, "i q")?;
                let i = check_atom(parse_usize(args[0], "atom i")?)?;
                t.charges[i] = parse_f64(args[1], "charge")?;
            }
            "vdw" => {
                expect_args(3, "i rmin_half eps")?;
                let i = check_atom(parse_usize(args[0], "atom i")?)?;
                t.vdw[i] = VdwParams {
                    rmin_half: parse_f64(args[1], "rmin_half")?,
                    eps: parse_f64(args[2], "eps")?,
                };
            }
            "exclude" => {
                expect_args(2, "i j")?;
                let i = parse_usize(args[0], "atom i")?;
                let j = parse_usize(args[1], "atom j")?;
                t.exclude(i, j);
            }
            other => {
                return Err(TopologyError::Parse {
                    line,
                    msg: format!("unknown record type '{other}'"),
                });
            }
        }
    }
    let topo = topo.ok_or(TopologyError::Parse {
        line: 0,
        msg: "empty input: expected an 'atoms N' record".into(),
    })?;
    topo.validate()?;
    Ok(topo)
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<ForceFieldTopology, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_topology(&text)
}
