//! Protein structure ingestion and noncovalent-interaction inventory.
//!
//! The parser reads fixed-column ATOM/HETATM records (PDB v3.3 layout,
//! first model only) and the detectors scan for hydrogen bonds, salt
//! bridges, pi-pi stacks, pi-cation contacts, 3-10 helix segments, cliques
//! of positively charged residues, and closed pi-circles.
//!
//! Every detector is a plain all-pairs scan over the structure; there is no
//! spatial index whose traversal order could perturb results. Output lists
//! are sorted (residue, then distance), so identical inputs render byte
//! identical reports.
//!
//! The distance and angle thresholds are not universal constants; they are
//! conventional analysis defaults, collected in `InteractionCriteria` and
//! overridable per call. The clique cutoff in particular (10 A between
//! closest charged side-chain atoms) is the knob most worth revisiting when
//! groupings look too coarse or too fine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdbError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no atoms found in input")]
    Empty,
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Hydrogens sit within this distance of their covalent parent.
const COVALENT_H: f64 = 1.2;
/// Heavy atoms within this distance are taken as covalently bonded.
const COVALENT_HEAVY: f64 = 1.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub serial: i32,
    /// Atom name with any leading digit rotated to the back, so the "2HH1"
    /// and "HH12" hydrogen naming schemes normalize to one form.
    pub name: String,
    /// Upper-case element symbol; inferred from the atom name's first
    /// alphabetic character when the element columns are blank.
    pub element: String,
    pub res_name: String,
    pub res_seq: i32,
    pub icode: char,
    pub chain_id: char,
    pub pos: [f64; 3],
}

/// Identity of a residue for grouping, sorting, and report labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResidueRef {
    pub chain_id: char,
    pub res_seq: i32,
    pub icode: char,
    pub res_name: String,
}

fn one_letter(res_name: &str) -> Option<char> {
    Some(match res_name {
        "ALA" => 'A',
        "ARG" => 'R',
        "ASN" => 'N',
        "ASP" => 'D',
        "CYS" => 'C',
        "GLN" => 'Q',
        "GLU" => 'E',
        "GLY" => 'G',
        "HIS" => 'H',
        "ILE" => 'I',
        "LEU" => 'L',
        "LYS" => 'K',
        "MET" => 'M',
        "PHE" => 'F',
        "PRO" => 'P',
        "SER" => 'S',
        "THR" => 'T',
        "TRP" => 'W',
        "TYR" => 'Y',
        "VAL" => 'V',
        _ => return None,
    })
}

impl ResidueRef {
    /// Compact label in the one-letter style, e.g. "D178"; non-standard
    /// residues keep their full name ("HOH305").
    pub fn label(&self) -> String {
        let base = match one_letter(&self.res_name) {
            Some(c) => format!("{c}{}", self.res_seq),
            None => format!("{}{}", self.res_name, self.res_seq),
        };
        if self.icode == ' ' {
            base
        } else {
            format!("{base}{}", self.icode)
        }
    }
}

/// A residue's slot in the structure: its identity plus the indices of its
/// atoms in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub key: ResidueRef,
    pub atom_indices: Vec<usize>,
}

pub fn is_positively_charged(res_name: &str) -> bool {
    matches!(res_name, "ARG" | "LYS" | "HIS")
}

pub fn is_negatively_charged(res_name: &str) -> bool {
    matches!(res_name, "ASP" | "GLU")
}

pub fn is_aromatic(res_name: &str) -> bool {
    matches!(res_name, "PHE" | "TYR" | "TRP" | "HIS")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularStructure {
    pub atoms: Vec<Atom>,
    residues: Vec<Residue>,
}

impl MolecularStructure {
    /// Groups atoms into residues (order of first appearance) and checks the
    /// structural invariants: finite positions and unique atom names within
    /// each residue.
    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self, PdbError> {
        if atoms.is_empty() {
            return Err(PdbError::Empty);
        }
        let mut residues: Vec<Residue> = Vec::new();
        let mut index: BTreeMap<(char, i32, char), usize> = BTreeMap::new();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.pos.iter().any(|v| !v.is_finite()) {
                return Err(PdbError::Parse {
                    line: 0,
                    msg: format!("atom serial {} has a non-finite coordinate", atom.serial),
                });
            }
            let key = (atom.chain_id, atom.res_seq, atom.icode);
            let slot = *index.entry(key).or_insert_with(|| {
                residues.push(Residue {
                    key: ResidueRef {
                        chain_id: atom.chain_id,
                        res_seq: atom.res_seq,
                        icode: atom.icode,
                        res_name: atom.res_name.clone(),
                    },
                    atom_indices: Vec::new(),
                });
                residues.len() - 1
            });
            let residue = &mut residues[slot];
            if residue
                .atom_indices
                .iter()
                .any(|&j| atoms[j].name == atom.name)
            {
                return Err(PdbError::Parse {
                    line: 0,
                    msg: format!(
                        "duplicate atom name '{}' in residue {}",
                        atom.name,
                        residue.key.label()
                    ),
                });
            }
            residue.atom_indices.push(i);
        }
        Ok(Self { atoms, residues })
    }

    pub fn residues(&self) -> &[Residue] {
        &self.residues
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    fn atom_in<'a>(&'a self, residue: &Residue, name: &str) -> Option<&'a Atom> {
        residue
            .atom_indices
            .iter()
            .map(|&i| &self.atoms[i])
            .find(|a| a.name == name)
    }

    fn residue_of(&self, atom: &Atom) -> ResidueRef {
        ResidueRef {
            chain_id: atom.chain_id,
            res_seq: atom.res_seq,
            icode: atom.icode,
            res_name: atom.res_name.clone(),
        }
    }

    /// Serializes back to fixed-column ATOM records (occupancy 1.00, B 0.00).
    pub fn to_pdb_string(&self) -> String {
        let mut out = String::new();
        for a in &self.atoms {
            let name_field = if a.name.len() >= 4 {
                a.name.clone()
            } else {
                format!(" {:<3}", a.name)
            };
            let _ = writeln!(
                out,
                "ATOM  {:>5} {:<4} {:>3} {}{:>4}{}   {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                a.serial,
                name_field,
                a.res_name,
                a.chain_id,
                a.res_seq,
                a.icode,
                a.pos[0],
                a.pos[1],
                a.pos[2],
                1.0,
                0.0,
                a.element
            );
        }
        out.push_str("END\n");
        out
    }

    pub fn write_pdb(&self, path: impl AsRef<Path>) -> Result<(), PdbError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pdb_string()).map_err(|source| PdbError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Rotates a leading digit to the end ("2HH1" -> "HH12") so both hydrogen
/// naming schemes compare equal.
fn normalize_atom_name(raw: &str) -> String {
    let mut chars = raw.chars();
    match chars.next() {
        Some(first) if first.is_ascii_digit() && raw.len() > 1 => {
            let mut s: String = chars.collect();
            s.push(first);
            s
        }
        _ => raw.to_string(),
    }
}

/// 1-based inclusive column slice, tolerant of short lines.
fn cols(line: &str, from: usize, to: usize) -> &str {
    let bytes = line.as_bytes();
    let a = (from - 1).min(bytes.len());
    let b = to.min(bytes.len());
    std::str::from_utf8(&bytes[a..b]).unwrap_or("")
}

pub fn parse_pdb_str(text: &str) -> Result<MolecularStructure, PdbError> {
    let mut atoms = Vec::new();
    let mut model: Option<i64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let record = cols(line, 1, 6).trim_end();
        match record {
            "MODEL" => {
                model = Some(
                    cols(line, 7, 80)
                        .trim()
                        .parse()
                        .map_err(|_| PdbError::Parse {
                            line: line_no,
                            msg: "MODEL record without a readable number".into(),
                        })?,
                );
            }
            "ENDMDL" => {
                model = None;
            }
            "ATOM" | "HETATM" => {
                // Only the first model of multi-model (NMR-style) files.
                if let Some(m) = model {
                    if m != 1 {
                        continue;
                    }
                }
                let alt_loc = cols(line, 17, 17).chars().next().unwrap_or(' ');
                if alt_loc != ' ' && alt_loc != 'A' {
                    continue;
                }
                let serial: i32 =
                    cols(line, 7, 11)
                        .trim()
                        .parse()
                        .map_err(|_| PdbError::Parse {
                            line: line_no,
                            msg: format!("bad atom serial '{}'", cols(line, 7, 11).trim()),
                        })?;
                let raw_name = cols(line, 13, 16).trim();
                if raw_name.is_empty() {
                    return Err(PdbError::Parse {
                        line: line_no,
                        msg: "blank atom name".into(),
                    });
                }
                let name = normalize_atom_name(raw_name);
                let res_name = cols(line, 18, 20).trim().to_string();
                if res_name.is_empty() {
                    return Err(PdbError::Parse {
                        line: line_no,
                        msg: "blank residue name".into(),
                    });
                }
                let chain_id = cols(line, 22, 22).chars().next().unwrap_or(' ');
                let res_seq: i32 =
                    cols(line, 23, 26)
                        .trim()
                        .parse()
                        .map_err(|_| PdbError::Parse {
                            line: line_no,
                            msg: format!("bad residue number '{}'", cols(line, 23, 26).trim()),
                        })?;
                let icode = cols(line, 27, 27).chars().next().unwrap_or(' ');
                let mut pos = [0.0f64; 3];
                for (axis, (from, to)) in [(31, 38), (39, 46), (47, 54)].into_iter().enumerate() {
                    let field = cols(line, from, to).trim();
                    pos[axis] = field.parse().map_err(|_| PdbError::Parse {
                        line: line_no,
                        msg: format!("bad coordinate '{field}'"),
                    })?;
                    if !pos[axis].is_finite() {
                        return Err(PdbError::Parse {
                            line: line_no,
                            msg: format!("non-finite coordinate '{field}'"),
                        });
                    }
                }
                let element_field = cols(line, 77, 78).trim();
                let element = if element_field.is_empty() {
                    name.chars()
                        .find(|c| c.is_ascii_alphabetic())
                        .map(|c| c.to_ascii_uppercase().to_string())
                        .unwrap_or_default()
                } else {
                    element_field.to_ascii_uppercase()
                };
                atoms.push(Atom {
                    serial,
                    name,
                    element,
                    res_name,
                    res_seq,
                    icode,
                    chain_id,
                    pos,
                });
            }
            _ => {}
        }
    }
    MolecularStructure::from_atoms(atoms)
}

pub fn parse_pdb(path: impl AsRef<Path>) -> Result<MolecularStructure, PdbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PdbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pdb_str(&text)
}

/// Detection thresholds, all strictly positive. Angles are degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionCriteria {
    /// Hydrogen to acceptor distance ceiling for hydrogen bonds.
    pub hbond_max_ha: f64,
    /// Donor-hydrogen-acceptor angle floor for hydrogen bonds.
    pub hbond_min_dha_angle: f64,
    pub salt_max_dist: f64,
    pub pipi_max_centroid: f64,
    pub pication_max: f64,
    pub clique_max_dist: f64,
}

impl Default for InteractionCriteria {
    fn default() -> Self {
        Self {
            hbond_max_ha: 2.5,
            hbond_min_dha_angle: 120.0,
            salt_max_dist: 5.0,
            pipi_max_centroid: 7.0,
            pication_max: 6.0,
            clique_max_dist: 10.0,
        }
    }
}

impl InteractionCriteria {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("hbond_max_ha", self.hbond_max_ha),
            ("hbond_min_dha_angle", self.hbond_min_dha_angle),
            ("salt_max_dist", self.salt_max_dist),
            ("pipi_max_centroid", self.pipi_max_centroid),
            ("pication_max", self.pication_max),
            ("clique_max_dist", self.clique_max_dist),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// A specific atom cited in a report entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomRef {
    pub index: usize,
    pub name: String,
    pub residue: ResidueRef,
}

impl AtomRef {
    fn new(structure: &MolecularStructure, index: usize) -> Self {
        let atom = &structure.atoms[index];
        Self {
            index,
            name: atom.name.clone(),
            residue: structure.residue_of(atom),
        }
    }

    /// "D178.OD1" style label.
    pub fn label(&self) -> String {
        format!("{}.{}", self.residue.label(), self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HBond {
    pub donor: AtomRef,
    pub hydrogen: AtomRef,
    pub acceptor: AtomRef,
    /// Hydrogen-acceptor distance.
    pub distance: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaltBridge {
    pub anion: AtomRef,
    pub cation: AtomRef,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiPi {
    pub a: ResidueRef,
    pub b: ResidueRef,
    /// Smallest qualifying ring-centroid distance between the residues.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiCation {
    pub cation: ResidueRef,
    pub ring: ResidueRef,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelixSegment {
    pub chain_id: char,
    pub start_seq: i32,
    pub end_seq: i32,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Hydrogen bonds: polar hydrogen H covalently held by a donor N/O, within
/// `hbond_max_ha` of an acceptor N/O, with a straight enough D-H-A angle.
/// Acceptors in the hydrogen's own residue must not be covalently adjacent
/// (1-2 or 1-3) to the donor.
///
/// A structure with no hydrogen atoms cannot exhibit any, which is reported
/// as a diagnostic rather than silence.
pub fn detect_hbonds(s: &MolecularStructure, c: &InteractionCriteria) -> (Vec<HBond>, Vec<String>) {
    let mut warnings = Vec::new();
    let hydrogens: Vec<usize> = (0..s.atoms.len())
        .filter(|&i| s.atoms[i].element == "H")
        .collect();
    if hydrogens.is_empty() {
        warnings.push(
            "no hydrogens found; hydrogen-bond detection needs a structure with hydrogens placed"
                .to_string(),
        );
        return (Vec::new(), warnings);
    }
    let polar: Vec<usize> = (0..s.atoms.len())
        .filter(|&i| matches!(s.atoms[i].element.as_str(), "N" | "O"))
        .collect();
    let mut out = Vec::new();
    for &h in &hydrogens {
        let ha = &s.atoms[h];
        // Donor: the nearest N/O the hydrogen is covalently attached to.
        let donor = polar
            .iter()
            .copied()
            .map(|d| (d, dist(s.atoms[d].pos, ha.pos)))
            .filter(|&(_, r)| r <= COVALENT_H)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        let Some((d, _)) = donor else { continue };
        let da = &s.atoms[d];
        for &a in &polar {
            if a == d {
                continue;
            }
            let aa = &s.atoms[a];
            let same_residue =
                aa.chain_id == da.chain_id && aa.res_seq == da.res_seq && aa.icode == da.icode;
            if same_residue && covalently_linked_within_residue(s, d, a) {
                continue;
            }
            let r_ha = dist(ha.pos, aa.pos);
            if r_ha > c.hbond_max_ha {
                continue;
            }
            let angle = angle_deg(da.pos, ha.pos, aa.pos);
            if angle < c.hbond_min_dha_angle {
                continue;
            }
            out.push(HBond {
                donor: AtomRef::new(s, d),
                hydrogen: AtomRef::new(s, h),
                acceptor: AtomRef::new(s, a),
                distance: r_ha,
                angle_deg: angle,
            });
        }
    }
    sort_by_residue_then_distance(&mut out, |b| (b.donor.residue.clone(), b.distance));
    (out, warnings)
}

/// True when the two heavy atoms of one residue are covalent neighbors or
/// share a covalent neighbor (1-2 or 1-3 along the residue's bond graph).
fn covalently_linked_within_residue(s: &MolecularStructure, d: usize, a: usize) -> bool {
    if dist(s.atoms[d].pos, s.atoms[a].pos) <= COVALENT_HEAVY {
        return true;
    }
    let res = s
        .residues
        .iter()
        .find(|r| r.atom_indices.contains(&d))
        .expect("atom index belongs to a residue");
    res.atom_indices.iter().any(|&x| {
        x != d
            && x != a
            && s.atoms[x].element != "H"
            && dist(s.atoms[x].pos, s.atoms[d].pos) <= COVALENT_HEAVY
            && dist(s.atoms[x].pos, s.atoms[a].pos) <= COVALENT_HEAVY
    })
}

/// Angle at `b` in degrees.
fn angle_deg(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let v = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let cos = ((u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

fn sort_by_residue_then_distance<T, K: Ord>(items: &mut [T], key: impl Fn(&T) -> (K, f64)) {
    items.sort_by(|x, y| {
        let (kx, dx) = key(x);
        let (ky, dy) = key(y);
        kx.cmp(&ky).then_with(|| dx.total_cmp(&dy))
    });
}

const ASP_ANIONS: [&str; 2] = ["OD1", "OD2"];
const GLU_ANIONS: [&str; 2] = ["OE1", "OE2"];
const ARG_CATIONS: [&str; 3] = ["NE", "NH1", "NH2"];
const LYS_CATIONS: [&str; 1] = ["NZ"];
const HIS_CATIONS: [&str; 2] = ["ND1", "NE2"];

fn charged_side_chain_indices(s: &MolecularStructure, residue: &Residue) -> Vec<usize> {
    let names: &[&str] = match residue.key.res_name.as_str() {
        "ASP" => &ASP_ANIONS,
        "GLU" => &GLU_ANIONS,
        "ARG" => &ARG_CATIONS,
        "LYS" => &LYS_CATIONS,
        "HIS" => &HIS_CATIONS,
        _ => &[],
    };
    residue
        .atom_indices
        .iter()
        .copied()
        .filter(|&i| names.contains(&s.atoms[i].name.as_str()))
        .collect()
}

/// Salt bridges: each (side-chain carboxylate O) x (side-chain basic N) atom
/// pair within `salt_max_dist`.
pub fn detect_salt_bridges(s: &MolecularStructure, c: &InteractionCriteria) -> Vec<SaltBridge> {
    let mut anions: Vec<usize> = Vec::new();
    let mut cations: Vec<usize> = Vec::new();
    for res in &s.residues {
        let negative = is_negatively_charged(&res.key.res_name);
        let positive = is_positively_charged(&res.key.res_name);
        if !negative && !positive {
            continue;
        }
        for idx in charged_side_chain_indices(s, res) {
            if negative {
                anions.push(idx);
            } else {
                cations.push(idx);
            }
        }
    }
    let mut out = Vec::new();
    for &an in &anions {
        for &cat in &cations {
            let r = dist(s.atoms[an].pos, s.atoms[cat].pos);
            if r <= c.salt_max_dist {
                out.push(SaltBridge {
                    anion: AtomRef::new(s, an),
                    cation: AtomRef::new(s, cat),
                    distance: r,
                });
            }
        }
    }
    sort_by_residue_then_distance(&mut out, |b| (b.anion.residue.clone(), b.distance));
    out
}

const PHE_TYR_RING: [&str; 6] = ["CG", "CD1", "CD2", "CE1", "CE2", "CZ"];
const TRP_RING5: [&str; 5] = ["CG", "CD1", "CD2", "NE1", "CE2"];
const TRP_RING6: [&str; 6] = ["CD2", "CE2", "CE3", "CZ2", "CZ3", "CH2"];
const HIS_RING: [&str; 5] = ["CG", "ND1", "CD2", "CE1", "NE2"];

struct Ring {
    residue: ResidueRef,
    centroid: [f64; 3],
}

fn ring_centroids(s: &MolecularStructure, warnings: &mut Vec<String>) -> Vec<Ring> {
    let mut rings = Vec::new();
    for res in &s.residues {
        let name = res.key.res_name.as_str();
        if !is_aromatic(name) {
            continue;
        }
        let sets: &[&[&str]] = match name {
            "PHE" | "TYR" => &[&PHE_TYR_RING],
            "TRP" => &[&TRP_RING5, &TRP_RING6],
            "HIS" => &[&HIS_RING],
            _ => unreachable!("aromatic set covers exactly these residues"),
        };
        for set in sets {
            let atoms: Vec<&Atom> = set.iter().filter_map(|n| s.atom_in(res, n)).collect();
            if atoms.len() != set.len() {
                let missing: Vec<&str> = set
                    .iter()
                    .filter(|n| s.atom_in(res, n).is_none())
                    .copied()
                    .collect();
                warnings.push(format!(
                    "residue {} is missing ring atoms {}; ring skipped",
                    res.key.label(),
                    missing.join(",")
                ));
                continue;
            }
            let mut centroid = [0.0; 3];
            for a in &atoms {
                for (cc, pc) in centroid.iter_mut().zip(a.pos) {
                    *cc += pc / atoms.len() as f64;
                }
            }
            rings.push(Ring {
                residue: res.key.clone(),
                centroid,
            });
        }
    }
    rings
}

/// Pi-pi stacks (aromatic ring centroids within `pipi_max_centroid`) and
/// pi-cation contacts (ARG CZ, LYS NZ, or HIS side-chain N within
/// `pication_max` of a centroid). Tryptophan contributes both of its rings;
/// contacts are reported once per residue pair at the smallest qualifying
/// distance. Rings with missing atoms are skipped with a warning.
pub fn detect_pi_interactions(
    s: &MolecularStructure,
    c: &InteractionCriteria,
) -> (Vec<PiPi>, Vec<PiCation>, Vec<String>) {
    let mut warnings = Vec::new();
    let rings = ring_centroids(s, &mut warnings);

    let mut pipi_best: BTreeMap<(ResidueRef, ResidueRef), f64> = BTreeMap::new();
    for (i, ra) in rings.iter().enumerate() {
        for rb in &rings[i + 1..] {
            if ra.residue == rb.residue {
                continue;
            }
            let r = dist(ra.centroid, rb.centroid);
            if r > c.pipi_max_centroid {
                continue;
            }
            let key = if ra.residue <= rb.residue {
                (ra.residue.clone(), rb.residue.clone())
            } else {
                (rb.residue.clone(), ra.residue.clone())
            };
            let slot = pipi_best.entry(key).or_insert(f64::INFINITY);
            *slot = slot.min(r);
        }
    }
    let mut pipi: Vec<PiPi> = pipi_best
        .into_iter()
        .map(|((a, b), distance)| PiPi { a, b, distance })
        .collect();
    sort_by_residue_then_distance(&mut pipi, |p| (p.a.clone(), p.distance));

    let mut cation_sites: Vec<(ResidueRef, [f64; 3])> = Vec::new();
    for res in &s.residues {
        let names: &[&str] = match res.key.res_name.as_str() {
            "ARG" => &["CZ"],
            "LYS" => &["NZ"],
            "HIS" => &HIS_CATIONS,
            _ => continue,
        };
        for n in names {
            if let Some(atom) = s.atom_in(res, n) {
                cation_sites.push((res.key.clone(), atom.pos));
            }
        }
    }
    let mut pication_best: BTreeMap<(ResidueRef, ResidueRef), f64> = BTreeMap::new();
    for (cat_res, cat_pos) in &cation_sites {
        for ring in &rings {
            if *cat_res == ring.residue {
                continue;
            }
            let r = dist(*cat_pos, ring.centroid);
            if r > c.pication_max {
                continue;
            }
            let slot = pication_best
                .entry((cat_res.clone(), ring.residue.clone()))
                .or_insert(f64::INFINITY);
            *slot = slot.min(r);
        }
    }
    let mut pications: Vec<PiCation> = pication_best
        .into_iter()
        .map(|((cation, ring), distance)| PiCation {
            cation,
            ring,
            distance,
        })
        .collect();
    sort_by_residue_then_distance(&mut pications, |p| (p.cation.clone(), p.distance));

    (pipi, pications, warnings)
}

/// 3-10 helix segments: runs of backbone O(i) <- H-N(i+3) hydrogen bonds,
/// with overlapping i -> i+3 spans merged into one segment.
pub fn detect_310_helix(_s: &MolecularStructure, hbonds: &[HBond]) -> Vec<HelixSegment> {
    let mut spans: BTreeSet<(char, i32)> = BTreeSet::new();
    for hb in hbonds {
        if hb.donor.name != "N" || hb.acceptor.name != "O" {
            continue;
        }
        if hb.donor.residue.chain_id != hb.acceptor.residue.chain_id {
            continue;
        }
        if hb.donor.residue.res_seq == hb.acceptor.residue.res_seq + 3 {
            spans.insert((hb.acceptor.residue.chain_id, hb.acceptor.residue.res_seq));
        }
    }
    let mut out: Vec<HelixSegment> = Vec::new();
    for (chain, start) in spans {
        match out.last_mut() {
            Some(seg) if seg.chain_id == chain && start <= seg.end_seq => {
                seg.end_seq = seg.end_seq.max(start + 3);
            }
            _ => out.push(HelixSegment {
                chain_id: chain,
                start_seq: start,
                end_seq: start + 3,
            }),
        }
    }
    out
}

/// Connected components over positively charged residues, joined when their
/// closest charged side-chain atoms sit within `clique_max_dist`. Isolated
/// residues appear as singletons.
pub fn charged_cliques(s: &MolecularStructure, c: &InteractionCriteria) -> Vec<Vec<ResidueRef>> {
    let nodes: Vec<&Residue> = s
        .residues
        .iter()
        .filter(|r| is_positively_charged(&r.key.res_name))
        .collect();
    let sites: Vec<Vec<[f64; 3]>> = nodes
        .iter()
        .map(|r| {
            charged_side_chain_indices(s, r)
                .into_iter()
                .map(|i| s.atoms[i].pos)
                .collect()
        })
        .collect();
    let n = nodes.len();
    let mut component: Vec<usize> = (0..n).collect();
    fn root(component: &mut [usize], mut i: usize) -> usize {
        while component[i] != i {
            component[i] = component[component[i]];
            i = component[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let linked = sites[i]
                .iter()
                .any(|&a| sites[j].iter().any(|&b| dist(a, b) <= c.clique_max_dist));
            if linked {
                let (ri, rj) = (root(&mut component, i), root(&mut component, j));
                component[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<ResidueRef>> = BTreeMap::new();
    for (i, node) in nodes.iter().enumerate() {
        let r = root(&mut component, i);
        groups.entry(r).or_default().push(node.key.clone());
    }
    let mut out: Vec<Vec<ResidueRef>> = groups.into_values().collect();
    for g in out.iter_mut() {
        g.sort();
    }
    out.sort();
    out
}

/// Closed walks through the pi multigraph (pi-pi stacks and pi-cation
/// contacts as undirected edges). A walk may revisit residues but not reuse
/// an edge, must close on its start, and needs at least three edges.
/// Rotations and reversals of the same cycle are reported once; results come
/// longest first.
///
/// Components with more than 20 edges are skipped: exhaustive trail
/// enumeration grows factorially and a pi network that large has no single
/// readable circle anyway.
pub fn pi_circle(pipi: &[PiPi], pications: &[PiCation]) -> Vec<Vec<ResidueRef>> {
    let mut edges: Vec<(ResidueRef, ResidueRef)> = pipi
        .iter()
        .map(|p| (p.a.clone(), p.b.clone()))
        .chain(pications.iter().map(|p| (p.cation.clone(), p.ring.clone())))
        .collect();
    edges.sort();
    edges.dedup();

    // Split into connected components so the edge cap is per component.
    let mut nodes: Vec<ResidueRef> = edges
        .iter()
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect();
    nodes.sort();
    nodes.dedup();
    let node_id: BTreeMap<&ResidueRef, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut comp: Vec<usize> = (0..nodes.len()).collect();
    fn root(comp: &mut [usize], mut i: usize) -> usize {
        while comp[i] != i {
            comp[i] = comp[comp[i]];
            i = comp[i];
        }
        i
    }
    for (a, b) in &edges {
        let (ia, ib) = (node_id[a], node_id[b]);
        let (ra, rb) = (root(&mut comp, ia), root(&mut comp, ib));
        comp[ra.max(rb)] = ra.min(rb);
    }
    let mut component_edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ei, (a, _)) in edges.iter().enumerate() {
        let r = root(&mut comp, node_id[a]);
        component_edges.entry(r).or_default().push(ei);
    }

    let mut canonical: BTreeSet<Vec<ResidueRef>> = BTreeSet::new();
    for edge_ids in component_edges.values() {
        if edge_ids.len() > 20 {
            continue;
        }
        let local: Vec<(usize, usize)> = edge_ids
            .iter()
            .map(|&ei| (node_id[&edges[ei].0], node_id[&edges[ei].1]))
            .collect();
        let mut starts: Vec<usize> = local.iter().flat_map(|&(a, b)| [a, b]).collect();
        starts.sort_unstable();
        starts.dedup();
        for &start in &starts {
            let mut used = vec![false; local.len()];
            let mut path = vec![start];
            walk(
                start,
                start,
                &local,
                &mut used,
                &mut path,
                &nodes,
                &mut canonical,
            );
        }
    }
    let mut out: Vec<Vec<ResidueRef>> = canonical.into_iter().collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    out
}

fn walk(
    here: usize,
    start: usize,
    edges: &[(usize, usize)],
    used: &mut [bool],
    path: &mut Vec<usize>,
    nodes: &[ResidueRef],
    found: &mut BTreeSet<Vec<ResidueRef>>,
) {
    for (ei, &(a, b)) in edges.iter().enumerate() {
        if used[ei] {
            continue;
        }
        let next = if a == here {
            b
        } else if b == here {
            a
        } else {
            continue;
        };
        if next == start && path.len() >= 3 {
            found.insert(canonical_cycle(path, nodes));
        }
        used[ei] = true;
        path.push(next);
        walk(next, start, edges, used, path, nodes, found);
        path.pop();
        used[ei] = false;
    }
}

/// Least rotation/reflection of the node cycle, as residue identities.
fn canonical_cycle(path: &[usize], nodes: &[ResidueRef]) -> Vec<ResidueRef> {
    let k = path.len();
    let mut best: Option<Vec<usize>> = None;
    let reversed: Vec<usize> = path.iter().rev().copied().collect();
    for seq in [path, reversed.as_slice()] {
        for shift in 0..k {
            let candidate: Vec<usize> = (0..k).map(|i| seq[(i + shift) % k]).collect();
            let better = match &best {
                None => true,
                Some(b) => candidate
                    .iter()
                    .map(|&i| &nodes[i])
                    .lt(b.iter().map(|&i| &nodes[i])),
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best.expect("cycle has at least three nodes")
        .into_iter()
        .map(|i| nodes[i].clone())
        .collect()
}

/// Everything at once: all detectors under one set of criteria, with
/// warnings pooled. The embedded criteria make the report self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionReport {
    pub criteria: InteractionCriteria,
    pub hbonds: Vec<HBond>,
    pub salt_bridges: Vec<SaltBridge>,
    pub pipi: Vec<PiPi>,
    pub pications: Vec<PiCation>,
    pub helices_310: Vec<HelixSegment>,
    pub cliques: Vec<Vec<ResidueRef>>,
    pub pi_circles: Vec<Vec<ResidueRef>>,
    pub warnings: Vec<String>,
}

pub fn analyze(s: &MolecularStructure, c: &InteractionCriteria) -> InteractionReport {
    let (hbonds, mut warnings) = detect_hbonds(s, c);
    let salt_bridges = detect_salt_bridges(s, c);
    let (pipi, pications, pi_warnings) = detect_pi_interactions(s, c);
    warnings.extend(pi_warnings);
    let helices_310 = detect_310_helix(s, &hbonds);
    let cliques = charged_cliques(s, c);
    let pi_circles = pi_circle(&pipi, &pications);
    InteractionReport {
        criteria: *c,
        hbonds,
        salt_bridges,
        pipi,
        pications,
        helices_310,
        cliques,
        pi_circles,
        warnings,
    }
}

/// Which report sections to render. `pi` covers both the pi-pi and
/// pi-cation lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sections {
    pub hbond: bool,
    pub salt: bool,
    pub pi: bool,
    pub helix: bool,
    pub clique: bool,
    pub circle: bool,
}

impl Sections {
    pub fn all() -> Self {
        Self {
            hbond: true,
            salt: true,
            pi: true,
            helix: true,
            clique: true,
            circle: true,
        }
    }

    pub fn none() -> Self {
        Self {
            hbond: false,
            salt: false,
            pi: false,
            helix: false,
            clique: false,
            circle: false,
        }
    }

    /// Parses a comma-separated list like "hbond,salt,pi".
    pub fn from_list(list: &str) -> Result<Self, String> {
        let mut s = Self::none();
        for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "hbond" => s.hbond = true,
                "salt" => s.salt = true,
                "pi" => s.pi = true,
                "helix" => s.helix = true,
                "clique" => s.clique = true,
                "circle" => s.circle = true,
                other => {
                    return Err(format!(
                    "unknown section {other:?}, expected hbond, salt, pi, helix, clique, or circle"
                ))
                }
            }
        }
        Ok(s)
    }
}

impl InteractionReport {
    /// Human-readable sectioned report.
    pub fn render_text(&self) -> String {
        self.render_text_sections(Sections::all())
    }

    pub fn render_text_sections(&self, sections: Sections) -> String {
        let mut out = String::new();
        let c = &self.criteria;
        let _ = writeln!(out, "criteria: hbond <= {:.2} A at >= {:.0} deg, salt <= {:.2} A, pipi <= {:.2} A, pication <= {:.2} A, clique <= {:.2} A",
            c.hbond_max_ha, c.hbond_min_dha_angle, c.salt_max_dist, c.pipi_max_centroid, c.pication_max, c.clique_max_dist);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if sections.hbond {
            let _ = writeln!(out, "\n== hydrogen bonds ({}) ==", self.hbonds.len());
            for b in &self.hbonds {
                let _ = writeln!(
                    out,
                    "HBOND {} {} {} {:.2} A {:.0} deg",
                    b.donor.label(),
                    b.hydrogen.label(),
                    b.acceptor.label(),
                    b.distance,
                    b.angle_deg
                );
            }
        }
        if sections.salt {
            let _ = writeln!(out, "\n== salt bridges ({}) ==", self.salt_bridges.len());
            for b in &self.salt_bridges {
                let _ = writeln!(
                    out,
                    "SALT {} {} {:.2} A",
                    b.anion.label(),
                    b.cation.label(),
                    b.distance
                );
            }
        }
        if sections.pi {
            let _ = writeln!(out, "\n== pi-pi stacks ({}) ==", self.pipi.len());
            for p in &self.pipi {
                let _ = writeln!(
                    out,
                    "PIPI {} {} {:.2} A",
                    p.a.label(),
                    p.b.label(),
                    p.distance
                );
            }
            let _ = writeln!(out, "\n== pi-cations ({}) ==", self.pications.len());
            for p in &self.pications {
                let _ = writeln!(
                    out,
                    "PICATION {} {} {:.2} A",
                    p.cation.label(),
                    p.ring.label(),
                    p.distance
                );
            }
        }
        if sections.helix {
            let _ = writeln!(
                out,
                "\n== 3-10 helix segments ({}) ==",
                self.helices_310.len()
            );
            for h in &self.helices_310 {
                let _ = writeln!(
                    out,
                    "HELIX310 chain {} {}..{}",
                    h.chain_id, h.start_seq, h.end_seq
                );
            }
        }
        if sections.clique {
            let _ = writeln!(out, "\n== charged cliques ({}) ==", self.cliques.len());
            for g in &self.cliques {
                let labels: Vec<String> = g.iter().map(|r| r.label()).collect();
                let _ = writeln!(out, "CLIQUE ({})", labels.join(", "));
            }
        }
        if sections.circle {
            let _ = writeln!(out, "\n== pi-circles ({}) ==", self.pi_circles.len());
            for circle in &self.pi_circles {
                let mut labels: Vec<String> = circle.iter().map(|r| r.label()).collect();
                labels.push(labels[0].clone());
                let _ = writeln!(out, "PICIRCLE {}", labels.join("--"));
            }
        }
        out
    }

    /// Line-oriented key-value dump for scripts.
    pub fn render_machine(&self) -> String {
        self.render_machine_sections(Sections::all())
    }

    pub fn render_machine_sections(&self, sections: Sections) -> String {
        let mut out = String::new();
        if sections.hbond {
            for b in &self.hbonds {
                let _ = writeln!(
                    out,
                    "hbond donor={} hydrogen={} acceptor={} dist={:.3} angle={:.1}",
                    b.donor.label(),
                    b.hydrogen.label(),
                    b.acceptor.label(),
                    b.distance,
                    b.angle_deg
                );
            }
        }
        if sections.salt {
            for b in &self.salt_bridges {
                let _ = writeln!(
                    out,
                    "salt anion={} cation={} dist={:.3}",
                    b.anion.label(),
                    b.cation.label(),
                    b.distance
                );
            }
        }
        if sections.pi {
            for p in &self.pipi {
                let _ = writeln!(
                    out,
                    "pipi a={} b={} dist={:.3}",
                    p.a.label(),
                    p.b.label(),
                    p.distance
                );
            }
            for p in &self.pications {
                let _ = writeln!(
                    out,
                    "pication cation={} ring={} dist={:.3}",
                    p.cation.label(),
                    p.ring.label(),
                    p.distance
                );
            }
        }
        if sections.helix {
            for h in &self.helices_310 {
                let _ = writeln!(
                    out,
                    "helix310 chain={} start={} end={}",
                    h.chain_id, h.start_seq, h.end_seq
                );
            }
        }
        if sections.clique {
            for g in &self.cliques {
                let labels: Vec<String> = g.iter().map(|r| r.label()).collect();
                let _ = writeln!(out, "clique members={}", labels.join(","));
            }
        }
        if sections.circle {
            for circle in &self.pi_circles {
                let labels: Vec<String> = circle.iter().map(|r| r.label()).collect();
                let _ = writeln!(out, "picircle walk={}", labels.join(","));
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning text={w}");
        }
        out
    }
}
