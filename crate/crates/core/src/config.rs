//! Atomic configurations and XYZ file I/O.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration must contain at least one atom")]
    Empty,
    #[error("non-finite coordinate on atom {atom}")]
    NonFinite { atom: usize },
    #[error("flat coordinate vector has length {len}, expected a multiple of 3")]
    BadFlatLength { len: usize },
}

/// An ordered list of atomic positions in 3-space.
///
/// Construction checks that the list is non-empty and every coordinate is
/// finite. Atom order is meaningful: models and masks refer to atoms by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    positions: Vec<[f64; 3]>,
}

impl Configuration {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self, ConfigError> {
        if positions.is_empty() {
            return Err(ConfigError::Empty);
        }
        for (atom, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(ConfigError::NonFinite { atom });
            }
        }
        Ok(Self { positions })
    }

    /// Builds a configuration from a flat `[x0, y0, z0, x1, ...]` vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self, ConfigError> {
        if !flat.len().is_multiple_of(3) {
            return Err(ConfigError::BadFlatLength { len: flat.len() });
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn position(&self, atom: usize) -> [f64; 3] {
        self.positions[atom]
    }

    /// Moves one atom. The caller is responsible for keeping coordinates
    /// finite; bounded Monte Carlo displacements always do.
    pub fn set_position(&mut self, atom: usize, p: [f64; 3]) {
        self.positions[atom] = p;
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.positions.len() as f64;
        c.map(|v| v / n)
    }
}

#[derive(Debug, Error)]
pub enum XyzError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("declared {declared} atoms but found {found} coordinate lines")]
    CountMismatch { declared: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One frame of an XYZ file: count line, free-form comment line, then one
/// `symbol x y z` line per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct XyzFrame {
    pub comment: String,
    pub symbols: Vec<String>,
    pub config: Configuration,
}

impl XyzFrame {
    /// Wraps a configuration with one symbol repeated for every atom.
    pub fn with_symbol(config: Configuration, symbol: &str) -> Self {
        let symbols = vec![symbol.to_string(); config.n_atoms()];
        Self {
            comment: String::new(),
            symbols,
            config,
        }
    }

    pub fn parse(text: &str) -> Result<Self, XyzError> {
        let mut lines = text.lines().enumerate();
        let (_, count_line) = lines.next().ok_or(XyzError::Parse {
            line: 1,
            msg: "empty file, expected an atom count".into(),
        })?;
        let declared: usize = count_line.trim().parse().map_err(|_| XyzError::Parse {
            line: 1,
            msg: format!("invalid atom count {count_line:?}"),
        })?;
        let comment = lines.next().map(|(_, l)| l.to_string()).unwrap_or_default();

        let mut symbols = Vec::with_capacity(declared);
        let mut positions = Vec::with_capacity(declared);
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            if positions.len() == declared {
                return Err(XyzError::Parse {
                    line,
                    msg: format!("unexpected extra content {raw:?} after {declared} atoms"),
                });
            }
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(XyzError::Parse {
                    line,
                    msg: format!("expected `symbol x y z`, got {} fields", fields.len()),
                });
            }
            let mut coord = [0.0; 3];
            for (k, field) in fields[1..].iter().enumerate() {
                coord[k] = field.parse().map_err(|_| XyzError::Parse {
                    line,
                    msg: format!("invalid coordinate {field:?}"),
                })?;
            }
            symbols.push(fields[0].to_string());
            positions.push(coord);
        }
        if positions.len() != declared {
            return Err(XyzError::CountMismatch {
                declared,
                found: positions.len(),
            });
        }
        Ok(Self {
            comment,
            symbols,
            config: Configuration::new(positions)?,
        })
    }

    /// Renders the frame. Coordinates are written in scientific notation with
    /// 17 significant digits, enough for a read/write cycle to reproduce every
    /// f64 bit-exactly.
    pub fn to_xyz_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.config.n_atoms());
        let _ = writeln!(out, "{}", self.comment);
        for (sym, p) in self.symbols.iter().zip(self.config.positions()) {
            let _ = writeln!(out, "{} {:.16e} {:.16e} {:.16e}", sym, p[0], p[1], p[2]);
        }
        out
    }
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<XyzFrame, XyzError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| XyzError::Io {
        path: path.display().to_string(),
        source,
    })?;
    XyzFrame::parse(&text)
}

pub fn write_xyz(path: impl AsRef<Path>, frame: &XyzFrame) -> Result<(), XyzError> {
    let path = path.as_ref();
    std::fs::write(path, frame.to_xyz_string()).map_err(|source| XyzError::Io {
        path: path.display().to_string(),
        source,
    })
}
