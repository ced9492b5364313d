//! Lattice geometry, spin configurations, and actions.
//!
//! Sites are ordered row-major: `site = y * Lx + x` for a 2D `[Lx, Ly]`
//! lattice, `site = x` for a chain. Spin configurations pack into a 64-bit
//! set (bit i set = spin i up), which caps systems at 64 sites.

use crate::error::{Error, Result};
use std::fmt;

/// Hard cap imposed by the 64-bit configuration encoding.
pub const MAX_SITES: usize = 64;

/// Default cap for full state-space enumeration (2^20 states).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// A 1D chain or 2D square lattice with per-dimension boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dims: Vec<usize>,
    periodic: Vec<bool>,
    n_sites: usize,
    bonds: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Lattice {
    /// Build a lattice from extents and per-dimension periodicity flags.
    ///
    /// Bonds are nearest-neighbor pairs, each unordered pair listed exactly
    /// once, sorted by (low site, high site).
    pub fn new(dims: &[usize], periodic: &[bool]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::InvalidLattice(format!(
                "expected 1 or 2 dimensions, got {}",
                dims.len()
            )));
        }
        if periodic.len() != dims.len() {
            return Err(Error::InvalidLattice(
                "periodic flags must match dimension count".into(),
            ));
        }
        for &extent in dims {
            if extent < 2 {
                return Err(Error::InvalidLattice(format!(
                    "extent {extent} < 2"
                )));
            }
        }
        let n_sites: usize = dims.iter().product();
        if n_sites > MAX_SITES {
            return Err(Error::InvalidLattice(format!(
                "{n_sites} sites exceeds the {MAX_SITES}-site encoding limit"
            )));
        }

        let lx = dims[0];
        let ly = if dims.len() == 2 { dims[1] } else { 1 };
        let mut bond_set = std::collections::BTreeSet::new();
        for y in 0..ly {
            for x in 0..lx {
                let site = y * lx + x;
                // +x neighbor
                if x + 1 < lx {
                    bond_set.insert((site, y * lx + x + 1));
                } else if periodic[0] {
                    let other = y * lx;
                    bond_set.insert((site.min(other), site.max(other)));
                }
                // +y neighbor
                if dims.len() == 2 {
                    if y + 1 < ly {
                        bond_set.insert((site, (y + 1) * lx + x));
                    } else if periodic[1] {
                        let other = x;
                        bond_set.insert((site.min(other), site.max(other)));
                    }
                }
            }
        }
        let bonds: Vec<(usize, usize)> = bond_set.into_iter().collect();

        let mut neighbors = vec![Vec::new(); n_sites];
        for &(i, j) in &bonds {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        if neighbors.iter().any(Vec::is_empty) {
            return Err(Error::InvalidLattice("isolated site".into()));
        }

        Ok(Self {
            dims: dims.to_vec(),
            periodic: periodic.to_vec(),
            n_sites,
            bonds,
            neighbors,
        })
    }

    /// Periodic chain of length `n`.
    pub fn ring(n: usize) -> Result<Self> {
        Self::new(&[n], &[true])
    }

    /// Open chain of length `n`.
    pub fn open_chain(n: usize) -> Result<Self> {
        Self::new(&[n], &[false])
    }

    /// Periodic `l x l` square lattice.
    pub fn torus(l: usize) -> Result<Self> {
        Self::new(&[l, l], &[true, true])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    pub fn is_fully_periodic(&self) -> bool {
        self.periodic.iter().all(|&p| p)
    }

    /// Row-major site index for coordinates (x) or (x, y).
    pub fn site(&self, coords: &[usize]) -> usize {
        match *coords {
            [x] => x,
            [x, y] => y * self.dims[0] + x,
            _ => panic!("coordinate rank must match lattice rank"),
        }
    }

    /// Coordinates of a site, inverse of [`site`](Self::site).
    pub fn coords(&self, site: usize) -> Vec<usize> {
        if self.dims.len() == 1 {
            vec![site]
        } else {
            vec![site % self.dims[0], site / self.dims[0]]
        }
    }

    /// Bond energy sum over nearest neighbors, each spin counted as ±1.
    pub fn bond_alignment(&self, config: SpinConfig) -> i64 {
        self.bonds
            .iter()
            .map(|&(i, j)| if config.up(i) == config.up(j) { 1 } else { -1 })
            .sum()
    }
}

/// One basis state of N spins, packed as a bit-set (bit i set = spin i up).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfig {
    bits: u64,
    n_sites: u32,
}

impl SpinConfig {
    pub fn from_bits(bits: u64, n_sites: usize) -> Self {
        assert!(n_sites <= MAX_SITES);
        let mask = if n_sites == 64 {
            u64::MAX
        } else {
            (1u64 << n_sites) - 1
        };
        Self {
            bits: bits & mask,
            n_sites: n_sites as u32,
        }
    }

    pub fn all_up(n_sites: usize) -> Self {
        Self::from_bits(u64::MAX, n_sites)
    }

    pub fn all_down(n_sites: usize) -> Self {
        Self::from_bits(0, n_sites)
    }

    /// Parse a '+'/'-' string, site 0 leftmost.
    pub fn parse(text: &str) -> Result<Self> {
        if text.len() > MAX_SITES || text.is_empty() {
            return Err(Error::InvalidWavefunction(format!(
                "configuration string length {} out of range",
                text.len()
            )));
        }
        let mut bits = 0u64;
        for (site, ch) in text.chars().enumerate() {
            match ch {
                '+' => bits |= 1 << site,
                '-' => {}
                other => {
                    return Err(Error::InvalidWavefunction(format!(
                        "unexpected character {other:?} in configuration string"
                    )))
                }
            }
        }
        Ok(Self::from_bits(bits, text.len()))
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites as usize
    }

    pub fn up(&self, site: usize) -> bool {
        debug_assert!(site < self.n_sites());
        self.bits >> site & 1 == 1
    }

    /// Spin value Z_i = ±1.
    pub fn spin(&self, site: usize) -> f64 {
        if self.up(site) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn n_up(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Magnetization m = (#up - #down).
    pub fn magnetization(&self) -> i32 {
        2 * self.n_up() as i32 - self.n_sites as i32
    }

    pub fn with_flip(&self, site: usize) -> Self {
        debug_assert!(site < self.n_sites());
        Self {
            bits: self.bits ^ (1 << site),
            n_sites: self.n_sites,
        }
    }

    fn with_swap(&self, i: usize, j: usize) -> Self {
        Self {
            bits: self.bits ^ (1 << i) ^ (1 << j),
            n_sites: self.n_sites,
        }
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for site in 0..self.n_sites() {
            write!(f, "{}", if self.up(site) { '+' } else { '-' })?;
        }
        Ok(())
    }
}

/// An RL action on a spin configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Flip the spin at one site.
    Flip(usize),
    /// Swap two opposite spins across a bond.
    Exchange(usize, usize),
    /// The trivial action a0, leaving the state unchanged.
    Stay,
}

/// Apply an action, validating it against the configuration.
pub fn apply_action(config: SpinConfig, action: Action) -> Result<SpinConfig> {
    match action {
        Action::Flip(site) => {
            if site >= config.n_sites() {
                return Err(Error::InvalidAction(format!(
                    "flip site {site} out of range"
                )));
            }
            Ok(config.with_flip(site))
        }
        Action::Exchange(i, j) => {
            if i >= config.n_sites() || j >= config.n_sites() || i == j {
                return Err(Error::InvalidAction(format!(
                    "exchange sites ({i}, {j}) out of range"
                )));
            }
            if config.up(i) == config.up(j) {
                return Err(Error::InvalidAction(format!(
                    "exchange on equal-spin bond ({i}, {j})"
                )));
            }
            Ok(config.with_swap(i, j))
        }
        Action::Stay => Ok(config),
    }
}

/// Sub-space of configurations to work in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sector {
    /// All 2^N configurations.
    Full,
    /// Fixed magnetization m = (#up - #down).
    Magnetization(i32),
}

/// All configurations of the lattice in the sector, ascending bit order.
///
/// `cap` bounds the number of sites for which full enumeration is allowed.
pub fn enumerate_states(
    lattice: &Lattice,
    sector: Sector,
    cap: usize,
) -> Result<Vec<SpinConfig>> {
    let n = lattice.n_sites();
    if n > cap {
        return Err(Error::StateSpaceTooLarge { n_sites: n, cap });
    }
    let all = 0..(1u64 << n);
    let states = match sector {
        Sector::Full => all.map(|b| SpinConfig::from_bits(b, n)).collect(),
        Sector::Magnetization(m) => {
            if (m + n as i32) % 2 != 0 || m.unsigned_abs() as usize > n {
                return Err(Error::InvalidWavefunction(format!(
                    "magnetization {m} incompatible with {n} sites"
                )));
            }
            let n_up = ((m + n as i32) / 2) as u32;
            all.filter(|b| b.count_ones() == n_up)
                .map(|b| SpinConfig::from_bits(b, n))
                .collect()
        }
    };
    Ok(states)
}

/// Cyclically shift all spins by `shift` along each lattice dimension.
///
/// The spin at a site moves to the site displaced by `shift`; shifting by a
/// full period is the identity.
pub fn translate_config(
    config: SpinConfig,
    lattice: &Lattice,
    shift: &[i64],
) -> Result<SpinConfig> {
    if shift.len() != lattice.dims().len() {
        return Err(Error::InvalidLattice(
            "shift rank must match lattice rank".into(),
        ));
    }
    for (dim, (&s, &extent)) in shift.iter().zip(lattice.dims()).enumerate() {
        if s.rem_euclid(extent as i64) != 0 && !lattice.periodic()[dim] {
            return Err(Error::SymmetryUnavailable { dim });
        }
    }
    let mut bits = 0u64;
    for site in 0..lattice.n_sites() {
        if config.up(site) {
            let coords = lattice.coords(site);
            let shifted: Vec<usize> = coords
                .iter()
                .zip(shift)
                .zip(lattice.dims())
                .map(|((&c, &s), &extent)| {
                    (c as i64 + s).rem_euclid(extent as i64) as usize
                })
                .collect();
            bits |= 1 << lattice.site(&shifted);
        }
    }
    Ok(SpinConfig::from_bits(bits, lattice.n_sites()))
}

/// Enumerated sector with O(1)/O(log n) index lookup, shared by the tabular
/// solvers and oracles.
#[derive(Debug, Clone)]
pub struct StateSpace {
    states: Vec<SpinConfig>,
    full: bool,
}

impl StateSpace {
    pub fn new(lattice: &Lattice, sector: Sector, cap: usize) -> Result<Self> {
        let states = enumerate_states(lattice, sector, cap)?;
        Ok(Self {
            states,
            full: matches!(sector, Sector::Full),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[SpinConfig] {
        &self.states
    }

    pub fn state(&self, index: usize) -> SpinConfig {
        self.states[index]
    }

    pub fn index_of(&self, config: SpinConfig) -> Option<usize> {
        if self.full {
            let idx = config.bits() as usize;
            (idx < self.states.len()).then_some(idx)
        } else {
            self.states.binary_search(&config).ok()
        }
    }
}
