//! Matrix elements of the transverse-field Ising and XXZ models, and their
//! stoquastic decomposition H = -Γ + V into passive jump rates Γ and a
//! diagonal potential V.
//!
//! Conventions: J > 0 is ferromagnetic, spins enter as Z_i = ±1, and all
//! energies are in units of the couplings. The XXZ exchange term
//! X_iX_j + Y_iY_j has matrix element 2 between anti-aligned neighbor
//! configurations, so its off-diagonal elements are -2·J_perp.

use crate::error::{Error, Result};
use crate::lattice::{Action, Lattice, SpinConfig, StateSpace};

/// Model family plus couplings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    /// H = -J Σ_<ij> Z_i Z_j - h Σ_i X_i, stoquastic for h > 0.
    Ising { j: f64, h: f64 },
    /// H = -Σ_<ij> [J Z_i Z_j + J_perp (X_iX_j + Y_iY_j)], stoquastic for J_perp > 0.
    Xxz { j: f64, j_perp: f64 },
}

/// A stoquastic Hamiltonian on a lattice: matrix-element provider exposing
/// the diagonal, off-diagonal rows, passive rates, and potential.
#[derive(Debug, Clone)]
pub struct StoquasticModel {
    kind: ModelKind,
    lattice: Lattice,
}

impl StoquasticModel {
    /// Construct and validate stoquasticity (h > 0, J_perp > 0).
    pub fn new(kind: ModelKind, lattice: Lattice) -> Result<Self> {
        match kind {
            ModelKind::Ising { j, h } => {
                if !j.is_finite() || !h.is_finite() {
                    return Err(Error::NonStoquastic("non-finite coupling".into()));
                }
                if h <= 0.0 {
                    return Err(Error::NonStoquastic(format!(
                        "Ising requires transverse field h > 0, got {h}"
                    )));
                }
            }
            ModelKind::Xxz { j, j_perp } => {
                if !j.is_finite() || !j_perp.is_finite() {
                    return Err(Error::NonStoquastic("non-finite coupling".into()));
                }
                if j_perp <= 0.0 {
                    return Err(Error::NonStoquastic(format!(
                        "XXZ requires J_perp > 0, got {j_perp}"
                    )));
                }
            }
        }
        Ok(Self { kind, lattice })
    }

    /// Construct without the coupling-positivity check.
    ///
    /// Diagnostic escape hatch: lets e.g. h = 0 be inspected with
    /// [`check_ergodic`], where it decomposes into isolated components.
    pub fn new_unchecked(kind: ModelKind, lattice: Lattice) -> Self {
        Self { kind, lattice }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }

    /// Diagonal element H_ss = -J Σ_<ij> s_i s_j (for both models; the
    /// transverse/exchange terms are purely off-diagonal).
    pub fn diag_element(&self, s: SpinConfig) -> f64 {
        let j = match self.kind {
            ModelKind::Ising { j, .. } => j,
            ModelKind::Xxz { j, .. } => j,
        };
        -j * self.lattice.bond_alignment(s) as f64
    }

    /// Off-diagonal row as (action, successor, H_ss') triples, in
    /// deterministic order (sites ascending / bonds ascending).
    ///
    /// Ising rows hold one single-site flip per site with element -h; XXZ
    /// rows hold one exchange per anti-aligned bond with element -2·J_perp.
    pub fn offdiag_transitions(&self, s: SpinConfig) -> Vec<(Action, SpinConfig, f64)> {
        match self.kind {
            ModelKind::Ising { h, .. } => (0..self.lattice.n_sites())
                .map(|site| (Action::Flip(site), s.with_flip(site), -h))
                .collect(),
            ModelKind::Xxz { j_perp, .. } => self
                .lattice
                .bonds()
                .iter()
                .filter(|&&(i, k)| s.up(i) != s.up(k))
                .map(|&(i, k)| {
                    (
                        Action::Exchange(i, k),
                        s.with_flip(i).with_flip(k),
                        -2.0 * j_perp,
                    )
                })
                .collect(),
        }
    }

    /// Off-diagonal row {(s', H_ss')}, excluding s itself.
    pub fn offdiag_row(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)> {
        self.offdiag_transitions(s)
            .into_iter()
            .map(|(_, s2, elem)| (s2, elem))
            .collect()
    }

    /// Passive rates Γ_{s→s'} = -H_ss' for every adjacent s'.
    pub fn passive_rates(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)> {
        self.offdiag_transitions(s)
            .into_iter()
            .map(|(_, s2, elem)| (s2, -elem))
            .collect()
    }

    /// Total exit rate Σ_{s'≠s} Γ_{s→s'}.
    pub fn total_exit_rate(&self, s: SpinConfig) -> f64 {
        match self.kind {
            ModelKind::Ising { h, .. } => h * self.lattice.n_sites() as f64,
            ModelKind::Xxz { j_perp, .. } => {
                let anti = self
                    .lattice
                    .bonds()
                    .iter()
                    .filter(|&&(i, k)| s.up(i) != s.up(k))
                    .count();
                2.0 * j_perp * anti as f64
            }
        }
    }

    /// Potential V(s) = H_ss + Σ_{s'≠s} H_ss'.
    pub fn potential(&self, s: SpinConfig) -> f64 {
        self.diag_element(s) - self.total_exit_rate(s)
    }

    /// Sum of the off-diagonal row, Σ_{s'≠s} H_ss' = -(total exit rate).
    pub fn offdiag_sum(&self, s: SpinConfig) -> f64 {
        -self.total_exit_rate(s)
    }

    /// Upper bound on max_s H_ss without enumeration: |J|·(bond count).
    pub fn diag_upper_bound(&self) -> f64 {
        let j = match self.kind {
            ModelKind::Ising { j, .. } => j,
            ModelKind::Xxz { j, .. } => j,
        };
        j.abs() * self.lattice.bonds().len() as f64
    }

    /// Exact max_s H_ss over an enumerated sector.
    pub fn max_diag(&self, space: &StateSpace) -> f64 {
        space
            .states()
            .iter()
            .map(|&s| self.diag_element(s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// State of minimal H_ss in the sector (the classical ground state),
    /// ties broken by bit pattern.
    pub fn classical_ground_state(&self, space: &StateSpace) -> SpinConfig {
        let mut best = space.state(0);
        let mut best_e = self.diag_element(best);
        for &s in &space.states()[1..] {
            let e = self.diag_element(s);
            if e < best_e {
                best = s;
                best_e = e;
            }
        }
        best
    }
}

/// Connectivity of the passive dynamics within a sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ergodicity {
    Ergodic,
    Components(usize),
}

/// Graph connectivity of the off-diagonal adjacency structure restricted to
/// the sector. Reports, never fails.
pub fn check_ergodic(model: &StoquasticModel, space: &StateSpace) -> Ergodicity {
    let n = space.len();
    let mut component = vec![usize::MAX; n];
    let mut n_components = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = n_components;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for (s2, elem) in model.offdiag_row(space.state(i)) {
                if elem == 0.0 {
                    continue;
                }
                if let Some(k) = space.index_of(s2) {
                    if component[k] == usize::MAX {
                        component[k] = n_components;
                        queue.push_back(k);
                    }
                }
            }
        }
        n_components += 1;
    }
    if n_components == 1 {
        Ergodicity::Ergodic
    } else {
        Ergodicity::Components(n_components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Sector, DEFAULT_ENUMERATION_CAP};

    fn ising_pair() -> StoquasticModel {
        StoquasticModel::new(
            ModelKind::Ising { j: 1.0, h: 1.0 },
            Lattice::open_chain(2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn ising_diag_counts_bond_alignment() {
        let m = ising_pair();
        assert_eq!(m.diag_element(SpinConfig::parse("++").unwrap()), -1.0);
        assert_eq!(m.diag_element(SpinConfig::parse("+-").unwrap()), 1.0);
    }

    #[test]
    fn xxz_diag_on_neel_ring() {
        let m = StoquasticModel::new(
            ModelKind::Xxz { j: 1.0, j_perp: 1.0 },
            Lattice::ring(4).unwrap(),
        )
        .unwrap();
        assert_eq!(m.diag_element(SpinConfig::parse("+-+-").unwrap()), 4.0);
    }

    #[test]
    fn ising_offdiag_row_is_all_single_flips() {
        let m = ising_pair();
        let row = m.offdiag_row(SpinConfig::parse("++").unwrap());
        assert_eq!(
            row,
            vec![
                (SpinConfig::parse("-+").unwrap(), -1.0),
                (SpinConfig::parse("+-").unwrap(), -1.0),
            ]
        );
    }

    #[test]
    fn xxz_offdiag_row_aligned_and_antialigned() {
        let ring = StoquasticModel::new(
            ModelKind::Xxz { j: 1.0, j_perp: 1.0 },
            Lattice::ring(4).unwrap(),
        )
        .unwrap();
        assert!(ring.offdiag_row(SpinConfig::all_up(4)).is_empty());

        let pair = StoquasticModel::new(
            ModelKind::Xxz { j: 1.0, j_perp: 1.0 },
            Lattice::open_chain(2).unwrap(),
        )
        .unwrap();
        let row = pair.offdiag_row(SpinConfig::parse("+-").unwrap());
        assert_eq!(row, vec![(SpinConfig::parse("-+").unwrap(), -2.0)]);
    }

    #[test]
    fn ising_potential_closed_form() {
        // V(s) = -hN - J Σ s_i s_j
        let m = ising_pair();
        assert_eq!(m.potential(SpinConfig::parse("++").unwrap()), -3.0);
        assert_eq!(m.potential(SpinConfig::parse("+-").unwrap()), -1.0);
    }

    #[test]
    fn xxx_potential_is_flat_within_sector() {
        let m = StoquasticModel::new(
            ModelKind::Xxz { j: 1.0, j_perp: 1.0 },
            Lattice::ring(4).unwrap(),
        )
        .unwrap();
        let space = StateSpace::new(m.lattice(), Sector::Magnetization(0), 20).unwrap();
        let v0 = m.potential(space.state(0));
        for &s in space.states() {
            assert!((m.potential(s) - v0).abs() < 1e-14);
        }
        assert_eq!(v0, -4.0); // -J * bond count
    }

    #[test]
    fn passive_rates_match_field() {
        let m = StoquasticModel::new(
            ModelKind::Ising { j: 1.0, h: 0.5 },
            Lattice::ring(3).unwrap(),
        )
        .unwrap();
        for bits in 0..8 {
            let s = SpinConfig::from_bits(bits, 3);
            let rates = m.passive_rates(s);
            assert_eq!(rates.len(), 3);
            for (_, rate) in rates {
                assert_eq!(rate, 0.5);
            }
        }
    }

    #[test]
    fn sep_rate_between_single_particle_states() {
        // Exchange rate is 2·J_perp: the XX+YY element on the anti-aligned
        // pair space is 2.
        let m = StoquasticModel::new(
            ModelKind::Xxz { j: 1.0, j_perp: 1.0 },
            Lattice::open_chain(2).unwrap(),
        )
        .unwrap();
        let rates = m.passive_rates(SpinConfig::parse("+-").unwrap());
        assert_eq!(rates, vec![(SpinConfig::parse("-+").unwrap(), 2.0)]);
    }

    #[test]
    fn all_up_ring3_has_three_unit_rates() {
        let m = StoquasticModel::new(
            ModelKind::Ising { j: 1.0, h: 1.0 },
            Lattice::ring(3).unwrap(),
        )
        .unwrap();
        let rates = m.passive_rates(SpinConfig::all_up(3));
        assert_eq!(rates.len(), 3);
        assert!(rates.iter().all(|&(_, r)| r == 1.0));
    }

    #[test]
    fn potential_identity_holds_exhaustively() {
        // V(s) = H_ss + Σ_{s'≠s} H_ss' for every state.
        let models = [
            StoquasticModel::new(ModelKind::Ising { j: 0.7, h: 0.3 }, Lattice::ring(6).unwrap())
                .unwrap(),
            StoquasticModel::new(
                ModelKind::Xxz { j: 0.4, j_perp: 1.3 },
                Lattice::ring(6).unwrap(),
            )
            .unwrap(),
        ];
        for m in &models {
            for bits in 0..(1u64 << 6) {
                let s = SpinConfig::from_bits(bits, 6);
                let row_sum: f64 = m.offdiag_row(s).iter().map(|&(_, e)| e).sum();
                let v = m.diag_element(s) + row_sum;
                assert!((m.potential(s) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_stoquastic_couplings_rejected() {
        let lat = Lattice::ring(4).unwrap();
        assert!(StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 0.0 }, lat.clone()).is_err());
        assert!(StoquasticModel::new(ModelKind::Ising { j: 1.0, h: -1.0 }, lat.clone()).is_err());
        assert!(
            StoquasticModel::new(ModelKind::Xxz { j: 1.0, j_perp: -0.1 }, lat.clone()).is_err()
        );
        assert!(StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat).is_ok());
    }

    #[test]
    fn ergodicity_of_flip_dynamics() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
        let space = StateSpace::new(&lat, Sector::Full, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(check_ergodic(&m, &space), Ergodicity::Ergodic);

        // h = 0 leaves no off-diagonal terms: every state is its own component.
        let frozen = StoquasticModel::new_unchecked(ModelKind::Ising { j: 1.0, h: 0.0 }, lat);
        assert_eq!(check_ergodic(&frozen, &space), Ergodicity::Components(16));
    }

    #[test]
    fn xxz_full_space_splits_into_magnetization_sectors() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Xxz { j: 1.0, j_perp: 1.0 }, lat.clone()).unwrap();
        let space = StateSpace::new(&lat, Sector::Full, 20).unwrap();
        assert_eq!(check_ergodic(&m, &space), Ergodicity::Components(5));
    }
}
