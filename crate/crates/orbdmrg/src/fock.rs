//! Fermionic mode algebra on small occupation-number spaces.
//!
//! A window of `w` modes carries the `2^w`-dimensional Fock space spanned by
//! occupation bitstrings. The basis enumeration is fixed once and used by
//! every module of the crate:
//!
//! - basis states are occupation bitstrings `x ∈ {0,1}^w`,
//! - the state index is lexicographic in `x` with the *first* mode as the
//!   most significant bit: `idx(x) = Σ_μ x_μ · 2^(w−1−μ)`,
//! - Jordan-Wigner strings run towards lower mode indices, so the sign of
//!   `c_μ` on `|x⟩` is `(−1)^(x_0 + … + x_{μ−1})`,
//! - multi-particle states are `|I⟩ = c†_{i1} … c†_{ik} |vac⟩` with
//!   `i1 < … < ik`.
//!
//! With that convention the Gaussian unitary induced on the window by a
//! single-particle rotation `U` is the direct sum of exterior powers of
//! `U†`, whose matrix elements are minors: `g(U)_{I,J} = det U†|_{I,J}`.
//! Only one- and two-site windows are ever materialised as dense matrices;
//! anything larger is handled by the bit-level routines in [`crate::oracle`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{cr, require_unitary};
use crate::{C64, CMat, Error, Result};

/// Tolerance for unitarity preconditions on incoming rotations.
pub const UNITARY_TOL: f64 = 1e-10;

/// The single-particle mode layout of a chain: `n` orbitals (lattice sites)
/// with `p` fermion species each, `np` modes in total.
///
/// Mode `μ = site·p + species` counts positions in the *current* lattice
/// order. `mode_order` maps each position back to the mode label it carried
/// at the start of a run, and `accumulated` is the product of every applied
/// rotation and permutation, so coefficients in the current basis equal the
/// initial coefficients rotated by `accumulated`.
#[derive(Clone, Debug)]
pub struct ModeSpace {
    n_orbitals: usize,
    species: usize,
    /// `mode_order[position] = initial mode label`.
    pub mode_order: Vec<usize>,
    /// Accumulated global mode transformation (np × np).
    pub accumulated: CMat,
}

impl ModeSpace {
    /// A fresh mode space with identity ordering and identity history.
    pub fn new(n_orbitals: usize, species: usize) -> Result<Self> {
        if n_orbitals == 0 || species == 0 {
            return Err(Error::Config(
                "mode space needs at least one orbital and one species".into(),
            ));
        }
        let np = n_orbitals * species;
        Ok(Self {
            n_orbitals,
            species,
            mode_order: (0..np).collect(),
            accumulated: CMat::identity(np, np),
        })
    }

    /// Number of lattice sites (orbitals).
    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    /// Fermion species per orbital.
    pub fn species(&self) -> usize {
        self.species
    }

    /// Total mode count `n·p`.
    pub fn n_modes(&self) -> usize {
        self.n_orbitals * self.species
    }

    /// Local Hilbert-space dimension `d = 2^p` of one site.
    pub fn site_dim(&self) -> usize {
        1 << self.species
    }

    /// Folds a further rotation of the current modes into the history.
    pub fn push_rotation(&mut self, u: &CMat) -> Result<()> {
        require_unitary(u, UNITARY_TOL)?;
        if u.nrows() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                context: "mode space rotation",
                expected: self.n_modes(),
                got: u.nrows(),
            });
        }
        self.accumulated = &self.accumulated * u;
        Ok(())
    }

    /// Records an adjacent site swap `(site, site+1)` in the ordering and
    /// the accumulated unitary.
    pub fn swap_sites(&mut self, site: usize) -> Result<()> {
        if site + 1 >= self.n_orbitals {
            return Err(Error::IndexOutOfRange {
                context: "site swap",
                index: site,
                bound: self.n_orbitals - 1,
            });
        }
        let p = self.species;
        let np = self.n_modes();
        let mut perm = CMat::zeros(np, np);
        for m in 0..np {
            perm[(m, m)] = cr(1.0);
        }
        for s in 0..p {
            let a = site * p + s;
            let b = (site + 1) * p + s;
            perm[(a, a)] = cr(0.0);
            perm[(b, b)] = cr(0.0);
            perm[(a, b)] = cr(1.0);
            perm[(b, a)] = cr(1.0);
        }
        self.accumulated = &self.accumulated * &perm;
        for s in 0..p {
            self.mode_order.swap(site * p + s, (site + 1) * p + s);
        }
        Ok(())
    }

    /// Checks the structural invariants: unitary history, bijective order.
    ///
    /// Fresh constructions satisfy the tight tolerance; long runs compose
    /// hundreds of rotations, so checkpoint loading checks at the looser
    /// [`Self::validate_checkpoint`] level.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(1e-12)
    }

    /// Checkpoint-level invariant: accumulated drift below `1e-10`.
    pub fn validate_checkpoint(&self) -> Result<()> {
        self.validate_with(1e-10)
    }

    fn validate_with(&self, tol: f64) -> Result<()> {
        require_unitary(&self.accumulated, tol).map_err(|_| Error::NotUnitary {
            dev: crate::linalg::unitarity_deviation(&self.accumulated),
            tol,
        })?;
        let np = self.n_modes();
        let mut seen = vec![false; np];
        for &m in &self.mode_order {
            if m >= np || seen[m] {
                return Err(Error::Config("mode_order is not a bijection".into()));
            }
            seen[m] = true;
        }
        Ok(())
    }
}

/// Occupation bitstring over a window of modes, with the enumeration fixed
/// in the module docs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct OccupationState {
    /// Number of modes in the window.
    pub modes: usize,
    /// Packed occupations; mode `μ` lives at bit `modes−1−μ`.
    pub bits: u32,
}

impl OccupationState {
    /// State from explicit per-mode occupations.
    pub fn from_occupations(occ: &[bool]) -> Self {
        let modes = occ.len();
        let mut bits = 0u32;
        for (mu, &o) in occ.iter().enumerate() {
            if o {
                bits |= 1 << (modes - 1 - mu);
            }
        }
        Self { modes, bits }
    }

    /// Basis index of this state in the window enumeration.
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    /// Occupation of mode `mu`.
    pub fn occupied(&self, mu: usize) -> bool {
        (self.bits >> (self.modes - 1 - mu)) & 1 == 1
    }

    /// Total particle number.
    pub fn particle_count(&self) -> u32 {
        self.bits.count_ones()
    }
}

/// Occupation of mode `mu` in the basis state with index `s` on `w` modes.
#[inline]
pub fn mode_occupied(s: usize, w: usize, mu: usize) -> bool {
    (s >> (w - 1 - mu)) & 1 == 1
}

/// Jordan-Wigner sign of mode `mu` on basis state `s`: parity of the
/// occupations of all modes before `mu`.
#[inline]
pub fn jw_sign(s: usize, w: usize, mu: usize) -> f64 {
    let above = s >> (w - mu);
    if (above as u32).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense annihilation operators, number operators and the parity operator
/// for a window of `w` modes (dimension `2^w`).
pub struct WindowOperators {
    /// `ann[μ]` is the matrix of `c_μ` including its Jordan-Wigner string
    /// inside the window.
    pub ann: Vec<CMat>,
    /// Parity `(−1)^N` of the window.
    pub parity: CMat,
}

impl WindowOperators {
    /// Matrix of `c†_μ`.
    pub fn cre(&self, mu: usize) -> CMat {
        self.ann[mu].adjoint()
    }

    /// Matrix of `n_μ = c†_μ c_μ`.
    pub fn num(&self, mu: usize) -> CMat {
        self.cre(mu) * &self.ann[mu]
    }
}

/// Builds the Jordan-Wigner operators for a window of `w` modes.
///
/// Intended for small windows (sites and site pairs); the dimension grows
/// as `2^w`, so `w` is capped at 12.
pub fn window_operators(w: usize) -> WindowOperators {
    assert!(w >= 1 && w <= 12, "window of {w} modes is out of scope");
    let dim = 1usize << w;
    let mut ann = Vec::with_capacity(w);
    for mu in 0..w {
        let mut m = CMat::zeros(dim, dim);
        let bit = 1usize << (w - 1 - mu);
        for s in 0..dim {
            if s & bit != 0 {
                m[(s & !bit, s)] = cr(jw_sign(s, w, mu));
            }
        }
        ann.push(m);
    }
    let mut parity = CMat::zeros(dim, dim);
    for s in 0..dim {
        let sign = if (s as u32).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        parity[(s, s)] = cr(sign);
    }
    WindowOperators { ann, parity }
}

/// Jordan-Wigner operators for a single site of `p` species
/// (dimension `2^p`), the `p = w` special case of [`window_operators`].
pub fn site_operators(p: usize) -> WindowOperators {
    window_operators(p)
}

/// All mode subsets of `[w]` with `k` elements, each paired with its basis
/// index, sorted ascending by basis index.
fn sector_subsets(w: usize, k: usize) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for s in 0..(1usize << w) {
        if (s as u32).count_ones() as usize == k {
            let modes: Vec<usize> = (0..w).filter(|&mu| mode_occupied(s, w, mu)).collect();
            out.push((s, modes));
        }
    }
    out
}

fn submatrix_det(a: &CMat, rows: &[usize], cols: &[usize]) -> C64 {
    debug_assert_eq!(rows.len(), cols.len());
    match rows.len() {
        0 => cr(1.0),
        1 => a[(rows[0], cols[0])],
        2 => {
            a[(rows[0], cols[0])] * a[(rows[1], cols[1])]
                - a[(rows[0], cols[1])] * a[(rows[1], cols[0])]
        }
        k => {
            let sub = DMatrix::from_fn(k, k, |i, j| a[(rows[i], cols[j])]);
            sub.determinant()
        }
    }
}

/// Polynomial extension of the Gaussian representation to arbitrary (not
/// necessarily unitary) matrices: `⊕_k ∧^k U†` entry-wise via minors.
///
/// Gradient code differentiates through this extension; for unitary input
/// it coincides with [`gaussian_unitary_window`].
pub fn exterior_rep(u: &CMat) -> CMat {
    let w = u.nrows();
    assert!(w <= 12, "gaussian representations are only materialised locally");
    let udag = u.adjoint();
    let dim = 1usize << w;
    let mut g = CMat::zeros(dim, dim);
    for k in 0..=w {
        let subsets = sector_subsets(w, k);
        for (si, mi) in &subsets {
            for (sj, mj) in &subsets {
                g[(*si, *sj)] = submatrix_det(&udag, mi, mj);
            }
        }
    }
    g
}

/// Gaussian unitary `g(U) = ⊕_k ∧^k U†` induced on a window of `w` modes
/// by the `w × w` mode rotation `U`.
///
/// The `k`-particle block element between occupation subsets `I` (row) and
/// `J` (column) is `det U†|_{I,J}`; in particular the single-particle block
/// is `U†` itself and the top block is `det U†`. Errors if `U` fails the
/// unitarity precondition.
pub fn gaussian_unitary_window(u: &CMat) -> Result<CMat> {
    require_unitary(u, UNITARY_TOL)?;
    Ok(exterior_rep(u))
}

/// Two-site Gaussian unitary: `U` acts on the `2p` modes of a neighbouring
/// site pair and the result acts on the fused `d² = 2^(2p)` basis.
pub fn gaussian_unitary(u: &CMat, p: usize) -> Result<CMat> {
    if u.nrows() != 2 * p {
        return Err(Error::DimensionMismatch {
            context: "two-site gaussian unitary",
            expected: 2 * p,
            got: u.nrows(),
        });
    }
    gaussian_unitary_window(u)
}

/// Number of elements of the sorted set `set` strictly smaller than `x`.
fn rank_in(set: &[usize], x: usize) -> usize {
    set.iter().filter(|&&y| y < x).count()
}

/// Derivative of a Gaussian-unitary matrix element with respect to an entry
/// of the adjoint rotation: `∂ g(U)_{I,J} / ∂ (U†)_{i,j}`.
///
/// `g(U)_{I,J} = det U†|_{I,J}` is a polynomial in the entries of `U†`, and
/// the cofactor expansion gives
/// `(−1)^(p_I(i)+p_J(j)) · det U†|_{I∖{i}, J∖{j}}` when `|I| = |J|`, `i ∈ I`
/// and `j ∈ J`, and zero otherwise (`p_X(x)` counts elements of `X` smaller
/// than `x`). Index sets are given as sorted mode lists.
pub fn gaussian_minor(u: &CMat, set_i: &[usize], set_j: &[usize], i: usize, j: usize) -> Result<C64> {
    let w = u.nrows();
    for &m in set_i.iter().chain(set_j.iter()).chain([i, j].iter()) {
        if m >= w {
            return Err(Error::IndexOutOfRange {
                context: "gaussian minor",
                index: m,
                bound: w,
            });
        }
    }
    if set_i.len() != set_j.len() || !set_i.contains(&i) || !set_j.contains(&j) {
        return Ok(cr(0.0));
    }
    let rows: Vec<usize> = set_i.iter().copied().filter(|&m| m != i).collect();
    let cols: Vec<usize> = set_j.iter().copied().filter(|&m| m != j).collect();
    let sign = if (rank_in(set_i, i) + rank_in(set_j, j)) % 2 == 0 {
        1.0
    } else {
        -1.0
    };
    let udag = u.adjoint();
    Ok(submatrix_det(&udag, &rows, &cols) * cr(sign))
}

/// The `2p × 2p` window rotation that swaps the two sites of a pair,
/// species by species.
pub fn swap_rotation(p: usize) -> CMat {
    let mut u = CMat::zeros(2 * p, 2 * p);
    for s in 0..p {
        u[(s, p + s)] = cr(1.0);
        u[(p + s, s)] = cr(1.0);
    }
    u
}
