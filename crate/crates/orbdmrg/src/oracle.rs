//! Desk-scale ground truth: exact diagonalisation on the full Fock space,
//! a restricted mean-field (Hartree-Fock) reference basis, and dense
//! embeddings of MPS for cross-validation.
//!
//! The full-space basis uses the same global enumeration as everything
//! else: occupation bitstrings over the `np` modes in site-major order,
//! mode 0 as the most significant bit, so a dense MPS embedding and a Fock
//! space vector index the same amplitudes.

use nalgebra::DVector;

use crate::fock::jw_sign;
use crate::linalg::{cr, davidson_smallest, eigh, DavidsonOptions};
use crate::mps::SymmetricMps;
use crate::operators::SecondQuantizedOperator;
use crate::{C64, CMat, CVec, Error, Result};

/// Hard cap on modes for full-space constructions.
pub const MAX_FULL_MODES: usize = 16;

/// Dimension above which sector solves switch from dense diagonalisation
/// to Davidson iteration.
const DENSE_EIG_CAP: usize = 2048;

/// Sparse Hermitian operator on the full `2^np` Fock space, stored by
/// columns.
pub struct FockSpaceOperator {
    pub n_modes: usize,
    pub species: usize,
    pub e_core: f64,
    /// `cols[y]` lists `(x, ⟨x|H|y⟩)` with deterministic ordering.
    pub cols: Vec<Vec<(usize, C64)>>,
}

impl FockSpaceOperator {
    pub fn dim(&self) -> usize {
        1 << self.n_modes
    }

    /// `H·v` (excluding the scalar core energy).
    pub fn apply(&self, v: &CVec) -> CVec {
        let mut out = CVec::zeros(self.dim());
        for (y, col) in self.cols.iter().enumerate() {
            let amp = v[y];
            if amp.norm() == 0.0 {
                continue;
            }
            for &(x, h) in col {
                out[x] += h * amp;
            }
        }
        out
    }

    /// Matrix element `⟨x|H|y⟩` (excluding the core energy).
    pub fn element(&self, x: usize, y: usize) -> C64 {
        self.cols[y]
            .iter()
            .find(|&&(r, _)| r == x)
            .map(|&(_, h)| h)
            .unwrap_or_else(|| cr(0.0))
    }

    /// Hermiticity deviation, for invariant checks.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for (y, col) in self.cols.iter().enumerate() {
            for &(x, h) in col {
                dev = dev.max((h - self.element(y, x).conj()).norm());
            }
        }
        dev
    }
}

/// Applies `c_mu` to a basis state, returning the target state and sign.
#[inline]
fn annihilate(state: usize, w: usize, mu: usize) -> Option<(usize, f64)> {
    let bit = 1usize << (w - 1 - mu);
    if state & bit == 0 {
        return None;
    }
    Some((state & !bit, jw_sign(state, w, mu)))
}

/// Applies `c†_mu` to a basis state.
#[inline]
fn create(state: usize, w: usize, mu: usize) -> Option<(usize, f64)> {
    let bit = 1usize << (w - 1 - mu);
    if state & bit != 0 {
        return None;
    }
    Some((state | bit, jw_sign(state, w, mu)))
}

/// Applies one Hamiltonian term string to `|y⟩`; operators act right to
/// left: `c†_i c†_j c_l c_k |y⟩`.
fn apply_two_body(y: usize, w: usize, i: usize, j: usize, k: usize, l: usize) -> Option<(usize, f64)> {
    let (s1, f1) = annihilate(y, w, k)?;
    let (s2, f2) = annihilate(s1, w, l)?;
    let (s3, f3) = create(s2, w, j)?;
    let (s4, f4) = create(s3, w, i)?;
    Some((s4, f1 * f2 * f3 * f4))
}

fn apply_one_body(y: usize, w: usize, i: usize, j: usize) -> Option<(usize, f64)> {
    let (s1, f1) = annihilate(y, w, j)?;
    let (s2, f2) = create(s1, w, i)?;
    Some((s2, f1 * f2))
}

/// Nonzero coefficient entries of an operator, gathered once.
struct TermList {
    one_body: Vec<(usize, usize, C64)>,
    two_body: Vec<(usize, usize, usize, usize, C64)>,
}

fn gather_terms(op: &SecondQuantizedOperator) -> TermList {
    let np = op.n_modes();
    let mut one_body = Vec::new();
    for i in 0..np {
        for j in 0..np {
            let t = op.t[(i, j)];
            if t.norm() > 0.0 {
                one_body.push((i, j, t));
            }
        }
    }
    let mut two_body = Vec::new();
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                for l in 0..np {
                    let v = op.v_at(i, j, k, l);
                    if v.norm() > 0.0 {
                        two_body.push((i, j, k, l, v));
                    }
                }
            }
        }
    }
    TermList { one_body, two_body }
}

/// Builds the full Fock-space matrix of the Hamiltonian via Jordan-Wigner
/// strings. Refuses more than [`MAX_FULL_MODES`] modes.
pub fn build_full_hamiltonian(op: &SecondQuantizedOperator) -> Result<FockSpaceOperator> {
    let np = op.n_modes();
    if np > MAX_FULL_MODES {
        return Err(Error::TooLarge {
            context: "full Fock-space Hamiltonian",
            size: np,
            cap: MAX_FULL_MODES,
        });
    }
    let dim = 1usize << np;
    let terms = gather_terms(op);
    let mut cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
    for (y, col) in cols.iter_mut().enumerate() {
        let mut acc: std::collections::BTreeMap<usize, C64> = std::collections::BTreeMap::new();
        for &(i, j, t) in &terms.one_body {
            if let Some((x, sign)) = apply_one_body(y, np, i, j) {
                *acc.entry(x).or_insert_with(|| cr(0.0)) += t * cr(sign);
            }
        }
        for &(i, j, k, l, v) in &terms.two_body {
            if let Some((x, sign)) = apply_two_body(y, np, i, j, k, l) {
                *acc.entry(x).or_insert_with(|| cr(0.0)) += v * cr(sign);
            }
        }
        col.extend(acc.into_iter().filter(|&(_, h)| h.norm() > 0.0));
    }
    Ok(FockSpaceOperator { n_modes: np, species: op.species(), e_core: op.e_core, cols })
}

/// All basis states with `counts[s]` particles of species `s`, ascending.
pub fn sector_basis(n_orbitals: usize, p: usize, counts: &[usize]) -> Vec<usize> {
    let np = n_orbitals * p;
    let mut out = Vec::new();
    'states: for s in 0..(1usize << np) {
        let mut seen = vec![0usize; p];
        for mu in 0..np {
            if (s >> (np - 1 - mu)) & 1 == 1 {
                seen[mu % p] += 1;
            }
        }
        for sp in 0..p {
            if seen[sp] != counts[sp] {
                continue 'states;
            }
        }
        out.push(s);
    }
    out
}

/// Lowest eigenpair of the operator, either within the particle-number
/// sector `counts` or over the whole Fock space.
///
/// Returns the energy (including `e_core`) and the full-Fock-space dense
/// eigenvector.
pub fn exact_ground_state(
    op: &SecondQuantizedOperator,
    sector: Option<&[usize]>,
) -> Result<(f64, CVec)> {
    let np = op.n_modes();
    if np > MAX_FULL_MODES {
        return Err(Error::TooLarge {
            context: "exact diagonalisation",
            size: np,
            cap: MAX_FULL_MODES,
        });
    }
    let full = build_full_hamiltonian(op)?;
    let (states, dim) = match sector {
        Some(counts) => {
            if counts.len() != op.species() {
                return Err(Error::DimensionMismatch {
                    context: "sector counts",
                    expected: op.species(),
                    got: counts.len(),
                });
            }
            let basis = sector_basis(op.n_orbitals(), op.species(), counts);
            let d = basis.len();
            (Some(basis), d)
        }
        None => (None, full.dim()),
    };
    if dim == 0 {
        return Err(Error::Config("requested sector is empty".into()));
    }
    if dim > 1_000_000 {
        return Err(Error::TooLarge {
            context: "exact diagonalisation sector",
            size: dim,
            cap: 1_000_000,
        });
    }

    let (e0, vec_small) = match &states {
        Some(basis) => {
            let index_of: std::collections::HashMap<usize, usize> =
                basis.iter().enumerate().map(|(i, &s)| (s, i)).collect();
            if dim <= DENSE_EIG_CAP {
                let mut h = CMat::zeros(dim, dim);
                for (col, &y) in basis.iter().enumerate() {
                    for &(x, amp) in &full.cols[y] {
                        match index_of.get(&x) {
                            Some(&row) => h[(row, col)] += amp,
                            None => {
                                return Err(Error::ChargeViolation(
                                    "operator does not preserve the requested sector".into(),
                                ))
                            }
                        }
                    }
                }
                let (vals, vecs) = eigh(&h);
                (vals[0], vecs.column(0).into_owned())
            } else {
                let mut diag = vec![0.0f64; dim];
                for (col, &y) in basis.iter().enumerate() {
                    diag[col] = full.element(y, y).re;
                }
                let sector_cols: Vec<Vec<(usize, C64)>> = basis
                    .iter()
                    .map(|&y| {
                        full.cols[y]
                            .iter()
                            .filter_map(|&(x, amp)| index_of.get(&x).map(|&row| (row, amp)))
                            .collect()
                    })
                    .collect();
                let matvec = |v: &CVec| -> CVec {
                    let mut out = CVec::zeros(dim);
                    for (y, col) in sector_cols.iter().enumerate() {
                        let a = v[y];
                        if a.norm() == 0.0 {
                            continue;
                        }
                        for &(x, h) in col {
                            out[x] += h * a;
                        }
                    }
                    out
                };
                let x0 = {
                    let k = (0..dim).min_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap()).unwrap();
                    let mut v = CVec::zeros(dim);
                    v[k] = cr(1.0);
                    v
                };
                let opts = DavidsonOptions { tol: 1e-11, max_iter: 2000, max_subspace: 32 };
                let (theta, x) = davidson_smallest(matvec, &diag, &x0, &opts)?;
                (theta, x)
            }
        }
        None => {
            if dim <= DENSE_EIG_CAP {
                let mut h = CMat::zeros(dim, dim);
                for (y, col) in full.cols.iter().enumerate() {
                    for &(x, amp) in col {
                        h[(x, y)] += amp;
                    }
                }
                let (vals, vecs) = eigh(&h);
                (vals[0], vecs.column(0).into_owned())
            } else {
                let mut diag = vec![0.0f64; dim];
                for y in 0..dim {
                    diag[y] = full.element(y, y).re;
                }
                let x0 = {
                    let k = (0..dim).min_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap()).unwrap();
                    let mut v = CVec::zeros(dim);
                    v[k] = cr(1.0);
                    v
                };
                let opts = DavidsonOptions { tol: 1e-11, max_iter: 4000, max_subspace: 32 };
                let (theta, x) = davidson_smallest(|v| full.apply(v), &diag, &x0, &opts)?;
                (theta, x)
            }
        }
    };

    // Embed back into the full Fock space and verify the residual.
    let vec_full = match &states {
        Some(basis) => {
            let mut v = CVec::zeros(full.dim());
            for (i, &s) in basis.iter().enumerate() {
                v[s] = vec_small[i];
            }
            v
        }
        None => vec_small,
    };
    let hv = full.apply(&vec_full);
    let mut resid = hv;
    resid.axpy(cr(-e0), &vec_full, cr(1.0));
    if resid.norm() > 1e-10 * e0.abs().max(1.0) {
        return Err(Error::EigensolverStalled {
            iters: 0,
            residual: resid.norm(),
            best: Box::new((e0, vec_full.iter().copied().collect())),
        });
    }
    Ok((e0 + op.e_core, vec_full))
}

/// Energy `⟨x|H|x⟩ + e_core` of a dense normalised Fock-space vector.
pub fn dense_expectation(op: &SecondQuantizedOperator, x: &CVec) -> Result<f64> {
    let full = build_full_hamiltonian(op)?;
    let hx = full.apply(x);
    Ok(x.dotc(&hx).re + op.e_core)
}

// ---------------------------------------------------------------------------
// Restricted Hartree-Fock reference
// ---------------------------------------------------------------------------

/// Result of the self-consistent mean-field solve.
pub struct HartreeFock {
    /// `np × np` basis rotation, species-blocked `u ⊕ … ⊕ u`, columns
    /// ordered by orbital energy.
    pub basis: CMat,
    /// Mean-field energy including the core term.
    pub energy: f64,
    /// Whether the SCF loop reached the density tolerance; if false the
    /// basis fell back to the eigenbasis of `t`.
    pub converged: bool,
    /// Converged single-particle density matrix.
    pub density: CMat,
}

fn mean_field_energy(op: &SecondQuantizedOperator, rho: &CMat) -> f64 {
    let np = op.n_modes();
    let mut e = cr(0.0);
    for i in 0..np {
        for j in 0..np {
            e += op.t[(i, j)] * rho[(j, i)];
        }
    }
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                for l in 0..np {
                    let v = op.v_at(i, j, k, l);
                    if v.norm() == 0.0 {
                        continue;
                    }
                    e += v * (rho[(k, i)] * rho[(l, j)] - rho[(l, i)] * rho[(k, j)]);
                }
            }
        }
    }
    e.re
}

fn fock_matrix(op: &SecondQuantizedOperator, rho: &CMat) -> CMat {
    let np = op.n_modes();
    let mut f = op.t.clone();
    for a in 0..np {
        for b in 0..np {
            let mut acc = cr(0.0);
            for j in 0..np {
                for l in 0..np {
                    acc += op.v_at(a, j, b, l) * rho[(l, j)];
                }
            }
            for i in 0..np {
                for k in 0..np {
                    acc += op.v_at(i, a, k, b) * rho[(k, i)];
                }
            }
            for j in 0..np {
                for k in 0..np {
                    acc -= op.v_at(a, j, k, b) * rho[(k, j)];
                }
            }
            for i in 0..np {
                for l in 0..np {
                    acc -= op.v_at(i, a, b, l) * rho[(l, i)];
                }
            }
            f[(a, b)] += acc;
        }
    }
    f
}

/// Spatial `n × n` block of a species-blocked `np × np` matrix, averaged
/// over species.
fn spatial_average(m: &CMat, n: usize, p: usize) -> CMat {
    let mut out = CMat::zeros(n, n);
    for q in 0..n {
        for r in 0..n {
            let mut acc = cr(0.0);
            for s in 0..p {
                acc += m[(q * p + s, r * p + s)];
            }
            out[(q, r)] = acc / cr(p as f64);
        }
    }
    out
}

/// Restricted (spin-summed) Hartree-Fock: the same spatial rotation is
/// applied to every species, matching the symmetry class of the local mode
/// optimiser. Requires a closed-shell occupation (equal counts per
/// species).
pub fn hartree_fock_basis(op: &SecondQuantizedOperator, counts: &[usize]) -> Result<HartreeFock> {
    let n = op.n_orbitals();
    let p = op.species();
    if counts.len() != p {
        return Err(Error::DimensionMismatch {
            context: "HF occupation",
            expected: p,
            got: counts.len(),
        });
    }
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config("restricted HF needs a closed shell (equal counts)".into()));
    }
    let nocc = counts[0];
    if nocc > n {
        return Err(Error::Config("more particles than orbitals per species".into()));
    }
    let np = n * p;

    // Spatial orbitals → species-blocked density.
    let density_from = |orbitals: &CMat| -> CMat {
        let mut rho = CMat::zeros(np, np);
        for s in 0..p {
            for k in 0..nocc {
                for q in 0..n {
                    for r in 0..n {
                        rho[(q * p + s, r * p + s)] += orbitals[(q, k)] * orbitals[(r, k)].conj();
                    }
                }
            }
        }
        rho
    };
    let t_spatial = spatial_average(&op.t, n, p);
    let (_, core_orbitals) = eigh(&t_spatial);
    let core_basis = core_orbitals.clone();
    let mut orbitals = core_orbitals;
    let mut rho = density_from(&orbitals);
    let mut converged = false;
    let max_iter = 500;
    let mut last_delta = f64::INFINITY;
    for it in 0..max_iter {
        let f = fock_matrix(op, &rho);
        let f_spatial = spatial_average(&f, n, p);
        let f_spatial = (&f_spatial + f_spatial.adjoint()) * cr(0.5);
        let (_, vecs) = eigh(&f_spatial);
        orbitals = vecs;
        let mut rho_new = density_from(&orbitals);
        // Damp after an initial burst to suppress occupation oscillations.
        if it >= 15 {
            rho_new = &rho_new * cr(0.5) + &rho * cr(0.5);
        }
        let delta = crate::linalg::max_diff(&rho_new, &rho);
        rho = rho_new;
        if delta <= 1e-10 {
            converged = true;
            break;
        }
        last_delta = delta;
    }
    if !converged {
        let rho_core = density_from(&core_basis);
        let energy = mean_field_energy(op, &rho_core) + op.e_core;
        let mut basis = CMat::zeros(np, np);
        for s in 0..p {
            for q in 0..n {
                for k in 0..n {
                    basis[(q * p + s, k * p + s)] = core_basis[(q, k)];
                }
            }
        }
        let _ = last_delta;
        return Ok(HartreeFock { basis, energy, converged: false, density: rho_core });
    }
    // Idempotent pure-state density at convergence.
    let rho_pure = density_from(&orbitals);
    let energy = mean_field_energy(op, &rho_pure) + op.e_core;
    let mut basis = CMat::zeros(np, np);
    for s in 0..p {
        for q in 0..n {
            for k in 0..n {
                basis[(q * p + s, k * p + s)] = orbitals[(q, k)];
            }
        }
    }
    Ok(HartreeFock { basis, energy, converged: true, density: rho_pure })
}

// ---------------------------------------------------------------------------
// Dense embeddings of MPS
// ---------------------------------------------------------------------------

/// Contracts an MPS into the dense state vector of length `d^n`, indexed by
/// the global occupation bitstring.
pub fn dense_embedding(psi: &SymmetricMps) -> Result<CVec> {
    let n = psi.n_sites();
    let d = psi.site_dim();
    let dim = d.checked_pow(n as u32).filter(|&x| x <= 1_000_000).ok_or(Error::TooLarge {
        context: "dense embedding",
        size: n,
        cap: 1_000_000,
    })?;
    let mut amps = CMat::from_element(1, 1, cr(1.0));
    for m in 0..n {
        let a = psi.tensor(m).dense(psi.bond(m), psi.bond(m + 1), psi.species());
        let rows = amps.nrows();
        let next_bond = psi.bond(m + 1).dim();
        let mut next = CMat::zeros(rows * d, next_bond);
        for alpha in 0..d {
            let contrib = &amps * &a[alpha];
            for r in 0..rows {
                for c in 0..next_bond {
                    next[(r * d + alpha, c)] = contrib[(r, c)];
                }
            }
        }
        amps = next;
    }
    debug_assert_eq!(amps.nrows(), dim);
    Ok(DVector::from_iterator(dim, amps.column(0).iter().copied()))
}

/// Isometry from the left block `[0, m)` of a canonical MPS into its dense
/// window basis: a `d^m × D_m` matrix whose columns are the renormalised
/// block states. Sites left of `m` must be left-normalised.
pub fn left_block_isometry(psi: &SymmetricMps, m: usize) -> CMat {
    let d = psi.site_dim();
    let mut iso = CMat::from_element(1, 1, cr(1.0));
    for k in 0..m {
        let a = psi.tensor(k).dense(psi.bond(k), psi.bond(k + 1), psi.species());
        let rows = iso.nrows();
        let next_bond = psi.bond(k + 1).dim();
        let mut next = CMat::zeros(rows * d, next_bond);
        for alpha in 0..d {
            let contrib = &iso * &a[alpha];
            for r in 0..rows {
                for c in 0..next_bond {
                    next[(r * d + alpha, c)] = contrib[(r, c)];
                }
            }
        }
        iso = next;
    }
    iso
}

/// Isometry from the right block `[m, n)` into its dense window basis: a
/// `d^(n−m) × D_m` matrix. Sites in the block must be right-normalised.
pub fn right_block_isometry(psi: &SymmetricMps, m: usize) -> CMat {
    let n = psi.n_sites();
    let d = psi.site_dim();
    let mut iso = CMat::from_element(1, 1, cr(1.0));
    for k in (m..n).rev() {
        let a = psi.tensor(k).dense(psi.bond(k), psi.bond(k + 1), psi.species());
        let tail = iso.nrows();
        let bond = psi.bond(k).dim();
        let mut next = CMat::zeros(d * tail, bond);
        for alpha in 0..d {
            // iso columns are indexed by bond k+1; prepend site k.
            let contrib = &a[alpha] * iso.transpose();
            for b in 0..bond {
                for x in 0..tail {
                    next[(alpha * tail + x, b)] = contrib[(b, x)];
                }
            }
        }
        iso = next;
    }
    iso
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::window_operators;
    use crate::linalg::{max_diff, random_unitary};
    use crate::mps::{SymmetricMps, TruncationPolicy};
    use crate::operators::{build_hubbard, rotate_coefficients, Boundary, SecondQuantizedOperator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_operator(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SecondQuantizedOperator {
        crate::operators::random_species_conserving(rng, n, p)
    }

    #[test]
    fn single_mode_number_operator() {
        let mut op = SecondQuantizedOperator::zero(1, 1);
        op.t[(0, 0)] = cr(0.7);
        let full = build_full_hamiltonian(&op).unwrap();
        assert_eq!(full.element(0, 0), cr(0.0));
        assert_eq!(full.element(1, 1), cr(0.7));
        assert_eq!(full.element(0, 1), cr(0.0));
        let (e0, _) = exact_ground_state(&op, Some(&[1])).unwrap();
        assert!((e0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn forced_sparsity_single_two_body_term() {
        let mut op = SecondQuantizedOperator::zero(2, 1);
        *op.v_at_mut(0, 1, 0, 1) += cr(0.9);
        *op.v_at_mut(1, 0, 1, 0) += cr(0.9);
        let full = build_full_hamiltonian(&op).unwrap();
        // Both entries act as 0.9·n_0 n_1 each: only |11⟩ is touched.
        for y in 0..4usize {
            for x in 0..4usize {
                let expect = if x == 3 && y == 3 { cr(1.8) } else { cr(0.0) };
                assert_eq!(full.element(x, y), expect, "x={x} y={y}");
            }
        }
    }

    #[test]
    fn matches_dense_window_operator_build() {
        // Independent route: assemble H from dense Jordan-Wigner window
        // matrices and compare element-wise.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let op = random_operator(&mut rng, 4, 1);
        let np = op.n_modes();
        let ops = window_operators(np);
        let dim = 1 << np;
        let mut dense = CMat::zeros(dim, dim);
        for i in 0..np {
            for j in 0..np {
                if op.t[(i, j)].norm() > 0.0 {
                    dense += ops.cre(i) * &ops.ann[j] * op.t[(i, j)];
                }
                for k in 0..np {
                    for l in 0..np {
                        let v = op.v_at(i, j, k, l);
                        if v.norm() > 0.0 {
                            dense += ops.cre(i) * ops.cre(j) * &ops.ann[l] * &ops.ann[k] * v;
                        }
                    }
                }
            }
        }
        let full = build_full_hamiltonian(&op).unwrap();
        for y in 0..dim {
            for x in 0..dim {
                assert!((full.element(x, y) - dense[(x, y)]).norm() < 1e-12);
            }
        }
        assert!(full.hermiticity_deviation() < 1e-12);
    }

    #[test]
    fn hubbard_dimer_ground_state() {
        // Half-filled Hubbard dimer: E0 = (U − √(U² + 16t²))/2.
        let (t0, u0) = (1.0, 4.0);
        let op = build_hubbard(2, 2, t0, u0, f64::INFINITY, Boundary::Open).unwrap();
        let (e0, _) = exact_ground_state(&op, Some(&[1, 1])).unwrap();
        let expect = (u0 - (u0 * u0 + 16.0 * t0 * t0).sqrt()) / 2.0;
        assert!((e0 - expect).abs() < 1e-10, "{e0} vs {expect}");
    }

    #[test]
    fn dimer_single_particle_energies() {
        let op = build_hubbard(2, 1, 0.7, 0.0, f64::INFINITY, Boundary::Open).unwrap();
        let (e0, _) = exact_ground_state(&op, Some(&[1])).unwrap();
        assert!((e0 + 0.7).abs() < 1e-12);
    }

    #[test]
    fn spectrum_invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let op = random_operator(&mut rng, 4, 1);
        let u = random_unitary(&mut rng, 4);
        let rotated = rotate_coefficients(&op, &u).unwrap();
        let (e0, _) = exact_ground_state(&op, None).unwrap();
        let (e0r, _) = exact_ground_state(&rotated, None).unwrap();
        assert!((e0 - e0r).abs() < 1e-10);
        // The whole low end coincides as well.
        let full_a = build_full_hamiltonian(&op).unwrap();
        let full_b = build_full_hamiltonian(&rotated).unwrap();
        let dim = full_a.dim();
        let mut ha = CMat::zeros(dim, dim);
        let mut hb = CMat::zeros(dim, dim);
        for y in 0..dim {
            for &(x, h) in &full_a.cols[y] {
                ha[(x, y)] += h;
            }
            for &(x, h) in &full_b.cols[y] {
                hb[(x, y)] += h;
            }
        }
        let (ea, _) = crate::linalg::eigh(&ha);
        let (eb, _) = crate::linalg::eigh(&hb);
        for k in 0..5 {
            assert!((ea[k] - eb[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn hartree_fock_free_fermions() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut op = random_operator(&mut rng, 4, 1);
        op.v.iter_mut().for_each(|z| *z = cr(0.0));
        let hf = hartree_fock_basis(&op, &[2]).unwrap();
        assert!(hf.converged);
        let (vals, _) = crate::linalg::eigh(&op.t);
        let expect = vals[0] + vals[1];
        assert!((hf.energy - expect).abs() < 1e-9);
        // Basis columns diagonalise t.
        let rotated = hf.basis.adjoint() * &op.t * &hf.basis;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(rotated[(i, j)].norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn hartree_fock_dimer_above_exact() {
        for u0 in [0.0, 1.0, 4.0] {
            let op = build_hubbard(2, 2, 1.0, u0, f64::INFINITY, Boundary::Open).unwrap();
            let hf = hartree_fock_basis(&op, &[1, 1]).unwrap();
            let (e0, _) = exact_ground_state(&op, Some(&[1, 1])).unwrap();
            assert!(hf.energy >= e0 - 1e-12, "u0={u0}: {} < {e0}", hf.energy);
            if u0 == 0.0 {
                assert!((hf.energy - e0).abs() < 1e-9);
            } else {
                assert!(hf.energy > e0 + 1e-6);
            }
            // Mean-field density is idempotent.
            let rho2 = &hf.density * &hf.density;
            assert!(max_diff(&rho2, &hf.density) < 1e-8);
        }
    }

    #[test]
    fn hf_beats_coarse_determinant_grid() {
        // Eq-(3)-at-D_max=1 sanity: scan single-determinant energies over a
        // coarse grid of spatial rotations; SCF must not lose by more than
        // the grid resolution allows.
        let op = build_hubbard(2, 2, 1.0, 2.0, f64::INFINITY, Boundary::Open).unwrap();
        let hf = hartree_fock_basis(&op, &[1, 1]).unwrap();
        let mut best = f64::INFINITY;
        let steps = 64;
        for k in 0..steps {
            let theta = std::f64::consts::PI * (k as f64) / (steps as f64);
            let mut orb = CMat::zeros(2, 2);
            orb[(0, 0)] = cr(theta.cos());
            orb[(1, 0)] = cr(theta.sin());
            orb[(0, 1)] = cr(-theta.sin());
            orb[(1, 1)] = cr(theta.cos());
            let mut rho = CMat::zeros(4, 4);
            for s in 0..2 {
                for q in 0..2 {
                    for r in 0..2 {
                        rho[(q * 2 + s, r * 2 + s)] += orb[(q, 0)] * orb[(r, 0)].conj();
                    }
                }
            }
            best = best.min(mean_field_energy(&op, &rho));
        }
        assert!(hf.energy <= best + 1e-3);
    }

    #[test]
    fn fcidump_matches_analytic_two_orbital_fci() {
        // For two orbitals at closed shell the singlet ground energy has
        // the textbook closed form: the 2×2 block over {|σ1²⟩, |σ2²⟩} is
        // [[2h11 + J11, K12], [K12, 2h22 + J22]] with K12 = (12|12).
        let text = "&FCI NORB=2,NELEC=2,MS2=0,\n/\n\
             0.6744  1 1 1 1\n\
             0.6634  2 2 2 2\n\
             0.6636  1 1 2 2\n\
             0.1813  2 1 2 1\n\
            -1.2524  1 1 0 0\n\
            -0.4759  2 2 0 0\n\
             0.7137  0 0 0 0\n";
        let (op, _) = crate::operators::parse_fcidump(text.as_bytes()).unwrap();
        let (e0, _) = exact_ground_state(&op, Some(&[1, 1])).unwrap();
        let (h11, h22, j11, j22, k12, core) = (-1.2524, -0.4759, 0.6744, 0.6634, 0.1813, 0.7137);
        let a: f64 = 2.0 * h11 + j11;
        let b: f64 = 2.0 * h22 + j22;
        let analytic = core + (a + b) / 2.0 - (((a - b) / 2.0).powi(2) + k12 * k12).sqrt();
        assert!((e0 - analytic).abs() < 1e-12, "{e0} vs {analytic}");
    }

    #[test]
    fn dense_embedding_product_state() {
        let psi = SymmetricMps::product_state(3, 1, &[1, 0, 1]).unwrap();
        let v = dense_embedding(&psi).unwrap();
        // Global bitstring 101 → index 5 of 8.
        for (i, z) in v.iter().enumerate() {
            let expect = if i == 5 { 1.0 } else { 0.0 };
            assert!((z - cr(expect)).norm() < 1e-14);
        }
    }

    #[test]
    fn dense_embedding_unchanged_by_canonicalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let psi = SymmetricMps::random_in_sector(4, 1, &[2], 3, &mut rng).unwrap();
        let before = dense_embedding(&psi).unwrap();
        for target in [2usize, 0, 3] {
            let mut moved = psi.clone();
            moved.canonicalize(target).unwrap();
            let after = dense_embedding(&moved).unwrap();
            let dev = (&before - &after).norm();
            assert!(dev < 1e-10, "center {target}: {dev}");
        }
    }

    #[test]
    fn dense_embedding_matches_blocked_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut psi = SymmetricMps::random_in_sector(2, 1, &[1], 2, &mut rng).unwrap();
        psi.canonicalize(0).unwrap();
        let blocked = psi.block_two_site(0).unwrap();
        let v = dense_embedding(&psi).unwrap();
        for phys in 0..4 {
            assert!((blocked.at(0, phys, 0) - v[phys]).norm() < 1e-12);
        }
    }

    #[test]
    fn block_isometries_are_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut psi = SymmetricMps::random_in_sector(4, 1, &[2], 3, &mut rng).unwrap();
        psi.canonicalize(2).unwrap();
        let li = left_block_isometry(&psi, 2);
        let gram = li.adjoint() * &li;
        assert!(max_diff(&gram, &CMat::identity(gram.nrows(), gram.ncols())) < 1e-10);
        let ri = right_block_isometry(&psi, 3);
        let gram_r = ri.adjoint() * &ri;
        assert!(max_diff(&gram_r, &CMat::identity(gram_r.nrows(), gram_r.ncols())) < 1e-10);
    }

    #[test]
    fn gate_preserves_embedded_energy() {
        // ⟨ψ|H|ψ⟩ is invariant when the state gate and the coefficient
        // rotation are applied together.
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let op = random_operator(&mut rng, 4, 1);
        let mut psi = SymmetricMps::random_in_sector(4, 1, &[2], 3, &mut rng).unwrap();
        let v = dense_embedding(&psi).unwrap();
        let e_before = dense_expectation(&op, &v).unwrap();

        let u_loc = random_unitary(&mut rng, 2);
        let g = crate::fock::gaussian_unitary(&u_loc, 1).unwrap();
        psi.apply_two_site_gate(1, &g, &TruncationPolicy::exact()).unwrap();
        let rotated = rotate_coefficients(
            &op,
            &crate::operators::embed_local(&u_loc, 1, 4, 1).unwrap(),
        )
        .unwrap();
        let v2 = dense_embedding(&psi).unwrap();
        let e_after = dense_expectation(&rotated, &v2).unwrap();
        assert!((e_before - e_after).abs() < 1e-10, "{e_before} vs {e_after}");
    }
}
