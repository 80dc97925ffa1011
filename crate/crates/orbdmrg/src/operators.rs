//! Second-quantised operator coefficients and their transformations.
//!
//! A [`SecondQuantizedOperator`] stores the one-body matrix `t`, the
//! two-body tensor `v` and a scalar core energy for a Hamiltonian of the
//! form `H = Σ t_ij c†_i c_j + Σ v_ijkl c†_i c†_j c_l c_k + e_core`, with
//! all indices running over the `np` spin-orbital modes in the current
//! lattice order. That operator ordering (`c†_i c†_j c_l c_k`) is the
//! single internal convention; FCIDUMP files in chemists' notation are
//! converted to it at the parser boundary.
//!
//! Under a mode transformation `U` the coefficients rotate as
//! `t(U) = U† t U` and `v(U) = (U†⊗U†) v (U⊗U)`, which leaves the spectrum
//! of the operator unchanged. A fast path updates only the slices touched
//! by a rotation that acts on a contiguous window of modes.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::linalg::{cr, require_unitary};
use crate::{C64, CMat, Error, Result};

/// Hermiticity tolerance enforced on construction.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Coefficients of a second-quantised operator on `np = n·p` modes.
#[derive(Clone, Debug)]
pub struct SecondQuantizedOperator {
    n_orbitals: usize,
    species: usize,
    /// One-body coefficients, `np × np`.
    pub t: CMat,
    /// Two-body coefficients, flat `np⁴` with index `((i·np + j)·np + k)·np + l`.
    pub v: Vec<C64>,
    /// Scalar core energy.
    pub e_core: f64,
}

impl SecondQuantizedOperator {
    /// A zero operator on `n` orbitals with `p` species.
    pub fn zero(n_orbitals: usize, species: usize) -> Self {
        let np = n_orbitals * species;
        Self {
            n_orbitals,
            species,
            t: CMat::zeros(np, np),
            v: vec![cr(0.0); np * np * np * np],
            e_core: 0.0,
        }
    }

    /// Builds from explicit coefficients, enforcing the Hermiticity and
    /// dimension invariants.
    pub fn new(n_orbitals: usize, species: usize, t: CMat, v: Vec<C64>, e_core: f64) -> Result<Self> {
        let np = n_orbitals * species;
        if t.nrows() != np || t.ncols() != np {
            return Err(Error::DimensionMismatch {
                context: "one-body coefficients",
                expected: np,
                got: t.nrows(),
            });
        }
        if v.len() != np * np * np * np {
            return Err(Error::DimensionMismatch {
                context: "two-body coefficients",
                expected: np * np * np * np,
                got: v.len(),
            });
        }
        let op = Self { n_orbitals, species, t, v, e_core };
        op.validate()?;
        Ok(op)
    }

    /// Number of orbitals (lattice sites).
    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    /// Species per orbital.
    pub fn species(&self) -> usize {
        self.species
    }

    /// Total mode count.
    pub fn n_modes(&self) -> usize {
        self.n_orbitals * self.species
    }

    /// Two-body coefficient `v_ijkl` (operator ordering `c†_i c†_j c_l c_k`).
    #[inline]
    pub fn v_at(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        let np = self.n_modes();
        self.v[((i * np + j) * np + k) * np + l]
    }

    /// Mutable access to `v_ijkl`.
    #[inline]
    pub fn v_at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut C64 {
        let np = self.n_modes();
        &mut self.v[((i * np + j) * np + k) * np + l]
    }

    /// Checks `t = t†` and `v_ijkl = conj(v_klij)`.
    pub fn validate(&self) -> Result<()> {
        let np = self.n_modes();
        let mut dev = crate::linalg::hermiticity_deviation(&self.t);
        for i in 0..np {
            for j in 0..np {
                for k in 0..np {
                    for l in 0..np {
                        let d = (self.v_at(i, j, k, l) - self.v_at(k, l, i, j).conj()).norm();
                        dev = dev.max(d);
                    }
                }
            }
        }
        if dev > HERMITICITY_TOL {
            return Err(Error::NotHermitian { dev });
        }
        Ok(())
    }

    /// True when `t` and `v` conserve the particle number of every species
    /// (a requirement for the `U(1)^p` block-sparse machinery).
    pub fn conserves_species(&self) -> bool {
        let np = self.n_modes();
        let p = self.species;
        let sp = |m: usize| m % p;
        for i in 0..np {
            for j in 0..np {
                if sp(i) != sp(j) && self.t[(i, j)].norm() > 1e-14 {
                    return false;
                }
                for k in 0..np {
                    for l in 0..np {
                        if self.v_at(i, j, k, l).norm() > 1e-14 {
                            let mut cre = [0i32; 8];
                            cre[sp(i)] += 1;
                            cre[sp(j)] += 1;
                            cre[sp(k)] -= 1;
                            cre[sp(l)] -= 1;
                            if cre.iter().any(|&c| c != 0) {
                                return false;
                            }
                        }
                    }
                }
            }
        }
        true
    }
}

/// Embeds a window rotation `U_loc` on the `2p` modes of sites
/// `(m, m+1)` into the full mode space: `1 ⊕ U_loc ⊕ 1`.
pub fn embed_local(u_loc: &CMat, m: usize, n_orbitals: usize, species: usize) -> Result<CMat> {
    if m + 1 >= n_orbitals {
        return Err(Error::IndexOutOfRange {
            context: "embed_local site",
            index: m,
            bound: n_orbitals - 1,
        });
    }
    let w = 2 * species;
    if u_loc.nrows() != w || u_loc.ncols() != w {
        return Err(Error::DimensionMismatch {
            context: "embed_local window",
            expected: w,
            got: u_loc.nrows(),
        });
    }
    let np = n_orbitals * species;
    let off = m * species;
    let mut u = CMat::identity(np, np);
    for a in 0..w {
        for b in 0..w {
            u[(off + a, off + b)] = u_loc[(a, b)];
        }
    }
    Ok(u)
}

/// Rotates the coefficients by a global mode transformation:
/// `t ↦ U† t U`, `v ↦ (U†⊗U†) v (U⊗U)`, `e_core` unchanged.
pub fn rotate_coefficients(op: &SecondQuantizedOperator, u: &CMat) -> Result<SecondQuantizedOperator> {
    require_unitary(u, crate::fock::UNITARY_TOL)?;
    let np = op.n_modes();
    if u.nrows() != np {
        return Err(Error::DimensionMismatch {
            context: "coefficient rotation",
            expected: np,
            got: u.nrows(),
        });
    }
    let mut out = op.clone();
    out.t = u.adjoint() * &op.t * u;
    // One axis at a time: v'_{abcd} = Σ U*_{ia} U*_{jb} v_{ijkl} U_{kc} U_{ld}.
    let idx = |i: usize, j: usize, k: usize, l: usize| ((i * np + j) * np + k) * np + l;
    let mut cur = op.v.clone();
    let mut next = vec![cr(0.0); cur.len()];
    // Axis 0 (i → a) with U*.
    for a in 0..np {
        for j in 0..np {
            for k in 0..np {
                for l in 0..np {
                    let mut s = cr(0.0);
                    for i in 0..np {
                        s += u[(i, a)].conj() * cur[idx(i, j, k, l)];
                    }
                    next[idx(a, j, k, l)] = s;
                }
            }
        }
    }
    std::mem::swap(&mut cur, &mut next);
    // Axis 1 (j → b) with U*.
    for a in 0..np {
        for b in 0..np {
            for k in 0..np {
                for l in 0..np {
                    let mut s = cr(0.0);
                    for j in 0..np {
                        s += u[(j, b)].conj() * cur[idx(a, j, k, l)];
                    }
                    next[idx(a, b, k, l)] = s;
                }
            }
        }
    }
    std::mem::swap(&mut cur, &mut next);
    // Axis 2 (k → c) with U.
    for a in 0..np {
        for b in 0..np {
            for c in 0..np {
                for l in 0..np {
                    let mut s = cr(0.0);
                    for k in 0..np {
                        s += cur[idx(a, b, k, l)] * u[(k, c)];
                    }
                    next[idx(a, b, c, l)] = s;
                }
            }
        }
    }
    std::mem::swap(&mut cur, &mut next);
    // Axis 3 (l → d) with U.
    for a in 0..np {
        for b in 0..np {
            for c in 0..np {
                for d in 0..np {
                    let mut s = cr(0.0);
                    for l in 0..np {
                        s += cur[idx(a, b, c, l)] * u[(l, d)];
                    }
                    next[idx(a, b, c, d)] = s;
                }
            }
        }
    }
    out.v = next;
    Ok(out)
}

/// Rotates the coefficients in place by a window rotation on the modes of
/// sites `(m, m+1)`, touching only the affected rows, columns and slices.
pub fn rotate_coefficients_local(
    op: &mut SecondQuantizedOperator,
    u_loc: &CMat,
    m: usize,
) -> Result<()> {
    require_unitary(u_loc, crate::fock::UNITARY_TOL)?;
    let np = op.n_modes();
    let p = op.species;
    let w = 2 * p;
    if m + 1 >= op.n_orbitals {
        return Err(Error::IndexOutOfRange {
            context: "local rotation site",
            index: m,
            bound: op.n_orbitals - 1,
        });
    }
    let off = m * p;
    let win: Vec<usize> = (off..off + w).collect();

    // t: new rows (a ∈ win), then new columns.
    let t_old = op.t.clone();
    for (ai, &a) in win.iter().enumerate() {
        for col in 0..np {
            let mut s = cr(0.0);
            for (ii, &i) in win.iter().enumerate() {
                s += u_loc[(ii, ai)].conj() * t_old[(i, col)];
            }
            op.t[(a, col)] = s;
        }
    }
    let t_mid = op.t.clone();
    for (bi, &b) in win.iter().enumerate() {
        for row in 0..np {
            let mut s = cr(0.0);
            for (jj, &j) in win.iter().enumerate() {
                s += t_mid[(row, j)] * u_loc[(jj, bi)];
            }
            op.t[(row, b)] = s;
        }
    }

    let idx = |i: usize, j: usize, k: usize, l: usize| ((i * np + j) * np + k) * np + l;
    // Axis 0: gather the window slices v[i,·,·,·], recombine into v[a,·,·,·].
    let gather = |op: &SecondQuantizedOperator, axis: usize, wmode: usize| -> Vec<C64> {
        let mut s = vec![cr(0.0); np * np * np];
        for a in 0..np {
            for b in 0..np {
                for c in 0..np {
                    let e = match axis {
                        0 => op.v[idx(wmode, a, b, c)],
                        1 => op.v[idx(a, wmode, b, c)],
                        2 => op.v[idx(a, b, wmode, c)],
                        _ => op.v[idx(a, b, c, wmode)],
                    };
                    s[(a * np + b) * np + c] = e;
                }
            }
        }
        s
    };
    for axis in 0..4usize {
        let old: Vec<Vec<C64>> = win.iter().map(|&mu| gather(op, axis, mu)).collect();
        for (wi, &target) in win.iter().enumerate() {
            for a in 0..np {
                for b in 0..np {
                    for c in 0..np {
                        let mut s = cr(0.0);
                        for ii in 0..w {
                            let f = if axis <= 1 {
                                u_loc[(ii, wi)].conj()
                            } else {
                                u_loc[(ii, wi)]
                            };
                            s += f * old[ii][(a * np + b) * np + c];
                        }
                        let e = match axis {
                            0 => &mut op.v[idx(target, a, b, c)],
                            1 => &mut op.v[idx(a, target, b, c)],
                            2 => &mut op.v[idx(a, b, target, c)],
                            _ => &mut op.v[idx(a, b, c, target)],
                        };
                        *e = s;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Boundary condition for [`build_hubbard`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Open chain.
    Open,
    /// Periodic ring; tail distances use the chord metric.
    Periodic,
}

/// Builds a Hubbard-style test Hamiltonian: nearest-neighbour hopping
/// `−t0`, on-site interaction `u0·n↑n↓` (for `p = 2`), and an optional
/// long-range density-density tail `u0·exp(−γ·|q−r|)·n_q n_r` between
/// distinct sites. `γ = ∞` disables the tail.
pub fn build_hubbard(
    n: usize,
    p: usize,
    t0: f64,
    u0: f64,
    gamma: f64,
    boundary: Boundary,
) -> Result<SecondQuantizedOperator> {
    if n < 2 {
        return Err(Error::Config("hubbard chain needs n ≥ 2".into()));
    }
    if p != 1 && p != 2 {
        return Err(Error::Config("hubbard builder supports p ∈ {1, 2}".into()));
    }
    let mut op = SecondQuantizedOperator::zero(n, p);
    // Hopping per species.
    for q in 0..n {
        let r = q + 1;
        if r >= n {
            if boundary == Boundary::Periodic && n > 2 {
                for s in 0..p {
                    let a = q * p + s;
                    let b = s;
                    op.t[(a, b)] = cr(-t0);
                    op.t[(b, a)] = cr(-t0);
                }
            }
            continue;
        }
        for s in 0..p {
            let a = q * p + s;
            let b = r * p + s;
            op.t[(a, b)] = cr(-t0);
            op.t[(b, a)] = cr(-t0);
        }
    }
    // A density-density coupling `w·n_a n_b` between distinct modes a ≠ b
    // enters as v[a,b,a,b] += w/2 and v[b,a,b,a] += w/2, each contributing
    // c†_a c†_b c_b c_a = n_a n_b.
    let add_density = |op: &mut SecondQuantizedOperator, a: usize, b: usize, wgt: f64| {
        *op.v_at_mut(a, b, a, b) += cr(wgt / 2.0);
        *op.v_at_mut(b, a, b, a) += cr(wgt / 2.0);
    };
    if p == 2 && u0 != 0.0 {
        for q in 0..n {
            add_density(&mut op, q * p, q * p + 1, u0);
        }
    }
    if gamma.is_finite() && u0 != 0.0 {
        for q in 0..n {
            for r in (q + 1)..n {
                let d = if boundary == Boundary::Periodic {
                    (r - q).min(n - (r - q))
                } else {
                    r - q
                };
                let wgt = u0 * (-gamma * d as f64).exp();
                if wgt.abs() < 1e-300 {
                    continue;
                }
                for s1 in 0..p {
                    for s2 in 0..p {
                        add_density(&mut op, q * p + s1, r * p + s2, wgt);
                    }
                }
            }
        }
    }
    op.validate()?;
    Ok(op)
}

// ---------------------------------------------------------------------------
// FCIDUMP ingestion
// ---------------------------------------------------------------------------

/// Header fields of an FCIDUMP file.
#[derive(Clone, Copy, Debug)]
pub struct FcidumpHeader {
    /// Number of spatial orbitals.
    pub norb: usize,
    /// Total electron count.
    pub nelec: usize,
    /// Twice the spin projection `2·M_s`.
    pub ms2: i32,
}

/// Parses an FCIDUMP stream into spin-orbital coefficients (`p = 2`, the
/// species being spin up/down per spatial orbital).
///
/// The integral lines use chemists' notation `(ij|kl)` with the 8-fold
/// permutational symmetry of real orbitals; they are expanded and mapped to
/// the internal operator ordering via
/// `v[(pσ)(rτ)(qσ)(sτ)] += (pq|rs)/2`. Lines with `k = l = 0` carry the
/// one-body integrals `h_pq`, and the `0 0 0 0` line the core energy.
pub fn parse_fcidump<R: BufRead>(reader: R) -> Result<(SecondQuantizedOperator, FcidumpHeader)> {
    let mut norb: Option<usize> = None;
    let mut nelec: Option<usize> = None;
    let mut ms2: i32 = 0;
    let mut in_header = true;
    let mut header_text = String::new();

    let mut spatial_h: Vec<f64> = Vec::new();
    let mut spatial_w: Vec<f64> = Vec::new();
    let mut e_core = 0.0f64;

    let grab_int = |text: &str, key: &str, line: usize| -> Result<Option<i64>> {
        if let Some(pos) = text.find(key) {
            let rest = &text[pos + key.len()..];
            let rest = rest.trim_start().trim_start_matches('=').trim_start();
            let digits: String = rest
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '-' || *c == '+')
                .collect();
            return digits
                .parse::<i64>()
                .map(Some)
                .map_err(|_| Error::Parse {
                    line,
                    msg: format!("malformed {key} field"),
                });
        }
        Ok(None)
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if in_header {
            header_text.push(' ');
            header_text.push_str(trimmed);
            let upper = trimmed.to_ascii_uppercase();
            if upper.contains("&END") || upper.contains('/') {
                let text = header_text.to_ascii_uppercase();
                norb = grab_int(&text, "NORB", lineno)?.map(|x| x as usize);
                nelec = grab_int(&text, "NELEC", lineno)?.map(|x| x as usize);
                ms2 = grab_int(&text, "MS2", lineno)?.unwrap_or(0) as i32;
                let n = norb.ok_or(Error::Parse {
                    line: lineno,
                    msg: "header is missing NORB".into(),
                })?;
                spatial_h = vec![0.0; n * n];
                spatial_w = vec![0.0; n * n * n * n];
                in_header = false;
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `value i j k l`, found {} fields", fields.len()),
            });
        }
        let value: f64 = fields[0].replace(['D', 'd'], "E").parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("malformed value `{}`", fields[0]),
        })?;
        let mut ix = [0usize; 4];
        for (slot, f) in fields[1..].iter().enumerate() {
            ix[slot] = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("malformed index `{f}`"),
            })?;
        }
        let n = norb.unwrap();
        if ix.iter().any(|&x| x > n) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("orbital index exceeds NORB = {n}"),
            });
        }
        let [i, j, k, l] = ix;
        if i == 0 && j == 0 && k == 0 && l == 0 {
            e_core = value;
        } else if k == 0 && l == 0 {
            if i == 0 || j == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "one-body line with a zero orbital index".into(),
                });
            }
            let (a, b) = (i - 1, j - 1);
            spatial_h[a * n + b] = value;
            spatial_h[b * n + a] = value;
        } else if i == 0 || j == 0 || k == 0 || l == 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: "two-body line with a zero orbital index".into(),
            });
        } else {
            let (p_, q_, r_, s_) = (i - 1, j - 1, k - 1, l - 1);
            let widx = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
            // 8-fold symmetry of real integrals (pq|rs).
            for (a, b, c, d) in [
                (p_, q_, r_, s_),
                (q_, p_, r_, s_),
                (p_, q_, s_, r_),
                (q_, p_, s_, r_),
                (r_, s_, p_, q_),
                (s_, r_, p_, q_),
                (r_, s_, q_, p_),
                (s_, r_, q_, p_),
            ] {
                spatial_w[widx(a, b, c, d)] = value;
            }
        }
    }

    let n = norb.ok_or(Error::Parse {
        line: 0,
        msg: "stream ended before the FCIDUMP header".into(),
    })?;
    let nelec = nelec.unwrap_or(0);

    let p = 2usize;
    let mut op = SecondQuantizedOperator::zero(n, p);
    op.e_core = e_core;
    for a in 0..n {
        for b in 0..n {
            for s in 0..p {
                op.t[(a * p + s, b * p + s)] = cr(spatial_h[a * n + b]);
            }
        }
    }
    let widx = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
    for pp in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let w = spatial_w[widx(pp, q, r, s)];
                    if w == 0.0 {
                        continue;
                    }
                    // (pq|rs)/2 · c†_{pσ} c†_{rτ} c_{sτ} c_{qσ}  →
                    // v[I,J,K,L] with I=(pσ), J=(rτ), K=(qσ), L=(sτ).
                    for sigma in 0..p {
                        for tau in 0..p {
                            let big_i = pp * p + sigma;
                            let big_j = r * p + tau;
                            let big_k = q * p + sigma;
                            let big_l = s * p + tau;
                            *op.v_at_mut(big_i, big_j, big_k, big_l) += cr(w / 2.0);
                        }
                    }
                }
            }
        }
    }
    op.validate()?;
    Ok((op, FcidumpHeader { norb: n, nelec, ms2 }))
}

// ---------------------------------------------------------------------------
// Dump / restore container
// ---------------------------------------------------------------------------

/// Flat complex-matrix representation used in the JSON containers:
/// row-major `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixRepr {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixRepr {
    pub fn from_mat(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_mat(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Config("matrix container has inconsistent shape".into()));
        }
        let mut m = CMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let [re, im] = self.data[i * self.cols + j];
                m[(i, j)] = C64::new(re, im);
            }
        }
        Ok(m)
    }
}

/// JSON container for operator dump/restore. `accumulated_unitary` records
/// the basis the coefficients are expressed in, relative to the initial
/// physical modes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorFile {
    pub format: String,
    pub n_orbitals: usize,
    pub species: usize,
    pub e_core: f64,
    pub t: MatrixRepr,
    /// Flat `np⁴` two-body tensor, `[re, im]` pairs in `v_ijkl` order.
    pub v: Vec<[f64; 2]>,
    pub accumulated_unitary: Option<MatrixRepr>,
}

impl OperatorFile {
    pub fn from_operator(op: &SecondQuantizedOperator, basis: Option<&CMat>) -> Self {
        Self {
            format: "orbdmrg-operator-v1".into(),
            n_orbitals: op.n_orbitals(),
            species: op.species(),
            e_core: op.e_core,
            t: MatrixRepr::from_mat(&op.t),
            v: op.v.iter().map(|z| [z.re, z.im]).collect(),
            accumulated_unitary: basis.map(MatrixRepr::from_mat),
        }
    }

    pub fn to_operator(&self) -> Result<(SecondQuantizedOperator, Option<CMat>)> {
        let t = self.t.to_mat()?;
        let v: Vec<C64> = self.v.iter().map(|&[re, im]| C64::new(re, im)).collect();
        let op = SecondQuantizedOperator::new(self.n_orbitals, self.species, t, v, self.e_core)?;
        let basis = match &self.accumulated_unitary {
            Some(r) => Some(r.to_mat()?),
            None => None,
        };
        Ok((op, basis))
    }
}

/// Random species-conserving Hermitian coefficients with entries of order
/// one (`t`) and order 0.3 (`v`); used by tests and the examples as a
/// generic strongly interacting instance.
pub fn random_species_conserving<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
) -> SecondQuantizedOperator {
    let np = n * p;
    let sp = |m: usize| m % p;
    let mut op = SecondQuantizedOperator::zero(n, p);
    for i in 0..np {
        for j in 0..=i {
            if sp(i) != sp(j) {
                continue;
            }
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let z = if i == j { cr(z.re) } else { z };
            op.t[(i, j)] = z;
            op.t[(j, i)] = z.conj();
        }
    }
    let mut adds: Vec<(usize, usize, usize, usize, C64)> = Vec::new();
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                for l in 0..np {
                    let mut cre = [0i32; 8];
                    cre[sp(i)] += 1;
                    cre[sp(j)] += 1;
                    cre[sp(k)] -= 1;
                    cre[sp(l)] -= 1;
                    if cre.iter().any(|&c| c != 0) {
                        continue;
                    }
                    let z = C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                    adds.push((i, j, k, l, z));
                }
            }
        }
    }
    for (i, j, k, l, z) in adds {
        *op.v_at_mut(i, j, k, l) += z * cr(0.5);
        *op.v_at_mut(k, l, i, j) += z.conj() * cr(0.5);
    }
    op.validate().unwrap();
    op
}
