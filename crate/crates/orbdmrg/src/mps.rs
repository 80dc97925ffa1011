//! `U(1)^p` symmetric matrix product states.
//!
//! Site tensors are stored block-sparse: every physical index `α` of a site
//! carries a definite per-species occupation, so a block is keyed by the
//! charge of the left bond sector together with `α`, and the right sector
//! is fixed by fusion. Bond sector charges count the particles of each
//! species accumulated from the left end of the chain, so the last bond
//! holds the total charge of the state.
//!
//! Two-site operations work on a [`BlockedTensor`], the contraction of two
//! neighbouring site tensors over their shared bond, stored dense over the
//! bond indices with the charge structure kept alongside. Splitting it back
//! into site tensors performs one SVD per charge sector of the central cut
//! and truncates globally across sectors (dynamic block state selection):
//! the kept rank is the smallest one whose discarded weight stays below
//! `ε_trc`, clamped to `[D_min, D_max]`, keeping degenerate multiplets
//! together whenever the cap allows. The discarded-weight budget is the
//! total across sectors, not per sector.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{cr, svd_thin};
use crate::operators::MatrixRepr;
use crate::{C64, CMat, Error, Result};

/// Hard cap on distinguishable fermion species.
pub const MAX_SPECIES: usize = 4;

/// Isometry and norm tolerance for canonical-form checks.
pub const CANON_TOL: f64 = 1e-10;

/// Per-species particle numbers; also used for charge differences.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Charge(pub [i16; MAX_SPECIES]);

impl Charge {
    /// The vacuum charge.
    pub fn zero() -> Self {
        Self([0; MAX_SPECIES])
    }

    /// Charge of the physical index `alpha` on a site with `p` species:
    /// species `s` occupies bit `p−1−s` of `alpha`.
    pub fn of_phys(alpha: u8, p: usize) -> Self {
        let mut q = [0i16; MAX_SPECIES];
        for (s, slot) in q.iter_mut().enumerate().take(p) {
            *slot = ((alpha >> (p - 1 - s)) & 1) as i16;
        }
        Self(q)
    }

    /// Charge with `counts[s]` particles of species `s`.
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut q = [0i16; MAX_SPECIES];
        for (s, &c) in counts.iter().enumerate() {
            q[s] = c as i16;
        }
        Self(q)
    }

    pub fn add(&self, other: &Charge) -> Charge {
        let mut q = self.0;
        for s in 0..MAX_SPECIES {
            q[s] += other.0[s];
        }
        Charge(q)
    }

    pub fn sub(&self, other: &Charge) -> Charge {
        let mut q = self.0;
        for s in 0..MAX_SPECIES {
            q[s] -= other.0[s];
        }
        Charge(q)
    }

    /// Total particle number.
    pub fn total(&self) -> i32 {
        self.0.iter().map(|&c| c as i32).sum()
    }

    /// Fermionic parity `(−1)^N` of a sector with this charge.
    pub fn parity(&self) -> f64 {
        if self.total() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Charge sectors of one bond, with dimensions and dense offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondBasis {
    sectors: Vec<(Charge, usize)>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl BondBasis {
    /// Builds from `(charge, dim)` pairs; zero-dimensional sectors are
    /// dropped and the rest sorted by charge.
    pub fn new(mut sectors: Vec<(Charge, usize)>) -> Self {
        sectors.retain(|&(_, d)| d > 0);
        sectors.sort_by_key(|&(q, _)| q);
        let mut offsets = Vec::with_capacity(sectors.len());
        let mut acc = 0;
        for &(_, d) in &sectors {
            offsets.push(acc);
            acc += d;
        }
        Self { sectors, offsets, total_dim: acc }
    }

    /// The one-dimensional basis holding a single sector.
    pub fn unit(q: Charge) -> Self {
        Self::new(vec![(q, 1)])
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// Total dense dimension.
    pub fn dim(&self) -> usize {
        self.total_dim
    }

    pub fn sectors(&self) -> &[(Charge, usize)] {
        &self.sectors
    }

    pub fn charge(&self, idx: usize) -> Charge {
        self.sectors[idx].0
    }

    pub fn sector_dim(&self, idx: usize) -> usize {
        self.sectors[idx].1
    }

    pub fn offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    /// Index of the sector with charge `q`, if present.
    pub fn find(&self, q: &Charge) -> Option<usize> {
        self.sectors.binary_search_by_key(q, |&(c, _)| c).ok()
    }

    /// Charge of a dense index.
    pub fn charge_of_dense(&self, i: usize) -> Charge {
        let k = match self.offsets.binary_search(&i) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        self.sectors[k].0
    }

    /// Diagonal fermionic parity in the dense embedding.
    pub fn parity_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim);
        for &(q, d) in &self.sectors {
            out.extend(std::iter::repeat(q.parity()).take(d));
        }
        out
    }
}

/// Schmidt values across one cut, sorted descending, each labelled by the
/// charge of the left part of the bipartition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    pub values: Vec<f64>,
    pub charges: Vec<Charge>,
}

impl SchmidtSpectrum {
    pub fn trivial(q: Charge) -> Self {
        Self { values: vec![1.0], charges: vec![q] }
    }

    /// `Σ σ_i` (the 1-norm).
    pub fn norm1(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ σ_i⁴`.
    pub fn norm4_pow4(&self) -> f64 {
        self.values.iter().map(|s| s.powi(4)).sum()
    }

    /// `Σ σ_i²`.
    pub fn weight(&self) -> f64 {
        self.values.iter().map(|s| s * s).sum()
    }

    /// Von Neumann entropy `−Σ σ² ln σ²` with `0·ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .map(|&s| {
                let w = s * s;
                if w > 1e-300 {
                    -w * w.ln()
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }
}

/// Truncation policy of the dynamic block state selection.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// Bound on the total discarded weight `Σ_discarded σ²`.
    pub eps_trc: f64,
    /// Rank floor, applied only when enough nonzero values exist.
    pub d_min: usize,
    /// Hard rank cap.
    pub d_max: usize,
}

impl TruncationPolicy {
    pub fn new(eps_trc: f64, d_min: usize, d_max: usize) -> Result<Self> {
        if d_min > d_max || d_max == 0 || eps_trc < 0.0 {
            return Err(Error::Config(format!(
                "invalid truncation policy: eps={eps_trc}, d_min={d_min}, d_max={d_max}"
            )));
        }
        Ok(Self { eps_trc, d_min, d_max })
    }

    /// No truncation at all.
    pub fn exact() -> Self {
        Self { eps_trc: 0.0, d_min: 1, d_max: usize::MAX }
    }
}

/// Block-sparse tensor of one site: key `(left sector charge, α)`, value a
/// `D_left × D_right` matrix with the right sector fixed by fusion.
#[derive(Clone, Debug, Default)]
pub struct SiteTensor {
    pub blocks: BTreeMap<(Charge, u8), CMat>,
}

impl SiteTensor {
    /// Dense `D_left × D_right` matrix per physical index.
    pub fn dense(&self, left: &BondBasis, right: &BondBasis, p: usize) -> Vec<CMat> {
        let d = 1usize << p;
        let mut out = vec![CMat::zeros(left.dim(), right.dim()); d];
        for (&(ql, alpha), block) in &self.blocks {
            let li = match left.find(&ql) {
                Some(i) => i,
                None => continue,
            };
            let qr = ql.add(&Charge::of_phys(alpha, p));
            let ri = match right.find(&qr) {
                Some(i) => i,
                None => continue,
            };
            let (lo, ro) = (left.offset(li), right.offset(ri));
            for i in 0..block.nrows() {
                for j in 0..block.ncols() {
                    out[alpha as usize][(lo + i, ro + j)] = block[(i, j)];
                }
            }
        }
        out
    }

    fn frobenius2(&self) -> f64 {
        self.blocks
            .values()
            .map(|b| b.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }
}

/// Which side of a decomposition receives the singular values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitDirection {
    /// Left tensor becomes a left isometry; centre moves to `m+1`.
    ToRight,
    /// Right tensor becomes a right isometry; centre moves to `m`.
    ToLeft,
}

/// Result of splitting a blocked two-site tensor.
pub struct Decomposition {
    pub left_tensor: SiteTensor,
    pub right_tensor: SiteTensor,
    pub mid_basis: BondBasis,
    pub spectrum: SchmidtSpectrum,
    pub eps_t: f64,
}

/// Contraction of two neighbouring site tensors, dense over the bond
/// indices with the charge structure kept alongside.
///
/// Layout: `data[(a·d² + φ)·D_r + b]` with `φ = α·d + β` the fused physical
/// index of the pair.
#[derive(Clone, Debug)]
pub struct BlockedTensor {
    pub left: BondBasis,
    pub right: BondBasis,
    pub p: usize,
    pub data: Vec<C64>,
}

impl BlockedTensor {
    pub fn site_dim(&self) -> usize {
        1 << self.p
    }

    pub fn fused_dim(&self) -> usize {
        1 << (2 * self.p)
    }

    #[inline]
    pub fn at(&self, a: usize, phys: usize, b: usize) -> C64 {
        self.data[(a * self.fused_dim() + phys) * self.right.dim() + b]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, phys: usize, b: usize) -> &mut C64 {
        let idx = (a * self.fused_dim() + phys) * self.right.dim() + b;
        &mut self.data[idx]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        for z in &mut self.data {
            *z *= cr(f);
        }
    }

    /// Charge of a fused physical index.
    pub fn fused_charge(&self, phys: usize) -> Charge {
        let d = self.site_dim();
        Charge::of_phys((phys / d) as u8, self.p).add(&Charge::of_phys((phys % d) as u8, self.p))
    }

    /// Applies a fused two-site gate `G` on the physical pair index.
    ///
    /// `G` must conserve the per-species charges of the pair: any entry
    /// above `1e−12` between fused indices of different charge is an error.
    pub fn apply_gate(&mut self, g: &CMat) -> Result<()> {
        let d2 = self.fused_dim();
        if g.nrows() != d2 || g.ncols() != d2 {
            return Err(Error::DimensionMismatch {
                context: "two-site gate",
                expected: d2,
                got: g.nrows(),
            });
        }
        for r in 0..d2 {
            for c in 0..d2 {
                if g[(r, c)].norm() > 1e-12 && self.fused_charge(r) != self.fused_charge(c) {
                    return Err(Error::ChargeViolation(format!(
                        "gate moves weight between fused charges at ({r}, {c})"
                    )));
                }
            }
        }
        let (dl, dr) = (self.left.dim(), self.right.dim());
        let mut out = vec![cr(0.0); self.data.len()];
        for a in 0..dl {
            for f in 0..d2 {
                for fp in 0..d2 {
                    let w = g[(f, fp)];
                    if w.norm() == 0.0 {
                        continue;
                    }
                    let src = (a * d2 + fp) * dr;
                    let dst = (a * d2 + f) * dr;
                    for b in 0..dr {
                        out[dst + b] += w * self.data[src + b];
                    }
                }
            }
        }
        self.data = out;
        Ok(())
    }

    /// Enumerates the charge sectors of the central cut: for each charge,
    /// the row group `(left sector, α)` and column group `(β, right
    /// sector)` whose fusion matches.
    fn cut_sectors(&self) -> Vec<(Charge, Vec<(usize, u8)>, Vec<(u8, usize)>)> {
        let d = self.site_dim();
        let mut rows: BTreeMap<Charge, Vec<(usize, u8)>> = BTreeMap::new();
        for (li, &(ql, _)) in self.left.sectors().iter().enumerate() {
            for alpha in 0..d as u8 {
                let q = ql.add(&Charge::of_phys(alpha, self.p));
                rows.entry(q).or_default().push((li, alpha));
            }
        }
        let mut cols: BTreeMap<Charge, Vec<(u8, usize)>> = BTreeMap::new();
        for (ri, &(qr, _)) in self.right.sectors().iter().enumerate() {
            for beta in 0..d as u8 {
                let q = qr.sub(&Charge::of_phys(beta, self.p));
                cols.entry(q).or_default().push((beta, ri));
            }
        }
        let mut out = Vec::new();
        for (q, row_group) in rows {
            if let Some(col_group) = cols.remove(&q) {
                out.push((q, row_group, col_group));
            }
        }
        out
    }

    fn sector_matrix(&self, rows: &[(usize, u8)], cols: &[(u8, usize)]) -> CMat {
        let d = self.site_dim();
        let d2 = self.fused_dim();
        let nrows: usize = rows.iter().map(|&(li, _)| self.left.sector_dim(li)).sum();
        let ncols: usize = cols.iter().map(|&(_, ri)| self.right.sector_dim(ri)).sum();
        let mut m = CMat::zeros(nrows, ncols);
        let mut ro = 0;
        for &(li, alpha) in rows {
            let (dl, lo) = (self.left.sector_dim(li), self.left.offset(li));
            let mut co = 0;
            for &(beta, ri) in cols {
                let (dr, roff) = (self.right.sector_dim(ri), self.right.offset(ri));
                let phys = alpha as usize * d + beta as usize;
                for i in 0..dl {
                    for j in 0..dr {
                        m[(ro + i, co + j)] =
                            self.data[((lo + i) * d2 + phys) * self.right.dim() + roff + j];
                    }
                }
                co += dr;
            }
            ro += dl;
        }
        m
    }

    /// Schmidt spectrum of the central cut. Only meaningful when the
    /// embedding MPS is mixed-canonical around the pair.
    pub fn schmidt_spectrum(&self) -> SchmidtSpectrum {
        let mut pairs: Vec<(f64, Charge)> = Vec::new();
        for (q, rows, cols) in self.cut_sectors() {
            let m = self.sector_matrix(&rows, &cols);
            if m.nrows() == 0 || m.ncols() == 0 {
                continue;
            }
            let (_, s, _) = svd_thin(&m);
            for &sv in s.iter() {
                if sv > 1e-300 {
                    pairs.push((sv, q));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        SchmidtSpectrum {
            values: pairs.iter().map(|&(s, _)| s).collect(),
            charges: pairs.iter().map(|&(_, q)| q).collect(),
        }
    }

    /// Splits the blocked tensor back into two site tensors with dynamic
    /// block state selection, reporting the truncation error
    /// `ε_t = Σ_discarded σ²` and renormalising what is kept.
    pub fn decompose(&self, policy: &TruncationPolicy, dir: SplitDirection) -> Result<Decomposition> {
        struct SectorSvd {
            q: Charge,
            rows: Vec<(usize, u8)>,
            cols: Vec<(u8, usize)>,
            u: CMat,
            s: Vec<f64>,
            vt: CMat,
        }
        let mut svds: Vec<SectorSvd> = Vec::new();
        for (q, rows, cols) in self.cut_sectors() {
            let m = self.sector_matrix(&rows, &cols);
            if m.nrows() == 0 || m.ncols() == 0 {
                continue;
            }
            let (u, s, vt) = svd_thin(&m);
            svds.push(SectorSvd { q, rows, cols, u, s: s.iter().copied().collect(), vt });
        }
        let mut pool: Vec<(f64, usize, usize)> = Vec::new();
        for (si, svd) in svds.iter().enumerate() {
            for (k, &sv) in svd.s.iter().enumerate() {
                pool.push((sv, si, k));
            }
        }
        pool.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(svds[a.1].q.cmp(&svds[b.1].q))
                .then(a.2.cmp(&b.2))
        });
        if pool.is_empty() {
            return Err(Error::ChargeViolation("blocked tensor has no admissible sector".into()));
        }
        let total = pool.len();
        let smax = pool[0].0;
        let nonzero = pool.iter().filter(|&&(s, _, _)| s > 1e-14 * smax).count().max(1);

        // Smallest rank whose discarded weight stays within budget.
        let mut tail = 0.0f64;
        let mut keep = total;
        for k in (1..=total).rev() {
            let add = pool[k - 1].0 * pool[k - 1].0;
            if k > 1 && tail + add <= policy.eps_trc {
                tail += add;
                keep = k - 1;
            } else {
                break;
            }
        }
        keep = keep.max(policy.d_min.min(nonzero)).min(policy.d_max).min(total);
        // Keep whole degenerate multiplets when the cap allows.
        let degen = 1e-12 * smax.max(1e-300);
        while keep < total && keep < policy.d_max && (pool[keep - 1].0 - pool[keep].0).abs() <= degen
        {
            keep += 1;
        }
        let eps_t: f64 = pool[keep..].iter().map(|&(s, _, _)| s * s).sum();
        let kept_weight: f64 = pool[..keep].iter().map(|&(s, _, _)| s * s).sum();
        let renorm = 1.0 / kept_weight.sqrt();

        let mut kept_per_sector: Vec<Vec<usize>> = vec![Vec::new(); svds.len()];
        for &(_, si, k) in &pool[..keep] {
            kept_per_sector[si].push(k);
        }
        for kp in &mut kept_per_sector {
            kp.sort_unstable();
        }

        let mut mid_sectors = Vec::new();
        for (svd, kp) in svds.iter().zip(&kept_per_sector) {
            if !kp.is_empty() {
                mid_sectors.push((svd.q, kp.len()));
            }
        }
        let mid_basis = BondBasis::new(mid_sectors);

        let mut spectrum_pairs: Vec<(f64, Charge)> = pool[..keep]
            .iter()
            .map(|&(s, si, _)| (s * renorm, svds[si].q))
            .collect();
        spectrum_pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let spectrum = SchmidtSpectrum {
            values: spectrum_pairs.iter().map(|&(s, _)| s).collect(),
            charges: spectrum_pairs.iter().map(|&(_, q)| q).collect(),
        };

        let mut left_tensor = SiteTensor::default();
        let mut right_tensor = SiteTensor::default();
        for (svd, kp) in svds.iter().zip(&kept_per_sector) {
            if kp.is_empty() {
                continue;
            }
            let kq = kp.len();
            // Left factor: rows grouped by (left sector, α).
            let mut ro = 0;
            for &(li, alpha) in &svd.rows {
                let dl = self.left.sector_dim(li);
                let mut block = CMat::zeros(dl, kq);
                for i in 0..dl {
                    for (col, &k) in kp.iter().enumerate() {
                        let mut val = svd.u[(ro + i, k)];
                        if dir == SplitDirection::ToLeft {
                            val *= cr(svd.s[k] * renorm);
                        }
                        block[(i, col)] = val;
                    }
                }
                left_tensor.blocks.insert((self.left.charge(li), alpha), block);
                ro += dl;
            }
            // Right factor: columns grouped by (β, right sector), keyed by
            // the mid charge q.
            let mut co = 0;
            for &(beta, ri) in &svd.cols {
                let dr = self.right.sector_dim(ri);
                let mut block = CMat::zeros(kq, dr);
                for (row, &k) in kp.iter().enumerate() {
                    for j in 0..dr {
                        let mut val = svd.vt[(k, co + j)];
                        if dir == SplitDirection::ToRight {
                            val *= cr(svd.s[k] * renorm);
                        }
                        block[(row, j)] = val;
                    }
                }
                right_tensor.blocks.insert((svd.q, beta), block);
                co += dr;
            }
        }
        Ok(Decomposition { left_tensor, right_tensor, mid_basis, spectrum, eps_t })
    }
}

/// A `U(1)^p` symmetric open-boundary MPS.
#[derive(Clone, Debug)]
pub struct SymmetricMps {
    n: usize,
    p: usize,
    total: Charge,
    tensors: Vec<SiteTensor>,
    bonds: Vec<BondBasis>,
    spectra: Vec<Option<SchmidtSpectrum>>,
    bond_eps: Vec<f64>,
    center: Option<usize>,
}

impl SymmetricMps {
    /// Product state with per-site physical indices `occ[m] ∈ [0, d)`.
    pub fn product_state(n: usize, p: usize, occ: &[u8]) -> Result<Self> {
        if occ.len() != n {
            return Err(Error::DimensionMismatch {
                context: "product state occupations",
                expected: n,
                got: occ.len(),
            });
        }
        let d = 1u8 << p;
        let mut bonds = Vec::with_capacity(n + 1);
        let mut tensors = Vec::with_capacity(n);
        let mut q = Charge::zero();
        bonds.push(BondBasis::unit(q));
        for &alpha in occ {
            if alpha >= d {
                return Err(Error::IndexOutOfRange {
                    context: "product state index",
                    index: alpha as usize,
                    bound: d as usize,
                });
            }
            let mut t = SiteTensor::default();
            t.blocks.insert((q, alpha), CMat::from_element(1, 1, cr(1.0)));
            tensors.push(t);
            q = q.add(&Charge::of_phys(alpha, p));
            bonds.push(BondBasis::unit(q));
        }
        let spectra = bonds.iter().map(|b| Some(SchmidtSpectrum::trivial(b.charge(0)))).collect();
        Ok(Self {
            n,
            p,
            total: q,
            tensors,
            bonds,
            spectra,
            bond_eps: vec![0.0; n + 1],
            center: Some(0),
        })
    }

    /// Random normalised state in the sector with `counts[s]` particles of
    /// species `s`, with at most `cap` states per bond sector before
    /// canonicalisation prunes ranks.
    pub fn random_in_sector<R: rand::Rng + ?Sized>(
        n: usize,
        p: usize,
        counts: &[usize],
        cap: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if counts.len() != p {
            return Err(Error::DimensionMismatch {
                context: "sector counts",
                expected: p,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c > n) {
            return Err(Error::Config("sector exceeds one particle per site and species".into()));
        }
        let total = Charge::from_counts(counts);
        let mut bonds = Vec::with_capacity(n + 1);
        for b in 0..=n {
            let lo: Vec<usize> = counts.iter().map(|&c| c.saturating_sub(n - b)).collect();
            let hi: Vec<usize> = counts.iter().map(|&c| c.min(b)).collect();
            let mut sectors = Vec::new();
            let mut stack = vec![(0usize, Charge::zero())];
            while let Some((s, q)) = stack.pop() {
                if s == p {
                    let dim = if b == 0 || b == n { 1 } else { cap };
                    sectors.push((q, dim));
                    continue;
                }
                for c in lo[s]..=hi[s] {
                    let mut q2 = q;
                    q2.0[s] = c as i16;
                    stack.push((s + 1, q2));
                }
            }
            bonds.push(BondBasis::new(sectors));
        }
        let mut tensors = Vec::with_capacity(n);
        for m in 0..n {
            let mut t = SiteTensor::default();
            for &(ql, dl) in bonds[m].sectors() {
                for alpha in 0..(1u8 << p) {
                    let qr = ql.add(&Charge::of_phys(alpha, p));
                    if let Some(ri) = bonds[m + 1].find(&qr) {
                        let dr = bonds[m + 1].sector_dim(ri);
                        let block = CMat::from_fn(dl, dr, |_, _| {
                            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        });
                        t.blocks.insert((ql, alpha), block);
                    }
                }
            }
            tensors.push(t);
        }
        let mut psi = Self {
            n,
            p,
            total,
            tensors,
            bonds,
            spectra: vec![None; n + 1],
            bond_eps: vec![0.0; n + 1],
            center: None,
        };
        psi.canonicalize(0)?;
        psi.normalize();
        Ok(psi)
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn species(&self) -> usize {
        self.p
    }

    pub fn site_dim(&self) -> usize {
        1 << self.p
    }

    pub fn total_charge(&self) -> Charge {
        self.total
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    pub fn bond(&self, b: usize) -> &BondBasis {
        &self.bonds[b]
    }

    pub fn bond_dim(&self, b: usize) -> usize {
        self.bonds[b].dim()
    }

    pub fn tensor(&self, m: usize) -> &SiteTensor {
        &self.tensors[m]
    }

    /// Last truncation error recorded at bond `b`.
    pub fn bond_eps(&self, b: usize) -> f64 {
        self.bond_eps[b]
    }

    /// Stored spectrum at bond `b`, if one has been computed.
    pub fn stored_spectrum(&self, b: usize) -> Option<&SchmidtSpectrum> {
        self.spectra[b].as_ref()
    }

    /// Largest bond dimension along the chain.
    pub fn max_bond_dim(&self) -> usize {
        self.bonds.iter().map(|b| b.dim()).max().unwrap_or(1)
    }

    /// Left-normalises site `m`, pushing its R factor into site `m+1` and
    /// tightening the bond basis in between.
    fn left_normalize_step(&mut self, m: usize) -> Result<()> {
        let mut groups: BTreeMap<Charge, Vec<(Charge, u8, usize)>> = BTreeMap::new();
        for (&(ql, alpha), block) in &self.tensors[m].blocks {
            let qr = ql.add(&Charge::of_phys(alpha, self.p));
            groups.entry(qr).or_default().push((ql, alpha, block.nrows()));
        }
        let mut new_sectors = Vec::new();
        let mut new_blocks: BTreeMap<(Charge, u8), CMat> = BTreeMap::new();
        let mut r_factors: BTreeMap<Charge, CMat> = BTreeMap::new();
        for (qr, rows) in groups {
            let ri = match self.bonds[m + 1].find(&qr) {
                Some(i) => i,
                None => continue,
            };
            let cols = self.bonds[m + 1].sector_dim(ri);
            let nrows: usize = rows.iter().map(|&(_, _, r)| r).sum();
            let mut stacked = CMat::zeros(nrows, cols);
            let mut off = 0;
            for &(ql, alpha, r) in &rows {
                let block = &self.tensors[m].blocks[&(ql, alpha)];
                for i in 0..r {
                    for j in 0..cols {
                        stacked[(off + i, j)] = block[(i, j)];
                    }
                }
                off += r;
            }
            let qr_dec = stacked.qr();
            let qmat = qr_dec.q();
            let rmat = qr_dec.r();
            let rank = qmat.ncols();
            if rank == 0 {
                continue;
            }
            let mut off = 0;
            for &(ql, alpha, r) in &rows {
                let mut b = CMat::zeros(r, rank);
                for i in 0..r {
                    for j in 0..rank {
                        b[(i, j)] = qmat[(off + i, j)];
                    }
                }
                new_blocks.insert((ql, alpha), b);
                off += r;
            }
            new_sectors.push((qr, rank));
            r_factors.insert(qr, rmat);
        }
        if m + 1 < self.n {
            let old = std::mem::take(&mut self.tensors[m + 1]);
            let mut pushed = SiteTensor::default();
            for ((ql, alpha), block) in old.blocks {
                if let Some(r) = r_factors.get(&ql) {
                    pushed.blocks.insert((ql, alpha), r * block);
                }
            }
            self.tensors[m + 1] = pushed;
        } else {
            // Right edge: R is the 1×1 norm/phase of the state; absorb it.
            let (qr, r) = r_factors
                .into_iter()
                .next()
                .ok_or_else(|| Error::ChargeViolation("right edge sector vanished".into()))?;
            let scale = r[(0, 0)];
            for ((ql, alpha), block) in new_blocks.iter_mut() {
                if ql.add(&Charge::of_phys(*alpha, self.p)) == qr {
                    *block *= scale;
                }
            }
        }
        self.tensors[m] = SiteTensor { blocks: new_blocks };
        self.bonds[m + 1] = BondBasis::new(new_sectors);
        self.spectra[m + 1] = None;
        Ok(())
    }

    /// Right-normalises site `m`, pushing its L factor into site `m−1`.
    fn right_normalize_step(&mut self, m: usize) -> Result<()> {
        let mut groups: BTreeMap<Charge, Vec<(u8, usize)>> = BTreeMap::new();
        for (&(ql, alpha), block) in &self.tensors[m].blocks {
            groups.entry(ql).or_default().push((alpha, block.ncols()));
        }
        let mut new_sectors = Vec::new();
        let mut new_blocks: BTreeMap<(Charge, u8), CMat> = BTreeMap::new();
        let mut l_factors: BTreeMap<Charge, CMat> = BTreeMap::new();
        for (ql, cols_group) in groups {
            let li = match self.bonds[m].find(&ql) {
                Some(i) => i,
                None => continue,
            };
            let rows = self.bonds[m].sector_dim(li);
            let ncols: usize = cols_group.iter().map(|&(_, c)| c).sum();
            let mut stacked = CMat::zeros(rows, ncols);
            let mut off = 0;
            for &(alpha, c) in &cols_group {
                let block = &self.tensors[m].blocks[&(ql, alpha)];
                for i in 0..rows {
                    for j in 0..c {
                        stacked[(i, off + j)] = block[(i, j)];
                    }
                }
                off += c;
            }
            // LQ via the QR of the adjoint: Mᴴ = Q R ⇒ M = Rᴴ Qᴴ.
            let qr_dec = stacked.adjoint().qr();
            let qmat = qr_dec.q();
            let rmat = qr_dec.r();
            let rank = qmat.ncols();
            if rank == 0 {
                continue;
            }
            let qh = qmat.adjoint();
            let mut off = 0;
            for &(alpha, c) in &cols_group {
                let mut b = CMat::zeros(rank, c);
                for i in 0..rank {
                    for j in 0..c {
                        b[(i, j)] = qh[(i, off + j)];
                    }
                }
                new_blocks.insert((ql, alpha), b);
                off += c;
            }
            new_sectors.push((ql, rank));
            l_factors.insert(ql, rmat.adjoint());
        }
        if m > 0 {
            let old = std::mem::take(&mut self.tensors[m - 1]);
            let mut pushed = SiteTensor::default();
            for ((ql, alpha), block) in old.blocks {
                let qr = ql.add(&Charge::of_phys(alpha, self.p));
                if let Some(l) = l_factors.get(&qr) {
                    pushed.blocks.insert((ql, alpha), block * l);
                }
            }
            self.tensors[m - 1] = pushed;
        } else {
            let (_, l) = l_factors
                .into_iter()
                .next()
                .ok_or_else(|| Error::ChargeViolation("left edge sector vanished".into()))?;
            let scale = l[(0, 0)];
            for block in new_blocks.values_mut() {
                *block *= scale;
            }
        }
        self.tensors[m] = SiteTensor { blocks: new_blocks };
        self.bonds[m] = BondBasis::new(new_sectors);
        self.spectra[m] = None;
        Ok(())
    }

    /// Brings the state to mixed-canonical form with the orthogonality
    /// centre at site `m`. The represented state is unchanged up to a
    /// global phase.
    pub fn canonicalize(&mut self, m: usize) -> Result<()> {
        if m >= self.n {
            return Err(Error::IndexOutOfRange {
                context: "canonical centre",
                index: m,
                bound: self.n,
            });
        }
        match self.center {
            Some(c) if c == m => {}
            Some(c) if c < m => {
                for k in c..m {
                    self.left_normalize_step(k)?;
                }
            }
            Some(c) => {
                for k in ((m + 1)..=c).rev() {
                    self.right_normalize_step(k)?;
                }
            }
            None => {
                for k in 0..m {
                    self.left_normalize_step(k)?;
                }
                for k in ((m + 1)..self.n).rev() {
                    self.right_normalize_step(k)?;
                }
            }
        }
        self.center = Some(m);
        Ok(())
    }

    /// Frobenius norm of the state.
    pub fn norm(&self) -> f64 {
        match self.center {
            Some(c) => self.tensors[c].frobenius2().sqrt(),
            None => self.overlap(self).norm().sqrt(),
        }
    }

    /// Scales the centre tensor so the state has unit norm.
    pub fn normalize(&mut self) {
        if self.center.is_none() {
            self.canonicalize(0).expect("canonicalisation for normalisation");
        }
        let c = self.center.unwrap();
        let nrm = self.tensors[c].frobenius2().sqrt();
        if nrm > 0.0 {
            for block in self.tensors[c].blocks.values_mut() {
                *block /= cr(nrm);
            }
        }
    }

    /// `⟨self|other⟩` by transfer contraction.
    pub fn overlap(&self, other: &SymmetricMps) -> C64 {
        assert_eq!(self.n, other.n);
        assert_eq!(self.p, other.p);
        let mut env = CMat::from_element(1, 1, cr(1.0));
        for m in 0..self.n {
            let a1 = self.tensors[m].dense(&self.bonds[m], &self.bonds[m + 1], self.p);
            let a2 = other.tensors[m].dense(&other.bonds[m], &other.bonds[m + 1], other.p);
            let mut next = CMat::zeros(self.bonds[m + 1].dim(), other.bonds[m + 1].dim());
            for alpha in 0..self.site_dim() {
                next += a1[alpha].adjoint() * &env * &a2[alpha];
            }
            env = next;
        }
        env[(0, 0)]
    }

    /// Contracts sites `m` and `m+1` into a [`BlockedTensor`].
    ///
    /// The orthogonality centre must sit at `m` or `m+1` so the Schmidt
    /// spectrum of the central cut can be read off the result.
    pub fn block_two_site(&self, m: usize) -> Result<BlockedTensor> {
        if m + 1 >= self.n {
            return Err(Error::IndexOutOfRange {
                context: "two-site blocking",
                index: m,
                bound: self.n - 1,
            });
        }
        match self.center {
            Some(c) if c == m || c == m + 1 => {}
            found => {
                return Err(Error::WrongCenter { expected: m, found });
            }
        }
        let d = self.site_dim();
        let d2 = d * d;
        let mut out = BlockedTensor {
            left: self.bonds[m].clone(),
            right: self.bonds[m + 2].clone(),
            p: self.p,
            data: vec![cr(0.0); self.bonds[m].dim() * d2 * self.bonds[m + 2].dim()],
        };
        for (&(ql, alpha), b1) in &self.tensors[m].blocks {
            let li = match self.bonds[m].find(&ql) {
                Some(i) => i,
                None => continue,
            };
            let qmid = ql.add(&Charge::of_phys(alpha, self.p));
            for beta in 0..d as u8 {
                if let Some(b2) = self.tensors[m + 1].blocks.get(&(qmid, beta)) {
                    let qr = qmid.add(&Charge::of_phys(beta, self.p));
                    let ri = match self.bonds[m + 2].find(&qr) {
                        Some(i) => i,
                        None => continue,
                    };
                    let prod = b1 * b2;
                    let lo = self.bonds[m].offset(li);
                    let ro = self.bonds[m + 2].offset(ri);
                    let phys = alpha as usize * d + beta as usize;
                    for i in 0..prod.nrows() {
                        for j in 0..prod.ncols() {
                            *out.at_mut(lo + i, phys, ro + j) += prod[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Replaces sites `m`, `m+1` with a decomposition of a blocked tensor
    /// and updates bond metadata and the centre position.
    pub fn set_from_decomposition(&mut self, m: usize, dec: Decomposition, dir: SplitDirection) {
        self.tensors[m] = dec.left_tensor;
        self.tensors[m + 1] = dec.right_tensor;
        self.bonds[m + 1] = dec.mid_basis;
        self.spectra[m + 1] = Some(dec.spectrum);
        self.bond_eps[m + 1] = dec.eps_t;
        self.center = Some(match dir {
            SplitDirection::ToRight => m + 1,
            SplitDirection::ToLeft => m,
        });
    }

    /// Schmidt spectrum of the cut between sites `m` and `m+1`
    /// (canonicalises internally).
    pub fn schmidt_spectrum_at_cut(&mut self, m: usize) -> Result<SchmidtSpectrum> {
        self.canonicalize(m)?;
        let blocked = self.block_two_site(m)?;
        let spec = blocked.schmidt_spectrum();
        self.spectra[m + 1] = Some(spec.clone());
        Ok(spec)
    }

    /// Applies a fused two-site gate at sites `(m, m+1)` and restores MPS
    /// form under `policy`. Returns the truncation error of the split.
    pub fn apply_two_site_gate(
        &mut self,
        m: usize,
        g: &CMat,
        policy: &TruncationPolicy,
    ) -> Result<f64> {
        self.canonicalize(m)?;
        let mut blocked = self.block_two_site(m)?;
        blocked.apply_gate(g)?;
        let dec = blocked.decompose(policy, SplitDirection::ToRight)?;
        let eps = dec.eps_t;
        self.set_from_decomposition(m, dec, SplitDirection::ToRight);
        Ok(eps)
    }

    /// Applies a one-site gate (a `d × d` charge-diagonal unitary).
    pub fn apply_one_site_gate(&mut self, m: usize, g: &CMat) -> Result<()> {
        let d = self.site_dim();
        if g.nrows() != d || g.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "one-site gate",
                expected: d,
                got: g.nrows(),
            });
        }
        for r in 0..d {
            for c in 0..d {
                if g[(r, c)].norm() > 1e-12
                    && Charge::of_phys(r as u8, self.p) != Charge::of_phys(c as u8, self.p)
                {
                    return Err(Error::ChargeViolation(
                        "one-site gate moves weight between site charges".into(),
                    ));
                }
            }
        }
        let old = std::mem::take(&mut self.tensors[m]);
        let mut grouped: BTreeMap<(Charge, u8), CMat> = BTreeMap::new();
        for ((ql, alpha), block) in old.blocks {
            for target in 0..d as u8 {
                let w = g[(target as usize, alpha as usize)];
                if w.norm() == 0.0 {
                    continue;
                }
                grouped
                    .entry((ql, target))
                    .and_modify(|acc| *acc += &block * w)
                    .or_insert_with(|| &block * w);
            }
        }
        self.tensors[m] = SiteTensor { blocks: grouped };
        Ok(())
    }

    /// Diagonal of the one-site reduced density matrix at site `q` (the
    /// one-site RDM is charge-diagonal for `U(1)^p` states).
    pub fn one_site_rdm_diag(&self, q: usize) -> Result<Vec<f64>> {
        let mut work = self.clone();
        work.canonicalize(q)?;
        let d = work.site_dim();
        let mut diag = vec![0.0; d];
        for (&(_, alpha), block) in &work.tensors[q].blocks {
            diag[alpha as usize] += block.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        Ok(diag)
    }

    /// Two-site reduced density matrix of (possibly distant) sites
    /// `q < r`, as a `d² × d²` matrix on the fused index `α·d + β`.
    pub fn two_site_rdm(&self, q: usize, r: usize) -> Result<CMat> {
        if q >= r || r >= self.n {
            return Err(Error::IndexOutOfRange {
                context: "two-site RDM sites",
                index: r,
                bound: self.n,
            });
        }
        let mut work = self.clone();
        work.canonicalize(q)?;
        let d = work.site_dim();
        // Backward transfer from site r with open physical legs there;
        // sites > r are right-normalised so their transfer closes to 1.
        let ar = work.tensors[r].dense(&work.bonds[r], &work.bonds[r + 1], work.p);
        let dim_r = work.bonds[r].dim();
        let mut env: Vec<CMat> = vec![CMat::zeros(dim_r, dim_r); d * d];
        for beta in 0..d {
            for betap in 0..d {
                env[beta * d + betap] = &ar[beta] * ar[betap].adjoint();
            }
        }
        for k in (q + 1..r).rev() {
            let a = work.tensors[k].dense(&work.bonds[k], &work.bonds[k + 1], work.p);
            let dim_k = work.bonds[k].dim();
            let mut next: Vec<CMat> = vec![CMat::zeros(dim_k, dim_k); d * d];
            for idx in 0..d * d {
                for gamma in 0..d {
                    next[idx] += &a[gamma] * &env[idx] * a[gamma].adjoint();
                }
            }
            env = next;
        }
        let aq = work.tensors[q].dense(&work.bonds[q], &work.bonds[q + 1], work.p);
        let mut rho = CMat::zeros(d * d, d * d);
        for alpha in 0..d {
            for alphap in 0..d {
                for beta in 0..d {
                    for betap in 0..d {
                        // Sites < q are left-normalised: the left closure is
                        // a plain trace over the left bond.
                        let x = &aq[alpha] * &env[beta * d + betap] * aq[alphap].adjoint();
                        let mut tr = cr(0.0);
                        for i in 0..x.nrows() {
                            tr += x[(i, i)];
                        }
                        rho[(alpha * d + beta, alphap * d + betap)] = tr;
                    }
                }
            }
        }
        Ok(rho)
    }

    /// Mutual information matrix `I(q,r) = S(q) + S(r) − S(q,r)` with von
    /// Neumann entropies in natural log and a zero diagonal.
    pub fn mutual_information(&self) -> Result<DMatrix<f64>> {
        let n = self.n;
        let mut s1 = vec![0.0; n];
        for q in 0..n {
            let diag = self.one_site_rdm_diag(q)?;
            s1[q] = diag
                .iter()
                .map(|&w| if w > 1e-15 { -w * w.ln() } else { 0.0 })
                .sum();
        }
        let mut mi = DMatrix::<f64>::zeros(n, n);
        for q in 0..n {
            for r in (q + 1)..n {
                let rho = self.two_site_rdm(q, r)?;
                let (evals, _) = crate::linalg::eigh(&rho);
                let s2: f64 = evals
                    .iter()
                    .map(|&w| if w > 1e-15 { -w * w.ln() } else { 0.0 })
                    .sum();
                let val = s1[q] + s1[r] - s2;
                mi[(q, r)] = val;
                mi[(r, q)] = val;
            }
        }
        Ok(mi)
    }

    /// Verifies the structural and canonical-form invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for (m, t) in self.tensors.iter().enumerate() {
            for (&(ql, alpha), block) in &t.blocks {
                let li = self.bonds[m]
                    .find(&ql)
                    .ok_or_else(|| Error::ChargeViolation(format!("site {m}: unknown left sector")))?;
                let qr = ql.add(&Charge::of_phys(alpha, self.p));
                let ri = self.bonds[m + 1]
                    .find(&qr)
                    .ok_or_else(|| Error::ChargeViolation(format!("site {m}: unknown right sector")))?;
                if block.nrows() != self.bonds[m].sector_dim(li)
                    || block.ncols() != self.bonds[m + 1].sector_dim(ri)
                {
                    return Err(Error::DimensionMismatch {
                        context: "site tensor block",
                        expected: self.bonds[m].sector_dim(li),
                        got: block.nrows(),
                    });
                }
            }
        }
        if let Some(c) = self.center {
            for m in 0..c {
                if !self.is_left_isometry(m) {
                    return Err(Error::ChargeViolation(format!("site {m} not left-normalised")));
                }
            }
            for m in (c + 1)..self.n {
                if !self.is_right_isometry(m) {
                    return Err(Error::ChargeViolation(format!("site {m} not right-normalised")));
                }
            }
        }
        Ok(())
    }

    fn is_left_isometry(&self, m: usize) -> bool {
        let a = self.tensors[m].dense(&self.bonds[m], &self.bonds[m + 1], self.p);
        let dim = self.bonds[m + 1].dim();
        let mut acc = CMat::zeros(dim, dim);
        for alpha in 0..self.site_dim() {
            acc += a[alpha].adjoint() * &a[alpha];
        }
        crate::linalg::max_diff(&acc, &CMat::identity(dim, dim)) < CANON_TOL
    }

    fn is_right_isometry(&self, m: usize) -> bool {
        let a = self.tensors[m].dense(&self.bonds[m], &self.bonds[m + 1], self.p);
        let dim = self.bonds[m].dim();
        let mut acc = CMat::zeros(dim, dim);
        for alpha in 0..self.site_dim() {
            acc += &a[alpha] * a[alpha].adjoint();
        }
        crate::linalg::max_diff(&acc, &CMat::identity(dim, dim)) < CANON_TOL
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

/// JSON-serialisable snapshot of an MPS (exact restart: complex entries are
/// stored as `[re, im]` pairs and round-trip bit-exactly).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpsFile {
    pub format: String,
    pub n_sites: usize,
    pub species: usize,
    pub total_charge: Charge,
    pub bonds: Vec<Vec<(Charge, usize)>>,
    /// Per site: list of `(left charge, α, matrix)`.
    pub tensors: Vec<Vec<(Charge, u8, MatrixRepr)>>,
    pub spectra: Vec<Option<SchmidtSpectrum>>,
    pub bond_eps: Vec<f64>,
    pub center: Option<usize>,
}

impl MpsFile {
    pub fn from_mps(psi: &SymmetricMps) -> Self {
        Self {
            format: "orbdmrg-mps-v1".into(),
            n_sites: psi.n,
            species: psi.p,
            total_charge: psi.total,
            bonds: psi.bonds.iter().map(|b| b.sectors().to_vec()).collect(),
            tensors: psi
                .tensors
                .iter()
                .map(|t| {
                    t.blocks
                        .iter()
                        .map(|(&(q, a), m)| (q, a, MatrixRepr::from_mat(m)))
                        .collect()
                })
                .collect(),
            spectra: psi.spectra.clone(),
            bond_eps: psi.bond_eps.clone(),
            center: psi.center,
        }
    }

    pub fn to_mps(&self) -> Result<SymmetricMps> {
        if self.tensors.len() != self.n_sites || self.bonds.len() != self.n_sites + 1 {
            return Err(Error::Config("MPS container has inconsistent shape".into()));
        }
        let bonds: Vec<BondBasis> = self.bonds.iter().map(|s| BondBasis::new(s.clone())).collect();
        let mut tensors = Vec::with_capacity(self.n_sites);
        for site in &self.tensors {
            let mut t = SiteTensor::default();
            for (q, a, m) in site {
                t.blocks.insert((*q, *a), m.to_mat()?);
            }
            tensors.push(t);
        }
        let psi = SymmetricMps {
            n: self.n_sites,
            p: self.species,
            total: self.total_charge,
            tensors,
            bonds,
            spectra: self.spectra.clone(),
            bond_eps: self.bond_eps.clone(),
            center: self.center,
        };
        psi.check_invariants()?;
        Ok(psi)
    }
}
