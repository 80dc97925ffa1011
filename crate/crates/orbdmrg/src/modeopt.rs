//! Local basis optimisation over two-site mode rotations.
//!
//! The Schmidt spectrum across the central cut of a blocked two-site
//! tensor is insensitive to on-site rotations `U_m ⊕ U_{m+1}`, so the
//! non-redundant search space for a `2p`-mode window rotation is the coset
//! space `U(2p) / U(p)×U(p)`, the Grassmann manifold `G(2p, p)`. Points
//! are represented by `a×b` isometries `X` (`a = 2p'`, `b = p'`) and
//! mapped to full unitaries by a generalised Householder reflection whose
//! first `b` columns equal the columns of `X`:
//!
//! `U(X) = 1_a − (X − P)(1_b − X†P)^{-1}(X† − P†)`,  `P_ij = δ_ij`.
//!
//! Two cost functions act on the Schmidt values of the rotated tensor:
//! `f1 = Σσ_i` (minimising it pushes down the `S^{1/2}` Rényi entropy that
//! controls the required bond dimension) and `f4 = −Σσ_i⁴ = −tr ρ²`,
//! whose gradient is available in closed form through the minor
//! derivatives of the Gaussian representation. A derivative-free
//! Nelder-Mead search covers the small charts (2 real parameters in the
//! spin-summed case), a Riemannian conjugate-gradient with QR retraction
//! covers larger ones.
//!
//! Under the spin-summed restriction the admissible rotations have the
//! form `u ⊕ u` over the species, leaving a `G(2,1)` search with two real
//! parameters.

use rand::Rng;

use crate::fock::{exterior_rep, gaussian_minor};
use crate::linalg::{cr, svd_thin};
use crate::mps::{BlockedTensor, SchmidtSpectrum};
use crate::{C64, CMat, Error, Result};

/// Isometry tolerance for Grassmann representatives.
pub const ISOMETRY_TOL: f64 = 1e-12;

/// A point of `G(a, b)` represented by an `a×b` isometry.
#[derive(Clone, Debug)]
pub struct GrassmannPoint {
    x: CMat,
}

impl GrassmannPoint {
    /// Wraps an isometry, checking `X†X = 1` to [`ISOMETRY_TOL`].
    pub fn new(x: CMat) -> Result<Self> {
        let b = x.ncols();
        let gram = x.adjoint() * &x;
        let dev = crate::linalg::max_diff(&gram, &CMat::identity(b, b));
        if dev > ISOMETRY_TOL {
            return Err(Error::NotUnitary { dev, tol: ISOMETRY_TOL });
        }
        Ok(Self { x })
    }

    /// The identity coset: the first-columns selector `P`.
    pub fn identity(a: usize, b: usize) -> Self {
        let mut x = CMat::zeros(a, b);
        for k in 0..b {
            x[(k, k)] = cr(1.0);
        }
        Self { x }
    }

    pub fn matrix(&self) -> &CMat {
        &self.x
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Cost function selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CostFunction {
    /// `f1 = ‖Σ‖₁ = Σ σ_i`.
    F1,
    /// `f4 = −‖Σ‖₄⁴ = −Σ σ_i⁴`.
    F4,
}

/// Optimiser selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OptMethod {
    NelderMead,
    ConjugateGradient,
}

/// Symmetry class of admissible window rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SymmetryRestriction {
    /// Full `G(2p, p)` search.
    None,
    /// Spin-summed `u ⊕ u` rotations: a `G(2,1)` search with 2 parameters.
    SpinSummed,
}

/// Configuration of one local basis optimisation.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LocalOptConfig {
    pub cost: CostFunction,
    pub method: OptMethod,
    pub restriction: SymmetryRestriction,
    /// Budget of cost evaluations per optimisation.
    pub max_evals: usize,
    /// Minimal strict improvement for a rotation to be accepted.
    pub delta_accept: f64,
    /// Retries for singular Householder representatives.
    pub retry_budget: usize,
}

impl Default for LocalOptConfig {
    fn default() -> Self {
        Self {
            cost: CostFunction::F1,
            method: OptMethod::NelderMead,
            restriction: SymmetryRestriction::SpinSummed,
            max_evals: 200,
            delta_accept: 1e-10,
            retry_budget: 8,
        }
    }
}

impl LocalOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_accept <= 0.0 {
            return Err(Error::Config("delta_accept must be positive".into()));
        }
        if self.max_evals == 0 || self.retry_budget == 0 {
            return Err(Error::Config("optimiser budgets must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Householder parametrisation
// ---------------------------------------------------------------------------

/// Result of the Householder map, carrying the representative actually
/// used (retries may re-phase the columns within the same coset).
pub struct HouseholderUnitary {
    pub u: CMat,
    pub representative: CMat,
}

fn condition_number(m: &CMat) -> f64 {
    let (_, s, _) = svd_thin(m);
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Householder map without retry handling; `None` when `1_b − X†P` is too
/// ill-conditioned for a stable inverse. The conservative threshold keeps
/// the resulting unitary accurate to ~1e−12 even for representatives close
/// to the singular locus (near the identity coset); callers re-phase the
/// coset representative instead.
fn householder_raw(x: &CMat) -> Option<CMat> {
    let a = x.nrows();
    let b = x.ncols();
    let mut p = CMat::zeros(a, b);
    for k in 0..b {
        p[(k, k)] = cr(1.0);
    }
    let y = CMat::identity(b, b) - x.adjoint() * &p;
    if condition_number(&y) > 1e4 {
        return None;
    }
    let y_inv = y.clone().try_inverse()?;
    let xmp = x - &p;
    let u = CMat::identity(a, a) - &xmp * y_inv * (x.adjoint() - p.adjoint());
    // Isometric X must give a unitary U; anything else is cancellation.
    let gram = x.adjoint() * x;
    let iso_dev = crate::linalg::max_diff(&gram, &CMat::identity(b, b));
    if iso_dev < 1e-10 && crate::linalg::unitarity_deviation(&u) > 1e-11 {
        return None;
    }
    Some(u)
}

/// Builds the generalised Householder reflection `U(X)` whose first `b`
/// columns are the columns of `X`.
///
/// `X = P` maps to the identity exactly. A singular `1_b − X†P` triggers a
/// re-representation of the coset by a random right unitary (first by a
/// pure phase, then by a full `b×b` unitary) up to `retry_budget` times.
pub fn householder_unitary<R: Rng + ?Sized>(
    point: &GrassmannPoint,
    retry_budget: usize,
    rng: &mut R,
) -> Result<HouseholderUnitary> {
    let a = point.rows();
    let b = point.cols();
    let p = GrassmannPoint::identity(a, b).x;
    if crate::linalg::max_diff(point.matrix(), &p) <= ISOMETRY_TOL {
        return Ok(HouseholderUnitary { u: CMat::identity(a, a), representative: p });
    }
    let mut rep = point.matrix().clone();
    for attempt in 0..retry_budget {
        if let Some(u) = householder_raw(&rep) {
            return Ok(HouseholderUnitary { u, representative: rep });
        }
        if attempt < retry_budget / 2 {
            // A random global phase usually suffices.
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            rep = point.matrix() * C64::new(phi.cos(), phi.sin());
        } else {
            let w = crate::linalg::random_unitary(rng, b);
            rep = point.matrix() * w;
        }
    }
    Err(Error::SingularRepresentative { retries: retry_budget })
}

/// Deterministic re-representation of a coset whose representative makes
/// `1_b − X†P` singular: right-multiplying by a phase (or, rarely, a fixed
/// unitary mix) picks a regular representative of the same Grassmann
/// point. Returns `None` if every candidate stays singular.
fn regular_representative(x: &CMat) -> Option<CMat> {
    if householder_raw(x).is_some() {
        return Some(x.clone());
    }
    for phi in [2.399963f64, 0.71, 1.93, 2.88, 0.37, 1.31, 2.05] {
        let cand = x * C64::new(phi.cos(), phi.sin());
        if householder_raw(&cand).is_some() {
            return Some(cand);
        }
    }
    let b = x.ncols();
    if b > 1 {
        // Fixed small mixing rotation between the first two columns.
        let mut w = CMat::identity(b, b);
        let (c, s) = (0.96f64, 0.28f64);
        w[(0, 0)] = cr(c);
        w[(0, 1)] = cr(-s);
        w[(1, 0)] = cr(s);
        w[(1, 1)] = cr(c);
        let cand = x * w;
        if householder_raw(&cand).is_some() {
            return Some(cand);
        }
    }
    None
}

/// Derivative of the Householder map along a representative perturbation:
/// `dU = −dX·Z₂ − Z₁·dX† − Z₁·dX†·P·Z₂` with
/// `Z₁ = (X−P)(1_b − X†P)^{-1}` and `Z₂ = (1_b − X†P)^{-1}(X†−P†)`.
fn householder_differential(x: &CMat, dx: &CMat) -> CMat {
    let a = x.nrows();
    let b = x.ncols();
    let mut p = CMat::zeros(a, b);
    for k in 0..b {
        p[(k, k)] = cr(1.0);
    }
    let y = CMat::identity(b, b) - x.adjoint() * &p;
    let y_inv = y.try_inverse().expect("differential at a regular representative");
    let z1 = (x - &p) * &y_inv;
    let z2 = &y_inv * (x.adjoint() - p.adjoint());
    let dxh = dx.adjoint();
    -(dx * &z2) - &z1 * &dxh - &z1 * &dxh * &p * &z2
}

// ---------------------------------------------------------------------------
// Cost functions
// ---------------------------------------------------------------------------

/// `f1(Σ) = Σ σ_i`; at least 1 with equality exactly at rank one.
pub fn cost_f1(spectrum: &SchmidtSpectrum) -> f64 {
    spectrum.norm1()
}

/// `f4(Σ) = −Σ σ_i⁴ = −tr ρ²` in `[−1, 0)` for a normalised spectrum.
pub fn cost_f4(spectrum: &SchmidtSpectrum) -> f64 {
    -spectrum.norm4_pow4()
}

/// Maps the small optimisation variable onto the `2p`-mode window.
#[derive(Clone, Copy, Debug)]
pub enum WindowMap {
    /// `U_loc = U` directly on the `2p` window modes.
    Direct { p: usize },
    /// `U_loc = u ⊕ u` over species: the `2×2` factor acts on the
    /// (site m, site m+1) pair of every species.
    SpinSummed { p: usize },
}

impl WindowMap {
    pub fn from_restriction(restriction: SymmetryRestriction, p: usize) -> Self {
        match restriction {
            SymmetryRestriction::None => WindowMap::Direct { p },
            SymmetryRestriction::SpinSummed => WindowMap::SpinSummed { p },
        }
    }

    /// Dimensions `(a, b)` of the Grassmann representative.
    pub fn grassmann_shape(&self) -> (usize, usize) {
        match self {
            WindowMap::Direct { p } => (2 * p, *p),
            WindowMap::SpinSummed { .. } => (2, 1),
        }
    }

    /// Window size `2p`.
    pub fn window_modes(&self) -> usize {
        match self {
            WindowMap::Direct { p } | WindowMap::SpinSummed { p } => 2 * p,
        }
    }

    /// Embeds the small unitary into the `2p × 2p` window rotation.
    pub fn embed(&self, u_small: &CMat) -> CMat {
        match self {
            WindowMap::Direct { .. } => u_small.clone(),
            WindowMap::SpinSummed { p } => {
                let w = 2 * p;
                let mut u = CMat::zeros(w, w);
                for s in 0..*p {
                    u[(s, s)] = u_small[(0, 0)];
                    u[(s, p + s)] = u_small[(0, 1)];
                    u[(p + s, s)] = u_small[(1, 0)];
                    u[(p + s, p + s)] = u_small[(1, 1)];
                }
                u
            }
        }
    }

    /// Pulls a window-index sensitivity back onto the small variable by
    /// summing the species copies.
    fn pull_back(&self, gamma_window: &CMat) -> CMat {
        match self {
            WindowMap::Direct { .. } => gamma_window.clone(),
            WindowMap::SpinSummed { p } => {
                let mut g = CMat::zeros(2, 2);
                for s in 0..*p {
                    let pos = [s, p + s];
                    for a in 0..2 {
                        for b in 0..2 {
                            g[(a, b)] += gamma_window[(pos[a], pos[b])];
                        }
                    }
                }
                g
            }
        }
    }
}

/// Singular values of the window-rotated blocked tensor, without
/// renormalisation (the raw values of the rotated matrix).
fn rotated_singular_values(blocked: &BlockedTensor, gate: &CMat) -> Vec<f64> {
    let m = rotated_cut_matrix(blocked, gate);
    let (_, s, _) = svd_thin(&m);
    s.iter().copied().collect()
}

/// The cut matrix `M_{(aα),(βb)}` of the gate-rotated tensor.
fn rotated_cut_matrix(blocked: &BlockedTensor, gate: &CMat) -> CMat {
    let d = blocked.site_dim();
    let d2 = blocked.fused_dim();
    let (dl, dr) = (blocked.left.dim(), blocked.right.dim());
    let mut m = CMat::zeros(dl * d, d * dr);
    for a in 0..dl {
        for f in 0..d2 {
            let mut amp = cr(0.0);
            for fp in 0..d2 {
                let w = gate[(f, fp)];
                if w.norm() != 0.0 {
                    // Lazy row evaluation below instead.
                    amp += w;
                }
            }
            let _ = amp;
            let (alpha, beta) = (f / d, f % d);
            for b in 0..dr {
                let mut z = cr(0.0);
                for fp in 0..d2 {
                    let w = gate[(f, fp)];
                    if w.norm() != 0.0 {
                        z += w * blocked.at(a, fp, b);
                    }
                }
                m[(a * d + alpha, beta * dr + b)] = z;
            }
        }
    }
    m
}

/// Raw polynomial cost `−tr[(MM†)²]` of the gate-rotated tensor; equals
/// `cost_f4` of its Schmidt spectrum when the gate is unitary and the
/// input normalised.
fn raw_f4(blocked: &BlockedTensor, gate: &CMat) -> f64 {
    let m = rotated_cut_matrix(blocked, gate);
    let g = m.adjoint() * &m;
    -g.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

fn cost_of_gate(blocked: &BlockedTensor, gate: &CMat, cost: CostFunction) -> f64 {
    match cost {
        CostFunction::F1 => rotated_singular_values(blocked, gate).iter().sum(),
        CostFunction::F4 => raw_f4(blocked, gate),
    }
}

/// Analytic gradient of the raw `f4` cost with respect to the Grassmann
/// representative: entry `(k,l)` is `∂f/∂ReX_kl + i·∂f/∂ImX_kl`.
///
/// The chain runs through the Householder map, the exterior-power
/// representation (via its minor derivatives) and the trace network
/// `−tr[(MM†)²]` of the rotated blocked tensor.
pub fn grad_f4(blocked: &BlockedTensor, point: &GrassmannPoint, map: &WindowMap) -> Result<CMat> {
    let (a_dim, b_dim) = map.grassmann_shape();
    if point.rows() != a_dim || point.cols() != b_dim {
        return Err(Error::DimensionMismatch {
            context: "grassmann point shape",
            expected: a_dim,
            got: point.rows(),
        });
    }
    let x = &regular_representative(point.matrix())
        .ok_or(Error::SingularRepresentative { retries: 0 })?;
    let u_small = householder_raw(x).expect("regular representative");
    let u_window = map.embed(&u_small);
    let w = map.window_modes();
    let d2 = blocked.fused_dim();
    let gate = exterior_rep(&u_window);

    // C = W·A† with W the unreshaped ρM tensor of the rotated state.
    let (dl, dr) = (blocked.left.dim(), blocked.right.dim());
    let d = blocked.site_dim();
    let mut a_mat = CMat::zeros(d2, dl * dr);
    for a in 0..dl {
        for f in 0..d2 {
            for b in 0..dr {
                a_mat[(f, a * dr + b)] = blocked.at(a, f, b);
            }
        }
    }
    let b_mat = &gate * &a_mat;
    let mut m = CMat::zeros(dl * d, d * dr);
    for a in 0..dl {
        for f in 0..d2 {
            let (alpha, beta) = (f / d, f % d);
            for b in 0..dr {
                m[(a * d + alpha, beta * dr + b)] = b_mat[(f, a * dr + b)];
            }
        }
    }
    let rho = &m * m.adjoint();
    let rho_m = rho * &m;
    let mut w_mat = CMat::zeros(d2, dl * dr);
    for a in 0..dl {
        for f in 0..d2 {
            let (alpha, beta) = (f / d, f % d);
            for b in 0..dr {
                w_mat[(f, a * dr + b)] = rho_m[(a * d + alpha, beta * dr + b)];
            }
        }
    }
    let c_mat = &w_mat * a_mat.adjoint();

    // Γ_ij = Σ_{I,J} conj(C_IJ) ∂g_IJ/∂(U†)_ij over same-count subsets.
    let mut gamma_w = CMat::zeros(w, w);
    let subsets_by_count: Vec<Vec<(usize, Vec<usize>)>> = (0..=w)
        .map(|k| {
            (0..d2)
                .filter(|&s| (s as u32).count_ones() as usize == k)
                .map(|s| {
                    let modes: Vec<usize> =
                        (0..w).filter(|&mu| (s >> (w - 1 - mu)) & 1 == 1).collect();
                    (s, modes)
                })
                .collect()
        })
        .collect();
    for subsets in &subsets_by_count {
        for (si, mi) in subsets {
            for (sj, mj) in subsets {
                let cw = c_mat[(*si, *sj)];
                if cw.norm() == 0.0 {
                    continue;
                }
                for &i in mi {
                    for &j in mj {
                        let minor = gaussian_minor(&u_window, mi, mj, i, j)?;
                        gamma_w[(i, j)] += cw.conj() * minor;
                    }
                }
            }
        }
    }
    let gamma = map.pull_back(&gamma_w);

    // Chain through the Householder differential per real parameter.
    let a_small = x.nrows();
    let b_small = x.ncols();
    let mut grad = CMat::zeros(a_small, b_small);
    for k in 0..a_small {
        for l in 0..b_small {
            let mut e = CMat::zeros(a_small, b_small);
            e[(k, l)] = cr(1.0);
            let du_re = householder_differential(x, &e);
            e[(k, l)] = C64::new(0.0, 1.0);
            let du_im = householder_differential(x, &e);
            let mut df_re = 0.0;
            let mut df_im = 0.0;
            for i in 0..a_small {
                for j in 0..a_small {
                    df_re += (gamma[(i, j)] * du_re[(j, i)].conj()).re;
                    df_im += (gamma[(i, j)] * du_im[(j, i)].conj()).re;
                }
            }
            grad[(k, l)] = C64::new(-4.0 * df_re, -4.0 * df_im);
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Charts and optimisers
// ---------------------------------------------------------------------------

/// Graph chart around the identity coset: `X(Z) = stack(1_b; Z)·N` with
/// `N = (1_b + Z†Z)^{-1/2}` and `Z ∈ C^{(a−b)×b}` read off the real
/// parameter vector.
fn chart_to_point(params: &[f64], a: usize, b: usize) -> GrassmannPoint {
    let rows = a - b;
    debug_assert_eq!(params.len(), 2 * rows * b);
    let mut z = CMat::zeros(rows, b);
    for r in 0..rows {
        for c in 0..b {
            let idx = 2 * (r * b + c);
            z[(r, c)] = C64::new(params[idx], params[idx + 1]);
        }
    }
    let gram = CMat::identity(b, b) + z.adjoint() * &z;
    // Inverse square root via the Hermitian eigendecomposition (b ≤ 2).
    let (vals, vecs) = crate::linalg::eigh(&gram);
    let mut n = CMat::zeros(b, b);
    for k in 0..b {
        let col = vecs.column(k);
        let w = cr(1.0 / vals[k].sqrt());
        for i in 0..b {
            for j in 0..b {
                n[(i, j)] += col[i] * col[j].conj() * w;
            }
        }
    }
    let mut x = CMat::zeros(a, b);
    for i in 0..b {
        for j in 0..b {
            x[(i, j)] = n[(i, j)];
        }
    }
    let zn = &z * &n;
    for r in 0..rows {
        for c in 0..b {
            x[(b + r, c)] = zn[(r, c)];
        }
    }
    GrassmannPoint { x }
}

struct NelderMead {
    dim: usize,
    radius: f64,
}

impl NelderMead {
    /// Minimises `f` from the origin; returns the best parameter vector,
    /// its value and the evaluation trace.
    fn run<R: Rng + ?Sized>(
        &self,
        mut f: impl FnMut(&[f64]) -> f64,
        max_evals: usize,
        restarts: usize,
        rng: &mut R,
    ) -> (Vec<f64>, f64, Vec<f64>) {
        let n = self.dim;
        let mut trace = Vec::new();
        let mut evals = 0usize;
        let mut eval = |p: &[f64], trace: &mut Vec<f64>, evals: &mut usize| -> f64 {
            let v = f(p);
            trace.push(v);
            *evals += 1;
            v
        };
        let mut best_overall = (vec![0.0; n], f64::INFINITY);

        let mut center = vec![0.0; n];
        for restart in 0..=restarts {
            // Simplex around the current centre.
            let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
            let radius = if restart == 0 {
                self.radius
            } else {
                self.radius * rng.random_range(0.3..1.5)
            };
            let v0 = eval(&center, &mut trace, &mut evals);
            simplex.push((center.clone(), v0));
            for i in 0..n {
                let mut p = center.clone();
                p[i] += radius;
                if restart > 0 {
                    for x in p.iter_mut() {
                        *x += radius * 0.3 * rng.random_range(-1.0..1.0);
                    }
                }
                let v = eval(&p, &mut trace, &mut evals);
                simplex.push((p, v));
            }
            while evals < max_evals {
                simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
                let spread = simplex[n].1 - simplex[0].1;
                let diam: f64 = (0..n)
                    .map(|i| (simplex[n].0[i] - simplex[0].0[i]).abs())
                    .fold(0.0, f64::max);
                if spread.abs() < 1e-13 * (1.0 + simplex[0].1.abs()) || diam < 1e-10 {
                    break;
                }
                let centroid: Vec<f64> = (0..n)
                    .map(|i| simplex[..n].iter().map(|(p, _)| p[i]).sum::<f64>() / n as f64)
                    .collect();
                let worst = simplex[n].clone();
                let reflect: Vec<f64> = (0..n)
                    .map(|i| centroid[i] + (centroid[i] - worst.0[i]))
                    .collect();
                let fr = eval(&reflect, &mut trace, &mut evals);
                if fr < simplex[0].1 {
                    let expand: Vec<f64> = (0..n)
                        .map(|i| centroid[i] + 2.0 * (centroid[i] - worst.0[i]))
                        .collect();
                    let fe = eval(&expand, &mut trace, &mut evals);
                    simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
                } else if fr < simplex[n - 1].1 {
                    simplex[n] = (reflect, fr);
                } else {
                    let contract: Vec<f64> = (0..n)
                        .map(|i| centroid[i] + 0.5 * (worst.0[i] - centroid[i]))
                        .collect();
                    let fc = eval(&contract, &mut trace, &mut evals);
                    if fc < worst.1 {
                        simplex[n] = (contract, fc);
                    } else {
                        let best = simplex[0].0.clone();
                        for v in simplex.iter_mut().skip(1) {
                            let p: Vec<f64> = (0..n)
                                .map(|i| best[i] + 0.5 * (v.0[i] - best[i]))
                                .collect();
                            let fv = eval(&p, &mut trace, &mut evals);
                            *v = (p, fv);
                        }
                    }
                }
            }
            simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
            if simplex[0].1 < best_overall.1 {
                best_overall = (simplex[0].0.clone(), simplex[0].1);
            }
            center = best_overall.0.clone();
            if evals >= max_evals {
                break;
            }
        }
        (best_overall.0, best_overall.1, trace)
    }
}

/// Projection onto the Grassmann horizontal space at `X`: `G − X X† G`.
fn project_tangent(x: &CMat, g: &CMat) -> CMat {
    g - x * (x.adjoint() * g)
}

/// QR re-orthonormalisation retraction.
fn retract(x: &CMat, step: &CMat) -> GrassmannPoint {
    let y = x + step;
    let qr = y.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Phase-fix so the retraction is continuous near the base point.
    for j in 0..q.ncols() {
        let dj = r[(j, j)];
        if dj.norm() > 1e-300 {
            let phase = dj / dj.norm();
            for i in 0..q.nrows() {
                q[(i, j)] *= phase;
            }
        }
    }
    GrassmannPoint { x: q }
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Riemannian conjugate gradient on `G(a,b)` with Polak-Ribière updates
/// and periodic restarts every `b(a−b)` iterations.
fn conjugate_gradient(
    blocked: &BlockedTensor,
    map: &WindowMap,
    max_evals: usize,
) -> Result<(GrassmannPoint, f64, Vec<f64>)> {
    let (a, b) = map.grassmann_shape();
    let mut x = GrassmannPoint {
        x: regular_representative(GrassmannPoint::identity(a, b).matrix())
            .ok_or(Error::SingularRepresentative { retries: 0 })?,
    };
    let cost_at = |pt: &GrassmannPoint| -> Result<f64> {
        let rep = regular_representative(pt.matrix())
            .ok_or(Error::SingularRepresentative { retries: 0 })?;
        let u = householder_raw(&rep).expect("regular representative");
        Ok(raw_f4(blocked, &exterior_rep(&map.embed(&u))))
    };
    let mut trace = Vec::new();
    let mut f = cost_at(&x)?;
    trace.push(f);
    let mut evals = 1usize;
    let mut grad = project_tangent(x.matrix(), &grad_f4(blocked, &x, map)?);
    let mut dir = -grad.clone();
    let restart_every = (b * (a - b)).max(1);
    let mut since_restart = 0usize;
    let mut step0 = 0.5f64;

    while evals < max_evals {
        let gnorm = inner(&grad, &grad).sqrt();
        if gnorm < 1e-9 {
            break;
        }
        // Armijo backtracking along the retracted ray, with expansion on
        // immediate accepts and one interpolated refinement.
        let slope = inner(&grad, &dir);
        if slope >= 0.0 {
            dir = -grad.clone();
            since_restart = 0;
        }
        let slope = inner(&grad, &dir);
        let mut t = step0;
        let mut accepted: Option<(GrassmannPoint, f64, f64)> = None;
        let mut backtracks = 0usize;
        for _ in 0..24 {
            let cand = retract(x.matrix(), &(&dir * cr(t)));
            let fc = cost_at(&cand)?;
            trace.push(fc);
            evals += 1;
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc, t));
                break;
            }
            // Quadratic interpolation through f(0), f'(0), f(t).
            let denom = 2.0 * (fc - f - slope * t);
            let t_quad = if denom > 0.0 { (-slope * t * t / denom).max(0.05 * t) } else { 0.5 * t };
            t = t_quad.min(0.5 * t);
            backtracks += 1;
            if evals >= max_evals {
                break;
            }
        }
        if backtracks == 0 {
            // First try accepted: expand while it keeps paying off.
            while evals < max_evals {
                let (_, fbest, tbest) = accepted.as_ref().unwrap();
                let t2 = tbest * 2.0;
                let cand = retract(x.matrix(), &(&dir * cr(t2)));
                let fc = cost_at(&cand)?;
                trace.push(fc);
                evals += 1;
                if fc < *fbest {
                    accepted = Some((cand, fc, t2));
                } else {
                    break;
                }
            }
        }
        let Some((xn, fn_, tn)) = accepted else { break };
        let xn = GrassmannPoint {
            x: regular_representative(xn.matrix())
                .ok_or(Error::SingularRepresentative { retries: 0 })?,
        };
        step0 = tn;
        let grad_new = project_tangent(xn.matrix(), &grad_f4(blocked, &xn, map)?);
        since_restart += 1;
        let beta = if since_restart % restart_every == 0 {
            0.0
        } else {
            let transported = project_tangent(xn.matrix(), &grad);
            let num = inner(&grad_new, &(&grad_new - &transported));
            let den = inner(&grad, &grad);
            (num / den).max(0.0)
        };
        let transported_dir = project_tangent(xn.matrix(), &dir);
        dir = -&grad_new + transported_dir * cr(beta);
        grad = grad_new;
        x = xn;
        f = fn_;
    }
    Ok((x, f, trace))
}

// ---------------------------------------------------------------------------
// The local optimisation entry point
// ---------------------------------------------------------------------------

/// Result of one local basis optimisation.
pub struct LocalBasisOpt {
    /// Accepted window rotation, or `None` when no candidate improved the
    /// cost by more than `delta_accept` (the identity is kept).
    pub u_loc: Option<CMat>,
    pub f_before: f64,
    pub f_after: f64,
    /// Cost per evaluation.
    pub trace: Vec<f64>,
}

/// Optimises the window rotation of a blocked two-site tensor.
///
/// The tensor must come from a mixed-canonical MPS so its singular values
/// are the Schmidt spectrum of the central cut. On success the returned
/// rotation strictly improves the chosen cost by more than
/// `delta_accept`; otherwise the identity is kept and `f_after` equals
/// `f_before`. Optimiser failures also fall back to the identity.
pub fn optimize_local_basis<R: Rng + ?Sized>(
    blocked: &BlockedTensor,
    config: &LocalOptConfig,
    rng: &mut R,
) -> Result<LocalBasisOpt> {
    config.validate()?;
    let p = blocked.p;
    let map = WindowMap::from_restriction(config.restriction, p);
    let (a, b) = map.grassmann_shape();
    let w = map.window_modes();
    let id_gate = CMat::identity(blocked.fused_dim(), blocked.fused_dim());
    let f_before = cost_of_gate(blocked, &id_gate, config.cost);

    let outcome: Result<(GrassmannPoint, f64, Vec<f64>)> = match config.method {
        OptMethod::NelderMead => {
            let dim = 2 * b * (a - b);
            let nm = NelderMead { dim, radius: 0.1 };
            let mut failure = false;
            let (params, value, trace) = nm.run(
                |theta| {
                    let pt = chart_to_point(theta, a, b);
                    match regular_representative(pt.matrix()) {
                        Some(rep) => {
                            let u = householder_raw(&rep).expect("regular representative");
                            cost_of_gate(blocked, &exterior_rep(&map.embed(&u)), config.cost)
                        }
                        None => {
                            failure = true;
                            f64::INFINITY
                        }
                    }
                },
                config.max_evals,
                3,
                rng,
            );
            let _ = failure;
            Ok((chart_to_point(&params, a, b), value, trace))
        }
        OptMethod::ConjugateGradient => {
            if config.cost != CostFunction::F4 {
                return Err(Error::Config(
                    "conjugate gradient needs the differentiable f4 cost".into(),
                ));
            }
            conjugate_gradient(blocked, &map, config.max_evals)
        }
    };
    let (point, f_after_raw, trace) = match outcome {
        Ok(t) => t,
        Err(_) => {
            // Optimiser failure never worsens the state.
            return Ok(LocalBasisOpt {
                u_loc: None,
                f_before,
                f_after: f_before,
                trace: vec![f_before],
            });
        }
    };
    if f_before - f_after_raw > config.delta_accept {
        let hh = householder_unitary(&point, config.retry_budget, rng)?;
        let u_loc = map.embed(&hh.u);
        debug_assert_eq!(u_loc.nrows(), w);
        Ok(LocalBasisOpt { u_loc: Some(u_loc), f_before, f_after: f_after_raw, trace })
    } else {
        Ok(LocalBasisOpt { u_loc: None, f_before, f_after: f_before, trace })
    }
}

/// [`crate::dmrg::ModeOptHook`] adaptor running [`optimize_local_basis`]
/// at every step with deterministic per-site seeding.
pub struct LocalBasisOptimizer {
    pub config: LocalOptConfig,
    pub seed: u64,
    counter: u64,
}

impl LocalBasisOptimizer {
    pub fn new(config: LocalOptConfig, seed: u64) -> Self {
        Self { config, seed, counter: 0 }
    }
}

impl crate::dmrg::ModeOptHook for LocalBasisOptimizer {
    fn optimize(
        &mut self,
        blocked: &BlockedTensor,
        site: usize,
    ) -> Result<Option<crate::dmrg::LocalRotation>> {
        use rand::SeedableRng;
        self.counter += 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            self.seed ^ (site as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.counter,
        );
        let out = optimize_local_basis(blocked, &self.config, &mut rng)?;
        Ok(out.u_loc.map(|u_loc| crate::dmrg::LocalRotation {
            u_loc,
            cost_before: out.f_before,
            cost_after: out.f_after,
            trace: out.trace,
        }))
    }
}
