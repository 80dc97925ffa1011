//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one pass line. Oracles are independent of the paths they check
//! (exact diagonalisation, dense embeddings, finite differences,
//! brute-force enumeration).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orbdmrg::dmrg::{
    extend_left, extend_right, rotate_environment, ComplementaryOperatorSet, DmrgEngine,
    LocalRotation, ModeOptHook, Side, SweepDirection, SweepOptions,
};
use orbdmrg::driver::{
    build_model, run_ground_state, Checkpoint, InitialBasis, RunConfig, Schedule, UnitaryFile,
};
use orbdmrg::fock::gaussian_unitary;
use orbdmrg::linalg::{
    cr, max_diff, random_matrix, random_unitary, unitarity_deviation, DavidsonOptions,
};
use orbdmrg::modeopt::{
    cost_f1, cost_f4, grad_f4, householder_unitary, CostFunction, GrassmannPoint,
    LocalOptConfig, OptMethod, SymmetryRestriction, WindowMap,
};
use orbdmrg::mps::{
    BlockedTensor, BondBasis, Charge, SchmidtSpectrum, SymmetricMps, TruncationPolicy,
};
use orbdmrg::operators::{
    build_hubbard, embed_local, rotate_coefficients, Boundary, SecondQuantizedOperator,
};
use orbdmrg::oracle::{dense_embedding, exact_ground_state};
use orbdmrg::ordering::{fiedler_order, placement_cost, OrbitalPermutation};
use orbdmrg::{C64, CMat, CVec};

fn random_operator(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SecondQuantizedOperator {
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
    let mut adds = Vec::new();
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

fn dense_blocked(rng: &mut ChaCha8Rng, dl: usize, p: usize, dr: usize) -> BlockedTensor {
    let d2 = 1usize << (2 * p);
    let mut data: Vec<C64> = (0..dl * d2 * dr)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm: f64 = data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    data.iter_mut().for_each(|z| *z /= cr(norm));
    BlockedTensor {
        left: BondBasis::new(vec![(Charge::zero(), dl)]),
        right: BondBasis::new(vec![(Charge::zero(), dr)]),
        p,
        data,
    }
}

fn random_isometry(rng: &mut ChaCha8Rng, a: usize, b: usize) -> CMat {
    let m = random_matrix(rng, a, b);
    m.qr().q().columns(0, b).into_owned()
}

#[test]
fn criterion_01_ed_equivalence_long_range_hubbard() {
    let n = 6;
    let (t0, u0, gamma) = (1.0, 4.0, 1.0);
    let op = build_hubbard(n, 2, t0, u0, gamma, Boundary::Open).unwrap();
    let (e_exact, _) = exact_ground_state(&op, Some(&[3, 3])).unwrap();

    let mut config = RunConfig::hubbard_defaults(n, 2, t0, u0, gamma);
    config.eps_trc = 0.0;
    config.d_min = 1;
    config.d_max = 256;
    config.schedule =
        Schedule { plain_sweeps: 8, opt_sweeps: 0, macro_iterations: 1, reorder: false };
    config.eig_tol = 1e-11;
    config.eig_max_iter = 2000;
    config.init_bond = 2;
    config.seed = 11;
    let outcome = run_ground_state(&config, None).unwrap();
    let rel = (outcome.energy - e_exact).abs() / e_exact.abs();
    assert!(
        rel <= 1e-8,
        "relative deviation {rel:.3e}: DMRG {} vs ED {e_exact}",
        outcome.energy
    );
    println!(
        "[PASS] criterion 1: ED equivalence, |E_DMRG − E_ED|/|E_ED| = {rel:.3e} ≤ 1e-8 \
         (E = {e_exact:.10})"
    );
}

#[test]
fn criterion_02_energy_invariance_under_basis_change() {
    // Exact spectra under 50 random global rotations.
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let op = random_operator(&mut rng, 4, 1);
    let (e0, _) = exact_ground_state(&op, None).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u = random_unitary(&mut rng, 4);
        let rotated = rotate_coefficients(&op, &u).unwrap();
        let (e0r, _) = exact_ground_state(&rotated, None).unwrap();
        worst = worst.max((e0 - e0r).abs());
    }
    assert!(worst <= 1e-10, "worst deviation {worst:.3e}");

    // MPS energy across accepted local transformations with the operator
    // counter-rotated: the recorded drift must stay within 1e−9 + ε_t.
    let mut config = RunConfig::hubbard_defaults(4, 1, 1.0, 3.0, 0.7);
    config.eps_trc = 1e-10;
    config.d_max = 8;
    config.schedule =
        Schedule { plain_sweeps: 1, opt_sweeps: 3, macro_iterations: 1, reorder: false };
    config.initial_basis = InitialBasis::TEigen;
    config.seed = 3;
    let outcome = run_ground_state(&config, None).unwrap();
    let eps_budget: f64 = 1e-9 + config.eps_trc;
    assert!(
        outcome.provenance.max_rotation_drift <= eps_budget,
        "rotation drift {}",
        outcome.provenance.max_rotation_drift
    );
    println!(
        "[PASS] criterion 2: exact-spectrum deviation {worst:.3e} ≤ 1e-10 over 50 rotations; \
         accepted-rotation energy drift {:.3e} ≤ 1e-9 + eps",
        outcome.provenance.max_rotation_drift
    );
}

#[test]
fn criterion_03_gradient_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let h = 1e-5;
    let mut pairs = 0usize;
    let mut worst: f64 = 0.0;
    for p in [1usize, 2] {
        let map = WindowMap::Direct { p };
        let (a, b) = map.grassmann_shape();
        for d in [2usize, 8, 16] {
            for _ in 0..17 {
                let blocked = dense_blocked(&mut rng, d, p, d);
                let x = random_isometry(&mut rng, a, b);
                let point = GrassmannPoint::new(x.clone()).unwrap();
                let grad = grad_f4(&blocked, &point, &map).unwrap();
                let mut fd = CMat::zeros(a, b);
                let cost = |x: &CMat| -> f64 {
                    let point = GrassmannPoint::new(x.clone());
                    // Perturbed representatives are no longer isometric;
                    // evaluate the polynomial extension directly.
                    let _ = point;
                    raw_cost_f4(&blocked, x, &map)
                };
                for k in 0..a {
                    for l in 0..b {
                        let mut xp = x.clone();
                        xp[(k, l)] += cr(h);
                        let mut xm = x.clone();
                        xm[(k, l)] -= cr(h);
                        let dre = (cost(&xp) - cost(&xm)) / (2.0 * h);
                        let mut xp = x.clone();
                        xp[(k, l)] += C64::new(0.0, h);
                        let mut xm = x.clone();
                        xm[(k, l)] -= C64::new(0.0, h);
                        let dim = (cost(&xp) - cost(&xm)) / (2.0 * h);
                        fd[(k, l)] = C64::new(dre, dim);
                    }
                }
                let scale = fd.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-12);
                let rel = max_diff(&grad, &fd) / scale;
                worst = worst.max(rel);
                assert!(rel <= 1e-6, "p={p} D={d}: relative error {rel:.3e}");
                pairs += 1;
            }
        }
    }
    assert!(pairs >= 100, "only {pairs} (A, X) pairs were checked");
    println!(
        "[PASS] criterion 3: grad f4 vs central differences on {} (A, X) pairs, \
         worst relative error {worst:.3e} ≤ 1e-6",
        pairs
    );
}

/// The raw polynomial f4 of the window rotation built from a (possibly
/// non-isometric) representative — the quantity grad_f4 differentiates.
fn raw_cost_f4(blocked: &BlockedTensor, x: &CMat, map: &WindowMap) -> f64 {
    let a = x.nrows();
    let b = x.ncols();
    let mut p_sel = CMat::zeros(a, b);
    for k in 0..b {
        p_sel[(k, k)] = cr(1.0);
    }
    let y = CMat::identity(b, b) - x.adjoint() * &p_sel;
    let y_inv = y.try_inverse().expect("regular representative");
    let u = CMat::identity(a, a) - (x - &p_sel) * y_inv * (x.adjoint() - p_sel.adjoint());
    let gate = orbdmrg::fock::exterior_rep(&map.embed(&u));
    let d = blocked.site_dim();
    let d2 = blocked.fused_dim();
    let (dl, dr) = (blocked.left.dim(), blocked.right.dim());
    let mut m = CMat::zeros(dl * d, d * dr);
    for ai in 0..dl {
        for f in 0..d2 {
            let (alpha, beta) = (f / d, f % d);
            for bi in 0..dr {
                let mut z = cr(0.0);
                for fp in 0..d2 {
                    let w = gate[(f, fp)];
                    if w.norm() != 0.0 {
                        z += w * blocked.at(ai, fp, bi);
                    }
                }
                m[(ai * d + alpha, beta * dr + bi)] = z;
            }
        }
    }
    let g = m.adjoint() * &m;
    -g.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

#[test]
fn criterion_04_householder_parametrisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst_unitarity: f64 = 0.0;
    let mut worst_columns: f64 = 0.0;
    for trial in 0..1000 {
        let (a, b) = if trial % 2 == 0 { (2, 1) } else { (4, 2) };
        let x = random_isometry(&mut rng, a, b);
        let point = GrassmannPoint::new(x).unwrap();
        let hh = householder_unitary(&point, 8, &mut rng).unwrap();
        worst_unitarity = worst_unitarity.max(unitarity_deviation(&hh.u));
        let cols = hh.u.columns(0, b).into_owned();
        worst_columns = worst_columns.max(max_diff(&cols, &hh.representative));
    }
    assert!(worst_unitarity <= 1e-12, "unitarity {worst_unitarity:.3e}");
    assert!(worst_columns <= 1e-12, "columns {worst_columns:.3e}");

    // X = P maps to the identity exactly.
    let identity_point = GrassmannPoint::identity(4, 2);
    let hh = householder_unitary(&identity_point, 8, &mut rng).unwrap();
    assert_eq!(hh.u, CMat::identity(4, 4));

    // Constructed singular representative exercises the retry path.
    let mut x = CMat::zeros(4, 2);
    x[(0, 0)] = cr(1.0);
    x[(2, 1)] = cr(1.0);
    let singular = GrassmannPoint::new(x.clone()).unwrap();
    let hh = householder_unitary(&singular, 8, &mut rng).unwrap();
    assert!(unitarity_deviation(&hh.u) <= 1e-12);
    let cols = hh.u.columns(0, 2).into_owned();
    let span_dev = max_diff(&(&x * x.adjoint()), &(&cols * cols.adjoint()));
    assert!(span_dev <= 1e-10, "span deviation {span_dev:.3e}");
    println!(
        "[PASS] criterion 4: 1000 Householder maps — unitarity ≤ {worst_unitarity:.3e}, \
         first-columns ≤ {worst_columns:.3e}, X=P exact, singular retry exercised"
    );
}

#[test]
fn criterion_05_complementary_operator_rotation() {
    let n = 6;
    let p = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let coeffs = random_operator(&mut rng, n, p);
    let mut psi = SymmetricMps::random_in_sector(n, p, &[3], 3, &mut rng).unwrap();
    let np = n * p;
    let mut worst: f64 = 0.0;

    // Left environments at every cut.
    psi.canonicalize(n - 1).unwrap();
    let id = CMat::identity(np, np);
    let mut env = ComplementaryOperatorSet::boundary(Side::Left, 0, psi.bond(0).clone(), &id);
    for cut in 1..n {
        env = extend_left(&env, &psi, &coeffs).unwrap();
        let open: Vec<usize> = (cut * p..np).collect();
        let u_open = random_unitary(&mut rng, open.len());
        let mut u = CMat::identity(np, np);
        for (a, &ma) in open.iter().enumerate() {
            for (b, &mb) in open.iter().enumerate() {
                u[(ma, mb)] = u_open[(a, b)];
            }
        }
        u[(open[0], open[0])] = u_open[(0, 0)];
        let rotated = rotate_environment(&env, &u).unwrap();
        let coeffs_rot = rotate_coefficients(&coeffs, &u).unwrap();
        let mut rebuilt =
            ComplementaryOperatorSet::boundary(Side::Left, 0, psi.bond(0).clone(), &id);
        for _ in 0..cut {
            rebuilt = extend_left(&rebuilt, &psi, &coeffs_rot).unwrap();
        }
        worst = worst.max(env_diff(&rotated, &rebuilt));
    }

    // Right environments at every cut.
    psi.canonicalize(0).unwrap();
    let mut env = ComplementaryOperatorSet::boundary(Side::Right, n, psi.bond(n).clone(), &id);
    for cut in (1..n).rev() {
        env = extend_right(&env, &psi, &coeffs).unwrap();
        let open: Vec<usize> = (0..cut * p).collect();
        let u_open = random_unitary(&mut rng, open.len());
        let mut u = CMat::identity(np, np);
        for (a, &ma) in open.iter().enumerate() {
            for (b, &mb) in open.iter().enumerate() {
                u[(ma, mb)] = u_open[(a, b)];
            }
        }
        let rotated = rotate_environment(&env, &u).unwrap();
        let coeffs_rot = rotate_coefficients(&coeffs, &u).unwrap();
        let mut rebuilt =
            ComplementaryOperatorSet::boundary(Side::Right, n, psi.bond(n).clone(), &id);
        for _ in cut..n {
            rebuilt = extend_right(&rebuilt, &psi, &coeffs_rot).unwrap();
        }
        worst = worst.max(env_diff(&rotated, &rebuilt));
    }
    assert!(worst <= 1e-10, "max entry difference {worst:.3e}");
    println!(
        "[PASS] criterion 5: rotate_environment vs rebuild at every cut (both sides), \
         max entry difference {worst:.3e} ≤ 1e-10"
    );
}

fn env_diff(a: &ComplementaryOperatorSet, b: &ComplementaryOperatorSet) -> f64 {
    let dim = a.basis.dim();
    let zero = CMat::zeros(dim, dim);
    let mut dev = max_diff(&a.h_block, &b.h_block);
    for maps in [(&a.s_ops, &b.s_ops), (&a.r_ops, &b.r_ops), (&a.singles, &b.singles)] {
        let keys: Vec<usize> = maps.0.keys().chain(maps.1.keys()).copied().collect();
        for k in keys {
            dev = dev.max(max_diff(
                maps.0.get(&k).unwrap_or(&zero),
                maps.1.get(&k).unwrap_or(&zero),
            ));
        }
    }
    for maps in [(&a.p_ops, &b.p_ops), (&a.q_ops, &b.q_ops)] {
        let keys: Vec<(usize, usize)> = maps.0.keys().chain(maps.1.keys()).copied().collect();
        for k in keys {
            dev = dev.max(max_diff(
                maps.0.get(&k).unwrap_or(&zero),
                maps.1.get(&k).unwrap_or(&zero),
            ));
        }
    }
    dev
}

/// Hook wrapper checking the acceptance rule at every accepted step.
struct MonotonicityProbe {
    inner: orbdmrg::modeopt::LocalBasisOptimizer,
    policy: TruncationPolicy,
    accepted: usize,
    violations: usize,
}

impl ModeOptHook for MonotonicityProbe {
    fn optimize(
        &mut self,
        blocked: &BlockedTensor,
        site: usize,
    ) -> orbdmrg::Result<Option<LocalRotation>> {
        let out = self.inner.optimize(blocked, site)?;
        if let Some(rot) = &out {
            self.accepted += 1;
            // Strict cost decrease beyond the acceptance threshold.
            if rot.cost_before - rot.cost_after <= self.inner.config.delta_accept {
                self.violations += 1;
            }
            // Truncation error at equal kept rank must not grow.
            let spec_before = blocked.schmidt_spectrum();
            let mut rotated = blocked.clone();
            let g = gaussian_unitary(&rot.u_loc, blocked.p).unwrap();
            rotated.apply_gate(&g).unwrap();
            let spec_after = rotated.schmidt_spectrum();
            let keep = kept_rank(&spec_after, &self.policy);
            let tail = |s: &SchmidtSpectrum, k: usize| -> f64 {
                s.values.iter().skip(k).map(|v| v * v).sum()
            };
            if tail(&spec_after, keep) > tail(&spec_before, keep) + 1e-12 {
                self.violations += 1;
            }
        }
        Ok(out)
    }
}

fn kept_rank(spec: &SchmidtSpectrum, policy: &TruncationPolicy) -> usize {
    let total = spec.values.len();
    let mut tail = 0.0;
    let mut keep = total;
    for k in (1..=total).rev() {
        let add = spec.values[k - 1] * spec.values[k - 1];
        if k > 1 && tail + add <= policy.eps_trc {
            tail += add;
            keep = k - 1;
        } else {
            break;
        }
    }
    keep.max(policy.d_min.min(total)).min(policy.d_max).min(total)
}

#[test]
fn criterion_06_monotone_local_optimisation() {
    let n = 6;
    let coeffs = build_hubbard(n, 1, 1.0, 4.0, 0.8, Boundary::Open).unwrap();
    // Scramble so the optimiser has work to do.
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let u_s = random_unitary(&mut rng, n);
    let coeffs = rotate_coefficients(&coeffs, &u_s).unwrap();
    let psi = SymmetricMps::random_in_sector(n, 1, &[3], 2, &mut rng).unwrap();
    let mut engine = DmrgEngine::new(psi, coeffs).unwrap();
    let policy = TruncationPolicy::new(1e-8, 1, 12).unwrap();
    let opts = SweepOptions {
        policy,
        eig: DavidsonOptions { tol: 1e-10, max_iter: 600, max_subspace: 24 },
    };
    // Settle with two plain sweeps first.
    for _ in 0..2 {
        engine.sweep(SweepDirection::LeftToRight, &opts, None).unwrap();
        engine.sweep(SweepDirection::RightToLeft, &opts, None).unwrap();
    }
    let config = LocalOptConfig {
        cost: CostFunction::F1,
        method: OptMethod::NelderMead,
        restriction: SymmetryRestriction::None,
        max_evals: 200,
        delta_accept: 1e-10,
        retry_budget: 8,
    };
    let mut probe = MonotonicityProbe {
        inner: orbdmrg::modeopt::LocalBasisOptimizer::new(config.clone(), 61),
        policy,
        accepted: 0,
        violations: 0,
    };
    engine
        .sweep(SweepDirection::LeftToRight, &opts, Some(&mut probe))
        .unwrap();
    engine
        .sweep(SweepDirection::RightToLeft, &opts, Some(&mut probe))
        .unwrap();
    assert!(probe.accepted > 0, "the opt sweep accepted no rotations");
    assert_eq!(probe.violations, 0, "{} violations", probe.violations);
    println!(
        "[PASS] criterion 6: {} accepted steps, every one decreased f1 by > delta and \
         kept eps_t non-increasing at equal rank",
        probe.accepted
    );
}

#[test]
fn criterion_07_basis_optimisation_efficacy() {
    // A p = 1 chain needs more than 8 sites for a hard cap of 16 to bind
    // (the exact centre bond of n = 8 is 2^4 = 16); n = 10 keeps the cap
    // active so basis quality is what the energy error measures.
    let n = 10;
    let (t0, u0, gamma) = (1.0, 4.0, 0.15);
    let op = build_hubbard(n, 1, t0, u0, gamma, Boundary::Open).unwrap();
    let (e_exact, _) = exact_ground_state(&op, Some(&[5])).unwrap();

    let schedule = Schedule { plain_sweeps: 2, opt_sweeps: 8, macro_iterations: 10, reorder: true };
    let base_config = |initial: InitialBasis| -> RunConfig {
        let mut config = RunConfig::hubbard_defaults(n, 1, t0, u0, gamma);
        // Pure hard-cap regime: the scrambled basis discards real weight
        // at every cut while the weakly entangled site basis barely
        // truncates at the same cap.
        config.eps_trc = 0.0;
        config.d_min = 1;
        config.d_max = 16;
        config.schedule = schedule;
        config.initial_basis = initial;
        config.opt = LocalOptConfig {
            cost: CostFunction::F1,
            method: OptMethod::NelderMead,
            restriction: SymmetryRestriction::None,
            max_evals: 160,
            delta_accept: 1e-10,
            retry_budget: 8,
        };
        config.eig_tol = 1e-10;
        config.eig_max_iter = 800;
        config.seed = 77;
        config
    };

    // Baseline: the same pipeline in the (weakly entangled) site basis.
    let baseline = run_ground_state(&base_config(InitialBasis::Identity), None).unwrap();
    let err_base = (baseline.energy - e_exact).abs();

    // Scramble the coefficients by a random global unitary.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u_scramble = random_unitary(&mut rng, n);
    let dir = std::env::temp_dir().join(format!("orbdmrg-accept7-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let u_path = dir.join("scramble.json");
    UnitaryFile::write(&u_path, &u_scramble).unwrap();
    let scrambled = run_ground_state(&base_config(InitialBasis::File(u_path)), None).unwrap();

    // Per-macro-iteration energy errors (last sweep of each iteration).
    let sweeps_per_macro = schedule.plain_sweeps + schedule.opt_sweeps;
    let series = &scrambled.provenance.energy_series;
    assert_eq!(series.len(), sweeps_per_macro * schedule.macro_iterations);
    let errors: Vec<f64> = (0..schedule.macro_iterations)
        .map(|k| (series[(k + 1) * sweeps_per_macro - 1] - e_exact).abs())
        .collect();
    // (a) strictly decreasing until the run settles inside the target
    // accuracy band of (b); converged macro-iterations repeat bitwise.
    let floor = (10.0 * 1e-10 * e_exact.abs()).max(10.0 * err_base);
    for w in errors.windows(2) {
        assert!(
            w[1] < w[0] || w[1] <= floor,
            "macro errors failed to decrease: {errors:?} (floor {floor:.3e})"
        );
    }
    assert!(
        errors[schedule.macro_iterations - 1] < errors[0],
        "no overall improvement: {errors:?}"
    );
    // (b) final error within 10× of the unscrambled baseline.
    let err_final = *errors.last().unwrap();
    assert!(
        err_final <= 10.0 * err_base.max(1e-12),
        "final {err_final:.3e} vs baseline {err_base:.3e}"
    );
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "[PASS] criterion 7: scrambled-basis error {:.3e} → {:.3e} over {} macro-iterations, \
         baseline {err_base:.3e} (≤ 10× satisfied)",
        errors[0],
        err_final,
        schedule.macro_iterations
    );
}

#[test]
fn criterion_08_cost_function_identities() {
    let one = SchmidtSpectrum { values: vec![1.0], charges: vec![Charge::zero()] };
    assert_eq!(cost_f1(&one), 1.0);
    let inv = 1.0 / 2f64.sqrt();
    let bell = SchmidtSpectrum { values: vec![inv, inv], charges: vec![Charge::zero(); 2] };
    assert!((cost_f1(&bell) - 2f64.sqrt()).abs() < 1e-15);
    assert!((cost_f4(&bell) + 0.5).abs() < 1e-15);

    // Coset invariance of both costs under on-site unitaries.
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut worst: f64 = 0.0;
    for p in [1usize, 2] {
        let blocked = dense_blocked(&mut rng, 3, p, 3);
        let mut base = blocked.clone();
        let id = CMat::identity(blocked.fused_dim(), blocked.fused_dim());
        base.apply_gate(&id).unwrap();
        let f1_0 = cost_f1(&base.schmidt_spectrum());
        let f4_0 = cost_f4(&base.schmidt_spectrum());
        for _ in 0..10 {
            let w1 = random_unitary(&mut rng, p);
            let w2 = random_unitary(&mut rng, p);
            let mut w = CMat::zeros(2 * p, 2 * p);
            for i in 0..p {
                for j in 0..p {
                    w[(i, j)] = w1[(i, j)];
                    w[(p + i, p + j)] = w2[(i, j)];
                }
            }
            let gate = orbdmrg::fock::exterior_rep(&w);
            let mut rotated = blocked.clone();
            rotated.apply_gate(&gate).ok();
            // Gates from on-site unitaries of mixed species may violate the
            // per-species charge check on the structured tensor; use the
            // raw spectrum path instead.
            let spec = {
                let mut t = blocked.clone();
                t.data = apply_gate_raw(&blocked, &gate);
                t.schmidt_spectrum()
            };
            worst = worst.max((cost_f1(&spec) - f1_0).abs());
            worst = worst.max((cost_f4(&spec) - f4_0).abs());
        }
    }
    assert!(worst <= 1e-10, "coset deviation {worst:.3e}");
    println!(
        "[PASS] criterion 8: f1/f4 reference values exact; coset invariance ≤ {worst:.3e}"
    );
}

fn apply_gate_raw(blocked: &BlockedTensor, gate: &CMat) -> Vec<C64> {
    let d2 = blocked.fused_dim();
    let (dl, dr) = (blocked.left.dim(), blocked.right.dim());
    let mut out = vec![cr(0.0); blocked.data.len()];
    for a in 0..dl {
        for f in 0..d2 {
            for fp in 0..d2 {
                let w = gate[(f, fp)];
                if w.norm() == 0.0 {
                    continue;
                }
                for b in 0..dr {
                    out[(a * d2 + f) * dr + b] += w * blocked.at(a, fp, b);
                }
            }
        }
    }
    out
}

#[test]
fn criterion_09_mutual_information() {
    // Product state: zero matrix.
    let psi = SymmetricMps::product_state(4, 1, &[1, 0, 1, 0]).unwrap();
    let mi = psi.mutual_information().unwrap();
    assert!(mi.iter().all(|&x| x.abs() < 1e-12));

    // Maximally entangled pair: I = 2 ln 2.
    let mut pair = SymmetricMps::product_state(2, 1, &[1, 0]).unwrap();
    let theta = std::f64::consts::FRAC_PI_4;
    let mut u = CMat::zeros(2, 2);
    u[(0, 0)] = cr(theta.cos());
    u[(0, 1)] = cr(-theta.sin());
    u[(1, 0)] = cr(theta.sin());
    u[(1, 1)] = cr(theta.cos());
    let g = gaussian_unitary(&u, 1).unwrap();
    pair.apply_two_site_gate(0, &g, &TruncationPolicy::exact()).unwrap();
    let mi_pair = pair.mutual_information().unwrap();
    assert!((mi_pair[(0, 1)] - 2.0 * 2f64.ln()).abs() < 1e-10);

    // Dense-RDM cross-check on a random n = 4 state.
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let psi = SymmetricMps::random_in_sector(4, 1, &[2], 3, &mut rng).unwrap();
    let mi = psi.mutual_information().unwrap();
    let v = dense_embedding(&psi).unwrap();
    let mut worst: f64 = 0.0;
    for q in 0..4 {
        for r in (q + 1)..4 {
            let expect = dense_mutual_information(&v, 4, 1, q, r);
            worst = worst.max((mi[(q, r)] - expect).abs());
        }
    }
    assert!(worst <= 1e-8, "dense RDM cross-check {worst:.3e}");

    // Two interleaved clusters become contiguous, against brute force.
    let n = 6;
    let mut pattern = DMatrix::<f64>::zeros(n, n);
    for group in [[0usize, 2, 4], [1usize, 3, 5]] {
        for &q in &group {
            for &r in &group {
                if q != r {
                    pattern[(q, r)] = 1.0;
                }
            }
        }
    }
    let perm = fiedler_order(&pattern).unwrap();
    let mut sites: Vec<usize> = (0..n).collect();
    let mut all = Vec::new();
    enumerate_permutations(&mut sites, 0, &mut all);
    let best = all
        .iter()
        .map(|c| placement_cost(&pattern, &OrbitalPermutation { perm: c.clone() }))
        .fold(f64::INFINITY, f64::min);
    let got = placement_cost(&pattern, &perm);
    assert!((got - best).abs() < 1e-9, "seriation cost {got} vs brute force {best}");
    println!(
        "[PASS] criterion 9: MI zero for products, 2ln2 for the entangled pair, dense-RDM \
         deviation {worst:.3e} ≤ 1e-8, seriation reaches the brute-force optimum"
    );
}

fn enumerate_permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        enumerate_permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

/// Mutual information of sites (q, r) straight from a dense state vector.
fn dense_mutual_information(v: &CVec, n: usize, p: usize, q: usize, r: usize) -> f64 {
    let d = 1usize << p;
    let dim = v.len();
    let site_of = |x: usize, m: usize| -> usize {
        let shift = (n - 1 - m) * p;
        (x >> shift) & (d - 1)
    };
    let strip = |x: usize, m: usize| -> usize {
        let shift = (n - 1 - m) * p;
        x & !(((d - 1)) << shift)
    };
    let entropy = |rho: &CMat| -> f64 {
        let (vals, _) = orbdmrg::linalg::eigh(rho);
        vals.iter().map(|&w| if w > 1e-15 { -w * w.ln() } else { 0.0 }).sum()
    };
    let rdm1 = |m: usize| -> CMat {
        let mut rho = CMat::zeros(d, d);
        for x in 0..dim {
            for xp in 0..dim {
                if strip(x, m) == strip(xp, m) {
                    rho[(site_of(x, m), site_of(xp, m))] += v[x] * v[xp].conj();
                }
            }
        }
        rho
    };
    let mut rho2 = CMat::zeros(d * d, d * d);
    for x in 0..dim {
        for xp in 0..dim {
            if strip(strip(x, q), r) == strip(strip(xp, q), r) {
                let row = site_of(x, q) * d + site_of(x, r);
                let col = site_of(xp, q) * d + site_of(xp, r);
                rho2[(row, col)] += v[x] * v[xp].conj();
            }
        }
    }
    entropy(&rdm1(q)) + entropy(&rdm1(r)) - entropy(&rho2)
}

#[test]
fn criterion_10_determinism_and_restart() {
    let dir_a = std::env::temp_dir().join(format!("orbdmrg-accept10a-{}", std::process::id()));
    let dir_b = std::env::temp_dir().join(format!("orbdmrg-accept10b-{}", std::process::id()));
    let dir_c = std::env::temp_dir().join(format!("orbdmrg-accept10c-{}", std::process::id()));
    for d in [&dir_a, &dir_b, &dir_c] {
        std::fs::remove_dir_all(d).ok();
    }

    let make = |out: &std::path::Path, plain: usize, opt: usize| -> RunConfig {
        let mut config = RunConfig::hubbard_defaults(5, 1, 1.0, 2.5, 0.8);
        config.eps_trc = 1e-9;
        config.d_max = 8;
        config.schedule =
            Schedule { plain_sweeps: plain, opt_sweeps: opt, macro_iterations: 1, reorder: false };
        config.seed = 21;
        config.out_dir = Some(out.to_path_buf());
        config
    };

    // Identical seeds give byte-identical reports.
    let a = run_ground_state(&make(&dir_a, 2, 2), None).unwrap();
    let b = run_ground_state(&make(&dir_b, 2, 2), None).unwrap();
    let report_a = std::fs::read(dir_a.join("report.jsonl")).unwrap();
    let report_b = std::fs::read(dir_b.join("report.jsonl")).unwrap();
    assert_eq!(report_a, report_b, "reports differ between identical runs");
    assert_eq!(a.energy.to_bits(), b.energy.to_bits());

    // Kill after two sweeps and restart from the checkpoint.
    let partial = make(&dir_c, 2, 0);
    run_ground_state(&partial, None).unwrap();
    let cp = Checkpoint::read(&dir_c.join("checkpoint.json")).unwrap();
    assert_eq!(cp.sweep_index, 2);
    let full = make(&dir_c, 2, 2);
    let resumed = run_ground_state(&full, Some(cp)).unwrap();
    let drift = (resumed.energy - a.energy).abs();
    assert!(drift <= 1e-9, "restart drift {drift:.3e}");
    for d in [&dir_a, &dir_b, &dir_c] {
        std::fs::remove_dir_all(d).ok();
    }
    println!(
        "[PASS] criterion 10: byte-identical reports for equal seeds; checkpoint-restart \
         energy drift {drift:.3e} ≤ 1e-9"
    );
}

#[test]
fn provenance_replay_reproduces_coefficients() {
    // Supporting invariant used across criteria: replaying the accumulated
    // unitary on the initial coefficients reproduces the final ones.
    let mut config = RunConfig::hubbard_defaults(4, 1, 1.0, 2.0, 0.9);
    config.schedule =
        Schedule { plain_sweeps: 1, opt_sweeps: 2, macro_iterations: 2, reorder: true };
    config.d_max = 8;
    config.initial_basis = InitialBasis::TEigen;
    let outcome = run_ground_state(&config, None).unwrap();
    let (initial, _) = build_model(&config.model).unwrap();
    let dev = outcome.verify_provenance(&initial).unwrap();
    assert!(dev <= 1e-10, "replay deviation {dev:.3e}");
    println!("[PASS] provenance replay deviation {dev:.3e} ≤ 1e-10");
}

#[test]
fn identity_forced_hook_matches_plain_run() {
    // A hook that never accepts reproduces the plain-DMRG trajectory
    // byte for byte.
    struct NeverAccept;
    impl ModeOptHook for NeverAccept {
        fn optimize(
            &mut self,
            _blocked: &BlockedTensor,
            _site: usize,
        ) -> orbdmrg::Result<Option<LocalRotation>> {
            Ok(None)
        }
    }
    let coeffs = build_hubbard(5, 1, 1.0, 2.0, 1.0, Boundary::Open).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let psi = SymmetricMps::random_in_sector(5, 1, &[2], 3, &mut rng).unwrap();
    let opts = SweepOptions {
        policy: TruncationPolicy::new(1e-9, 1, 8).unwrap(),
        eig: DavidsonOptions::default(),
    };
    let mut plain = DmrgEngine::new(psi.clone(), coeffs.clone()).unwrap();
    let mut hooked = DmrgEngine::new(psi, coeffs).unwrap();
    let mut hook = NeverAccept;
    for dir in [SweepDirection::LeftToRight, SweepDirection::RightToLeft] {
        let a = plain.sweep(dir, &opts, None).unwrap();
        let b = hooked.sweep(dir, &opts, Some(&mut hook)).unwrap();
        for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
            assert_eq!(sa.energy.to_bits(), sb.energy.to_bits());
            assert_eq!(sa.bond_dim, sb.bond_dim);
            assert_eq!(sa.eps_t.to_bits(), sb.eps_t.to_bits());
        }
    }
    println!("[PASS] identity-forced hook is bitwise equal to the plain sweep");
}

#[test]
fn embed_local_endpoints() {
    // Spot checks of the embedding interface used by the drivers.
    let mut rng = ChaCha8Rng::seed_from_u64(1100);
    let u_loc = random_unitary(&mut rng, 2);
    let u = embed_local(&u_loc, 0, 2, 1).unwrap();
    assert!(max_diff(&u, &u_loc) < 1e-15);
    assert!(embed_local(&u_loc, 4, 6, 1).is_ok());
    assert!(embed_local(&u_loc, 5, 6, 1).is_err());
    println!("[PASS] embed_local endpoint checks");
}
