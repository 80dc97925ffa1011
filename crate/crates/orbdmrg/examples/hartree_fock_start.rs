//! Initial-basis comparison: the same capped DMRG run started in the site
//! basis, the one-body eigenbasis, and the restricted Hartree-Fock basis.
//!
//! ```bash
//! cargo run --release -p orbdmrg --example hartree_fock_start
//! ```

use orbdmrg::driver::{run_ground_state, InitialBasis, RunConfig, Schedule};
use orbdmrg::operators::{build_hubbard, Boundary};
use orbdmrg::oracle::exact_ground_state;

fn main() -> orbdmrg::Result<()> {
    let n = 6;
    let (t0, u0, gamma) = (1.0, 4.0, 0.6);
    let op = build_hubbard(n, 2, t0, u0, gamma, Boundary::Open)?;
    let (e_exact, _) = exact_ground_state(&op, Some(&[3, 3]))?;
    println!("Hubbard chain n = {n}, p = 2, U0 = {u0}, gamma = {gamma}");
    println!("exact E0 = {e_exact:.10}\n");

    for (label, basis) in [
        ("site basis", InitialBasis::Identity),
        ("one-body eigenbasis", InitialBasis::TEigen),
        ("restricted Hartree-Fock", InitialBasis::HartreeFock),
    ] {
        let mut config = RunConfig::hubbard_defaults(n, 2, t0, u0, gamma);
        config.eps_trc = 1e-8;
        config.d_max = 24;
        config.schedule =
            Schedule { plain_sweeps: 4, opt_sweeps: 0, macro_iterations: 1, reorder: false };
        config.initial_basis = basis;
        config.seed = 7;
        let outcome = run_ground_state(&config, None)?;
        println!(
            "{label:>24}: E = {:.10}  error {:.3e}  max D {}",
            outcome.energy,
            (outcome.energy - e_exact).abs(),
            outcome.psi.max_bond_dim()
        );
    }
    Ok(())
}
