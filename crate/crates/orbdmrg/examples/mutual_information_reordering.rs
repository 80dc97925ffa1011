//! Mutual-information patterns and spectral reordering: build a state
//! whose correlations interleave two clusters, read off `I(q, r)`, and let
//! the Fiedler seriation make the clusters contiguous.
//!
//! ```bash
//! cargo run --release -p orbdmrg --example mutual_information_reordering
//! ```

use orbdmrg::fock::ModeSpace;
use orbdmrg::mps::{SymmetricMps, TruncationPolicy};
use orbdmrg::operators::{build_hubbard, rotate_coefficients_local, Boundary};
use orbdmrg::ordering::{apply_permutation, fiedler_order, placement_cost, OrbitalPermutation};
use orbdmrg::{fock, Result};

fn main() -> Result<()> {
    // Entangle site pairs (0,2), (1,3), (4,... ) by swapping neighbours of
    // dimerised pairs: start from pairs (0,1), (2,3), (4,5) and interleave.
    let n = 6;
    let mut psi = SymmetricMps::product_state(n, 1, &[1, 0, 1, 0, 1, 0])?;
    let theta = std::f64::consts::FRAC_PI_4;
    let mut rot = orbdmrg::CMat::zeros(2, 2);
    rot[(0, 0)] = orbdmrg::linalg::cr(theta.cos());
    rot[(0, 1)] = orbdmrg::linalg::cr(-theta.sin());
    rot[(1, 0)] = orbdmrg::linalg::cr(theta.sin());
    rot[(1, 1)] = orbdmrg::linalg::cr(theta.cos());
    let g = fock::gaussian_unitary(&rot, 1)?;
    let exact = TruncationPolicy::exact();
    for m in [0, 2, 4] {
        psi.apply_two_site_gate(m, &g, &exact)?;
    }
    // Interleave: swap (1,2) and (3,4) so partners sit two sites apart.
    let g_swap = fock::gaussian_unitary(&fock::swap_rotation(1), 1)?;
    psi.apply_two_site_gate(1, &g_swap, &exact)?;
    psi.apply_two_site_gate(3, &g_swap, &exact)?;

    let mi = psi.mutual_information()?;
    println!("mutual information (interleaved pairs):");
    print_matrix(&mi);

    let perm = fiedler_order(&mi)?;
    println!(
        "seriated order: {:?} (placement cost {:.4} vs identity {:.4})",
        perm.perm,
        placement_cost(&mi, &perm),
        placement_cost(&mi, &OrbitalPermutation::identity(n)),
    );

    // Apply it with fermionic swap gates and look again.
    let mut coeffs = build_hubbard(n, 1, 1.0, 2.0, 1.0, Boundary::Open)?;
    let mut mode_space = ModeSpace::new(n, 1)?;
    apply_permutation(&mut psi, &mut coeffs, &mut mode_space, &perm, &exact)?;
    let mi2 = psi.mutual_information()?;
    println!("after reordering:");
    print_matrix(&mi2);
    println!("mode order now: {:?}", mode_space.mode_order);
    let _ = rotate_coefficients_local;
    Ok(())
}

fn print_matrix(m: &nalgebra::DMatrix<f64>) {
    for q in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|r| format!("{:6.3}", m[(q, r)])).collect();
        println!("  {}", row.join(" "));
    }
}
