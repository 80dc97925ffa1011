//! Ground-state solver for second-quantised fermionic Hamiltonians that
//! intertwines two-site DMRG sweeps with local fermionic Gaussian mode
//! transformations, iteratively optimising the single-particle basis to
//! reduce the entanglement (and hence the bond dimension) required for a
//! given accuracy.
//!
//! A standard two-site QC-DMRG step produces a blocked two-site tensor.
//! Before that tensor is split back into MPS form with truncation, a local
//! unitary acting on the 2p modes of the two active sites is optimised so
//! that the Schmidt spectrum across the central cut decays faster. If a
//! transformation improves the chosen cost function it is applied to the
//! state, the Hamiltonian coefficients are counter-rotated, and cached
//! renormalised operators are updated lazily, so expectation values are
//! left invariant while the working single-particle basis drifts towards
//! one in which the state is weakly entangled.
//!
//! The crate is organised around the stages of that loop:
//!
//! - [`fock`] — fermionic mode algebra on small occupation-number spaces:
//!   Jordan-Wigner site operators and the Gaussian unitary `g(U)` induced
//!   by a single-particle rotation, together with its minor derivatives.
//! - [`operators`] — second-quantised coefficient tensors `(t, v)`, their
//!   rotation under mode transformations, FCIDUMP ingestion and model
//!   builders.
//! - [`mps`] — `U(1)^p` block-sparse matrix product states: canonical
//!   forms, two-site blocking/decomposition with dynamic truncation,
//!   Schmidt spectra, entropies and mutual information.
//! - [`dmrg`] — the two-site sweep engine built on complementary
//!   renormalised operators for long-range Hamiltonians, including their
//!   rotation laws under accumulated basis changes.
//! - [`modeopt`] — the local basis optimiser: Grassmann parametrisation by
//!   generalised Householder reflections, the `f1`/`f4` cost functions,
//!   the analytic `f4` gradient, Nelder-Mead and conjugate-gradient
//!   drivers.
//! - [`ordering`] — mutual-information driven global reordering realised
//!   as fermionic swap gates.
//! - [`oracle`] — desk-scale ground truth: exact diagonalisation, a
//!   restricted Hartree-Fock reference, and dense embeddings of MPS.
//! - [`driver`] — the end-to-end schedule (plain sweeps, basis-optimising
//!   sweeps, reorders), configuration, reporting and checkpoints.
//!
//! Runnable demonstrations of each capability live in `examples/`; the
//! `orbdmrg` binary exposes the same machinery as a small command-line
//! tool (`run`, `ed`, `mi`, `rotate`, `hf`).

pub mod dmrg;
pub mod driver;
mod error;
pub mod fock;
pub mod linalg;
pub mod modeopt;
pub mod mps;
pub mod operators;
pub mod oracle;
pub mod ordering;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex vector.
pub type CVec = nalgebra::DVector<C64>;
