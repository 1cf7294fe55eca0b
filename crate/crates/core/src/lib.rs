//! Variational Monte Carlo with string-bond states.
//!
//! A string-bond state assigns each configuration `n` of a lattice the
//! amplitude `<n|psi> = prod_s tr[prod_{x in s} M^{s,x}_{n_x}]`, a product of
//! matrix-product traces over ordered site subsets ("strings"). Amplitude
//! ratios between configurations differing on a few sites are cheap, which
//! makes Metropolis sampling of `|<n|psi>|^2` and of local energies cheap, and
//! the amplitude is linear in every individual site tensor, which gives a
//! sampled energy gradient for all tensors at once.
//!
//! Modules, bottom-up:
//! - [`lattice`], [`pattern`]: geometry and string layouts.
//! - [`state`], [`cache`]: the wavefunction and per-chain product caches.
//! - [`hamiltonian`]: local operators and the benchmark models.
//! - [`sampler`]: Metropolis chains, binning error bars, reweighting.
//! - [`optimizer`]: sampled gradient descent and the local eigenproblem update.
//! - [`exact`]: brute-force references for small systems.
//! - [`io`], [`commands`]: config files, checkpoints, CSV output, run drivers.

pub mod cache;
pub mod commands;
pub mod error;
pub mod exact;
pub mod hamiltonian;
pub mod io;
pub mod lattice;
pub mod mat;
pub mod optimizer;
pub mod par;
pub mod pattern;
pub mod sampler;
pub mod state;

pub use cache::AmplitudeCache;
pub use error::{Result, SbsError};
pub use hamiltonian::{LocalHamiltonian, LocalOperator, LocalTerm, Observable};
pub use lattice::{Boundary, Lattice};
pub use mat::{LogValue, C64};
pub use par::Execution;
pub use pattern::{StringPattern, Topology};
pub use state::{ParamMode, Slot, StringBondState};

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
