//! Simulation library for anomalous Floquet lattices of coupled microrings:
//! quasienergy bands and edge states, Floquet defect-mode resonances,
//! frequency-domain transport, spontaneous four-wave-mixing pair rates,
//! detection statistics and resonance fitting.

pub mod constants;
pub mod detection;
pub mod error;
pub mod floquet;
pub mod lattice;
pub mod linalg;
pub mod numerics;
pub mod optim;
pub mod resonance;
pub mod rng;
pub mod sfwm;
pub mod transport;

pub use error::{Error, Result};
pub use floquet::{FloquetSpectrum, Gap, GapReport, StateLabel};
pub use lattice::{
    build_bulk_step, build_finite_geometry, build_ribbon_step, build_supercell_step, Dispersion, FiniteGeometry,
    LatticeParams, PhaseDefect, PortConfig, PortSpec, RingSite, StepHamiltonian, Sublattice,
};
