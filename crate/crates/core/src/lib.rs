//! Numerical toolkit for time-resolved single-photon measurement through
//! two-photon interference with short reference pulses.
//!
//! Two indistinguishable photons meeting at a 50:50 beam splitter bunch;
//! cross-port coincidences therefore measure the mismatch between the signal
//! photon and a reference photon of known shape. With detectors that are far
//! slower than the pulses, the time-integrated coincidence probability
//! reduces to `1/2 - 1/2 |<ref|psi>|^2` -- a projective measurement whose
//! time resolution is set entirely by the reference pulse. This crate builds
//! that measurement theory on a discrete time/frequency lattice and layers
//! the applications on top:
//!
//! * [`grid`] -- the lattice, state and operator representations, and the
//!   unitary transform between time and frequency.
//! * [`reference`] -- reference pulses, delays, the spectral filter operator
//!   that encodes the measurement bandwidth, two-time superposition
//!   references, and the sub-period phase diagnostic.
//! * [`measurement`] -- bunching operators, delay scans, and an independent
//!   brute-force coincidence oracle.
//! * [`tomography`] -- reconstruction of the temporal density matrix from
//!   scanned rates: diagonals from delay scans, coherences from four-phase
//!   scans, with optional band-limited deconvolution and a physicality
//!   projection.
//! * [`twophoton`] -- bipartite states, four-fold coincidences, the
//!   two-photon coherence between pairs of detection times, the separability
//!   bound witness, and the 3/8-crossing timescale of energy-time
//!   entanglement.
//! * [`counts`] -- reproducible binomial shot-noise simulation keyed by
//!   setting, so scans can run in any order or in parallel.
//!
//! Everything is immutable after construction and all operations are pure
//! functions, so concurrent evaluation over settings is safe by
//! construction.

pub mod counts;
pub mod error;
pub mod grid;
mod math;
pub mod measurement;
pub mod reference;
pub mod tomography;
pub mod twophoton;
