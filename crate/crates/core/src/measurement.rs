//! Bunching measurement operators, coincidence probabilities, delay scans,
//! and the independent brute-force coincidence oracle.
//!
//! The central reduction: time-integrated cross-port coincidences after a
//! 50:50 beam splitter measure `1/2 - 1/2 |<ref|psi>|^2`, a projection on the
//! reference state. Every operator here is of that form, with the reference
//! being a delayed pulse or a two-time superposition.

use num_complex::Complex64 as C64;

use crate::error::{HomtomoError, Result};
use crate::grid::{DensityMatrix, MeasurementOperator, TemporalState};
use crate::math::outer;
use crate::reference::FilterOperator;

/// Times and relative phase of a two-time coherence measurement.
///
/// Canonical ordering `t1 < t2` is enforced at construction; swapping the
/// times maps `phi -> -phi`, so the constructor normalizes to the canonical
/// form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceSetting {
    t1: f64,
    t2: f64,
    phi: f64,
}

impl CoherenceSetting {
    pub fn new(t1: f64, t2: f64, phi: f64) -> Result<Self> {
        if t1 == t2 {
            return Err(HomtomoError::InvalidSetting(format!(
                "coherence setting needs two distinct times, got t1 = t2 = {t1:.6e}"
            )));
        }
        if t1 < t2 {
            Ok(Self { t1, t2, phi })
        } else {
            Ok(Self { t1: t2, t2: t1, phi: -phi })
        }
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Bunching operator for an arbitrary reference state:
/// offset `1/2`, kernel `-1/2 |ref><ref|`.
pub fn bunching_operator(reference: &TemporalState) -> Result<MeasurementOperator> {
    if !reference.is_normalized() {
        return Err(HomtomoError::NotNormalized { norm_sq: reference.norm_sq() });
    }
    let kernel = outer(reference.amp(), reference.amp()) * C64::from(-0.5);
    MeasurementOperator::new(*reference.grid(), kernel, 0.5)
}

/// Measurement operator for a reference delayed to peak time `t`:
/// `1/2 - 1/2 F|t><t|F^H`.
pub fn delayed_operator(filter: &FilterOperator, t: f64) -> Result<MeasurementOperator> {
    bunching_operator(&filter.reference_state(t)?)
}

/// Measurement operator for a two-time superposition reference:
/// offset `1/2`, kernel
/// `-1/4 F (|t1><t1| + e^{-i phi}|t1><t2| + e^{i phi}|t2><t1| + |t2><t2|) F^H`.
///
/// The kernel factors as `-1/4 w w^H` with `w = F|t1> + e^{i phi} F|t2>`, so
/// it is built that way (exactly Hermitian by construction). Note that for
/// overlapping pulse copies (`|t2 - t1|` below the pulse width) this operator
/// is not a scaled projector and its expectation may leave `[0, 1/2]`; the
/// well-separated regime is the meaningful one.
pub fn coherence_operator(
    filter: &FilterOperator,
    setting: &CoherenceSetting,
) -> Result<MeasurementOperator> {
    let u1 = filter.reference_state(setting.t1())?;
    let u2 = filter.reference_state(setting.t2())?;
    let w = u1.amp() + u2.amp() * C64::from_polar(1.0, setting.phi());
    let kernel = outer(&w, &w) * C64::from(-0.25);
    MeasurementOperator::new(*filter.grid(), kernel, 0.5)
}

/// Coincidence probability as the reference delay is scanned. Output order
/// equals input order.
pub fn hom_scan(
    rho: &DensityMatrix,
    filter: &FilterOperator,
    delays: &[f64],
) -> Result<Vec<(f64, f64)>> {
    delays
        .iter()
        .map(|&d| {
            let p = delayed_operator(filter, d)?.expectation(rho)?;
            Ok((d, p))
        })
        .collect()
}

/// Independent coincidence oracle: the double time quadrature of the
/// projective joint-detection rate,
/// `1/4 * integral |ref(t1) sig(t2) - ref(t2) sig(t1)|^2 dt1 dt2`,
/// for a pure product two-photon input (reference in port 1, signal in
/// port 2). Must agree with `bunching_operator(ref)` on `|sig><sig|`.
pub fn g2_bruteforce(signal: &TemporalState, reference: &TemporalState) -> Result<f64> {
    signal.grid().check_same(reference.grid(), "signal and reference")?;
    let n = signal.grid().n_points();
    let dt = signal.grid().dt();
    let a = reference.amp();
    let b = signal.amp();
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..n {
            acc += (a[j] * b[k] - a[k] * b[j]).norm_sqr();
        }
    }
    Ok(0.25 * acc * dt * dt)
}
