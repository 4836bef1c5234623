//! Reference-pulse construction, time delays, the bandwidth filter operator,
//! two-time superposition references, and the sub-period phase fidelity
//! diagnostic.
//!
//! The filter operator `F` is diagonal in the frequency basis with eigenvalues
//! `f(w_k) = sqrt(2*pi) * <w_k|pulse at 0>`; it turns an ideal time eigenstate
//! into the physical reference pulse. All bandwidth limits of the measurement
//! are encoded in it.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use std::f64::consts::TAU;

use crate::error::{HomtomoError, Result};
use crate::grid::{to_frequency, to_time, SpectralState, TemporalState, TimeGrid};
use crate::math::erfc;

/// Fraction of the norm allowed to leak outside the grid window (or wrap
/// around it) before a construction is rejected.
pub const LEAKAGE_LIMIT: f64 = 1e-3;

/// Built-in reference pulse shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShape {
    /// Envelope proportional to `exp(-(t - peak)^2 / (4 tau^2))`; `tau` is the
    /// rms width of the intensity profile.
    Gaussian { tau: f64 },
    /// Constant spectral magnitude over `[omega0 - dw/2, omega0 + dw/2)` and
    /// zero outside. A frequency bin belongs to the band iff its center does;
    /// the lower edge is inclusive so that a band of exactly `m` bin spacings
    /// holds exactly `m` bins.
    RectSpectrum { delta_omega: f64 },
}

/// Declarative description of a reference pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSpec {
    pub shape: PulseShape,
    pub peak_time: f64,
    /// Global phase applied to the generated amplitude; relevant only when
    /// the pulse is combined into superpositions.
    pub phase: f64,
}

impl ReferenceSpec {
    pub fn gaussian(tau: f64, peak_time: f64) -> Self {
        Self { shape: PulseShape::Gaussian { tau }, peak_time, phase: 0.0 }
    }

    pub fn rect_spectrum(delta_omega: f64, peak_time: f64) -> Self {
        Self { shape: PulseShape::RectSpectrum { delta_omega }, peak_time, phase: 0.0 }
    }
}

/// Generate a normalized reference pulse on the grid.
///
/// Gaussian pulses are sampled in time and guarded against norm leaking
/// outside the window. Rectangular-spectrum pulses are built directly in the
/// frequency domain, which represents them exactly (band-limited and periodic
/// on the grid); their sinc tails wrap the window by construction, so the
/// guard for them is that the band fits inside the sampled bandwidth.
pub fn make_pulse(grid: &TimeGrid, spec: &ReferenceSpec) -> Result<TemporalState> {
    let state = match spec.shape {
        PulseShape::Gaussian { tau } => {
            if tau <= 0.0 || !tau.is_finite() {
                return Err(HomtomoError::InvalidPulse(format!("tau = {tau}")));
            }
            gaussian_leakage_check(grid, tau, spec.peak_time)?;
            let amp = DVector::from_fn(grid.n_points(), |j, _| {
                let t = grid.time(j);
                C64::from((-(t - spec.peak_time).powi(2) / (4.0 * tau * tau)).exp())
            });
            TemporalState::new_unnormalized(*grid, amp)?.normalize()?
        }
        PulseShape::RectSpectrum { delta_omega } => {
            if delta_omega <= 0.0 || !delta_omega.is_finite() {
                return Err(HomtomoError::InvalidPulse(format!(
                    "delta_omega = {delta_omega}"
                )));
            }
            if delta_omega > TAU / grid.dt() {
                return Err(HomtomoError::InvalidPulse(format!(
                    "band {delta_omega:.3e} exceeds sampled bandwidth {:.3e}",
                    TAU / grid.dt()
                )));
            }
            let n = grid.n_points();
            let in_band: Vec<bool> = (0..n)
                .map(|k| {
                    let nu = grid.freq_offset(k);
                    nu >= -0.5 * delta_omega && nu < 0.5 * delta_omega
                })
                .collect();
            let m = in_band.iter().filter(|b| **b).count();
            if m == 0 {
                return Err(HomtomoError::InvalidPulse(format!(
                    "band {delta_omega:.3e} contains no frequency bin (spacing {:.3e})",
                    grid.freq_spacing()
                )));
            }
            let mag = 1.0 / (m as f64 * grid.freq_spacing()).sqrt();
            let amp = DVector::from_fn(n, |k, _| {
                if in_band[k] {
                    // peak shift is a physical time shift: carrier included
                    C64::from_polar(mag, grid.freq(k) * spec.peak_time)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            to_time(&SpectralState::new_unnormalized(*grid, amp)?).normalize()?
        }
    };
    if spec.phase == 0.0 {
        Ok(state)
    } else {
        let rot = C64::from_polar(1.0, spec.phase);
        TemporalState::new(*state.grid(), state.amp() * rot)
    }
}

fn gaussian_leakage_check(grid: &TimeGrid, tau: f64, peak: f64) -> Result<()> {
    // out-of-window mass of the intensity profile (a Gaussian of rms tau)
    let sigma = tau * 2.0_f64.sqrt();
    let right = 0.5 * erfc((grid.t_end() - peak) / sigma);
    let left = 0.5 * erfc((peak - grid.t_start()) / sigma);
    let leakage = left + right;
    if leakage > LEAKAGE_LIMIT {
        return Err(HomtomoError::NormLeakage { leakage, limit: LEAKAGE_LIMIT });
    }
    Ok(())
}

/// Delay a state by `delay` seconds (positive delays move it later).
///
/// Implemented in the frequency domain: the envelope spectrum is multiplied by
/// `exp(i*nu_k*delay)` and the carrier phase `exp(i*omega0*delay)` is kept, so
/// the operation is the physical shift `psi(t) -> psi(t - delay)` and is exact
/// for delays that are not multiples of the sample spacing. The shift is
/// cyclic on the grid; the guard rejects shifts that would wrap more than
/// [`LEAKAGE_LIMIT`] of the norm around the window edge.
pub fn time_shift(state: &TemporalState, delay: f64) -> Result<TemporalState> {
    if delay == 0.0 {
        return Ok(state.clone());
    }
    let grid = *state.grid();
    let window = grid.n_points() as f64 * grid.dt();
    if delay.abs() >= window {
        return Err(HomtomoError::InvalidPulse(format!(
            "delay {delay:.3e} exceeds grid window {window:.3e}"
        )));
    }
    wrap_leakage_check(state, delay)?;
    let spec = to_frequency(state);
    let amp = DVector::from_fn(grid.n_points(), |k, _| {
        spec.amp()[k] * C64::from_polar(1.0, grid.freq_offset(k) * delay)
    });
    let shifted = to_time(&SpectralState::new_unnormalized(grid, amp)?);
    let carrier = C64::from_polar(1.0, grid.omega0() * delay);
    let amp = shifted.amp() * carrier;
    if state.is_normalized() {
        TemporalState::new(grid, amp)
    } else {
        TemporalState::new_unnormalized(grid, amp)
    }
}

fn wrap_leakage_check(state: &TemporalState, delay: f64) -> Result<()> {
    let grid = state.grid();
    let n = grid.n_points();
    let total = state.norm_sq();
    if total <= 0.0 {
        return Ok(());
    }
    // mass in the strip of width |delay| that will wrap around the edge
    let strip = (delay.abs() / grid.dt()).ceil() as usize;
    let strip = strip.min(n);
    let mass: f64 = if delay > 0.0 {
        (n - strip..n).map(|j| state.amp()[j].norm_sqr()).sum::<f64>() * grid.dt()
    } else {
        (0..strip).map(|j| state.amp()[j].norm_sqr()).sum::<f64>() * grid.dt()
    };
    let leakage = mass / total;
    if leakage > LEAKAGE_LIMIT {
        return Err(HomtomoError::NormLeakage { leakage, limit: LEAKAGE_LIMIT });
    }
    Ok(())
}

/// Frequency-diagonal operator that converts an ideal time eigenstate into the
/// reference pulse; `f(w_k) = sqrt(2*pi) * <w_k|pulse(0)>`.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    grid: TimeGrid,
    eigenvalues: DVector<C64>,
    transform_limited: bool,
}

impl FilterOperator {
    /// Build the filter from its defining pulse, which must be normalized and
    /// peaked at `t = 0`.
    pub fn from_pulse(pulse_at_zero: &TemporalState) -> Result<Self> {
        if !pulse_at_zero.is_normalized() {
            return Err(HomtomoError::NotNormalized { norm_sq: pulse_at_zero.norm_sq() });
        }
        let grid = *pulse_at_zero.grid();
        let (peak_idx, _) = pulse_at_zero
            .amp()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .expect("non-empty grid");
        if (grid.time(peak_idx)).abs() > grid.dt() {
            return Err(HomtomoError::InvalidPulse(format!(
                "pulse peak at {:.3e}, expected t = 0",
                grid.time(peak_idx)
            )));
        }
        let spec = to_frequency(pulse_at_zero);
        let eigenvalues = spec.amp() * C64::from(TAU.sqrt());
        let fmax = eigenvalues.iter().map(|f| f.norm()).fold(0.0_f64, f64::max);
        let transform_limited = eigenvalues
            .iter()
            .all(|f| f.im.abs() <= 1e-8 * fmax && f.re >= -1e-8 * fmax);
        Ok(Self { grid, eigenvalues, transform_limited })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &DVector<C64> {
        &self.eigenvalues
    }

    /// Whether the defining pulse has a real, non-negative spectrum, making
    /// the filter self-adjoint and dispersion-free.
    pub fn is_transform_limited(&self) -> bool {
        self.transform_limited
    }

    /// Apply the filter: multiply each frequency component by `f(w_k)`.
    pub fn apply(&self, state: &TemporalState) -> Result<TemporalState> {
        self.apply_eigenvalues(state, false)
    }

    /// Apply the adjoint: multiply by `conj(f(w_k))`.
    pub fn apply_adjoint(&self, state: &TemporalState) -> Result<TemporalState> {
        self.apply_eigenvalues(state, true)
    }

    fn apply_eigenvalues(&self, state: &TemporalState, adjoint: bool) -> Result<TemporalState> {
        self.grid.check_same(state.grid(), "filter and state")?;
        let spec = to_frequency(state);
        let amp = DVector::from_fn(self.grid.n_points(), |k, _| {
            let f = if adjoint { self.eigenvalues[k].conj() } else { self.eigenvalues[k] };
            spec.amp()[k] * f
        });
        Ok(to_time(&SpectralState::new_unnormalized(self.grid, amp)?))
    }

    /// The reference pulse delayed to peak time `t`: `F|t>`, valid for any
    /// real `t` inside the window, on or off the sample points.
    ///
    /// Spectrally this is `f(w_k) * exp(i*w_k*t) / sqrt(2*pi)`, identical to
    /// `time_shift(pulse, t)` and to `apply(F, time_eigenstate(t))` on grid
    /// points.
    pub fn reference_state(&self, t: f64) -> Result<TemporalState> {
        if !self.grid.contains(t) {
            return Err(HomtomoError::InvalidSetting(format!(
                "reference time {t:.3e} outside grid window [{:.3e}, {:.3e}]",
                self.grid.t_start(),
                self.grid.t_end()
            )));
        }
        let scale = 1.0 / TAU.sqrt();
        let amp = DVector::from_fn(self.grid.n_points(), |k, _| {
            self.eigenvalues[k] * C64::from_polar(scale, self.grid.freq(k) * t)
        });
        let state = to_time(&SpectralState::new_unnormalized(self.grid, amp)?);
        // a unit-norm defining pulse makes every delayed copy unit-norm
        debug_assert!((state.norm_sq() - 1.0).abs() < 1e-6);
        TemporalState::new(self.grid, state.amp().clone())
    }

    /// Fraction of a state's spectral weight inside the filter's support
    /// (bins with nonzero eigenvalue).
    pub fn band_weight(&self, state: &TemporalState) -> Result<f64> {
        self.grid.check_same(state.grid(), "filter and state")?;
        let spec = to_frequency(state);
        let fmax = self.eigenvalues.iter().map(|f| f.norm()).fold(0.0_f64, f64::max);
        let mut inside = 0.0;
        let mut total = 0.0;
        for k in 0..self.grid.n_points() {
            let w = spec.amp()[k].norm_sqr();
            total += w;
            if self.eigenvalues[k].norm() > 1e-12 * fmax {
                inside += w;
            }
        }
        Ok(if total > 0.0 { inside / total } else { 0.0 })
    }
}

/// Phase realization mode for two-time superposition references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperpositionMode {
    /// `F(|t1> + e^{i*phi} |t2>)`, normalized: the idealized reference with
    /// the phase imposed exactly. Kept as the oracle for the realizable mode.
    ExactPhase,
    /// `F(|t1> + |t2 + phi/omega0>)`, normalized: the phase produced by a
    /// sub-period delay of the second pulse, which is what an interferometer
    /// actually does. Agrees with `ExactPhase` up to the filtered-state
    /// overlap measured by [`sigma_overlap`].
    SubperiodShift,
}

/// Equal superposition of reference pulses at `t1` and `t2` with relative
/// phase `phi`.
pub fn superposition_reference(
    filter: &FilterOperator,
    t1: f64,
    t2: f64,
    phi: f64,
    mode: SuperpositionMode,
) -> Result<TemporalState> {
    if t1 == t2 {
        return Err(HomtomoError::InvalidSetting("t1 = t2 in superposition".into()));
    }
    let u1 = filter.reference_state(t1)?;
    let u2 = match mode {
        SuperpositionMode::ExactPhase => {
            let u2 = filter.reference_state(t2)?;
            TemporalState::new_unnormalized(
                *filter.grid(),
                u2.amp() * C64::from_polar(1.0, phi),
            )?
        }
        SuperpositionMode::SubperiodShift => {
            filter.reference_state(t2 + phi / filter.grid().omega0())?
        }
    };
    TemporalState::new_unnormalized(*filter.grid(), u1.amp() + u2.amp())?.normalize()
}

/// Normalized overlap between the filtered time eigenstate at `t` and the
/// filtered eigenstate displaced by the sub-period delay `phi/omega0`:
///
/// `sigma = |<t|F^H F|t'>|^2 / (<t|F^H F|t> <t'|F^H F|t'>)`, `t' = t + phi/omega0`.
///
/// Equals 1 at `phi = 0` and approaches 1 for any `phi` as the filter
/// bandwidth shrinks relative to the carrier.
pub fn sigma_overlap(filter: &FilterOperator, t: f64, phi: f64) -> Result<f64> {
    if !(-std::f64::consts::PI - 1e-9..=std::f64::consts::PI + 1e-9).contains(&phi) {
        return Err(HomtomoError::InvalidSetting(format!(
            "phi = {phi} outside [-pi, pi]"
        )));
    }
    if phi == 0.0 {
        return Ok(1.0);
    }
    let s = phi / filter.grid().omega0();
    // <t|F^H F|t + s> = sum_k |f_k|^2 exp(i*w_k*s) * d_omega / (2*pi),
    // independent of t; `t` is kept in the signature for symmetry with the
    // measured quantity.
    let _ = t;
    let grid = filter.grid();
    let mut num = C64::new(0.0, 0.0);
    let mut den = 0.0;
    for k in 0..grid.n_points() {
        let p = filter.eigenvalues()[k].norm_sqr();
        num += C64::from_polar(p, grid.freq(k) * s);
        den += p;
    }
    if den == 0.0 {
        return Err(HomtomoError::InvalidPulse("filter has empty band".into()));
    }
    Ok(num.norm_sqr() / (den * den))
}
