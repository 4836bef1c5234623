//! Discrete time/frequency lattice, state and operator representations, and
//! the unitary transform between the two domains.
//!
//! Conventions used everywhere in this crate:
//!
//! * Time samples are `t_j = t_start + j * dt`, `j = 0..n`.
//! * Frequency samples are `w_k = omega0 + nu_k` with the centered offsets
//!   `nu_k = 2*pi*(k - n/2) / (n*dt)`, so the sampled band straddles the
//!   carrier `omega0`.
//! * Amplitudes are stored as envelopes relative to the carrier: the physical
//!   amplitude at `t_j` is `amp[j] * exp(-i*omega0*t_j)`. This keeps grids
//!   coarse compared to the optical period.
//! * The forward transform is `S_k = dt/sqrt(2*pi) * sum_j amp[j] *
//!   exp(i*nu_k*t_j)`, unitary together with its inverse for any `n >= 1`.
//! * A time eigenstate at `t_j` has envelope `exp(i*omega0*t_j)/dt` at sample
//!   `j`: the `1/dt` is the discrete delta convention (so projections return
//!   pointwise amplitudes and rank-one kernels carry `dt^2` quadrature
//!   weights), and the carrier factor makes its spectrum the physical
//!   `exp(i*w*t)/sqrt(2*pi)`, which the filter algebra relies on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::f64::consts::TAU;

use crate::error::{HomtomoError, Result};
use crate::math::{self, hermiticity_deviation};

/// Hermiticity tolerance for kernels, relative to the largest entry.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Tolerance on squared norms at construction.
pub const NORM_TOL: f64 = 1e-9;

/// The discretized time axis and carrier frequency underlying every state and
/// operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_points: usize,
    dt: f64,
    t_start: f64,
    omega0: f64,
}

impl TimeGrid {
    /// Build a grid, checking the structural constraints: at least two points,
    /// positive spacing and carrier, and a total band `2*pi/dt` narrow enough
    /// to stay at positive frequencies (`2*pi/dt < 2*omega0`).
    pub fn new(n_points: usize, dt: f64, t_start: f64, omega0: f64) -> Result<Self> {
        if n_points < 2 {
            return Err(HomtomoError::InvalidGrid(format!(
                "n_points = {n_points}, need at least 2"
            )));
        }
        Self::with_min_points(n_points, dt, t_start, omega0, 2)
    }

    /// Degenerate constructor used for reconstruction supports, which may
    /// consist of a single time sample. Simulation grids should use [`new`].
    ///
    /// [`new`]: TimeGrid::new
    pub(crate) fn new_allow_single(
        n_points: usize,
        dt: f64,
        t_start: f64,
        omega0: f64,
    ) -> Result<Self> {
        Self::with_min_points(n_points, dt, t_start, omega0, 1)
    }

    fn with_min_points(
        n_points: usize,
        dt: f64,
        t_start: f64,
        omega0: f64,
        min_points: usize,
    ) -> Result<Self> {
        if n_points < min_points {
            return Err(HomtomoError::InvalidGrid(format!(
                "n_points = {n_points}, need at least {min_points}"
            )));
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(HomtomoError::InvalidGrid(format!("dt = {dt}, need dt > 0")));
        }
        if omega0 <= 0.0 || !omega0.is_finite() {
            return Err(HomtomoError::InvalidGrid(format!(
                "omega0 = {omega0}, need omega0 > 0"
            )));
        }
        if !t_start.is_finite() {
            return Err(HomtomoError::InvalidGrid(format!("t_start = {t_start}")));
        }
        if TAU / dt >= 2.0 * omega0 {
            return Err(HomtomoError::InvalidGrid(format!(
                "band 2*pi/dt = {:.6e} reaches non-positive frequencies (2*omega0 = {:.6e})",
                TAU / dt,
                2.0 * omega0
            )));
        }
        Ok(Self { n_points, dt, t_start, omega0 })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    /// Last sample time `t_start + (n-1)*dt`.
    pub fn t_end(&self) -> f64 {
        self.t_start + (self.n_points - 1) as f64 * self.dt
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Time of sample `j`.
    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.dt
    }

    /// Frequency-bin spacing `2*pi/(n*dt)`.
    pub fn freq_spacing(&self) -> f64 {
        TAU / (self.n_points as f64 * self.dt)
    }

    /// Offset of frequency bin `k` from the carrier, `nu_k`.
    pub fn freq_offset(&self, k: usize) -> f64 {
        (k as f64 - self.n_points as f64 / 2.0) * self.freq_spacing()
    }

    /// Absolute frequency of bin `k`, `omega0 + nu_k`.
    pub fn freq(&self, k: usize) -> f64 {
        self.omega0 + self.freq_offset(k)
    }

    /// All sample times.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.time(j)).collect()
    }

    /// Index of the grid sample nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let j = ((t - self.t_start) / self.dt).round();
        (j.max(0.0) as usize).min(self.n_points - 1)
    }

    /// Whether `t` lies within the sampled window.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start - 0.5 * self.dt && t <= self.t_end() + 0.5 * self.dt
    }

    pub(crate) fn check_same(&self, other: &Self, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(HomtomoError::GridMismatch(what.to_string()))
        }
    }
}

/// Complex envelope amplitudes of a single photon in the time representation.
#[derive(Debug, Clone)]
pub struct TemporalState {
    grid: TimeGrid,
    amp: DVector<C64>,
    normalized: bool,
}

impl TemporalState {
    /// A normalized state; rejects amplitudes whose squared norm deviates from
    /// one by more than [`NORM_TOL`].
    pub fn new(grid: TimeGrid, amp: DVector<C64>) -> Result<Self> {
        Self::check_len(&grid, &amp)?;
        let norm_sq = norm_sq_time(&grid, &amp);
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(HomtomoError::NotNormalized { norm_sq });
        }
        Ok(Self { grid, amp, normalized: true })
    }

    /// An explicitly unnormalized intermediate value (delta states, filter
    /// outputs and similar).
    pub fn new_unnormalized(grid: TimeGrid, amp: DVector<C64>) -> Result<Self> {
        Self::check_len(&grid, &amp)?;
        Ok(Self { grid, amp, normalized: false })
    }

    fn check_len(grid: &TimeGrid, amp: &DVector<C64>) -> Result<()> {
        if amp.len() != grid.n_points() {
            return Err(HomtomoError::InvalidGrid(format!(
                "amplitude length {} != grid size {}",
                amp.len(),
                grid.n_points()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn amp(&self) -> &DVector<C64> {
        &self.amp
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Squared norm `sum |amp_j|^2 * dt`.
    pub fn norm_sq(&self) -> f64 {
        norm_sq_time(&self.grid, &self.amp)
    }

    /// Rescale to unit norm.
    pub fn normalize(mut self) -> Result<Self> {
        let n = self.norm_sq();
        if n <= 0.0 || !n.is_finite() {
            return Err(HomtomoError::NotNormalized { norm_sq: n });
        }
        self.amp /= C64::from(n.sqrt());
        self.normalized = true;
        Ok(self)
    }
}

fn norm_sq_time(grid: &TimeGrid, amp: &DVector<C64>) -> f64 {
    amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dt()
}

/// Complex amplitudes `<w_k|state>` in the frequency representation.
#[derive(Debug, Clone)]
pub struct SpectralState {
    grid: TimeGrid,
    amp: DVector<C64>,
    normalized: bool,
}

impl SpectralState {
    pub fn new_unnormalized(grid: TimeGrid, amp: DVector<C64>) -> Result<Self> {
        if amp.len() != grid.n_points() {
            return Err(HomtomoError::InvalidGrid(format!(
                "amplitude length {} != grid size {}",
                amp.len(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, amp, normalized: false })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn amp(&self) -> &DVector<C64> {
        &self.amp
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Squared norm `sum |amp_k|^2 * d_omega`.
    pub fn norm_sq(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.freq_spacing()
    }
}

/// Unitary centered discrete Fourier transform to the frequency
/// representation. Exact inverse of [`to_time`]; speed is secondary to
/// correctness for arbitrary grid sizes, so the sums are evaluated directly.
pub fn to_frequency(state: &TemporalState) -> SpectralState {
    let grid = *state.grid();
    let n = grid.n_points();
    let scale = C64::from(grid.dt() / TAU.sqrt());
    let amp = DVector::from_fn(n, |k, _| {
        let nu = grid.freq_offset(k);
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += state.amp()[j] * C64::from_polar(1.0, nu * grid.time(j));
        }
        acc * scale
    });
    SpectralState { grid, amp, normalized: state.normalized }
}

/// Inverse of [`to_frequency`].
pub fn to_time(spec: &SpectralState) -> TemporalState {
    let grid = *spec.grid();
    let n = grid.n_points();
    let scale = C64::from(grid.freq_spacing() / TAU.sqrt());
    let amp = DVector::from_fn(n, |j, _| {
        let t = grid.time(j);
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            acc += spec.amp()[k] * C64::from_polar(1.0, -grid.freq_offset(k) * t);
        }
        acc * scale
    });
    TemporalState { grid, amp, normalized: spec.normalized }
}

/// Inner product `<a|b> = sum_j conj(a_j) * b_j * dt`.
pub fn inner(a: &TemporalState, b: &TemporalState) -> Result<C64> {
    a.grid().check_same(b.grid(), "inner product operands")?;
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..a.grid().n_points() {
        acc += a.amp()[j].conj() * b.amp()[j];
    }
    Ok(acc * C64::from(a.grid().dt()))
}

/// Discrete time eigenstate at sample `j`: envelope `exp(i*omega0*t_j)/dt` at
/// `j` and zero elsewhere, flagged unnormalized (`<t_j|t_j> = 1/dt`).
///
/// With this convention `inner(time_eigenstate(j), psi)` is the physical
/// amplitude `psi(t_j)` (envelope times carrier), and the spectrum of the
/// eigenstate is `exp(i*w*t_j)/sqrt(2*pi)` over the sampled band.
pub fn time_eigenstate(grid: &TimeGrid, j: usize) -> Result<TemporalState> {
    if j >= grid.n_points() {
        return Err(HomtomoError::IndexOutOfRange { index: j, n_points: grid.n_points() });
    }
    let mut amp = DVector::zeros(grid.n_points());
    amp[j] = C64::from_polar(1.0 / grid.dt(), grid.omega0() * grid.time(j));
    TemporalState::new_unnormalized(*grid, amp)
}

/// The n-by-n Hermitian kernel `rho(t_j, t_k)` of a single-photon mixed state,
/// stored in the envelope convention.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    grid: TimeGrid,
    kernel: DMatrix<C64>,
}

impl DensityMatrix {
    /// Density matrix of a pure state, `kernel = amp * amp^H`.
    pub fn from_pure(state: &TemporalState) -> Result<Self> {
        if !state.is_normalized() {
            return Err(HomtomoError::NotNormalized { norm_sq: state.norm_sq() });
        }
        Ok(Self {
            grid: *state.grid(),
            kernel: math::outer(state.amp(), state.amp()),
        })
    }

    /// Convex mixture of pure states. Weights must be positive and sum to one
    /// within [`NORM_TOL`]; all states must share a grid and be normalized.
    pub fn from_mixture(components: &[(f64, TemporalState)]) -> Result<Self> {
        let (_, first) = components
            .first()
            .ok_or_else(|| HomtomoError::InvalidDensity("empty mixture".into()))?;
        let grid = *first.grid();
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(HomtomoError::InvalidDensity(format!(
                "mixture weights sum to {total}"
            )));
        }
        let n = grid.n_points();
        let mut kernel = DMatrix::zeros(n, n);
        for (w, state) in components {
            if *w <= 0.0 {
                return Err(HomtomoError::InvalidDensity(format!("weight {w} <= 0")));
            }
            grid.check_same(state.grid(), "mixture component")?;
            if !state.is_normalized() {
                return Err(HomtomoError::NotNormalized { norm_sq: state.norm_sq() });
            }
            kernel += math::outer(state.amp(), state.amp()) * C64::from(*w);
        }
        Ok(Self { grid, kernel })
    }

    /// Construct from an explicit kernel, checking Hermiticity, unit trace and
    /// positive semidefiniteness.
    pub fn from_kernel(grid: TimeGrid, kernel: DMatrix<C64>) -> Result<Self> {
        if kernel.nrows() != grid.n_points() || kernel.ncols() != grid.n_points() {
            return Err(HomtomoError::InvalidDensity(format!(
                "kernel shape {}x{} != grid size {}",
                kernel.nrows(),
                kernel.ncols(),
                grid.n_points()
            )));
        }
        let scale = kernel.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(1.0);
        let dev = hermiticity_deviation(&kernel);
        if dev > HERMITICITY_TOL * scale {
            return Err(HomtomoError::NotHermitian { deviation: dev });
        }
        let tr = trace_weighted(&grid, &kernel);
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(HomtomoError::InvalidDensity(format!(
                "trace = {} + {}i, expected 1",
                tr.re, tr.im
            )));
        }
        let scaled = &kernel * C64::from(grid.dt());
        let (vals, _) = math::eigh(&scaled);
        let max = vals.iter().cloned().fold(0.0_f64, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -NORM_TOL * max.max(1e-300) {
            return Err(HomtomoError::InvalidDensity(format!(
                "not positive semidefinite: min eigenvalue {min:.3e} (max {max:.3e})"
            )));
        }
        Ok(Self { grid, kernel })
    }

    /// Internal constructor for kernels positive by construction (eigenvalue
    /// clipping output and similar); skips the O(n^3) checks.
    pub(crate) fn from_kernel_unchecked(grid: TimeGrid, kernel: DMatrix<C64>) -> Self {
        debug_assert!({
            let scale = kernel.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
            hermiticity_deviation(&kernel) <= 1e-9 * scale
        });
        Self { grid, kernel }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<C64> {
        &self.kernel
    }

    /// Trace with the quadrature weight, `sum_j kernel_jj * dt`.
    pub fn trace(&self) -> f64 {
        trace_weighted(&self.grid, &self.kernel).re
    }

    /// Arrival-time probability density `rho(t_j, t_j)`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.grid.n_points()).map(|j| self.kernel[(j, j)].re).collect()
    }
}

fn trace_weighted(grid: &TimeGrid, kernel: &DMatrix<C64>) -> C64 {
    let mut tr = C64::new(0.0, 0.0);
    for j in 0..grid.n_points() {
        tr += kernel[(j, j)];
    }
    tr * C64::from(grid.dt())
}

/// Hermitian kernel plus a scalar multiple of the identity, the form taken by
/// every bunching observable. Storing the identity coefficient separately
/// keeps the continuum `1/2` background exact at any resolution.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    grid: TimeGrid,
    kernel: DMatrix<C64>,
    const_offset: f64,
}

impl MeasurementOperator {
    pub fn new(grid: TimeGrid, kernel: DMatrix<C64>, const_offset: f64) -> Result<Self> {
        if kernel.nrows() != grid.n_points() || kernel.ncols() != grid.n_points() {
            return Err(HomtomoError::InvalidGrid(format!(
                "kernel shape {}x{} != grid size {}",
                kernel.nrows(),
                kernel.ncols(),
                grid.n_points()
            )));
        }
        let scale = kernel.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(1.0);
        let dev = hermiticity_deviation(&kernel);
        if dev > HERMITICITY_TOL * scale {
            return Err(HomtomoError::NotHermitian { deviation: dev });
        }
        Ok(Self { grid, kernel, const_offset })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<C64> {
        &self.kernel
    }

    pub fn const_offset(&self) -> f64 {
        self.const_offset
    }

    /// Expectation value `const_offset + sum_jk kernel_kj * rho_jk * dt^2`.
    /// The imaginary residue must be roundoff (`< 1e-10`) and is discarded
    /// after the check.
    pub fn expectation(&self, rho: &DensityMatrix) -> Result<f64> {
        self.grid.check_same(rho.grid(), "operator and density matrix")?;
        let n = self.grid.n_points();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            for k in 0..n {
                acc += self.kernel[(k, j)] * rho.kernel()[(j, k)];
            }
        }
        acc *= C64::from(self.grid.dt() * self.grid.dt());
        if acc.im.abs() > 1e-10 {
            return Err(HomtomoError::NotHermitian { deviation: acc.im.abs() });
        }
        Ok(self.const_offset + acc.re)
    }
}
