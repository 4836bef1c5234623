//! Reconstruction of the temporal density matrix from bunching rates:
//! diagonals from single-pulse delay scans, off-diagonals from four-phase
//! coherence scans, with optional filter deconvolution and an eigenvalue
//! clipping step that enforces physicality.
//!
//! The data determine the filtered matrix `rho_F(t1, t2) = <t1|F^H rho F|t2>`
//! directly; that matrix is the primary artifact. Deconvolution divides its
//! frequency representation by the filter power spectrum where the filter has
//! support, recovering `rho` inside the measurement band. Out-of-band content
//! is unrecoverable and shows up as missing trace, reported rather than
//! estimated.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::counts::{sample_rate, TrialPlan};
use crate::error::{HomtomoError, Result};
use crate::grid::{DensityMatrix, TemporalState, TimeGrid};
use crate::math::{self, hermitize};
use crate::measurement::{coherence_operator, delayed_operator, CoherenceSetting};
use crate::reference::FilterOperator;

/// The four phases that give symmetric real/imaginary estimators plus one
/// redundancy check.
pub const DEFAULT_PHASES: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    3.0 * std::f64::consts::FRAC_PI_2,
];

/// Default relative cutoff on `|f(w)|^2` below which deconvolution leaves a
/// frequency bin at zero instead of amplifying noise.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 1e-3;

/// A single measurement configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    /// Single reference pulse delayed to the given time.
    Delay(f64),
    /// Two-time superposition reference.
    Coherence(CoherenceSetting),
}

/// One measured (or simulated) coincidence rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRecord {
    pub setting: Setting,
    pub rate: f64,
    pub stderr: f64,
}

impl RateRecord {
    /// Validates the probability range and the physical ceiling: a true rate
    /// never exceeds 1/2, so an observation above it by more than five
    /// standard errors is rejected as data corruption rather than noise.
    pub fn new(setting: Setting, rate: f64, stderr: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
            return Err(HomtomoError::InvalidRecord(format!("rate = {rate}")));
        }
        if stderr < 0.0 || !stderr.is_finite() {
            return Err(HomtomoError::InvalidRecord(format!("stderr = {stderr}")));
        }
        if rate - 2.0 * stderr > 0.5 + 3.0 * stderr + 1e-9 {
            return Err(HomtomoError::InvalidRecord(format!(
                "rate {rate} exceeds the 1/2 ceiling beyond statistical plausibility"
            )));
        }
        Ok(Self { setting, rate, stderr })
    }
}

/// Scan plan for a full reconstruction: support times, phase set, and the
/// reference filter.
#[derive(Debug, Clone)]
pub struct TomographySchedule {
    filter: FilterOperator,
    times: Vec<f64>,
    phases: Vec<f64>,
}

impl TomographySchedule {
    pub fn new(filter: FilterOperator, times: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(HomtomoError::InvalidSchedule("no support times".into()));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(HomtomoError::InvalidSchedule(
                    "support times must be strictly increasing".into(),
                ));
            }
        }
        for &t in &times {
            if !filter.grid().contains(t) {
                return Err(HomtomoError::InvalidSchedule(format!(
                    "support time {t:.3e} outside the grid window"
                )));
            }
        }
        if phases.len() < 3 {
            return Err(HomtomoError::InvalidSchedule(
                "need at least 3 phases to solve for Re, Im and offset".into(),
            ));
        }
        let tau = std::f64::consts::TAU;
        for (i, &a) in phases.iter().enumerate() {
            for &b in &phases[i + 1..] {
                let d = (a - b).rem_euclid(tau);
                if d.min(tau - d) < 1e-9 {
                    return Err(HomtomoError::InvalidSchedule(format!(
                        "phases {a} and {b} coincide modulo 2*pi"
                    )));
                }
            }
        }
        Ok(Self { filter, times, phases })
    }

    /// Canonical schedule with the four default phases.
    pub fn with_default_phases(filter: FilterOperator, times: Vec<f64>) -> Result<Self> {
        Self::new(filter, times, DEFAULT_PHASES.to_vec())
    }

    pub fn filter(&self) -> &FilterOperator {
        &self.filter
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Ordered pairs `(i, j)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.times.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j));
            }
        }
        out
    }

    /// Deterministic enumeration of every setting in the scan: all diagonal
    /// delays first, then each pair in lexicographic order with every phase.
    /// The position in this list is the counter key for sampled statistics.
    pub fn settings(&self) -> Result<Vec<Setting>> {
        let mut out: Vec<Setting> = self.times.iter().map(|&t| Setting::Delay(t)).collect();
        for (i, j) in self.pairs() {
            for &phi in &self.phases {
                out.push(Setting::Coherence(CoherenceSetting::new(
                    self.times[i],
                    self.times[j],
                    phi,
                )?));
            }
        }
        Ok(out)
    }
}

/// Exact forward model: the coincidence probability for one setting.
pub fn forward_probability(
    rho: &DensityMatrix,
    filter: &FilterOperator,
    setting: &Setting,
) -> Result<f64> {
    match setting {
        Setting::Delay(t) => delayed_operator(filter, *t)?.expectation(rho),
        Setting::Coherence(s) => coherence_operator(filter, s)?.expectation(rho),
    }
}

/// Strip roundoff dust at the probability boundaries; anything further out
/// is a genuine model violation (overlapping superposition settings) and is
/// surfaced, not clipped.
pub(crate) fn clamp_probability(p: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) || !p.is_finite() {
        return Err(HomtomoError::InvalidProbability { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Simulate a complete scan with exact probabilities (stderr 0).
pub fn forward_rates(rho: &DensityMatrix, schedule: &TomographySchedule) -> Result<Vec<RateRecord>> {
    schedule
        .settings()?
        .into_iter()
        .map(|s| {
            let p = forward_probability(rho, schedule.filter(), &s)?;
            RateRecord::new(s, clamp_probability(p)?, 0.0)
        })
        .collect()
}

/// Simulate a complete scan under binomial shot noise.
pub fn forward_rates_sampled(
    rho: &DensityMatrix,
    schedule: &TomographySchedule,
    plan: &TrialPlan,
) -> Result<Vec<RateRecord>> {
    schedule
        .settings()?
        .into_iter()
        .enumerate()
        .map(|(idx, s)| {
            let p = forward_probability(rho, schedule.filter(), &s)?;
            let sampled = sample_rate(p, plan, idx as u64)?;
            RateRecord::new(s, sampled.rate, sampled.stderr)
        })
        .collect()
}

/// Diagonal estimates `rho_F(t, t) = 2 * (1/2 - rate)`, one record per
/// scheduled time, in schedule order. A rate above `1/2 + 3 * stderr` is
/// flagged as inconsistent.
pub fn reconstruct_diagonal(records: &[RateRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            if r.rate > 0.5 + 3.0 * r.stderr + 1e-12 {
                return Err(HomtomoError::InconsistentRecord(format!(
                    "diagonal rate {} above the 1/2 ceiling (stderr {})",
                    r.rate, r.stderr
                )));
            }
            Ok(2.0 * (0.5 - r.rate))
        })
        .collect()
}

/// Result of inverting one pair's phase scan.
#[derive(Debug, Clone, Copy)]
pub struct OffdiagEstimate {
    /// `rho_F(t1, t2)` in the time-eigenstate (physical) convention.
    pub value: C64,
    /// The diagonal sum `d1 + d2` implied by the fitted offset; cross-checked
    /// against the single-pulse scan.
    pub d_sum: f64,
    /// Standard error of `d_sum` propagated from the rate errors.
    pub d_sum_stderr: f64,
    /// Root-mean-square residual of the phase fit (the four-phase redundancy
    /// check when the default phases are used).
    pub residual: f64,
}

/// Invert a single pair's phase-scanned rates.
///
/// The model is `p(phi) = 1/2 - 1/4 * (d1 + d2 + 2 Re(e^{i phi} rho_F))`,
/// solved by least squares in the unknowns `(d1 + d2, Re rho_F, Im rho_F)`.
/// For the default phase set this reduces to
/// `Re = p(pi) - p(0)`, `Im = p(pi/2) - p(3pi/2)`.
///
/// All records must address the same time pair and provide at least three
/// distinct phases.
pub fn reconstruct_offdiagonal(records: &[RateRecord]) -> Result<OffdiagEstimate> {
    let mut data: Vec<(f64, f64, f64)> = Vec::with_capacity(records.len());
    let mut pair: Option<(f64, f64)> = None;
    for r in records {
        let s = match r.setting {
            Setting::Coherence(s) => s,
            Setting::Delay(_) => {
                return Err(HomtomoError::InvalidRecord(
                    "delay record in a phase scan".into(),
                ))
            }
        };
        match pair {
            None => pair = Some((s.t1(), s.t2())),
            Some((a, b)) => {
                if s.t1() != a || s.t2() != b {
                    return Err(HomtomoError::InvalidRecord(format!(
                        "mixed time pairs in one phase scan: ({a:.3e}, {b:.3e}) vs ({:.3e}, {:.3e})",
                        s.t1(),
                        s.t2()
                    )));
                }
            }
        }
        data.push((s.phi(), r.rate, r.stderr));
    }
    if data.len() < 3 {
        return Err(HomtomoError::InvalidRecord(format!(
            "need at least 3 phases, got {}",
            data.len()
        )));
    }

    // least squares for p(phi) = c - x/2 cos(phi) + y/2 sin(phi)
    let rows = data.len();
    let design = DMatrix::from_fn(rows, 3, |r, c| match c {
        0 => 1.0,
        1 => -0.5 * data[r].0.cos(),
        _ => 0.5 * data[r].0.sin(),
    });
    let rates = DVector::from_fn(rows, |r, _| data[r].1);
    let normal = design.transpose() * &design;
    let rhs = design.transpose() * &rates;
    let solution = normal.clone().lu().solve(&rhs).ok_or_else(|| {
        HomtomoError::InvalidRecord("degenerate phase set in least squares".into())
    })?;
    let (c, x, y) = (solution[0], solution[1], solution[2]);

    let fitted = design * &solution;
    let residual = ((&rates - fitted).norm_squared() / rows as f64).sqrt();

    // c = 1/2 - (d1 + d2)/4; variance from the per-rate errors through the
    // pseudo-inverse row for c (approximated by the plain average for the
    // symmetric default design)
    let var_c: f64 =
        data.iter().map(|d| d.2 * d.2).sum::<f64>() / (rows as f64 * rows as f64);
    Ok(OffdiagEstimate {
        value: C64::new(x, y),
        d_sum: 2.0 - 4.0 * c,
        d_sum_stderr: 4.0 * var_c.sqrt(),
        residual,
    })
}

/// Knobs for [`assemble_density`].
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Divide out the filter power spectrum inside its band.
    pub deconvolve: bool,
    /// Relative `|f|^2` cutoff for the deconvolution mask.
    pub clip_threshold: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { deconvolve: true, clip_threshold: DEFAULT_CLIP_THRESHOLD }
    }
}

/// A reconstructed state with its quality diagnostics.
#[derive(Debug, Clone)]
pub struct TomographyAssembly {
    /// Grid spanned by the schedule times.
    pub grid: TimeGrid,
    /// The filtered matrix `rho_F` the data determine directly, in the
    /// envelope convention of [`DensityMatrix`] kernels. Its trace is not 1:
    /// for a filter of effective bandwidth `dw` it approaches `2*pi/dw` times
    /// the in-band probability.
    pub filtered_kernel: DMatrix<C64>,
    /// Physical estimate after optional deconvolution, eigenvalue clipping
    /// and trace renormalization.
    pub density: DensityMatrix,
    /// Fraction of spectral weight removed by the clipping step,
    /// `sum |negative eigenvalues| / sum |eigenvalues|`; zero for noiseless
    /// data.
    pub negativity_mass: f64,
    /// Trace of the deconvolved kernel before renormalization: the
    /// probability mass recovered inside the filter band. `None` when
    /// deconvolution is off.
    pub in_band_mass: Option<f64>,
}

/// Assemble the reconstructed kernel from diagonal values and pair estimates.
///
/// `diag[i]` is `rho_F(t_i, t_i)`; `offdiag` holds `(i, j, rho_F(t_i, t_j))`
/// with `i < j`, in the time-eigenstate convention produced by
/// [`reconstruct_offdiagonal`]. The schedule times must be uniformly spaced
/// when there is more than one (they form the output grid).
pub fn assemble_density(
    filter: &FilterOperator,
    times: &[f64],
    diag: &[f64],
    offdiag: &[(usize, usize, C64)],
    options: &AssemblyOptions,
) -> Result<TomographyAssembly> {
    if times.is_empty() {
        return Err(HomtomoError::InvalidSchedule("empty schedule".into()));
    }
    if diag.len() != times.len() {
        return Err(HomtomoError::InvalidSchedule(format!(
            "{} diagonal values for {} times",
            diag.len(),
            times.len()
        )));
    }
    let n = times.len();
    let omega0 = filter.grid().omega0();

    let spacing = if n >= 2 {
        let t = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - t).abs() > 1e-9 * t {
                return Err(HomtomoError::InvalidSchedule(
                    "support times must be uniformly spaced to form a grid".into(),
                ));
            }
        }
        t
    } else {
        filter.grid().dt()
    };
    let grid = TimeGrid::new_allow_single(n, spacing, times[0], omega0)?;

    // physical-convention kernel from the estimates
    let mut k_phys = DMatrix::<C64>::zeros(n, n);
    for (i, &d) in diag.iter().enumerate() {
        k_phys[(i, i)] = C64::from(d);
    }
    for &(i, j, v) in offdiag {
        if i >= j || j >= n {
            return Err(HomtomoError::InvalidSchedule(format!(
                "bad pair index ({i}, {j}) for {n} times"
            )));
        }
        k_phys[(i, j)] = v;
        k_phys[(j, i)] = v.conj();
    }
    let k_phys = hermitize(&k_phys);

    // envelope convention: rho_env(j, k) = rho_phys(j, k) * e^{i w0 (t_j - t_k)}
    let filtered_kernel = DMatrix::from_fn(n, n, |j, k| {
        k_phys[(j, k)] * C64::from_polar(1.0, omega0 * (times[j] - times[k]))
    });

    let (working, in_band_mass) = if options.deconvolve && n >= 2 {
        let deconv = deconvolve_kernel(filter, &grid, &filtered_kernel, options.clip_threshold)?;
        let mass = (0..n).map(|i| deconv[(i, i)].re).sum::<f64>() * spacing;
        (deconv, Some(mass))
    } else if options.deconvolve {
        // single support point: the filter reduces to the scalar <t|F^H F|t>,
        // which is 1 for a unit-norm defining pulse
        (filtered_kernel.clone(), Some(filtered_kernel[(0, 0)].re * spacing))
    } else {
        (filtered_kernel.clone(), None)
    };

    // physicality projection: clip negative eigenvalues, renormalize trace
    let scaled = &working * C64::from(spacing);
    let (vals, vecs) = math::eigh(&scaled);
    let total: f64 = vals.iter().map(|l| l.abs()).sum();
    let negative: f64 = vals.iter().filter(|l| **l < 0.0).map(|l| -*l).sum();
    let clipped_trace: f64 = vals.iter().filter(|l| **l > 0.0).sum();
    if clipped_trace <= 0.0 {
        return Err(HomtomoError::InvalidDensity(
            "no positive spectral weight after clipping".into(),
        ));
    }
    let mut rebuilt = DMatrix::<C64>::zeros(n, n);
    for (i, &lambda) in vals.iter().enumerate() {
        if lambda > 0.0 {
            let col = vecs.column(i);
            let w = C64::from(lambda / clipped_trace);
            for j in 0..n {
                for k in 0..n {
                    rebuilt[(j, k)] += w * col[j] * col[k].conj();
                }
            }
        }
    }
    let density = DensityMatrix::from_kernel_unchecked(grid, rebuilt / C64::from(spacing));

    Ok(TomographyAssembly {
        grid,
        filtered_kernel,
        density,
        negativity_mass: if total > 0.0 { negative / total } else { 0.0 },
        in_band_mass,
    })
}

fn deconvolve_kernel(
    filter: &FilterOperator,
    grid: &TimeGrid,
    kernel: &DMatrix<C64>,
    clip_threshold: f64,
) -> Result<DMatrix<C64>> {
    let n = grid.n_points();
    let u = DMatrix::from_fn(n, n, |k, j| {
        C64::from_polar(1.0 / (n as f64).sqrt(), grid.freq_offset(k) * grid.time(j))
    });
    let spectral = &u * kernel * u.adjoint();

    // filter eigenvalues at the coarse bin frequencies
    let f: Vec<C64> = (0..n).map(|k| interp_eigenvalue(filter, grid.freq_offset(k))).collect();
    let p_max = f.iter().map(|z| z.norm_sqr()).fold(0.0_f64, f64::max);
    if p_max <= 0.0 {
        return Err(HomtomoError::InvalidPulse(
            "filter has no support on the reconstruction band".into(),
        ));
    }
    let mask: Vec<bool> = f.iter().map(|z| z.norm_sqr() > clip_threshold * p_max).collect();

    let divided = DMatrix::from_fn(n, n, |k, l| {
        if mask[k] && mask[l] {
            spectral[(k, l)] / (f[k].conj() * f[l])
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(u.adjoint() * divided * u)
}

/// Filter eigenvalue at an arbitrary frequency offset, linearly interpolated
/// between the fine-grid bins (exact when the offset lands on a bin).
fn interp_eigenvalue(filter: &FilterOperator, nu: f64) -> C64 {
    let fine = filter.grid();
    let mut x = nu / fine.freq_spacing() + fine.n_points() as f64 / 2.0;
    // snap to the bin when the offset is one of the fine frequencies up to
    // roundoff, so that matching grids divide exactly
    if (x - x.round()).abs() < 1e-9 {
        x = x.round();
    }
    if x < 0.0 || x > (fine.n_points() - 1) as f64 {
        return C64::new(0.0, 0.0);
    }
    let lo = x.floor() as usize;
    let hi = x.ceil() as usize;
    let frac = x - lo as f64;
    let a = filter.eigenvalues()[lo];
    let b = filter.eigenvalues()[hi];
    a * C64::from(1.0 - frac) + b * C64::from(frac)
}

/// Full reconstruction result.
#[derive(Debug, Clone)]
pub struct TomographyResult {
    pub assembly: TomographyAssembly,
    /// Diagonal estimates `rho_F(t_i, t_i)` in schedule order.
    pub diagonal: Vec<f64>,
    /// Pair estimates `(i, j, rho_F(t_i, t_j))`.
    pub offdiagonal: Vec<(usize, usize, C64)>,
    /// Largest phase-fit residual over all pairs (the four-phase redundancy
    /// check).
    pub redundancy_residual: f64,
}

/// Match records to the schedule and run the whole inversion pipeline.
///
/// Records may arrive in any order; each scheduled setting must be present
/// exactly once. The diagonal sum implied by each pair's fit is cross-checked
/// against the single-pulse scan and rejected beyond five combined standard
/// errors.
pub fn reconstruct(
    records: &[RateRecord],
    schedule: &TomographySchedule,
    options: &AssemblyOptions,
) -> Result<TomographyResult> {
    let times = schedule.times();
    let time_tol = 1e-6 * schedule.filter().grid().dt();

    let mut diag_records: Vec<Option<RateRecord>> = vec![None; times.len()];
    let mut pair_records: Vec<Vec<RateRecord>> =
        vec![Vec::new(); schedule.pairs().len()];
    let pair_index: std::collections::BTreeMap<(usize, usize), usize> = schedule
        .pairs()
        .into_iter()
        .enumerate()
        .map(|(idx, p)| (p, idx))
        .collect();

    let find_time = |t: f64| -> Option<usize> {
        times.iter().position(|&ti| (ti - t).abs() <= time_tol)
    };

    for r in records {
        match r.setting {
            Setting::Delay(t) => {
                let i = find_time(t).ok_or_else(|| {
                    HomtomoError::InvalidRecord(format!("delay {t:.6e} not in schedule"))
                })?;
                if diag_records[i].replace(*r).is_some() {
                    return Err(HomtomoError::InvalidRecord(format!(
                        "duplicate diagonal record at t = {t:.6e}"
                    )));
                }
            }
            Setting::Coherence(s) => {
                let i = find_time(s.t1()).ok_or_else(|| {
                    HomtomoError::InvalidRecord(format!("time {:.6e} not in schedule", s.t1()))
                })?;
                let j = find_time(s.t2()).ok_or_else(|| {
                    HomtomoError::InvalidRecord(format!("time {:.6e} not in schedule", s.t2()))
                })?;
                let idx = *pair_index.get(&(i, j)).ok_or_else(|| {
                    HomtomoError::InvalidRecord(format!("pair ({i}, {j}) not in schedule"))
                })?;
                pair_records[idx].push(*r);
            }
        }
    }

    let diag_full: Vec<RateRecord> = diag_records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| {
                HomtomoError::InvalidRecord(format!(
                    "missing diagonal record for t = {:.6e}",
                    times[i]
                ))
            })
        })
        .collect::<Result<_>>()?;
    let diagonal = reconstruct_diagonal(&diag_full)?;

    let mut offdiagonal = Vec::with_capacity(pair_records.len());
    let mut redundancy_residual: f64 = 0.0;
    for ((i, j), recs) in schedule.pairs().into_iter().zip(&pair_records) {
        let n_phases = schedule.phases().len();
        if recs.len() != n_phases {
            return Err(HomtomoError::InvalidRecord(format!(
                "pair ({i}, {j}): expected {n_phases} phase records, found {}",
                recs.len()
            )));
        }
        let est = reconstruct_offdiagonal(recs)?;
        // consistency of the fitted offset with the diagonal scan
        let d_direct = diagonal[i] + diagonal[j];
        let sd = (2.0 * diag_full[i].stderr).hypot(2.0 * diag_full[j].stderr);
        let tol = 5.0 * sd.hypot(est.d_sum_stderr) + 1e-9;
        if (est.d_sum - d_direct).abs() > tol {
            return Err(HomtomoError::InconsistentRecord(format!(
                "pair ({i}, {j}): phase-scan diagonal sum {:.6e} vs direct {:.6e} (tol {:.3e})",
                est.d_sum, d_direct, tol
            )));
        }
        redundancy_residual = redundancy_residual.max(est.residual);
        offdiagonal.push((i, j, est.value));
    }

    let assembly =
        assemble_density(schedule.filter(), times, &diagonal, &offdiagonal, options)?;
    Ok(TomographyResult { assembly, diagonal, offdiagonal, redundancy_residual })
}

/// Sample a fine-grid state at the coarse grid's times (which must coincide
/// with fine samples). The result keeps the envelope values and is returned
/// unnormalized: for a state band-limited to the coarse Nyquist band the norm
/// is preserved, otherwise mass is genuinely lost.
pub fn sample_state_on(coarse: &TimeGrid, state: &TemporalState) -> Result<TemporalState> {
    let fine = state.grid();
    let tol = 1e-6 * fine.dt();
    let amp = DVector::from_fn(coarse.n_points(), |i, _| {
        let t = coarse.time(i);
        let j = fine.nearest_index(t);
        if (fine.time(j) - t).abs() <= tol {
            state.amp()[j]
        } else {
            C64::new(f64::NAN, 0.0)
        }
    });
    if amp.iter().any(|z| z.re.is_nan()) {
        return Err(HomtomoError::InvalidSchedule(
            "coarse time does not coincide with a fine grid sample".into(),
        ));
    }
    TemporalState::new_unnormalized(*coarse, amp)
}

/// Mixed-state (Uhlmann) fidelity, `(tr sqrt(sqrt(a) b sqrt(a)))^2`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    a.grid().check_same(b.grid(), "fidelity operands")?;
    let dt = a.grid().dt();
    let ra = a.kernel() * C64::from(dt);
    let rb = b.kernel() * C64::from(dt);
    let sa = math::sqrtm_psd(&ra);
    let inner = &sa * rb * &sa;
    let (vals, _) = math::eigh(&inner);
    // roundoff eigenvalues of size eps*lambda_max would each contribute
    // sqrt(eps) to the trace; floor them out
    let floor = 1e-12 * vals.iter().cloned().fold(0.0_f64, f64::max);
    let tr: f64 = vals.iter().filter(|l| **l > floor).map(|l| l.sqrt()).sum();
    Ok((tr * tr).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_support::{gaussian_state, test_grid};
    use crate::grid::{inner as state_inner, to_time, SpectralState};
    use crate::reference::{make_pulse, ReferenceSpec, SuperpositionMode};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// n = 256 grid with a rect filter whose band is exactly resolved by 8
    /// support times spaced 32 dt apart.
    fn nyquist_setup() -> (TimeGrid, FilterOperator, Vec<f64>) {
        let grid = test_grid();
        let dw = 8.0 * grid.freq_spacing();
        let pulse = make_pulse(&grid, &ReferenceSpec::rect_spectrum(dw, 0.0)).unwrap();
        let filter = FilterOperator::from_pulse(&pulse).unwrap();
        let times: Vec<f64> = (0..8).map(|i| grid.time(32 * i)).collect();
        (grid, filter, times)
    }

    /// Random state spanned by the filtered support states: exactly in-band.
    fn random_in_band(filter: &FilterOperator, times: &[f64], seed: u64) -> TemporalState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = *filter.grid();
        let mut amp = DVector::zeros(grid.n_points());
        for &t in times {
            let u = filter.reference_state(t).unwrap();
            let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            amp += u.amp() * c;
        }
        TemporalState::new_unnormalized(grid, amp).unwrap().normalize().unwrap()
    }

    fn direct_filtered_element(
        rho: &DensityMatrix,
        filter: &FilterOperator,
        t1: f64,
        t2: f64,
    ) -> C64 {
        // <t1|F^H rho F|t2> = <u1|rho|u2> with u_i the delayed references
        let u1 = filter.reference_state(t1).unwrap();
        let u2 = filter.reference_state(t2).unwrap();
        let dt = rho.grid().dt();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..rho.grid().n_points() {
            for k in 0..rho.grid().n_points() {
                acc += u1.amp()[j].conj() * rho.kernel()[(j, k)] * u2.amp()[k];
            }
        }
        acc * C64::from(dt * dt)
    }

    #[test]
    fn flat_rates_give_zero_diagonal() {
        let recs: Vec<RateRecord> = (0..4)
            .map(|i| RateRecord::new(Setting::Delay(i as f64), 0.5, 0.0).unwrap())
            .collect();
        let d = reconstruct_diagonal(&recs).unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn full_dip_gives_unit_diagonal() {
        let recs = vec![
            RateRecord::new(Setting::Delay(0.0), 0.0, 0.0).unwrap(),
            RateRecord::new(Setting::Delay(1.0), 0.5, 0.0).unwrap(),
        ];
        let d = reconstruct_diagonal(&recs).unwrap();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn inconsistent_diagonal_rate_flagged() {
        // plausible as a record (within 5 stderr of the ceiling) but
        // inconsistent as a diagonal (beyond 3 stderr)
        let recs =
            vec![RateRecord::new(Setting::Delay(0.0), 0.54, 0.01).unwrap()];
        assert!(matches!(
            reconstruct_diagonal(&recs),
            Err(HomtomoError::InconsistentRecord(_))
        ));
    }

    #[test]
    fn record_validation() {
        assert!(RateRecord::new(Setting::Delay(0.0), 1.2, 0.0).is_err());
        assert!(RateRecord::new(Setting::Delay(0.0), 0.4, -0.1).is_err());
        // far above the ceiling without error bars: impossible data
        assert!(RateRecord::new(Setting::Delay(0.0), 0.9, 0.0).is_err());
        // slightly above with matching error bars: plausible fluctuation
        assert!(RateRecord::new(Setting::Delay(0.0), 0.52, 0.01).is_ok());
    }

    #[test]
    fn diagonal_round_trip_noiseless() {
        let (grid, filter, times) = nyquist_setup();
        let rho = DensityMatrix::from_pure(&gaussian_state(&grid, 30.0 * grid.dt(), 0.0)).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let diag = reconstruct_diagonal(&records[..times.len()]).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let expect = direct_filtered_element(&rho, &filter, t, t).re;
            assert!(
                (diag[i] - expect).abs() < 1e-9,
                "t = {t:.3e}: {} vs {expect}",
                diag[i]
            );
        }
    }

    #[test]
    fn offdiagonal_inversion_matches_forward_model() {
        let (_grid, filter, times) = nyquist_setup();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        for seed in 0..12 {
            let psi = random_in_band(&filter, &times, seed);
            let rho = DensityMatrix::from_pure(&psi).unwrap();
            let records = forward_rates(&rho, &schedule).unwrap();
            // first pair (0, 1) occupies the 4 records after the diagonals
            let n = times.len();
            let est = reconstruct_offdiagonal(&records[n..n + 4]).unwrap();
            let expect = direct_filtered_element(&rho, &filter, times[0], times[1]);
            assert!(
                (est.value - expect).norm() < 1e-9,
                "seed {seed}: {} vs {expect}",
                est.value
            );
            assert!(est.residual < 1e-12);
        }
    }

    #[test]
    fn least_squares_matches_simple_estimator_on_default_phases() {
        let s = |phi: f64, rate: f64| {
            RateRecord::new(
                Setting::Coherence(CoherenceSetting::new(0.0, 1.0, phi).unwrap()),
                rate,
                0.0,
            )
            .unwrap()
        };
        let (p0, p1, p2, p3) = (0.21, 0.34, 0.41, 0.28);
        let recs = vec![
            s(DEFAULT_PHASES[0], p0),
            s(DEFAULT_PHASES[1], p1),
            s(DEFAULT_PHASES[2], p2),
            s(DEFAULT_PHASES[3], p3),
        ];
        let est = reconstruct_offdiagonal(&recs).unwrap();
        assert!((est.value.re - (p2 - p0)).abs() < 1e-12);
        assert!((est.value.im - (p1 - p3)).abs() < 1e-12);
    }

    #[test]
    fn phase_scan_without_coherence_is_flat() {
        let (_grid, filter, times) = nyquist_setup();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let rho = DensityMatrix::from_pure(&filter.reference_state(times[0]).unwrap()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let n = times.len();
        // pair (0, 1): diagonal at t0 is 1, no coherence with t1
        let slice = &records[n..n + 4];
        let first = slice[0].rate;
        for r in slice {
            assert!((r.rate - first).abs() < 1e-10);
        }
        let est = reconstruct_offdiagonal(slice).unwrap();
        assert!(est.value.norm() < 1e-9);
    }

    #[test]
    fn matched_superposition_bunches_at_zero_phase() {
        let (_grid, filter, times) = nyquist_setup();
        let psi = crate::reference::superposition_reference(
            &filter,
            times[2],
            times[5],
            0.0,
            SuperpositionMode::ExactPhase,
        )
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        // locate the (2, 5) pair at phase 0
        let mut p0 = None;
        let mut est_recs = Vec::new();
        for r in &records {
            if let Setting::Coherence(s) = r.setting {
                if (s.t1() - times[2]).abs() < 1e-20 && (s.t2() - times[5]).abs() < 1e-20 {
                    est_recs.push(*r);
                    if s.phi() == 0.0 {
                        p0 = Some(r.rate);
                    }
                }
            }
        }
        assert!(p0.unwrap() < 1e-10, "p(0) = {:?}", p0);
        let est = reconstruct_offdiagonal(&est_recs).unwrap();
        assert!(est.value.re > 0.49);
        assert!(est.value.im.abs() < 1e-9);
    }

    #[test]
    fn assembly_round_trip_noiseless() {
        let (grid, filter, times) = nyquist_setup();
        let psi = random_in_band(&filter, &times, 99);
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let result = reconstruct(&records, &schedule, &AssemblyOptions::default()).unwrap();

        let truth = sample_state_on(&result.assembly.grid, &psi).unwrap();
        assert!((truth.norm_sq() - 1.0).abs() < 1e-9, "in-band state loses no mass");
        let truth_rho = DensityMatrix::from_pure(&truth.normalize().unwrap()).unwrap();
        let fid = fidelity(&result.assembly.density, &truth_rho).unwrap();
        assert!(fid >= 0.999, "fidelity = {fid}");
        assert!(result.assembly.negativity_mass < 1e-9);
        assert!(result.redundancy_residual < 1e-12);
        assert!((result.assembly.in_band_mass.unwrap() - 1.0).abs() < 1e-6);
        let _ = grid;
    }

    #[test]
    fn maximally_mixed_two_time_block() {
        let (_grid, filter, times) = nyquist_setup();
        let u2 = filter.reference_state(times[2]).unwrap();
        let u5 = filter.reference_state(times[5]).unwrap();
        let rho = DensityMatrix::from_mixture(&[(0.5, u2), (0.5, u5)]).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let result = reconstruct(&records, &schedule, &AssemblyOptions::default()).unwrap();
        let k = result.assembly.density.kernel();
        let t = result.assembly.grid.dt();
        // diagonal entries at the two support indices are 1/2 (in units of
        // the coarse quadrature), off-diagonal vanishes
        assert!((k[(2, 2)].re * t - 0.5).abs() < 1e-9);
        assert!((k[(5, 5)].re * t - 0.5).abs() < 1e-9);
        assert!(k[(2, 5)].norm() * t < 1e-9);
        for i in [0usize, 1, 3, 4, 6, 7] {
            assert!(k[(i, i)].re * t < 1e-9);
        }
    }

    #[test]
    fn single_point_schedule_degenerates_cleanly() {
        let (_grid, filter, _times) = nyquist_setup();
        let assembly = assemble_density(
            &filter,
            &[0.0],
            &[0.8],
            &[],
            &AssemblyOptions { deconvolve: false, clip_threshold: 1e-3 },
        )
        .unwrap();
        assert_eq!(assembly.grid.n_points(), 1);
        assert!((assembly.density.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filtered_kernel_matches_direct_computation() {
        let (_grid, filter, times) = nyquist_setup();
        let psi = random_in_band(&filter, &times, 5);
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let result = reconstruct(
            &records,
            &schedule,
            &AssemblyOptions { deconvolve: false, clip_threshold: 1e-3 },
        )
        .unwrap();
        for (i, &ti) in times.iter().enumerate() {
            for (j, &tj) in times.iter().enumerate() {
                let phys = direct_filtered_element(&rho, &filter, ti, tj);
                let env = phys * C64::from_polar(1.0, filter.grid().omega0() * (ti - tj));
                assert!(
                    (result.assembly.filtered_kernel[(i, j)] - env).norm() < 1e-9,
                    "({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn reconstruct_rejects_missing_and_duplicate_records() {
        let (_grid, filter, times) = nyquist_setup();
        let psi = random_in_band(&filter, &times, 1);
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter.clone(), times.clone()).unwrap();
        let records = forward_rates(&rho, &schedule).unwrap();
        let options = AssemblyOptions::default();

        let missing = &records[1..];
        assert!(reconstruct(missing, &schedule, &options).is_err());

        let mut dup = records.clone();
        dup.push(records[0]);
        assert!(reconstruct(&dup, &schedule, &options).is_err());
    }

    #[test]
    fn overlapping_support_times_surface_as_probability_errors() {
        // support times closer than the pulse width: the two-time operator is
        // not a scaled projector there and its expectation leaves [0, 1];
        // the forward model reports that instead of clipping it away
        let (grid, filter, _times) = nyquist_setup();
        let t1 = grid.time(120);
        let t2 = grid.time(124); // 4 dt apart, pulse is ~32 dt wide
        let w = TemporalState::new_unnormalized(
            grid,
            filter.reference_state(t1).unwrap().amp()
                + filter.reference_state(t2).unwrap().amp(),
        )
        .unwrap()
        .normalize()
        .unwrap();
        let rho = DensityMatrix::from_pure(&w).unwrap();
        let schedule =
            TomographySchedule::with_default_phases(filter, vec![t1, t2]).unwrap();
        assert!(matches!(
            forward_rates(&rho, &schedule),
            Err(HomtomoError::InvalidProbability { .. })
        ));
    }

    #[test]
    fn schedule_validation() {
        let (_grid, filter, times) = nyquist_setup();
        assert!(TomographySchedule::new(filter.clone(), vec![], DEFAULT_PHASES.to_vec()).is_err());
        assert!(TomographySchedule::new(
            filter.clone(),
            vec![0.0, 0.0],
            DEFAULT_PHASES.to_vec()
        )
        .is_err());
        assert!(TomographySchedule::new(filter.clone(), times.clone(), vec![0.0, 1.0]).is_err());
        assert!(TomographySchedule::new(
            filter.clone(),
            times,
            vec![0.0, 1.0, std::f64::consts::TAU]
        )
        .is_err());
    }

    #[test]
    fn fidelity_basics() {
        let grid = test_grid();
        let a = gaussian_state(&grid, 8.0 * grid.dt(), -40.0 * grid.dt());
        let b = gaussian_state(&grid, 8.0 * grid.dt(), 40.0 * grid.dt());
        let ra = DensityMatrix::from_pure(&a).unwrap();
        let rb = DensityMatrix::from_pure(&b).unwrap();
        assert!((fidelity(&ra, &ra).unwrap() - 1.0).abs() < 1e-9);
        assert!(fidelity(&ra, &rb).unwrap() < 1e-9);
        let mix = DensityMatrix::from_mixture(&[(0.5, a), (0.5, b)]).unwrap();
        assert!((fidelity(&ra, &mix).unwrap() - 0.5).abs() < 1e-9);
        // symmetry
        assert!(
            (fidelity(&ra, &mix).unwrap() - fidelity(&mix, &ra).unwrap()).abs() < 1e-9
        );
    }

    #[test]
    fn in_band_sampling_preserves_inner_products() {
        // sanity for the Nyquist subsampling argument behind the setup
        let (_grid, filter, times) = nyquist_setup();
        let a = random_in_band(&filter, &times, 21);
        let b = random_in_band(&filter, &times, 22);
        let coarse = TimeGrid::new_allow_single(8, 32.0 * filter.grid().dt(), times[0],
            filter.grid().omega0()).unwrap();
        let ca = sample_state_on(&coarse, &a).unwrap();
        let cb = sample_state_on(&coarse, &b).unwrap();
        let fine_ip = state_inner(&a, &b).unwrap();
        let coarse_ip = state_inner(&ca, &cb).unwrap();
        assert!((fine_ip - coarse_ip).norm() < 1e-9);
    }

    #[test]
    fn assembly_requires_uniform_spacing() {
        let (_grid, filter, _times) = nyquist_setup();
        let times = vec![0.0, 1e-12, 3e-12];
        let err = assemble_density(
            &filter,
            &times,
            &[0.1, 0.2, 0.1],
            &[],
            &AssemblyOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn spectral_state_unused_import_guard() {
        // keep to_time/SpectralState in scope for the in-band constructions
        let grid = crate::grid::test_support::small_grid(8);
        let amp = DVector::from_element(8, C64::new(0.0, 0.0));
        let s = SpectralState::new_unnormalized(grid, amp).unwrap();
        assert_eq!(to_time(&s).norm_sq(), 0.0);
    }
}
