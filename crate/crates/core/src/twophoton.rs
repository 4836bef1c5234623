//! Bipartite temporal states, the four-fold coincidence observable, the
//! two-by-two projector algebra between pairs of detection times,
//! phase-Fourier extraction of the two-photon coherence, the separability
//! bound witness, and the 3/8-crossing entanglement-timescale scan.
//!
//! Two-photon states are kept as ensembles of pure joint amplitudes (never as
//! an n^2 x n^2 density matrix): memory stays O(n^2) and separable mixtures
//! are representable exactly, which is what the separability bound tests
//! need.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use num_complex::Complex64 as C64;
use std::f64::consts::TAU;

use crate::error::{HomtomoError, Result};
use crate::grid::{TemporalState, TimeGrid};
use crate::math::erfc;
use crate::measurement::CoherenceSetting;
use crate::reference::{FilterOperator, LEAKAGE_LIMIT};

/// Separable states cannot push the two-photon coherence above this value.
pub const SEPARABLE_BOUND: f64 = 0.25;
/// Scan landmark halfway between maximal entanglement (1/2) and the
/// separable ceiling (1/4).
pub const TIMESCALE_LEVEL: f64 = 0.375;

/// Two-photon state on a shared grid: a convex ensemble of pure joint
/// amplitudes `psi(t_A, t_B)` (rows index arm A, columns arm B).
#[derive(Debug, Clone)]
pub struct BipartiteState {
    grid: TimeGrid,
    ensemble: Vec<(f64, DMatrix<C64>)>,
}

impl BipartiteState {
    /// Build from an explicit ensemble. Weights must be positive and sum to
    /// one; every member must be normalized (`sum |psi|^2 dt^2 = 1`).
    pub fn from_ensemble(grid: TimeGrid, ensemble: Vec<(f64, DMatrix<C64>)>) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(HomtomoError::InvalidParameter("empty ensemble".into()));
        }
        let total: f64 = ensemble.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(HomtomoError::InvalidParameter(format!(
                "ensemble weights sum to {total}"
            )));
        }
        let n = grid.n_points();
        for (w, amp) in &ensemble {
            if *w <= 0.0 {
                return Err(HomtomoError::InvalidParameter(format!("weight {w} <= 0")));
            }
            if amp.nrows() != n || amp.ncols() != n {
                return Err(HomtomoError::InvalidGrid(format!(
                    "joint amplitude shape {}x{} != grid size {n}",
                    amp.nrows(),
                    amp.ncols()
                )));
            }
            let norm = joint_norm_sq(&grid, amp);
            if (norm - 1.0).abs() > 1e-9 {
                return Err(HomtomoError::NotNormalized { norm_sq: norm });
            }
        }
        Ok(Self { grid, ensemble })
    }

    /// Pure two-photon state; the amplitude is normalized numerically.
    pub fn pure(grid: TimeGrid, amp: DMatrix<C64>) -> Result<Self> {
        let norm = joint_norm_sq(&grid, &amp);
        if norm <= 0.0 || !norm.is_finite() {
            return Err(HomtomoError::NotNormalized { norm_sq: norm });
        }
        Self::from_ensemble(grid, vec![(1.0, amp / C64::from(norm.sqrt()))])
    }

    /// Product of two single-photon states.
    pub fn product(a: &TemporalState, b: &TemporalState) -> Result<Self> {
        a.grid().check_same(b.grid(), "product state arms")?;
        if !a.is_normalized() || !b.is_normalized() {
            return Err(HomtomoError::NotNormalized {
                norm_sq: a.norm_sq() * b.norm_sq(),
            });
        }
        let n = a.grid().n_points();
        let amp = DMatrix::from_fn(n, n, |j, k| a.amp()[j] * b.amp()[k]);
        Self::from_ensemble(*a.grid(), vec![(1.0, amp)])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn ensemble(&self) -> &[(f64, DMatrix<C64>)] {
        &self.ensemble
    }
}

fn joint_norm_sq(grid: &TimeGrid, amp: &DMatrix<C64>) -> f64 {
    amp.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dt() * grid.dt()
}

/// Coherence settings for both arms of a four-fold coincidence measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSetting {
    pub a: CoherenceSetting,
    pub b: CoherenceSetting,
}

/// The two detection-time pairs probed by a coherence scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTimes {
    t1_a: f64,
    t2_a: f64,
    t1_b: f64,
    t2_b: f64,
}

impl PairTimes {
    /// Times must be distinct within each arm; matching times across arms are
    /// allowed (and typical for simultaneously emitted pairs).
    pub fn new(t1_a: f64, t2_a: f64, t1_b: f64, t2_b: f64) -> Result<Self> {
        if t1_a == t2_a || t1_b == t2_b {
            return Err(HomtomoError::InvalidSetting(
                "detection-time pair degenerate within one arm".into(),
            ));
        }
        Ok(Self { t1_a, t2_a, t1_b, t2_b })
    }

    /// Same pair `(t1, t2)` in both arms.
    pub fn symmetric(t1: f64, t2: f64) -> Result<Self> {
        Self::new(t1, t2, t1, t2)
    }
}

fn branch_vector(
    filter: &FilterOperator,
    t1: f64,
    t2: f64,
    phi: f64,
) -> Result<DVector<C64>> {
    let u1 = filter.reference_state(t1)?;
    let u2 = filter.reference_state(t2)?;
    Ok(u1.amp() + u2.amp() * C64::from_polar(1.0, phi))
}

/// Expectation of the four-fold coincidence observable
/// `M_s(t1A, t2A, phiA) (x) M_s(t1B, t2B, phiB)` on a bipartite state,
/// evaluated by applying the single-arm rank-one kernels to the joint
/// amplitude from the left and right.
pub fn fourfold_probability(
    state: &BipartiteState,
    filter_a: &FilterOperator,
    filter_b: &FilterOperator,
    setting: &PairSetting,
) -> Result<f64> {
    state.grid().check_same(filter_a.grid(), "state and arm-A filter")?;
    state.grid().check_same(filter_b.grid(), "state and arm-B filter")?;
    let w_a = branch_vector(filter_a, setting.a.t1(), setting.a.t2(), setting.a.phi())?;
    let w_b = branch_vector(filter_b, setting.b.t1(), setting.b.t2(), setting.b.phi())?;
    let dt = state.grid().dt();

    let mut p = 0.0;
    for (weight, psi) in state.ensemble() {
        // a_k = sum_j conj(wA_j) psi_jk dt ; b_j = sum_k psi_jk conj(wB_k) dt
        let a_row = (w_a.adjoint() * psi) * C64::from(dt);
        let b_col = (psi * w_b.map(|z| z.conj())) * C64::from(dt);
        let term_a = -0.25 * a_row.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt;
        let term_b = -0.25 * b_col.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt;
        let s: C64 = a_row
            .iter()
            .zip(w_b.iter())
            .map(|(a, w)| a * w.conj())
            .sum::<C64>()
            * C64::from(dt);
        let term_ab = s.norm_sqr() / 16.0;
        p += weight * (0.25 + 0.5 * term_a + 0.5 * term_b + term_ab);
    }
    Ok(p)
}

/// The reference-product projector in the four-dimensional subspace spanned
/// by `{|t1A,t1B>, |t1A,t2B>, |t2A,t1B>, |t2A,t2B>}`: rank one, trace one,
/// idempotent, with entry `(1,4) = exp(-i(phiA+phiB))/4`.
pub fn projector_matrix(phi_a: f64, phi_b: f64) -> Matrix4<C64> {
    let v = Vector4::new(
        C64::from(0.5),
        C64::from_polar(0.5, phi_b),
        C64::from_polar(0.5, phi_a),
        C64::from_polar(0.5, phi_a + phi_b),
    );
    let mut p = Matrix4::zeros();
    for j in 0..4 {
        for k in 0..4 {
            p[(j, k)] = v[j] * v[k].conj();
        }
    }
    p
}

/// The state's density block on the four-dimensional detection-time subspace,
/// `R[(p,q),(r,s)] = <F t_p^A, F t_q^B | rho | F t_r^A, F t_s^B>`, in the
/// basis order of [`projector_matrix`]. Not normalized: its trace is the
/// probability weight the state carries on the subspace.
pub fn restricted_block(
    state: &BipartiteState,
    filter_a: &FilterOperator,
    filter_b: &FilterOperator,
    times: &PairTimes,
) -> Result<Matrix4<C64>> {
    state.grid().check_same(filter_a.grid(), "state and arm-A filter")?;
    state.grid().check_same(filter_b.grid(), "state and arm-B filter")?;
    let u_a = [
        filter_a.reference_state(times.t1_a)?,
        filter_a.reference_state(times.t2_a)?,
    ];
    let u_b = [
        filter_b.reference_state(times.t1_b)?,
        filter_b.reference_state(times.t2_b)?,
    ];
    let dt2 = state.grid().dt() * state.grid().dt();
    let mut block = Matrix4::zeros();
    for (weight, psi) in state.ensemble() {
        // overlap coefficients S_pq = <u_p^A u_q^B | psi>
        let mut c = Vector4::zeros();
        for p in 0..2 {
            let row = u_a[p].amp().adjoint() * psi;
            for q in 0..2 {
                let s: C64 = row
                    .iter()
                    .zip(u_b[q].amp().iter())
                    .map(|(r, u)| r * u.conj())
                    .sum::<C64>()
                    * C64::from(dt2);
                c[2 * p + q] = s;
            }
        }
        for j in 0..4 {
            for k in 0..4 {
                block[(j, k)] += C64::from(*weight) * c[j] * c[k].conj();
            }
        }
    }
    Ok(block)
}

/// Precomputed per-member projections for evaluating the four-fold
/// probability at many phase settings of one fixed time pair. Evaluation is
/// O(1) per (member, phase) after an O(n^2) setup, with results identical to
/// [`fourfold_probability`].
struct FourfoldScan {
    dt: f64,
    members: Vec<MemberProjection>,
}

struct MemberProjection {
    weight: f64,
    /// squared norms of the arm-A projections q_p = (u_p^A)^H psi dt
    norm_a: [f64; 2],
    /// cross term <q_1, q_2>
    cross_a: C64,
    norm_b: [f64; 2],
    cross_b: C64,
    /// overlap coefficients S_pq = <u_p^A u_q^B | psi>
    s: [[C64; 2]; 2],
}

impl FourfoldScan {
    fn new(
        state: &BipartiteState,
        filter_a: &FilterOperator,
        filter_b: &FilterOperator,
        times: &PairTimes,
    ) -> Result<Self> {
        state.grid().check_same(filter_a.grid(), "state and arm-A filter")?;
        state.grid().check_same(filter_b.grid(), "state and arm-B filter")?;
        let u_a = [
            filter_a.reference_state(times.t1_a)?,
            filter_a.reference_state(times.t2_a)?,
        ];
        let u_b = [
            filter_b.reference_state(times.t1_b)?,
            filter_b.reference_state(times.t2_b)?,
        ];
        let dt = state.grid().dt();
        let members = state
            .ensemble()
            .iter()
            .map(|(weight, psi)| {
                let q: Vec<_> = (0..2)
                    .map(|p| (u_a[p].amp().adjoint() * psi) * C64::from(dt))
                    .collect();
                let h: Vec<_> = (0..2)
                    .map(|p| (psi * u_b[p].amp().map(|z| z.conj())) * C64::from(dt))
                    .collect();
                let mut s = [[C64::new(0.0, 0.0); 2]; 2];
                for p in 0..2 {
                    for r in 0..2 {
                        s[p][r] = q[p]
                            .iter()
                            .zip(u_b[r].amp().iter())
                            .map(|(a, u)| a * u.conj())
                            .sum::<C64>()
                            * C64::from(dt);
                    }
                }
                MemberProjection {
                    weight: *weight,
                    norm_a: [q[0].norm_squared(), q[1].norm_squared()],
                    cross_a: q[0].iter().zip(q[1].iter()).map(|(a, b)| a.conj() * b).sum(),
                    norm_b: [h[0].norm_squared(), h[1].norm_squared()],
                    cross_b: h[0].iter().zip(h[1].iter()).map(|(a, b)| a.conj() * b).sum(),
                    s,
                }
            })
            .collect();
        Ok(Self { dt, members })
    }

    fn probability(&self, phi_a: f64, phi_b: f64) -> f64 {
        let ca = C64::from_polar(1.0, -phi_a);
        let cb = C64::from_polar(1.0, -phi_b);
        let mut p = 0.0;
        for m in &self.members {
            let na = m.norm_a[0] + m.norm_a[1] + 2.0 * (ca * m.cross_a).re;
            let nb = m.norm_b[0] + m.norm_b[1] + 2.0 * (cb * m.cross_b).re;
            let s = m.s[0][0] + cb * m.s[0][1] + ca * m.s[1][0] + ca * cb * m.s[1][1];
            p += m.weight * (0.25 - 0.125 * self.dt * (na + nb) + s.norm_sqr() / 16.0);
        }
        p
    }
}

/// Extract the two-photon coherence `<t1A, t1B| rho_F |t2A, t2B>` from
/// four-fold coincidence rates scanned over a `K x K` uniform phase grid.
///
/// The coherence is the only contribution depending on `phiA + phiB`; a 2-D
/// discrete Fourier transform isolates its `(+1, +1)` component, which needs
/// `K >= 3` to avoid aliasing. `offsets` shifts the origin of the phase grid
/// in each arm; the extracted value is independent of any offset pair
/// `(c, -c)`.
pub fn two_photon_coherence(
    state: &BipartiteState,
    filter_a: &FilterOperator,
    filter_b: &FilterOperator,
    times: &PairTimes,
    phase_grid: usize,
    offsets: (f64, f64),
) -> Result<C64> {
    if phase_grid < 3 {
        return Err(HomtomoError::InvalidParameter(format!(
            "phase grid K = {phase_grid} aliases the (1,1) Fourier component; need K >= 3"
        )));
    }
    let scan = FourfoldScan::new(state, filter_a, filter_b, times)?;
    let k = phase_grid as f64;
    let mut coeff = C64::new(0.0, 0.0);
    for ia in 0..phase_grid {
        let phi_a = offsets.0 + TAU * ia as f64 / k;
        for ib in 0..phase_grid {
            let phi_b = offsets.1 + TAU * ib as f64 / k;
            let p = scan.probability(phi_a, phi_b);
            coeff += C64::from_polar(p, -(phi_a + phi_b));
        }
    }
    // correlation term carries the coherence as |s|^2/16; the (1,1) Fourier
    // coefficient of the probability is S11 * conj(S22) / 16
    Ok(coeff * C64::from(16.0 / (k * k)))
}

/// Witness verdict for a measured two-photon coherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessVerdict {
    /// True iff the coherence modulus strictly exceeds the separable bound.
    pub entangled: bool,
    /// `|coherence| - 1/4`; the boundary itself is not a violation.
    pub margin: f64,
}

/// Apply the separability bound: values above 1/4 certify entanglement.
pub fn entanglement_witness(coherence: C64) -> WitnessVerdict {
    let modulus = coherence.norm();
    WitnessVerdict { entangled: modulus > SEPARABLE_BOUND, margin: modulus - SEPARABLE_BOUND }
}

/// One point of a timescale scan.
#[derive(Debug, Clone, Copy)]
pub struct TimescalePoint {
    pub delta_t: f64,
    /// Raw coherence in the delta convention.
    pub coherence: C64,
    /// Coherence normalized by the trace of the restricted four-dimensional
    /// block, the quantity the 1/4 and 1/2 landmarks refer to when the state
    /// extends beyond the probed subspace.
    pub normalized: f64,
}

/// Result of [`entanglement_timescale`].
#[derive(Debug, Clone)]
pub struct TimescaleScan {
    pub points: Vec<TimescalePoint>,
    /// Linearly interpolated separation where the normalized coherence
    /// crosses 3/8, if the scan brackets one.
    pub crossing: Option<f64>,
    /// Extrema of the normalized coherence over the scan, reported with a
    /// "no crossing" outcome.
    pub min_normalized: f64,
    pub max_normalized: f64,
}

/// Scan the two-photon coherence `<t1, t1| rho_F |t2, t2>` over time
/// separations `t2 - t1 = delta_t` with `t1 = t_base`, and locate the 3/8
/// crossing of its normalized modulus. A scan that does not bracket the level
/// reports no crossing rather than extrapolating.
pub fn entanglement_timescale(
    state: &BipartiteState,
    filter: &FilterOperator,
    t_base: f64,
    dt_scan: &[f64],
    phase_grid: usize,
) -> Result<TimescaleScan> {
    if dt_scan.is_empty() {
        return Err(HomtomoError::InvalidParameter("empty separation scan".into()));
    }
    for w in dt_scan.windows(2) {
        if w[1] <= w[0] {
            return Err(HomtomoError::InvalidParameter(
                "separation scan must be strictly increasing".into(),
            ));
        }
    }
    if dt_scan[0] <= 0.0 {
        return Err(HomtomoError::InvalidParameter(
            "separations must be positive (delta_t = 0 is degenerate)".into(),
        ));
    }
    let mut points = Vec::with_capacity(dt_scan.len());
    for &delta in dt_scan {
        let times = PairTimes::symmetric(t_base, t_base + delta)?;
        let raw = two_photon_coherence(state, filter, filter, &times, phase_grid, (0.0, 0.0))?;
        let tr = restricted_block(state, filter, filter, &times)?.trace().re;
        if tr <= 0.0 {
            return Err(HomtomoError::InvalidParameter(format!(
                "state carries no weight on the probed subspace at delta_t = {delta:.3e}"
            )));
        }
        points.push(TimescalePoint { delta_t: delta, coherence: raw, normalized: raw.norm() / tr });
    }
    let mut crossing = None;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if (lo.normalized - TIMESCALE_LEVEL) * (hi.normalized - TIMESCALE_LEVEL) <= 0.0
            && lo.normalized != hi.normalized
        {
            let frac = (TIMESCALE_LEVEL - lo.normalized) / (hi.normalized - lo.normalized);
            crossing = Some(lo.delta_t + frac * (hi.delta_t - lo.delta_t));
            break;
        }
    }
    let min = points.iter().map(|p| p.normalized).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.normalized).fold(0.0_f64, f64::max);
    Ok(TimescaleScan { points, crossing, min_normalized: min, max_normalized: max })
}

/// Gaussian model of a down-converted photon pair:
/// `psi(tA, tB) ~ exp(-(tA+tB)^2/(8 Tp^2) - (tA-tB)^2/(8 Tc^2))`,
/// pairs emitted around `t = 0` within the pump duration `Tp` and correlated
/// to within `Tc`. `Tp = Tc` factorizes into a separable product.
pub fn pdc_model(grid: &TimeGrid, pump_duration: f64, correlation_time: f64) -> Result<BipartiteState> {
    let (tp, tc) = (pump_duration, correlation_time);
    if tc <= 0.0 || tp < tc || tc.is_nan() || tp.is_nan() || !tp.is_finite() {
        return Err(HomtomoError::InvalidParameter(format!(
            "need pump_duration >= correlation_time > 0, got ({tp:.3e}, {tc:.3e})"
        )));
    }
    if tc < 2.0 * grid.dt() {
        return Err(HomtomoError::InvalidParameter(format!(
            "correlation time {tc:.3e} not resolvable at dt = {:.3e}",
            grid.dt()
        )));
    }
    // single-arm marginal has rms sqrt((Tp^2 + Tc^2)/2); guard the window
    let sigma = ((tp * tp + tc * tc) / 2.0).sqrt();
    let leak = 0.5 * erfc(grid.t_end() / (2.0_f64.sqrt() * sigma))
        + 0.5 * erfc(-grid.t_start() / (2.0_f64.sqrt() * sigma));
    if leak > LEAKAGE_LIMIT {
        return Err(HomtomoError::NormLeakage { leakage: leak, limit: LEAKAGE_LIMIT });
    }
    let n = grid.n_points();
    let amp = DMatrix::from_fn(n, n, |j, k| {
        let ta = grid.time(j);
        let tb = grid.time(k);
        let sum = ta + tb;
        let diff = ta - tb;
        C64::from((-sum * sum / (8.0 * tp * tp) - diff * diff / (8.0 * tc * tc)).exp())
    });
    BipartiteState::pure(*grid, amp)
}

/// Maximally entangled two-time pair `(F|t1,t1> + F|t2,t2>)/sqrt(2)`,
/// the state that saturates the coherence at 1/2 for separated times.
pub fn max_entangled_pair(
    filter_a: &FilterOperator,
    filter_b: &FilterOperator,
    t1: f64,
    t2: f64,
) -> Result<BipartiteState> {
    filter_a.grid().check_same(filter_b.grid(), "arm filters")?;
    if t1 == t2 {
        return Err(HomtomoError::InvalidSetting("t1 = t2".into()));
    }
    let u1a = filter_a.reference_state(t1)?;
    let u2a = filter_a.reference_state(t2)?;
    let u1b = filter_b.reference_state(t1)?;
    let u2b = filter_b.reference_state(t2)?;
    let n = filter_a.grid().n_points();
    let amp = DMatrix::from_fn(n, n, |j, k| {
        u1a.amp()[j] * u1b.amp()[k] + u2a.amp()[j] * u2b.amp()[k]
    });
    BipartiteState::pure(*filter_a.grid(), amp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_support::{gaussian_state, test_grid};
    use crate::grid::DensityMatrix;
    use crate::measurement::coherence_operator;
    use crate::reference::{make_pulse, ReferenceSpec, SuperpositionMode};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Rect filter resolving 8 Nyquist-spaced support times; delayed
    /// references at multiples of 32 dt are exactly orthonormal.
    fn rect_setup() -> (TimeGrid, FilterOperator) {
        let grid = test_grid();
        let dw = 8.0 * grid.freq_spacing();
        let pulse = make_pulse(&grid, &ReferenceSpec::rect_spectrum(dw, 0.0)).unwrap();
        (grid, FilterOperator::from_pulse(&pulse).unwrap())
    }

    fn spaced_times(grid: &TimeGrid) -> (f64, f64) {
        (grid.time(64), grid.time(160)) // 96 dt = 3 Nyquist periods apart
    }

    #[test]
    fn product_state_factorizes() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let a = gaussian_state(&grid, 20.0 * grid.dt(), -30.0 * grid.dt());
        let b = gaussian_state(&grid, 15.0 * grid.dt(), 40.0 * grid.dt());
        let pair = BipartiteState::product(&a, &b).unwrap();
        let setting = PairSetting {
            a: CoherenceSetting::new(t1, t2, 0.7).unwrap(),
            b: CoherenceSetting::new(t1, t2, -1.1).unwrap(),
        };
        let joint = fourfold_probability(&pair, &f, &f, &setting).unwrap();
        let pa = coherence_operator(&f, &setting.a)
            .unwrap()
            .expectation(&DensityMatrix::from_pure(&a).unwrap())
            .unwrap();
        let pb = coherence_operator(&f, &setting.b)
            .unwrap()
            .expectation(&DensityMatrix::from_pure(&b).unwrap())
            .unwrap();
        assert!((joint - pa * pb).abs() < 1e-10, "{joint} vs {}", pa * pb);
    }

    #[test]
    fn orthogonal_arms_give_quarter() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        // out-of-band states are orthogonal to every reference
        let n = grid.n_points();
        let mut amp = DVector::zeros(n);
        amp[10] = C64::from(1.0);
        let out_band = crate::grid::to_time(
            &crate::grid::SpectralState::new_unnormalized(grid, {
                let mut s = DVector::zeros(n);
                s[5] = C64::from(1.0); // far outside the 8-bin band
                s
            })
            .unwrap(),
        )
        .normalize()
        .unwrap();
        let pair = BipartiteState::product(&out_band, &out_band).unwrap();
        let setting = PairSetting {
            a: CoherenceSetting::new(t1, t2, 0.0).unwrap(),
            b: CoherenceSetting::new(t1, t2, 1.0).unwrap(),
        };
        let p = fourfold_probability(&pair, &f, &f, &setting).unwrap();
        assert!((p - 0.25).abs() < 1e-10);
    }

    #[test]
    fn projector_matrix_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let pa = rng.gen_range(-3.1..3.1);
            let pb = rng.gen_range(-3.1..3.1);
            let p = projector_matrix(pa, pb);
            // idempotent, trace one, rank one
            let p2 = p * p;
            for j in 0..4 {
                for k in 0..4 {
                    assert!((p2[(j, k)] - p[(j, k)]).norm() < 1e-12);
                }
            }
            let tr: C64 = (0..4).map(|j| p[(j, j)]).sum();
            assert!((tr - C64::from(1.0)).norm() < 1e-12);
            // all diagonal entries 1/4: rank-one projector built from an
            // equal-magnitude vector
            for j in 0..4 {
                assert!((p[(j, j)].re - 0.25).abs() < 1e-12);
            }
            // phase structure of the corner entries
            assert!((p[(0, 3)] - C64::from_polar(0.25, -(pa + pb))).norm() < 1e-12);
            assert!((p[(1, 2)] - C64::from_polar(0.25, -(pa - pb))).norm() < 1e-12);
            assert!((p[(3, 0)] - C64::from_polar(0.25, pa + pb)).norm() < 1e-12);
        }
        // zero phases: every entry is exactly 1/4
        let p0 = projector_matrix(0.0, 0.0);
        for j in 0..4 {
            for k in 0..4 {
                assert!((p0[(j, k)] - C64::from(0.25)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn correlation_term_matches_projector_algebra() {
        // restricting the correlation part of the four-fold observable to the
        // 4-dim subspace reproduces tr(P R) / 4
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let state = max_entangled_pair(&f, &f, t1, t2).unwrap();
        let block = restricted_block(&state, &f, &f, &times).unwrap();
        for (pa, pb) in [(0.0, 0.0), (0.9, -0.4), (2.2, 1.3)] {
            let setting = PairSetting {
                a: CoherenceSetting::new(t1, t2, pa).unwrap(),
                b: CoherenceSetting::new(t1, t2, pb).unwrap(),
            };
            let p4 = fourfold_probability(&state, &f, &f, &setting).unwrap();
            // subtract background and local terms computed from the block
            // diagonals: reduced single-arm weights
            let da1 = block[(0, 0)].re + block[(1, 1)].re; // t1A weight
            let da2 = block[(2, 2)].re + block[(3, 3)].re;
            let db1 = block[(0, 0)].re + block[(2, 2)].re;
            let db2 = block[(1, 1)].re + block[(3, 3)].re;
            // local bunching terms: -1/8 (dA1 + dA2 + 2 Re e^{i phi} rhoA12)
            // for a state with no single-photon coherence between t1 and t2
            // the phi-dependence vanishes and the weights suffice
            let local_a = -0.125 * (da1 + da2);
            let local_b = -0.125 * (db1 + db2);
            let corr = p4 - 0.25 - local_a - local_b;
            let expect = (projector_matrix(pa, pb) * block).trace().re / 4.0;
            assert!(
                (corr - expect).abs() < 1e-10,
                "phases ({pa}, {pb}): {corr} vs {expect}"
            );
        }
    }

    #[test]
    fn coherence_landmarks() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();

        // separable equal superpositions in both arms: 1/4
        let sup = crate::reference::superposition_reference(
            &f,
            t1,
            t2,
            0.0,
            SuperpositionMode::ExactPhase,
        )
        .unwrap();
        let sep = BipartiteState::product(&sup, &sup).unwrap();
        let c_sep = two_photon_coherence(&sep, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
        assert!((c_sep.norm() - 0.25).abs() < 1e-9, "|c| = {}", c_sep.norm());

        // maximally entangled pair: 1/2
        let ent = max_entangled_pair(&f, &f, t1, t2).unwrap();
        let c_ent = two_photon_coherence(&ent, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
        assert!((c_ent.norm() - 0.5).abs() < 1e-9, "|c| = {}", c_ent.norm());

        // classically correlated mixture: no coherence
        let u1 = f.reference_state(t1).unwrap();
        let u2 = f.reference_state(t2).unwrap();
        let n = grid.n_points();
        let m11 = DMatrix::from_fn(n, n, |j, k| u1.amp()[j] * u1.amp()[k]);
        let m22 = DMatrix::from_fn(n, n, |j, k| u2.amp()[j] * u2.amp()[k]);
        let nrm = |m: &DMatrix<C64>| {
            let s = joint_norm_sq(&grid, m);
            m / C64::from(s.sqrt())
        };
        let mix =
            BipartiteState::from_ensemble(grid, vec![(0.5, nrm(&m11)), (0.5, nrm(&m22))])
                .unwrap();
        let c_mix = two_photon_coherence(&mix, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
        assert!(c_mix.norm() < 1e-9, "|c| = {}", c_mix.norm());
    }

    #[test]
    fn coherence_matches_restricted_block_element() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let pdc = pdc_model(&grid, 40.0 * grid.dt(), 4.0 * grid.dt()).unwrap();
        let via_fourier = two_photon_coherence(&pdc, &f, &f, &times, 5, (0.0, 0.0)).unwrap();
        let block = restricted_block(&pdc, &f, &f, &times).unwrap();
        assert!(
            (via_fourier - block[(0, 3)]).norm() < 1e-10,
            "{via_fourier} vs {}",
            block[(0, 3)]
        );
    }

    #[test]
    fn scan_engine_matches_generic_fourfold() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let pdc = pdc_model(&grid, 40.0 * grid.dt(), 4.0 * grid.dt()).unwrap();
        let scan = FourfoldScan::new(&pdc, &f, &f, &times).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..8 {
            let pa = rng.gen_range(-3.1..3.1);
            let pb = rng.gen_range(-3.1..3.1);
            let setting = PairSetting {
                a: CoherenceSetting::new(t1, t2, pa).unwrap(),
                b: CoherenceSetting::new(t1, t2, pb).unwrap(),
            };
            let slow = fourfold_probability(&pdc, &f, &f, &setting).unwrap();
            let fast = scan.probability(pa, pb);
            assert!((slow - fast).abs() < 1e-12, "({pa}, {pb}): {slow} vs {fast}");
        }
    }

    #[test]
    fn phase_grid_minimum_enforced() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let ent = max_entangled_pair(&f, &f, t1, t2).unwrap();
        assert!(two_photon_coherence(&ent, &f, &f, &times, 2, (0.0, 0.0)).is_err());
        // K = 3 resolves the component exactly
        let c3 = two_photon_coherence(&ent, &f, &f, &times, 3, (0.0, 0.0)).unwrap();
        assert!((c3.norm() - 0.5).abs() < 1e-9);
        let _ = grid;
    }

    #[test]
    fn phase_sum_selectivity() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let pdc = pdc_model(&grid, 40.0 * grid.dt(), 4.0 * grid.dt()).unwrap();
        let base = two_photon_coherence(&pdc, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let c: f64 = rng.gen_range(-3.0..3.0);
            let shifted = two_photon_coherence(&pdc, &f, &f, &times, 4, (c, -c)).unwrap();
            assert!((shifted - base).norm() < 1e-10, "offset {c}");
        }
    }

    #[test]
    fn witness_thresholds() {
        let w = entanglement_witness(C64::from(0.5));
        assert!(w.entangled);
        assert!((w.margin - 0.25).abs() < 1e-12);
        // the boundary is not a violation
        let w = entanglement_witness(C64::from(0.25));
        assert!(!w.entangled);
        assert!(w.margin.abs() < 1e-12);
        let w = entanglement_witness(C64::from(0.1));
        assert!(!w.entangled);
        assert!((w.margin + 0.15).abs() < 1e-12);
        // modulus is what counts
        let w = entanglement_witness(C64::new(0.0, -0.3));
        assert!(w.entangled);
    }

    #[test]
    fn separable_ensembles_respect_the_bound() {
        let (grid, f) = rect_setup();
        let (t1, t2) = spaced_times(&grid);
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let n = grid.n_points();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let parts = rng.gen_range(1..=3);
            let mut weights: Vec<f64> = (0..parts).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let ensemble: Vec<(f64, DMatrix<C64>)> = weights
                .into_iter()
                .map(|w| {
                    let mut a = DVector::zeros(n);
                    let mut b = DVector::zeros(n);
                    for j in 0..n {
                        a[j] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                        b[j] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                    }
                    let m = DMatrix::from_fn(n, n, |j, k| a[j] * b[k]);
                    let s = joint_norm_sq(&grid, &m);
                    (w, m / C64::from(s.sqrt()))
                })
                .collect();
            let sep = BipartiteState::from_ensemble(grid, ensemble).unwrap();
            let c = two_photon_coherence(&sep, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
            worst = worst.max(c.norm());
            assert!(
                c.norm() <= SEPARABLE_BOUND + 1e-6,
                "separable ensemble violated the bound: {}",
                c.norm()
            );
        }
        // the bound is approachable but the random draw should stay below it
        assert!(worst > 0.0);
    }

    #[test]
    fn pdc_model_basics() {
        let grid = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let tc = rng.gen_range(2.5..6.0) * grid.dt();
            let tp = tc * rng.gen_range(1.0..8.0);
            let state = pdc_model(&grid, tp, tc).unwrap();
            let (w, amp) = &state.ensemble()[0];
            assert_eq!(*w, 1.0);
            assert!((joint_norm_sq(&grid, amp) - 1.0).abs() < 1e-9);
        }
        assert!(pdc_model(&grid, 1e-12, 2e-12).is_err()); // Tp < Tc
        assert!(pdc_model(&grid, 1e-12, 1e-14).is_err()); // unresolvable Tc
        assert!(pdc_model(&grid, 1e-9, 1e-12).is_err()); // pump exceeds window
    }

    #[test]
    fn equal_pump_and_correlation_time_is_separable() {
        let (grid, f) = rect_setup();
        let state = pdc_model(&grid, 20.0 * grid.dt(), 20.0 * grid.dt()).unwrap();
        // the joint amplitude factorizes: coherence at or below 1/4; times
        // asymmetric about the pump center keep it strictly below
        let (t1, t2) = (grid.time(100), grid.time(144));
        let times = PairTimes::symmetric(t1, t2).unwrap();
        let c = two_photon_coherence(&state, &f, &f, &times, 4, (0.0, 0.0)).unwrap();
        let tr = restricted_block(&state, &f, &f, &times).unwrap().trace().re;
        assert!(c.norm() / tr <= SEPARABLE_BOUND + 1e-9);
        assert!(!entanglement_witness(c / C64::from(tr)).entangled);
    }

    #[test]
    fn timescale_scan_finds_crossing_for_broadband_pairs() {
        // needs a clean scale separation: filter width << Tc << Tp << window
        let grid = test_grid();
        let dw = 64.0 * grid.freq_spacing();
        let pulse = make_pulse(&grid, &ReferenceSpec::rect_spectrum(dw, 0.0)).unwrap();
        let f = FilterOperator::from_pulse(&pulse).unwrap();
        let tc = 5.0 * grid.dt();
        let state = pdc_model(&grid, 10.0 * tc, tc).unwrap();
        let scan: Vec<f64> = (1..=12).map(|i| i as f64 * tc / 2.0).collect();
        let result = entanglement_timescale(&state, &f, 0.0, &scan, 4).unwrap();
        let crossing = result.crossing.expect("scan brackets the 3/8 level");
        // the gaussian pair model crosses near 2 * sqrt(ln 3) * Tc
        let predict = 2.0 * (3.0_f64).ln().sqrt() * tc;
        assert!(
            (crossing - predict).abs() < 0.15 * predict,
            "crossing {crossing:.3e} vs model {predict:.3e}"
        );
        // normalized coherence rises from the separable ceiling toward 1/2
        assert!(result.min_normalized < TIMESCALE_LEVEL);
        assert!(result.max_normalized > TIMESCALE_LEVEL);
        assert!(result.max_normalized <= 0.5 + 1e-9);
    }

    #[test]
    fn timescale_scan_reports_none_for_separable_input() {
        let (grid, f) = rect_setup();
        let tc = 4.0 * grid.dt();
        let state = pdc_model(&grid, tc, tc).unwrap();
        let scan: Vec<f64> = (1..=8).map(|i| i as f64 * tc / 2.0).collect();
        let result = entanglement_timescale(&state, &f, 0.0, &scan, 4).unwrap();
        assert!(result.crossing.is_none());
        assert!(result.max_normalized <= SEPARABLE_BOUND + 1e-9);
    }

    #[test]
    fn timescale_scan_continuity() {
        let grid = test_grid();
        let dw = 64.0 * grid.freq_spacing();
        let pulse = make_pulse(&grid, &ReferenceSpec::rect_spectrum(dw, 0.0)).unwrap();
        let f = FilterOperator::from_pulse(&pulse).unwrap();
        let tc = 8.0 * grid.dt();
        let state = pdc_model(&grid, 5.0 * tc, tc).unwrap();
        // spacing Tc/10: adjacent normalized values differ by well under 10%
        let scan: Vec<f64> = (4..=24).map(|i| i as f64 * tc / 10.0).collect();
        let result = entanglement_timescale(&state, &f, 0.0, &scan, 4).unwrap();
        for w in result.points.windows(2) {
            let rel = (w[1].normalized - w[0].normalized).abs() / w[0].normalized;
            assert!(rel < 0.1, "jump {rel} at {:.3e}", w[1].delta_t);
        }
    }

    #[test]
    fn timescale_scan_validation() {
        let (grid, f) = rect_setup();
        let state = pdc_model(&grid, 40.0 * grid.dt(), 4.0 * grid.dt()).unwrap();
        assert!(entanglement_timescale(&state, &f, 0.0, &[], 4).is_err());
        assert!(entanglement_timescale(&state, &f, 0.0, &[0.0, 1e-12], 4).is_err());
        assert!(entanglement_timescale(&state, &f, 0.0, &[2e-12, 1e-12], 4).is_err());
    }

    #[test]
    fn ensemble_validation() {
        let grid = test_grid();
        let n = grid.n_points();
        let good = DMatrix::from_fn(n, n, |j, k| {
            if j == 128 && k == 128 { C64::from(1.0 / grid.dt()) } else { C64::new(0.0, 0.0) }
        });
        assert!(BipartiteState::from_ensemble(grid, vec![(0.7, good.clone())]).is_err());
        assert!(BipartiteState::from_ensemble(
            grid,
            vec![(0.5, good.clone()), (0.5, good * C64::from(2.0))]
        )
        .is_err());
        assert!(BipartiteState::from_ensemble(grid, vec![]).is_err());
    }
}
