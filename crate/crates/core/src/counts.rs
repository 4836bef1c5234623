//! Finite-statistics simulation of coincidence rates.
//!
//! Sampling is counter-based: each (seed, setting index) pair keys its own
//! ChaCha stream, so results do not depend on evaluation order and scans can
//! run in parallel without changing a single count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{HomtomoError, Result};

/// Number of trials per measurement setting and the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialPlan {
    trials_per_setting: u64,
    seed: u64,
}

impl TrialPlan {
    pub fn new(trials_per_setting: u64, seed: u64) -> Result<Self> {
        if trials_per_setting == 0 {
            return Err(HomtomoError::InvalidParameter(
                "trials_per_setting must be at least 1".into(),
            ));
        }
        Ok(Self { trials_per_setting, seed })
    }

    pub fn trials_per_setting(&self) -> u64 {
        self.trials_per_setting
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// A sampled rate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledRate {
    pub count: u64,
    pub rate: f64,
    pub stderr: f64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn keyed_rng(seed: u64, setting_index: u64) -> ChaCha8Rng {
    let mut state = seed ^ setting_index.rotate_left(32) ^ 0xA076_1D64_78BD_642F;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Draw `count ~ Binomial(trials, p)` from the stream keyed by
/// `(plan.seed, setting_index)` and convert to a rate with standard error
/// `sqrt(rate * (1 - rate) / trials)`.
///
/// Identical inputs give identical outputs across runs and platforms.
pub fn sample_rate(p: f64, plan: &TrialPlan, setting_index: u64) -> Result<SampledRate> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) || !p.is_finite() {
        return Err(HomtomoError::InvalidProbability { value: p });
    }
    let p = p.clamp(0.0, 1.0);
    let trials = plan.trials_per_setting();
    let mut rng = keyed_rng(plan.seed(), setting_index);
    let count = Binomial::new(trials, p)
        .map_err(|e| HomtomoError::InvalidParameter(format!("binomial: {e}")))?
        .sample(&mut rng);
    let rate = count as f64 / trials as f64;
    let stderr = (rate * (1.0 - rate) / trials as f64).sqrt();
    Ok(SampledRate { count, rate, stderr })
}
