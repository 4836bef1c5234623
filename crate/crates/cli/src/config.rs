//! Declarative run configuration: a single TOML file with nested sections.
//! All numeric fields are SI (seconds, rad/s).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use homtomo::grid::{TemporalState, TimeGrid};
use homtomo::reference::{make_pulse, FilterOperator, PulseShape, ReferenceSpec};
use homtomo::twophoton::{pdc_model, BipartiteState};

use crate::AppError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub signal: Option<SignalConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub trials: Option<TrialsConfig>,
    #[serde(default)]
    pub tomography: TomographyConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub dt: f64,
    pub t_start: f64,
    pub omega0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub shape: String,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub delta_omega: Option<f64>,
    #[serde(default)]
    pub peak_time: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub kind: String,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub peak_time: f64,
    #[serde(default)]
    pub t1: Option<f64>,
    #[serde(default)]
    pub t2: Option<f64>,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub chirp: Option<f64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub pump_duration: Option<f64>,
    #[serde(default)]
    pub correlation_time: Option<f64>,
}

/// Either an explicit list or a uniform range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Samples {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Samples {
    pub fn values(&self) -> Result<Vec<f64>, AppError> {
        match self {
            Samples::List(v) => Ok(v.clone()),
            Samples::Range { start, stop, count } => {
                if *count < 2 || stop <= start {
                    return Err(AppError::validation(format!(
                        "bad sample range: start {start}, stop {stop}, count {count}"
                    )));
                }
                let step = (stop - start) / (*count as f64 - 1.0);
                Ok((0..*count).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub delays: Option<Samples>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub phases: Option<Vec<f64>>,
    #[serde(default)]
    pub phis: Option<Samples>,
    #[serde(default)]
    pub t_base: f64,
    #[serde(default)]
    pub dt_scan: Option<Vec<f64>>,
    #[serde(default)]
    pub phase_grid: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    pub per_setting: u64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyConfig {
    #[serde(default = "default_true")]
    pub deconvolve: bool,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
    #[serde(default)]
    pub rates_file: Option<PathBuf>,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self { deconvolve: true, clip_threshold: default_clip(), rates_file: None }
    }
}

fn default_true() -> bool {
    true
}

fn default_clip() -> f64 {
    homtomo::tomography::DEFAULT_CLIP_THRESHOLD
}

pub fn load(path: &Path) -> Result<(RunConfig, Vec<u8>), AppError> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::io(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| AppError::config(format!("config is not UTF-8: {e}")))?;
    let config: RunConfig =
        toml::from_str(text).map_err(|e| AppError::config(format!("config parse: {e}")))?;
    Ok((config, bytes))
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<TimeGrid, AppError> {
        TimeGrid::new(self.grid.n_points, self.grid.dt, self.grid.t_start, self.grid.omega0)
            .map_err(AppError::from_lib_validation)
    }

    pub fn build_filter(&self, grid: &TimeGrid) -> Result<FilterOperator, AppError> {
        let shape = match self.reference.shape.as_str() {
            "gaussian" => PulseShape::Gaussian {
                tau: self.reference.tau.ok_or_else(|| {
                    AppError::config("reference.shape = gaussian needs reference.tau".into())
                })?,
            },
            "rect_spectrum" => PulseShape::RectSpectrum {
                delta_omega: self.reference.delta_omega.ok_or_else(|| {
                    AppError::config(
                        "reference.shape = rect_spectrum needs reference.delta_omega".into(),
                    )
                })?,
            },
            other => {
                return Err(AppError::config(format!(
                    "unknown reference.shape {other:?} (gaussian | rect_spectrum)"
                )))
            }
        };
        // the filter is defined by the pulse at peak time zero; delays come
        // from the schedule, so a shifted reference would double-count
        if self.reference.peak_time != 0.0 {
            return Err(AppError::validation(
                "reference.peak_time must be 0; put delays in the schedule".into(),
            ));
        }
        let spec = ReferenceSpec { shape, peak_time: 0.0, phase: 0.0 };
        let pulse = make_pulse(grid, &spec).map_err(AppError::from_lib_validation)?;
        FilterOperator::from_pulse(&pulse).map_err(AppError::from_lib_validation)
    }

    /// Single-photon signal for hom-scan and tomography runs.
    pub fn build_signal(&self, grid: &TimeGrid) -> Result<TemporalState, AppError> {
        let sig = self
            .signal
            .as_ref()
            .ok_or_else(|| AppError::config("missing [signal] section".into()))?;
        let need_tau = || {
            sig.tau.ok_or_else(|| {
                AppError::config(format!("signal.kind = {} needs signal.tau", sig.kind))
            })
        };
        match sig.kind.as_str() {
            "gaussian" => {
                let spec = ReferenceSpec::gaussian(need_tau()?, sig.peak_time);
                make_pulse(grid, &spec).map_err(AppError::from_lib_validation)
            }
            "double_gaussian" => {
                let tau = need_tau()?;
                let (t1, t2) = match (sig.t1, sig.t2) {
                    (Some(a), Some(b)) if a != b => (a, b),
                    _ => {
                        return Err(AppError::config(
                            "double_gaussian needs distinct signal.t1 and signal.t2".into(),
                        ))
                    }
                };
                let g1 = make_pulse(grid, &ReferenceSpec::gaussian(tau, t1))
                    .map_err(AppError::from_lib_validation)?;
                let mut spec2 = ReferenceSpec::gaussian(tau, t2);
                spec2.phase = sig.phase;
                let g2 = make_pulse(grid, &spec2).map_err(AppError::from_lib_validation)?;
                TemporalState::new_unnormalized(*grid, g1.amp() + g2.amp())
                    .and_then(|s| s.normalize())
                    .map_err(AppError::from_lib_validation)
            }
            "chirped_gaussian" => {
                let tau = need_tau()?;
                let chirp = sig.chirp.ok_or_else(|| {
                    AppError::config("chirped_gaussian needs signal.chirp (rad/s^2)".into())
                })?;
                let base = make_pulse(grid, &ReferenceSpec::gaussian(tau, sig.peak_time))
                    .map_err(AppError::from_lib_validation)?;
                let amp = nalgebra::DVector::from_fn(grid.n_points(), |j, _| {
                    let t = grid.time(j) - sig.peak_time;
                    base.amp()[j] * num_complex::Complex64::from_polar(1.0, chirp * t * t)
                });
                TemporalState::new_unnormalized(*grid, amp)
                    .and_then(|s| s.normalize())
                    .map_err(AppError::from_lib_validation)
            }
            "file" => {
                let path = sig.path.as_ref().ok_or_else(|| {
                    AppError::config("signal.kind = file needs signal.path".into())
                })?;
                load_amplitude_table(grid, path)
            }
            "pdc" => Err(AppError::config(
                "signal.kind = pdc is a two-photon model; use the entangle-scan command".into(),
            )),
            other => Err(AppError::config(format!(
                "unknown signal.kind {other:?} \
                 (gaussian | double_gaussian | chirped_gaussian | file | pdc)"
            ))),
        }
    }

    /// Two-photon signal for entangle-scan runs.
    pub fn build_pair_signal(&self, grid: &TimeGrid) -> Result<BipartiteState, AppError> {
        let sig = self
            .signal
            .as_ref()
            .ok_or_else(|| AppError::config("missing [signal] section".into()))?;
        match sig.kind.as_str() {
            "pdc" => {
                let tp = sig.pump_duration.ok_or_else(|| {
                    AppError::config("pdc needs signal.pump_duration".into())
                })?;
                let tc = sig.correlation_time.ok_or_else(|| {
                    AppError::config("pdc needs signal.correlation_time".into())
                })?;
                pdc_model(grid, tp, tc).map_err(AppError::from_lib_validation)
            }
            other => Err(AppError::config(format!(
                "entangle-scan needs signal.kind = pdc, got {other:?}"
            ))),
        }
    }
}

/// Amplitude table: one `index,re,im` row per grid sample (comments with `#`
/// allowed). The state is normalized after loading.
fn load_amplitude_table(grid: &TimeGrid, path: &Path) -> Result<TemporalState, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut amp = nalgebra::DVector::from_element(
        grid.n_points(),
        num_complex::Complex64::new(f64::NAN, 0.0),
    );
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(AppError::validation(format!(
                "{}:{}: expected index,re,im",
                path.display(),
                lineno + 1
            )));
        }
        let idx: usize = fields[0].trim().parse().map_err(|e| {
            AppError::validation(format!("{}:{}: bad index: {e}", path.display(), lineno + 1))
        })?;
        let re: f64 = fields[1].trim().parse().map_err(|e| {
            AppError::validation(format!("{}:{}: bad re: {e}", path.display(), lineno + 1))
        })?;
        let im: f64 = fields[2].trim().parse().map_err(|e| {
            AppError::validation(format!("{}:{}: bad im: {e}", path.display(), lineno + 1))
        })?;
        if idx >= grid.n_points() {
            return Err(AppError::validation(format!(
                "{}:{}: index {idx} out of range",
                path.display(),
                lineno + 1
            )));
        }
        amp[idx] = num_complex::Complex64::new(re, im);
        rows += 1;
    }
    if rows != grid.n_points() || amp.iter().any(|z| z.re.is_nan()) {
        return Err(AppError::validation(format!(
            "{}: need exactly one row per grid sample ({} given, {} needed)",
            path.display(),
            rows,
            grid.n_points()
        )));
    }
    TemporalState::new_unnormalized(*grid, amp)
        .and_then(|s| s.normalize())
        .map_err(AppError::from_lib_validation)
}
