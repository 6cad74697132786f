//! Imaging configuration: medium, aperture, frequency sweep and voxel grid.
//!
//! A [`SceneConfig`] is the plain, serialisable description read from a TOML
//! file. [`validate`] checks every invariant and freezes it into a
//! [`ValidatedScene`] with all derived quantities (wavenumbers, sample
//! pitches, spectral axes) precomputed.
//!
//! Coordinate frame: the air/dielectric interface is the plane `y = 0`, the
//! antenna array sits at `y = aperture_y < 0`, receivers and transmitters lie
//! along `x` and the array is scanned along `z`.
//!
//! The image `x` and `z` axes are the output grids of the frequency-domain
//! operators: their pitch equals the receiver pitch and scan pitch, and their
//! sample counts are the FFT sizes (at least the receiver and scan counts; the
//! echo is zero-padded up to them).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{FREE_SPACE_IMPEDANCE, SPEED_OF_LIGHT};

/// Absolute tolerance (m) on the pitch of uniformly sampled axes.
pub const UNIFORMITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("receiver positions are not uniformly spaced (deviation {deviation:e} m)")]
    NonUniformReceivers { deviation: f64 },
    #[error("scan positions are not uniformly spaced (deviation {deviation:e} m)")]
    NonUniformScan { deviation: f64 },
    #[error("relative permittivity must be finite and >= 1, got {0}")]
    BadPermittivity(f64),
    #[error("axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("axis `{0}` needs an explicit start and step")]
    IncompleteAxis(&'static str),
    #[error("axis `{0}` must be strictly increasing and finite")]
    NotIncreasing(&'static str),
    #[error("grid axis `{0}` is not uniformly spaced")]
    NonUniformGrid(&'static str),
    #[error("grid axis `{axis}` pitch {grid} m does not match the sampling pitch {expected} m")]
    GridPitchMismatch {
        axis: &'static str,
        grid: f64,
        expected: f64,
    },
    #[error("grid axis `{axis}` has {grid} samples, fewer than the {samples} measured samples")]
    GridTooSmall {
        axis: &'static str,
        grid: usize,
        samples: usize,
    },
    #[error("grid depth {0} m lies outside the medium")]
    GridOutsideMedium(f64),
    #[error("aperture plane y = {0} m must lie in air (y < 0)")]
    ApertureNotInAir(f64),
    #[error("invalid frequency sweep: {0}")]
    BadSweep(String),
    #[error("wave impedance must be positive, got {0}")]
    BadImpedance(f64),
    #[error("failed to read config: {0}")]
    Io(String),
    #[error("failed to parse config: {0}")]
    Parse(String),
}

/// Either an explicit list of samples or a uniform `{ start, step, count }` axis.
///
/// `start` and `step` may be omitted on grid axes, where defaults are derived
/// from the array geometry and sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
        count: usize,
    },
    Explicit(Vec<f64>),
}

impl AxisSpec {
    pub fn uniform(start: f64, step: f64, count: usize) -> Self {
        AxisSpec::Uniform {
            start: Some(start),
            step: Some(step),
            count,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            AxisSpec::Uniform { count, .. } => *count,
            AxisSpec::Explicit(v) => v.len(),
        }
    }

    fn resolve(
        &self,
        name: &'static str,
        default_start: Option<f64>,
        default_step: Option<f64>,
    ) -> Result<Vec<f64>, SceneError> {
        let values = match self {
            AxisSpec::Explicit(v) => v.clone(),
            AxisSpec::Uniform { start, step, count } => {
                if *count == 0 {
                    return Err(SceneError::EmptyAxis(name));
                }
                let step = step.or(default_step).ok_or(SceneError::IncompleteAxis(name))?;
                let start = match start {
                    Some(s) => *s,
                    None => match default_start {
                        Some(s) => s,
                        None => return Err(SceneError::IncompleteAxis(name)),
                    },
                };
                (0..*count).map(|i| start + i as f64 * step).collect()
            }
        };
        if values.is_empty() {
            return Err(SceneError::EmptyAxis(name));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SceneError::NotIncreasing(name));
        }
        Ok(values)
    }

    fn explicit_step(&self) -> Option<f64> {
        match self {
            AxisSpec::Uniform { step, .. } => *step,
            AxisSpec::Explicit(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    /// Relative permittivity of the dielectric half-space `y >= 0`.
    pub relative_permittivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Transmitter x positions (m); any layout.
    pub tx_x: AxisSpec,
    /// Receiver x positions (m); must be uniform.
    pub rx_x: AxisSpec,
    /// Height of the array plane (m); negative, i.e. in air.
    pub aperture_y: f64,
    /// Mechanical scan positions along z (m); must be uniform.
    pub scan_z: AxisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySweep {
    pub f_min: f64,
    pub f_max: f64,
    pub n_freq: usize,
}

impl FrequencySweep {
    pub fn frequencies(&self) -> Vec<f64> {
        if self.n_freq == 1 {
            return vec![self.f_min];
        }
        let df = (self.f_max - self.f_min) / (self.n_freq - 1) as f64;
        (0..self.n_freq).map(|i| self.f_min + i as f64 * df).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.f_max - self.f_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cross-range axis; defaults to the receiver lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<AxisSpec>,
    /// Depth axis; step defaults to `c / (2 B sqrt(eps))`.
    pub y: AxisSpec,
    /// Height axis; defaults to the scan lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<AxisSpec>,
}

/// Real window applied across the frequency sweep inside the operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    #[default]
    None,
    Hann,
}

impl Taper {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Taper::None => vec![1.0; n],
            Taper::Hann if n <= 2 => vec![1.0; n],
            // endpoints excluded so no frequency is discarded outright
            Taper::Hann => (0..n)
                .map(|i| {
                    let t = (i + 1) as f64 / (n + 1) as f64;
                    (PI * t).sin().powi(2)
                })
                .collect(),
        }
    }
}

fn default_impedance() -> f64 {
    FREE_SPACE_IMPEDANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "default_impedance")]
    pub wave_impedance: f64,
    #[serde(default)]
    pub frequency_taper: Taper,
    pub medium: MediumSpec,
    pub arrays: ArrayGeometry,
    pub sweep: FrequencySweep,
    pub grid: GridSpec,
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SceneError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene config is always representable as TOML")
    }

    /// Example layout with the dimensions of the first measured experiment:
    /// 9 transmitters and 31 receivers over 0.3 m, 77 scan steps of 3 mm,
    /// 51 frequencies over 31.5-43.5 GHz, array 0.3 m in front of the
    /// interface. The transmitter positions are illustrative only.
    pub fn experiment_one() -> Self {
        SceneConfig {
            wave_impedance: FREE_SPACE_IMPEDANCE,
            frequency_taper: Taper::None,
            medium: MediumSpec {
                relative_permittivity: 2.1,
            },
            arrays: ArrayGeometry {
                tx_x: AxisSpec::Explicit(vec![
                    -0.15, -0.117, -0.076, -0.031, 0.004, 0.043, 0.082, 0.121, 0.15,
                ]),
                rx_x: AxisSpec::uniform(-0.15, 0.01, 31),
                aperture_y: -0.3,
                scan_z: AxisSpec::uniform(-0.114, 0.003, 77),
            },
            sweep: FrequencySweep {
                f_min: 31.5e9,
                f_max: 43.5e9,
                n_freq: 51,
            },
            grid: GridSpec {
                x: None,
                y: AxisSpec::Uniform {
                    start: Some(0.0),
                    step: None,
                    count: 10,
                },
                z: None,
            },
        }
    }
}

/// Resolved voxel grid sample positions (m).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl VoxelGrid {
    pub fn dims(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len() * self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the voxel closest to `(x, y, z)`.
    pub fn nearest(&self, x: f64, y: f64, z: f64) -> [usize; 3] {
        [nearest(&self.x, x), nearest(&self.y, y), nearest(&self.z, z)]
    }
}

fn nearest(axis: &[f64], v: f64) -> usize {
    axis.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Immutable, validated scene with all derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScene {
    config: SceneConfig,
    permittivity: f64,
    tx_x: Vec<f64>,
    rx_x: Vec<f64>,
    scan_z: Vec<f64>,
    aperture_y: f64,
    frequencies: Vec<f64>,
    wavenumbers: Vec<f64>,
    freq_weights: Vec<f64>,
    rx_pitch: f64,
    scan_pitch: f64,
    grid: VoxelGrid,
    kx_axis: Vec<f64>,
    kz_axis: Vec<f64>,
}

impl ValidatedScene {
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn permittivity(&self) -> f64 {
        self.permittivity
    }

    pub fn refractive_index(&self) -> f64 {
        self.permittivity.sqrt()
    }

    pub fn wave_impedance(&self) -> f64 {
        self.config.wave_impedance
    }

    pub fn tx_x(&self) -> &[f64] {
        &self.tx_x
    }

    pub fn rx_x(&self) -> &[f64] {
        &self.rx_x
    }

    pub fn scan_z(&self) -> &[f64] {
        &self.scan_z
    }

    pub fn aperture_y(&self) -> f64 {
        self.aperture_y
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Free-space wavenumber per sweep sample (rad/m).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn frequency_weights(&self) -> &[f64] {
        &self.freq_weights
    }

    pub fn rx_pitch(&self) -> f64 {
        self.rx_pitch
    }

    pub fn scan_pitch(&self) -> f64 {
        self.scan_pitch
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// `(n_tx, n_rx, n_scan, n_freq)`.
    pub fn echo_dims(&self) -> [usize; 4] {
        [
            self.tx_x.len(),
            self.rx_x.len(),
            self.scan_z.len(),
            self.frequencies.len(),
        ]
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    /// Wavenumber axes conjugate to the image x and z axes, in FFT order.
    pub fn spectral_axes(&self) -> (&[f64], &[f64]) {
        (&self.kx_axis, &self.kz_axis)
    }
}

/// Wavenumbers of an `n`-point DFT over samples spaced `spacing` apart, in
/// natural FFT order: `0, 1, ..., ceil(n/2)-1, -floor(n/2), ..., -1` times
/// `2 pi / (n spacing)`. All values lie in `[-pi/spacing, pi/spacing)`.
pub fn fft_wavenumbers(n: usize, spacing: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * spacing);
    let positive = n.div_ceil(2);
    (0..n)
        .map(|i| {
            let m = if i < positive {
                i as i64
            } else {
                i as i64 - n as i64
            };
            m as f64 * dk
        })
        .collect()
}

/// Band limit `pi / spacing` of a sampled axis.
pub fn nyquist_wavenumber(spacing: f64) -> f64 {
    PI / spacing
}

/// Spectral axes `(k_xR, k_z)` of a validated scene.
pub fn spectral_axes(scene: &ValidatedScene) -> (Vec<f64>, Vec<f64>) {
    let (kx, kz) = scene.spectral_axes();
    (kx.to_vec(), kz.to_vec())
}

/// Mean pitch of `values` if every consecutive spacing is within `tol` of it.
fn uniform_pitch(values: &[f64], tol: f64) -> Result<f64, f64> {
    let n = values.len();
    let mean = (values[n - 1] - values[0]) / (n - 1) as f64;
    let deviation = values
        .windows(2)
        .map(|w| ((w[1] - w[0]) - mean).abs())
        .fold(0.0, f64::max);
    if deviation < tol {
        Ok(mean)
    } else {
        Err(deviation)
    }
}

fn sampled_pitch(
    values: &[f64],
    spec: &AxisSpec,
    name: &'static str,
    err: fn(f64) -> SceneError,
) -> Result<f64, SceneError> {
    if values.len() == 1 {
        return spec
            .explicit_step()
            .filter(|s| *s > 0.0)
            .ok_or(SceneError::IncompleteAxis(name));
    }
    uniform_pitch(values, UNIFORMITY_TOLERANCE).map_err(err)
}

fn grid_axis(
    spec: Option<&AxisSpec>,
    name: &'static str,
    samples: &[f64],
    pitch: f64,
) -> Result<Vec<f64>, SceneError> {
    let values = match spec {
        None => samples.to_vec(),
        Some(spec) => {
            let count = spec.count();
            let centre = 0.5 * (samples[0] + samples[samples.len() - 1]);
            let start = centre - 0.5 * (count.max(1) - 1) as f64 * pitch;
            spec.resolve(name, Some(start), Some(pitch))?
        }
    };
    if values.len() < samples.len() {
        return Err(SceneError::GridTooSmall {
            axis: name,
            grid: values.len(),
            samples: samples.len(),
        });
    }
    if values.len() > 1 {
        let grid_pitch =
            uniform_pitch(&values, UNIFORMITY_TOLERANCE).map_err(|_| SceneError::NonUniformGrid(name))?;
        if (grid_pitch - pitch).abs() >= UNIFORMITY_TOLERANCE {
            return Err(SceneError::GridPitchMismatch {
                axis: name,
                grid: grid_pitch,
                expected: pitch,
            });
        }
    }
    Ok(values)
}

/// Checks every invariant of `config` and precomputes derived quantities.
pub fn validate(config: &SceneConfig) -> Result<ValidatedScene, SceneError> {
    let eps = config.medium.relative_permittivity;
    if !eps.is_finite() || eps < 1.0 {
        return Err(SceneError::BadPermittivity(eps));
    }
    if !(config.wave_impedance.is_finite() && config.wave_impedance > 0.0) {
        return Err(SceneError::BadImpedance(config.wave_impedance));
    }

    let arrays = &config.arrays;
    if !(arrays.aperture_y.is_finite() && arrays.aperture_y < 0.0) {
        return Err(SceneError::ApertureNotInAir(arrays.aperture_y));
    }
    let tx_x = match &arrays.tx_x {
        // transmitters need not be sorted, only finite
        AxisSpec::Explicit(v) if v.is_empty() => return Err(SceneError::EmptyAxis("tx_x")),
        AxisSpec::Explicit(v) if v.iter().any(|x| !x.is_finite()) => {
            return Err(SceneError::NotIncreasing("tx_x"))
        }
        AxisSpec::Explicit(v) => v.clone(),
        spec => spec.resolve("tx_x", None, None)?,
    };
    let rx_x = arrays.rx_x.resolve("rx_x", None, None)?;
    let rx_pitch = sampled_pitch(&rx_x, &arrays.rx_x, "rx_x", |deviation| {
        SceneError::NonUniformReceivers { deviation }
    })?;
    let scan_z = arrays.scan_z.resolve("scan_z", None, None)?;
    let scan_pitch = sampled_pitch(&scan_z, &arrays.scan_z, "scan_z", |deviation| {
        SceneError::NonUniformScan { deviation }
    })?;

    let sweep = &config.sweep;
    if sweep.n_freq == 0 {
        return Err(SceneError::EmptyAxis("sweep"));
    }
    if !(sweep.f_min.is_finite() && sweep.f_max.is_finite() && sweep.f_min > 0.0) {
        return Err(SceneError::BadSweep(format!(
            "frequencies must be positive and finite (f_min = {}, f_max = {})",
            sweep.f_min, sweep.f_max
        )));
    }
    if sweep.f_min >= sweep.f_max {
        return Err(SceneError::BadSweep(format!(
            "f_min = {} must be below f_max = {}",
            sweep.f_min, sweep.f_max
        )));
    }
    let frequencies = sweep.frequencies();
    let wavenumbers: Vec<f64> = frequencies
        .iter()
        .map(|f| 2.0 * PI * f / SPEED_OF_LIGHT)
        .collect();

    let depth_step = SPEED_OF_LIGHT / (2.0 * sweep.bandwidth() * eps.sqrt());
    let grid_y = config.grid.y.resolve("grid.y", Some(0.0), Some(depth_step))?;
    for &y in &grid_y {
        let outside = if eps > 1.0 { y < 0.0 } else { y <= arrays.aperture_y };
        if outside {
            return Err(SceneError::GridOutsideMedium(y));
        }
    }
    if grid_y.len() > 1 && uniform_pitch(&grid_y, UNIFORMITY_TOLERANCE).is_err() {
        return Err(SceneError::NonUniformGrid("grid.y"));
    }
    let grid_x = grid_axis(config.grid.x.as_ref(), "grid.x", &rx_x, rx_pitch)?;
    let grid_z = grid_axis(config.grid.z.as_ref(), "grid.z", &scan_z, scan_pitch)?;

    // grating-lobe-free field of view of the receive array at the aperture range
    let lambda_min = SPEED_OF_LIGHT / sweep.f_max;
    let unambiguous = arrays.aperture_y.abs() * lambda_min / rx_pitch;
    let extent = grid_x[grid_x.len() - 1] - grid_x[0];
    if extent > unambiguous {
        log::warn!(
            "grid x extent {extent:.4} m exceeds the unambiguous extent {unambiguous:.4} m implied by the receiver pitch"
        );
    }

    let kx_axis = fft_wavenumbers(grid_x.len(), rx_pitch);
    let kz_axis = fft_wavenumbers(grid_z.len(), scan_pitch);
    let freq_weights = config.frequency_taper.weights(frequencies.len());

    Ok(ValidatedScene {
        config: config.clone(),
        permittivity: eps,
        tx_x,
        rx_x,
        scan_z,
        aperture_y: arrays.aperture_y,
        frequencies,
        wavenumbers,
        freq_weights,
        rx_pitch,
        scan_pitch,
        grid: VoxelGrid {
            x: grid_x,
            y: grid_y,
            z: grid_z,
        },
        kx_axis,
        kz_axis,
    })
}
