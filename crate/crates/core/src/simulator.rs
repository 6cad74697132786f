//! Born-approximation echo synthesis for point scatterers in the layered scene.
//!
//! Every sample is `j eta0 k sum_i sigma_i A_T A_R` with one-way responses
//! `A = exp(-j (k R_air + k_eps R_med))` along the refracted rays. Spreading
//! loss and attenuation are not modelled.

use ndarray::{Array4, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::em::{optical_path, Point3};
use crate::scene::ValidatedScene;
use crate::{Error, Result};

/// Largest tensor (in complex elements) the simulator will allocate.
pub const MAX_ELEMENTS: u128 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTarget {
    pub position: Point3,
    pub reflectivity: Complex64,
}

impl PointTarget {
    pub fn new(x: f64, y: f64, z: f64, reflectivity: Complex64) -> Self {
        PointTarget {
            position: Point3::new(x, y, z),
            reflectivity,
        }
    }
}

/// Complex echo samples indexed `(tx, rx, scan, freq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoTensor {
    data: Array4<Complex64>,
    pub provenance: String,
}

impl EchoTensor {
    /// Wraps `data`, rejecting non-finite samples.
    pub fn new(data: Array4<Complex64>, provenance: impl Into<String>) -> Result<Self> {
        if data.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(EchoTensor {
            data,
            provenance: provenance.into(),
        })
    }

    pub(crate) fn from_parts(data: Array4<Complex64>, provenance: impl Into<String>) -> Self {
        EchoTensor {
            data,
            provenance: provenance.into(),
        }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::from_parts(Array4::zeros(dims), "")
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn data(&self) -> &Array4<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<Complex64> {
        self.data
    }

    /// Mean sample power.
    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn check_dims(&self, scene: &ValidatedScene) -> Result<()> {
        let expected = scene.echo_dims();
        if self.dims() != expected {
            return Err(Error::dims(&expected, &self.dims()));
        }
        Ok(())
    }
}

impl std::ops::Add for &EchoTensor {
    type Output = EchoTensor;

    fn add(self, rhs: &EchoTensor) -> EchoTensor {
        EchoTensor::from_parts(&self.data + &rhs.data, self.provenance.clone())
    }
}

fn antenna(x: f64, scene: &ValidatedScene, z: f64) -> Point3 {
    Point3::new(x, scene.aperture_y(), z)
}

/// One-way response `exp(-j (k R_air + k_eps R_med))` between an antenna and a
/// scatterer. Transmit and receive legs use the same expression.
pub fn green_one_way(scene: &ValidatedScene, k: f64, antenna: Point3, target: Point3) -> Result<Complex64> {
    let path = optical_path(antenna, target, scene.permittivity())?;
    Ok(Complex64::from_polar(1.0, -k * path))
}

/// Optical path lengths `[antenna][scan]` from each antenna to `target`.
fn path_table(scene: &ValidatedScene, xs: &[f64], target: Point3) -> Result<Vec<f64>> {
    let eps = scene.permittivity();
    let mut out = Vec::with_capacity(xs.len() * scene.scan_z().len());
    for &x in xs {
        for &z in scene.scan_z() {
            out.push(optical_path(antenna(x, scene, z), target, eps)?);
        }
    }
    Ok(out)
}

fn check_size(dims: &[usize]) -> Result<()> {
    let elements = dims.iter().map(|&d| d as u128).product::<u128>();
    if elements > MAX_ELEMENTS {
        return Err(Error::TooLarge {
            elements,
            limit: MAX_ELEMENTS,
        });
    }
    Ok(())
}

fn warn_outside_grid(scene: &ValidatedScene, target: &PointTarget) {
    let g = scene.grid();
    let p = target.position;
    let inside = |axis: &[f64], v: f64| v >= axis[0] && v <= axis[axis.len() - 1];
    if !(inside(&g.x, p.x) && inside(&g.y, p.y) && inside(&g.z, p.z)) {
        log::warn!("target at ({}, {}, {}) lies outside the voxel grid", p.x, p.y, p.z);
    }
}

/// Synthesises the echo of `targets` for every transmitter, receiver, scan
/// position and frequency of `scene`.
pub fn synthesize_echo(scene: &ValidatedScene, targets: &[PointTarget]) -> Result<EchoTensor> {
    if targets.is_empty() {
        return Err(Error::NoTargets);
    }
    let dims = scene.echo_dims();
    check_size(&dims)?;
    let [n_tx, n_rx, n_scan, n_freq] = dims;

    let mut tx_paths = Vec::with_capacity(targets.len());
    let mut rx_paths = Vec::with_capacity(targets.len());
    for t in targets {
        warn_outside_grid(scene, t);
        tx_paths.push(path_table(scene, scene.tx_x(), t.position)?);
        rx_paths.push(path_table(scene, scene.rx_x(), t.position)?);
    }

    let eta0 = scene.wave_impedance();
    let ks = scene.wavenumbers();
    let slices: Vec<Vec<Complex64>> = (0..n_tx * n_freq)
        .into_par_iter()
        .map(|pair| {
            let (tx, f) = (pair / n_freq, pair % n_freq);
            let k = ks[f];
            let mut slice = vec![Complex64::new(0.0, 0.0); n_rx * n_scan];
            for (ti, target) in targets.iter().enumerate() {
                let tp = &tx_paths[ti][tx * n_scan..(tx + 1) * n_scan];
                let rp = &rx_paths[ti];
                for rx in 0..n_rx {
                    let row = &mut slice[rx * n_scan..(rx + 1) * n_scan];
                    for (s, v) in row.iter_mut().enumerate() {
                        let phase = -k * (tp[s] + rp[rx * n_scan + s]);
                        *v += target.reflectivity * Complex64::from_polar(1.0, phase);
                    }
                }
            }
            let gain = Complex64::new(0.0, eta0 * k);
            slice.iter_mut().for_each(|v| *v *= gain);
            slice
        })
        .collect();

    let mut data = Array4::<Complex64>::zeros(dims);
    for (pair, slice) in slices.into_iter().enumerate() {
        let (tx, f) = (pair / n_freq, pair % n_freq);
        let mut view = data.index_axis_mut(Axis(0), tx);
        let mut view = view.index_axis_mut(Axis(2), f);
        for ((rx, s), v) in view.indexed_iter_mut() {
            *v = slice[rx * n_scan + s];
        }
    }
    Ok(EchoTensor::from_parts(
        data,
        format!("simulated: {} point target(s)", targets.len()),
    ))
}

/// Adds circular complex white Gaussian noise at `snr_db` relative to the mean
/// signal power. `f64::INFINITY` returns the echo unchanged.
pub fn add_noise(echo: &EchoTensor, snr_db: f64, seed: u64) -> EchoTensor {
    if snr_db == f64::INFINITY {
        return echo.clone();
    }
    let noise_power = echo.mean_power() / 10f64.powf(snr_db / 10.0);
    let sigma = (0.5 * noise_power).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = echo.data.clone();
    for v in data.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
    EchoTensor::from_parts(
        data,
        format!("{} + noise(snr = {snr_db} dB, seed = {seed})", echo.provenance),
    )
}
