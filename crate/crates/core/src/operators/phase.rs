//! Phase compensation maps of the frequency-domain reconstructor.
//!
//! For one wavenumber `k` and transmitter `x_T`:
//!
//! * `phi_a(y, k_xR, k_z) = exp(j (k_yR1 y - k_yR0 Y))` undoes the receive leg,
//! * `phi_bc(y, x, k_z) = exp(j k_xYT r_air) exp(j k_xyT r_med)` undoes the
//!   transmit leg, where `r_air = sqrt((x_T - x_bT)^2 + Y^2)` and
//!   `r_med = sqrt((x_bT - x)^2 + y^2)` use the in-plane refraction point
//!   `x_bT` of the ray from the transmitter to `(x, y)`.
//!
//! Evanescent spectral samples are stored as exact zeros.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::em::{propagating, solve_refraction, Point3};
use crate::scene::ValidatedScene;
use crate::Result;

/// In-plane transmit path split `(r_air, r_med)` for every `(x, y)` image column.
///
/// Independent of frequency, so it is computed once per transmitter.
#[derive(Debug, Clone)]
pub struct TxGeometry {
    pub tx_x: f64,
    /// `sqrt((x_T - x_bT)^2 + Y^2)` indexed `(x, y)`.
    pub r_air: Array2<f64>,
    /// `sqrt((x_bT - x)^2 + y^2)` indexed `(x, y)`.
    pub r_med: Array2<f64>,
    /// Refraction abscissa `x_bT` indexed `(x, y)`.
    pub x_b: Array2<f64>,
}

impl TxGeometry {
    pub fn new(scene: &ValidatedScene, tx_index: usize) -> Result<Self> {
        let tx_x = scene.tx_x()[tx_index];
        let grid = scene.grid();
        let big_y = scene.aperture_y();
        let eps = scene.permittivity();
        let dims = (grid.x.len(), grid.y.len());
        let mut r_air = Array2::zeros(dims);
        let mut r_med = Array2::zeros(dims);
        let mut x_b = Array2::zeros(dims);
        for (ix, &x) in grid.x.iter().enumerate() {
            for (iy, &y) in grid.y.iter().enumerate() {
                if y < 0.0 {
                    // free space only: no interface on the way, the whole ray is in air
                    r_air[[ix, iy]] = (x - tx_x).hypot(y - big_y);
                    x_b[[ix, iy]] = x;
                    continue;
                }
                let s = solve_refraction(Point3::new(tx_x, big_y, 0.0), Point3::new(x, y, 0.0), eps)?;
                r_air[[ix, iy]] = s.r_air;
                r_med[[ix, iy]] = s.r_med;
                x_b[[ix, iy]] = s.x_b;
            }
        }
        Ok(TxGeometry { tx_x, r_air, r_med, x_b })
    }
}

/// `phi_a` indexed `(y, k_xR, k_z)` and `phi_bc` indexed `(y, x, k_z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCompensationSet {
    pub k: f64,
    pub phi_a: Array3<Complex64>,
    pub phi_bc: Array3<Complex64>,
}

impl PhaseCompensationSet {
    pub(crate) fn empty(scene: &ValidatedScene) -> Self {
        let [nx, ny, nz] = scene.grid_dims();
        PhaseCompensationSet {
            k: 0.0,
            phi_a: Array3::zeros((ny, nx, nz)),
            phi_bc: Array3::zeros((ny, nx, nz)),
        }
    }

    /// Refills the maps for wavenumber `k` and one transmitter.
    pub(crate) fn fill(&mut self, scene: &ValidatedScene, k: f64, geometry: &TxGeometry) {
        let (kx_axis, kz_axis) = scene.spectral_axes();
        let grid = scene.grid();
        let big_y = scene.aperture_y();
        let k2 = k * k;
        let ke2 = scene.permittivity() * k2;
        let nz = kz_axis.len();
        self.k = k;

        // receive-side normal wavenumbers, None where either medium is evanescent
        let rx: Vec<Option<(f64, f64)>> = kx_axis
            .iter()
            .flat_map(|kx| {
                kz_axis.iter().map(move |kz| {
                    let lateral = kx * kx + 0.25 * kz * kz;
                    Some((propagating(k2 - lateral)?, propagating(ke2 - lateral)?))
                })
            })
            .collect();
        let tx: Vec<Option<(f64, f64)>> = kz_axis
            .iter()
            .map(|kz| {
                let lateral = 0.25 * kz * kz;
                Some((propagating(k2 - lateral)?, propagating(ke2 - lateral)?))
            })
            .collect();

        for (iy, &y) in grid.y.iter().enumerate() {
            let mut slab = self.phi_a.index_axis_mut(ndarray::Axis(0), iy);
            for (v, comp) in slab.iter_mut().zip(&rx) {
                *v = match comp {
                    Some((ky0, ky1)) => Complex64::from_polar(1.0, ky1 * y - ky0 * big_y),
                    None => Complex64::default(),
                };
            }
            let mut slab = self.phi_bc.index_axis_mut(ndarray::Axis(0), iy);
            for ((ix, ikz), v) in slab.indexed_iter_mut() {
                *v = match tx[ikz] {
                    Some((kt0, kt1)) => {
                        let phase = kt0 * geometry.r_air[[ix, iy]] + kt1 * geometry.r_med[[ix, iy]];
                        Complex64::from_polar(1.0, phase)
                    }
                    None => Complex64::default(),
                };
            }
            debug_assert_eq!(slab.shape()[1], nz);
        }
    }
}

/// Phase maps for wavenumber `k` and transmitter `tx_index`.
pub fn build_phase_maps(scene: &ValidatedScene, k: f64, tx_index: usize) -> Result<PhaseCompensationSet> {
    let geometry = TxGeometry::new(scene, tx_index)?;
    let mut maps = PhaseCompensationSet::empty(scene);
    maps.fill(scene, k, &geometry);
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{validate, ArrayGeometry, AxisSpec, FrequencySweep, GridSpec, MediumSpec, SceneConfig, Taper};
    use crate::FREE_SPACE_IMPEDANCE;

    fn scene(eps: f64) -> ValidatedScene {
        validate(&SceneConfig {
            wave_impedance: FREE_SPACE_IMPEDANCE,
            frequency_taper: Taper::None,
            medium: MediumSpec {
                relative_permittivity: eps,
            },
            arrays: ArrayGeometry {
                tx_x: AxisSpec::Explicit(vec![-0.01, 0.012]),
                rx_x: AxisSpec::uniform(-0.014, 0.004, 8),
                aperture_y: -0.25,
                scan_z: AxisSpec::uniform(-0.01, 0.002, 10),
            },
            sweep: FrequencySweep {
                f_min: 31.5e9,
                f_max: 43.5e9,
                n_freq: 4,
            },
            grid: GridSpec {
                x: None,
                y: AxisSpec::uniform(0.0, 0.01, 4),
                z: None,
            },
        })
        .unwrap()
    }

    /// Brute-force minimiser of the in-plane optical path.
    fn fermat_crossing(tx: f64, big_y: f64, x: f64, y: f64, eps: f64) -> f64 {
        let n = eps.sqrt();
        let path = |b: f64| (tx - b).hypot(big_y) + n * (b - x).hypot(y);
        let (lo, hi) = (tx.min(x), tx.max(x));
        let steps = ((hi - lo) / 1e-7).ceil() as usize;
        (0..=steps)
            .map(|i| (lo + i as f64 * 1e-7).min(hi))
            .min_by(|a, b| path(*a).total_cmp(&path(*b)))
            .unwrap()
    }

    #[test]
    fn unit_modulus_or_masked() {
        let s = scene(2.1);
        let maps = build_phase_maps(&s, s.wavenumbers()[0], 1).unwrap();
        for v in maps.phi_a.iter().chain(maps.phi_bc.iter()) {
            assert!(*v == Complex64::default() || (v.norm() - 1.0).abs() < 1e-12);
        }
        // 4 mm receiver pitch leaves some k_xR beyond k at 31.5 GHz
        assert!(maps.phi_a.iter().any(|v| *v == Complex64::default()));
    }

    #[test]
    fn free_space_interface_slice() {
        let s = scene(1.0);
        let k = s.wavenumbers()[2];
        let maps = build_phase_maps(&s, k, 0).unwrap();
        let (kx, kz) = s.spectral_axes();
        for (i, kxv) in kx.iter().enumerate() {
            for (j, kzv) in kz.iter().enumerate() {
                let v = maps.phi_a[[0, i, j]];
                match propagating(k * k - kxv * kxv - 0.25 * kzv * kzv) {
                    Some(ky0) => {
                        let expected = Complex64::from_polar(1.0, -ky0 * s.aperture_y());
                        assert!((v - expected).norm() < 1e-12);
                    }
                    None => assert_eq!(v, Complex64::default()),
                }
            }
        }
    }

    #[test]
    fn normal_incidence_column() {
        // transmitter directly above grid column x = 0.002
        let mut cfg = scene(2.1).config().clone();
        cfg.arrays.tx_x = AxisSpec::Explicit(vec![0.002]);
        let s = validate(&cfg).unwrap();
        let ix = s.grid().x.iter().position(|x| (x - 0.002).abs() < 1e-12).unwrap();
        let g = TxGeometry::new(&s, 0).unwrap();
        for (iy, &y) in s.grid().y.iter().enumerate() {
            assert!((g.x_b[[ix, iy]] - 0.002).abs() < 1e-15);
            assert!((g.r_air[[ix, iy]] - 0.25).abs() < 1e-15);
            assert!((g.r_med[[ix, iy]] - y).abs() < 1e-15);
        }
    }

    #[test]
    fn oblique_phase_matches_fermat_oracle() {
        let s = scene(2.1);
        let k = s.wavenumbers()[1];
        let maps = build_phase_maps(&s, k, 0).unwrap();
        let (ix, iy, ikz) = (7, 2, 1);
        let (tx, x, y) = (s.tx_x()[0], s.grid().x[ix], s.grid().y[iy]);
        let xb = fermat_crossing(tx, s.aperture_y(), x, y, 2.1);
        let r_air = (tx - xb).hypot(s.aperture_y());
        let r_med = (xb - x).hypot(y);
        let kz = s.spectral_axes().1[ikz];
        let kt0 = (k * k - 0.25 * kz * kz).sqrt();
        let kt1 = (2.1 * k * k - 0.25 * kz * kz).sqrt();
        let expected = Complex64::from_polar(1.0, kt0 * r_air + kt1 * r_med);
        // 1e-7 m oracle resolution bounds the phase error well below 1e-6 rad
        assert!((maps.phi_bc[[iy, ix, ikz]] - expected).norm() < 1e-6);
    }
}
