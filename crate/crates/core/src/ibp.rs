//! Refraction-aware back-projection.
//!
//! Every voxel `b` is the matched-filter sum
//! `sum echo(tx, rx, z', k) exp(+j k (L_T + L_R))` over all retained samples,
//! where `L = R_air + sqrt(eps) R_med` is the optical length of the refracted
//! ray from each antenna to `b`. Stepped-frequency data makes the sum exact;
//! no range interpolation is involved.

use std::collections::HashMap;

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::em::{optical_path, Point3};
use crate::operators::ImageVolume;
use crate::scene::ValidatedScene;
use crate::simulator::EchoTensor;
use crate::{Error, Result};

/// Keep every `n`-th sample along each echo axis. Anything coarser than 1 is
/// an approximation of the full sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride {
    pub tx: usize,
    pub rx: usize,
    pub scan: usize,
    pub freq: usize,
}

impl Default for Stride {
    fn default() -> Self {
        Stride {
            tx: 1,
            rx: 1,
            scan: 1,
            freq: 1,
        }
    }
}

impl Stride {
    pub fn is_full(&self) -> bool {
        *self == Stride::default()
    }
}

/// Quantum for the `|z' - z|` cache key, far below any phase-relevant scale.
const DZ_QUANTUM: f64 = 1e-12;

/// Optical lengths `[antenna][ix][iy][dz]` where `dz` indexes the distinct
/// scan-to-voxel height offsets.
struct PathTable {
    n_x: usize,
    n_y: usize,
    n_dz: usize,
    /// `dz` index for each `(scan, iz)` pair.
    dz_index: Vec<usize>,
    data: Vec<f64>,
}

impl PathTable {
    fn build(scene: &ValidatedScene, antennas: &[f64]) -> Result<Self> {
        let grid = scene.grid();
        let scan = scene.scan_z();
        let nz = grid.z.len();
        let mut keys: HashMap<i64, usize> = HashMap::new();
        // representative (scan, z) pair for each distinct offset
        let mut reps: Vec<(f64, f64)> = Vec::new();
        let mut dz_index = Vec::with_capacity(scan.len() * nz);
        for &zs in scan {
            for &zg in &grid.z {
                let key = ((zs - zg).abs() / DZ_QUANTUM).round() as i64;
                let idx = *keys.entry(key).or_insert_with(|| {
                    reps.push((zs, zg));
                    reps.len() - 1
                });
                dz_index.push(idx);
            }
        }
        let (n_x, n_y, n_dz) = (grid.x.len(), grid.y.len(), reps.len());
        let eps = scene.permittivity();
        let big_y = scene.aperture_y();
        let rows: Vec<Vec<f64>> = antennas
            .par_iter()
            .flat_map_iter(|&xa| grid.x.iter().map(move |&x| (xa, x)))
            .map(|(xa, x)| {
                let mut row = Vec::with_capacity(n_y * n_dz);
                for &y in &grid.y {
                    for &(zs, zg) in &reps {
                        row.push(optical_path(Point3::new(xa, big_y, zs), Point3::new(x, y, zg), eps)?);
                    }
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(PathTable {
            n_x,
            n_y,
            n_dz,
            dz_index,
            data: rows.concat(),
        })
    }

    #[inline]
    fn column(&self, antenna: usize, ix: usize, iy: usize) -> &[f64] {
        let start = ((antenna * self.n_x + ix) * self.n_y + iy) * self.n_dz;
        &self.data[start..start + self.n_dz]
    }
}

/// Back-projection image of `echo` on the scene grid.
pub fn ibp_reconstruct(echo: &EchoTensor, scene: &ValidatedScene, stride: Stride) -> Result<ImageVolume> {
    echo.check_dims(scene)?;
    if [stride.tx, stride.rx, stride.scan, stride.freq].contains(&0) {
        return Err(Error::InvalidArgument(format!("stride components must be at least 1, got {stride:?}")));
    }
    if !stride.is_full() {
        log::info!("back-projection with stride {stride:?}: approximate sum");
    }
    let [nx, ny, nz] = scene.grid_dims();
    let n_scan = scene.scan_z().len();
    let tx_paths = PathTable::build(scene, scene.tx_x())?;
    let rx_paths = PathTable::build(scene, scene.rx_x())?;

    let txs: Vec<usize> = (0..scene.tx_x().len()).step_by(stride.tx).collect();
    let rxs: Vec<usize> = (0..scene.rx_x().len()).step_by(stride.rx).collect();
    let scans: Vec<usize> = (0..n_scan).step_by(stride.scan).collect();
    let freqs: Vec<usize> = (0..scene.wavenumbers().len()).step_by(stride.freq).collect();
    let ks: Vec<f64> = freqs.iter().map(|&f| scene.wavenumbers()[f]).collect();
    let data = echo.data();

    let columns: Vec<Vec<Complex64>> = (0..nx * ny)
        .into_par_iter()
        .map(|col| {
            let (ix, iy) = (col / ny, col % ny);
            let mut out = vec![Complex64::default(); nz];
            let mut samples = vec![Complex64::default(); freqs.len()];
            for (iz, acc) in out.iter_mut().enumerate() {
                for &tx in &txs {
                    let lt = tx_paths.column(tx, ix, iy);
                    for &rx in &rxs {
                        let lr = rx_paths.column(rx, ix, iy);
                        for &s in &scans {
                            let dz = tx_paths.dz_index[s * nz + iz];
                            let length = lt[dz] + lr[dz];
                            let lane = data.slice(ndarray::s![tx, rx, s, ..]);
                            for (v, &f) in samples.iter_mut().zip(&freqs) {
                                *v = lane[f];
                            }
                            for (v, k) in samples.iter().zip(&ks) {
                                *acc += v * Complex64::from_polar(1.0, k * length);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut image = Array3::zeros([nx, ny, nz]);
    for (col, values) in columns.into_iter().enumerate() {
        let (ix, iy) = (col / ny, col % ny);
        for (iz, v) in values.into_iter().enumerate() {
            image[[ix, iy, iz]] = v;
        }
    }
    Ok(ImageVolume::from_parts(image, "back-projection"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::peak_location;
    use crate::operators::dtfda_reconstruct;
    use crate::scene::{validate, ArrayGeometry, AxisSpec, FrequencySweep, GridSpec, MediumSpec, SceneConfig, Taper};
    use crate::simulator::{synthesize_echo, PointTarget};
    use crate::FREE_SPACE_IMPEDANCE;

    fn tiny(eps: f64) -> ValidatedScene {
        validate(&SceneConfig {
            wave_impedance: FREE_SPACE_IMPEDANCE,
            frequency_taper: Taper::None,
            medium: MediumSpec {
                relative_permittivity: eps,
            },
            arrays: ArrayGeometry {
                tx_x: AxisSpec::Explicit(vec![-0.018, 0.015]),
                rx_x: AxisSpec::uniform(-0.0105, 0.003, 8),
                aperture_y: -0.08,
                scan_z: AxisSpec::uniform(-0.007, 0.002, 8),
            },
            sweep: FrequencySweep {
                f_min: 31.5e9,
                f_max: 43.5e9,
                n_freq: 8,
            },
            grid: GridSpec {
                x: Some(AxisSpec::Uniform {
                    start: None,
                    step: None,
                    count: 16,
                }),
                y: AxisSpec::uniform(0.0, 0.004, 8),
                z: Some(AxisSpec::Uniform {
                    start: None,
                    step: None,
                    count: 16,
                }),
            },
        })
        .unwrap()
    }

    fn on_voxel(scene: &ValidatedScene, at: [usize; 3]) -> PointTarget {
        let g = scene.grid();
        PointTarget::new(g.x[at[0]], g.y[at[1]], g.z[at[2]], Complex64::new(1.0, 0.5))
    }

    fn correlation(a: &ImageVolume, b: &ImageVolume) -> f64 {
        let dot: f64 = a.data().iter().zip(b.data().iter()).map(|(x, y)| x.norm() * y.norm()).sum();
        dot / (a.norm() * b.norm())
    }

    #[test]
    fn zero_echo_gives_zero_image() {
        let s = tiny(2.1);
        let img = ibp_reconstruct(&EchoTensor::zeros(s.echo_dims()), &s, Stride::default()).unwrap();
        assert!(img.data().iter().all(|v| *v == Complex64::default()));
        assert!(matches!(
            ibp_reconstruct(&EchoTensor::zeros([1, 8, 8, 8]), &s, Stride::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matched_filter_is_coherent_at_truth() {
        let s = tiny(2.1);
        let at = [9, 5, 6];
        let echo = synthesize_echo(&s, &[on_voxel(&s, at)]).unwrap();
        let img = ibp_reconstruct(&echo, &s, Stride::default()).unwrap();
        let total: f64 = echo.data().iter().map(|v| v.norm()).sum();
        assert!((img.data()[at].norm() - total).abs() < 1e-8 * total);
    }

    #[test]
    fn free_space_argmax_at_truth() {
        let s = tiny(1.0);
        let at = [7, 4, 9];
        let echo = synthesize_echo(&s, &[on_voxel(&s, at)]).unwrap();
        let img = ibp_reconstruct(&echo, &s, Stride::default()).unwrap();
        assert_eq!(peak_location(&img).unwrap().0, at);
    }

    #[test]
    fn agrees_with_frequency_domain_reconstruction() {
        let s = tiny(2.1);
        let at = [8, 4, 8];
        let echo = synthesize_echo(&s, &[on_voxel(&s, at)]).unwrap();
        let ibp = ibp_reconstruct(&echo, &s, Stride::default()).unwrap();
        let fda = dtfda_reconstruct(&echo, &s).unwrap();
        let peak = peak_location(&ibp).unwrap().0;
        for a in 0..3 {
            assert!(peak[a].abs_diff(at[a]) <= 1, "ibp peak {peak:?} vs truth {at:?}");
        }
        let c = correlation(&ibp, &fda);
        assert!(c >= 0.85, "magnitude correlation {c}");
    }

    #[test]
    fn linear_in_echo() {
        let s = tiny(2.1);
        let e1 = synthesize_echo(&s, &[on_voxel(&s, [3, 2, 4])]).unwrap();
        let e2 = synthesize_echo(&s, &[on_voxel(&s, [10, 6, 12])]).unwrap();
        let stride = Stride {
            rx: 2,
            freq: 2,
            ..Default::default()
        };
        let sum = ibp_reconstruct(&(&e1 + &e2), &s, stride).unwrap();
        let a = ibp_reconstruct(&e1, &s, stride).unwrap();
        let b = ibp_reconstruct(&e2, &s, stride).unwrap();
        let scale = sum.norm();
        for ((x, y), z) in sum.data().iter().zip(a.data().iter()).zip(b.data().iter()) {
            assert!((x - y - z).norm() < 1e-10 * scale);
        }
    }
}
