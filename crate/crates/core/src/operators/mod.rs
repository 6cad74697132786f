//! Matrix-free sensing operators.
//!
//! [`SensingOperator::inverse`] is the frequency-domain reconstructor: for each
//! transmitter and wavenumber it takes the 2-D FFT of the echo over receiver
//! position and scan height, compensates the receive leg with `phi_a` per depth
//! slice, inverse-transforms over `k_xR`, compensates the transmit leg with
//! `phi_bc`, inverse-transforms over `k_z` and accumulates the sub-image
//! weighted by `1 / (j eta0 k)`.
//!
//! [`SensingOperator::forward`] is its exact adjoint. All FFTs are unitary and
//! every phase map is conjugated on the way back, so
//! `<forward(H), Y> == <H, inverse(Y)>` to rounding error.
//!
//! The echo is zero-padded to the image `x`/`z` sample counts. A linear phase
//! ramp in the spectral domain places the FFT output on the image grid origin.

mod fft;
mod phase;

use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rayon::prelude::*;

pub use phase::{build_phase_maps, PhaseCompensationSet, TxGeometry};

use crate::scene::ValidatedScene;
use crate::simulator::EchoTensor;
use crate::{Error, Result};
use fft::{PlanePlans, PlaneWork};

/// Upper bound on per-worker partial images in the inverse operator. Fixed so
/// that the summation order does not depend on the thread count.
const MAX_PARTIALS: usize = 16;

/// Complex reflectivity indexed `(x, y, z)` on the scene voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    data: Array3<Complex64>,
    pub provenance: String,
}

impl ImageVolume {
    pub fn new(data: Array3<Complex64>, provenance: impl Into<String>) -> Result<Self> {
        if data.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(Self::from_parts(data, provenance))
    }

    pub(crate) fn from_parts(data: Array3<Complex64>, provenance: impl Into<String>) -> Self {
        ImageVolume {
            data,
            provenance: provenance.into(),
        }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::from_parts(Array3::zeros(dims), "")
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    /// Euclidean norm over all voxels.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn check_dims(&self, scene: &ValidatedScene) -> Result<()> {
        let expected = scene.grid_dims();
        if self.dims() != expected {
            return Err(Error::dims(&expected, &self.dims()));
        }
        Ok(())
    }
}

/// `<a, b> = sum conj(a) b`.
pub fn inner_product<'a>(
    a: impl IntoIterator<Item = &'a Complex64>,
    b: impl IntoIterator<Item = &'a Complex64>,
) -> Complex64 {
    a.into_iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// The frequency-domain inverse sensing operator and its adjoint, bound to one scene.
pub struct SensingOperator<'a> {
    scene: &'a ValidatedScene,
    plans: PlanePlans,
    geometry: Vec<TxGeometry>,
    ramp: Vec<Complex64>,
}

struct PairWork {
    fft: PlaneWork,
    maps: PhaseCompensationSet,
    spectrum: Vec<Complex64>,
    slice: Vec<Complex64>,
}

impl<'a> SensingOperator<'a> {
    pub fn new(scene: &'a ValidatedScene) -> Result<Self> {
        let [nx, _, nz] = scene.grid_dims();
        let plans = PlanePlans::new(nx, nz);
        let geometry = (0..scene.tx_x().len())
            .into_par_iter()
            .map(|tx| TxGeometry::new(scene, tx))
            .collect::<Result<Vec<_>>>()?;

        let grid = scene.grid();
        let x_shift = grid.x[0] - scene.rx_x()[0];
        let z_shift = grid.z[0] - scene.scan_z()[0];
        let (kx, kz) = scene.spectral_axes();
        let ramp = kx
            .iter()
            .flat_map(|kx| kz.iter().map(move |kz| Complex64::from_polar(1.0, kx * x_shift + kz * z_shift)))
            .collect();
        Ok(SensingOperator {
            scene,
            plans,
            geometry,
            ramp,
        })
    }

    pub fn scene(&self) -> &ValidatedScene {
        self.scene
    }

    fn workspace(&self) -> PairWork {
        PairWork {
            fft: self.plans.workspace(),
            maps: PhaseCompensationSet::empty(self.scene),
            spectrum: vec![Complex64::default(); self.plans.len()],
            slice: vec![Complex64::default(); self.plans.len()],
        }
    }

    /// Per-pair scale `w_f / (j eta0 k)`.
    fn pair_weight(&self, freq: usize) -> Complex64 {
        let k = self.scene.wavenumbers()[freq];
        let w = self.scene.frequency_weights()[freq];
        Complex64::new(0.0, -w / (self.scene.wave_impedance() * k))
    }

    /// `(tx, freq)` pairs in accumulation order: transmitter outer, frequency inner.
    fn pairs(&self) -> Vec<(usize, usize)> {
        let [n_tx, _, _, n_freq] = self.scene.echo_dims();
        (0..n_tx).flat_map(|t| (0..n_freq).map(move |f| (t, f))).collect()
    }

    /// Inverse sensing operator: echo to image.
    pub fn inverse(&self, echo: &EchoTensor) -> Result<ImageVolume> {
        echo.check_dims(self.scene)?;
        let dims = self.scene.grid_dims();
        let n_vox = dims.iter().product::<usize>();
        let pairs = self.pairs();
        let chunk = pairs.len().div_ceil(MAX_PARTIALS).max(1);
        let partials: Vec<Vec<Complex64>> = pairs
            .par_chunks(chunk)
            .map(|chunk| {
                let mut work = self.workspace();
                let mut acc = vec![Complex64::default(); n_vox];
                for &(tx, f) in chunk {
                    self.inverse_pair(echo.data(), tx, f, &mut work, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![Complex64::default(); n_vox];
        for p in partials {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
        let data = Array3::from_shape_vec(dims, total).expect("image buffer matches grid");
        Ok(ImageVolume::from_parts(data, "frequency-domain reconstruction"))
    }

    fn inverse_pair(
        &self,
        echo: &Array4<Complex64>,
        tx: usize,
        freq: usize,
        work: &mut PairWork,
        acc: &mut [Complex64],
    ) {
        let [nx, ny, nz] = self.scene.grid_dims();
        let [_, n_rx, n_scan, _] = self.scene.echo_dims();
        let k = self.scene.wavenumbers()[freq];

        let spectrum = &mut work.spectrum;
        spectrum.fill(Complex64::default());
        for r in 0..n_rx {
            for s in 0..n_scan {
                spectrum[r * nz + s] = echo[[tx, r, s, freq]];
            }
        }
        self.plans.forward_z(spectrum, &mut work.fft);
        self.plans.forward_x(spectrum, &mut work.fft);
        spectrum.iter_mut().zip(&self.ramp).for_each(|(v, r)| *v *= r);

        work.maps.fill(self.scene, k, &self.geometry[tx]);
        let weight = self.pair_weight(freq);
        for iy in 0..ny {
            let phi_a = work.maps.phi_a.index_axis(ndarray::Axis(0), iy);
            let phi_bc = work.maps.phi_bc.index_axis(ndarray::Axis(0), iy);
            let slice = &mut work.slice;
            for ((out, s), a) in slice.iter_mut().zip(spectrum.iter()).zip(phi_a.iter()) {
                *out = s * a;
            }
            self.plans.inverse_x(slice, &mut work.fft);
            slice.iter_mut().zip(phi_bc.iter()).for_each(|(v, p)| *v *= p);
            self.plans.inverse_z(slice, &mut work.fft);
            for ix in 0..nx {
                let dst = &mut acc[(ix * ny + iy) * nz..(ix * ny + iy + 1) * nz];
                let src = &slice[ix * nz..(ix + 1) * nz];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += weight * s);
            }
        }
    }

    /// Forward sensing operator: image to echo. Exact adjoint of [`Self::inverse`].
    pub fn forward(&self, image: &ImageVolume) -> Result<EchoTensor> {
        image.check_dims(self.scene)?;
        let dims = self.scene.echo_dims();
        let [_, n_rx, n_scan, _] = dims;
        let pairs = self.pairs();
        let slices: Vec<Vec<Complex64>> = pairs
            .par_iter()
            .map_init(
                || self.workspace(),
                |work, &(tx, f)| self.forward_pair(image.data(), tx, f, work),
            )
            .collect();
        let mut data = Array4::<Complex64>::zeros(dims);
        for (&(tx, f), slice) in pairs.iter().zip(slices) {
            for r in 0..n_rx {
                for s in 0..n_scan {
                    data[[tx, r, s, f]] = slice[r * n_scan + s];
                }
            }
        }
        Ok(EchoTensor::from_parts(data, "forward projection"))
    }

    fn forward_pair(
        &self,
        image: &Array3<Complex64>,
        tx: usize,
        freq: usize,
        work: &mut PairWork,
    ) -> Vec<Complex64> {
        let [nx, ny, nz] = self.scene.grid_dims();
        let [_, n_rx, n_scan, _] = self.scene.echo_dims();
        let k = self.scene.wavenumbers()[freq];
        work.maps.fill(self.scene, k, &self.geometry[tx]);

        let spectrum = &mut work.spectrum;
        spectrum.fill(Complex64::default());
        for iy in 0..ny {
            let slice = &mut work.slice;
            for ix in 0..nx {
                for iz in 0..nz {
                    slice[ix * nz + iz] = image[[ix, iy, iz]];
                }
            }
            self.plans.forward_z(slice, &mut work.fft);
            let phi_bc = work.maps.phi_bc.index_axis(ndarray::Axis(0), iy);
            slice.iter_mut().zip(phi_bc.iter()).for_each(|(v, p)| *v *= p.conj());
            self.plans.forward_x(slice, &mut work.fft);
            let phi_a = work.maps.phi_a.index_axis(ndarray::Axis(0), iy);
            for ((acc, v), a) in spectrum.iter_mut().zip(slice.iter()).zip(phi_a.iter()) {
                *acc += v * a.conj();
            }
        }
        spectrum.iter_mut().zip(&self.ramp).for_each(|(v, r)| *v *= r.conj());
        self.plans.inverse_x(spectrum, &mut work.fft);
        self.plans.inverse_z(spectrum, &mut work.fft);

        let weight = self.pair_weight(freq).conj();
        let mut out = Vec::with_capacity(n_rx * n_scan);
        for r in 0..n_rx {
            for s in 0..n_scan {
                out.push(weight * spectrum[r * nz + s]);
            }
        }
        out
    }
}

/// Frequency-domain reconstruction of `echo` on the scene grid.
pub fn dtfda_reconstruct(echo: &EchoTensor, scene: &ValidatedScene) -> Result<ImageVolume> {
    SensingOperator::new(scene)?.inverse(echo)
}

/// Predicted echo of `image` under the adjoint model.
pub fn forward_project(image: &ImageVolume, scene: &ValidatedScene) -> Result<EchoTensor> {
    SensingOperator::new(scene)?.forward(image)
}
