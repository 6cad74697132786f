//! Unitary 1-D FFTs along either axis of a row-major `nx x nz` plane.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct PlanePlans {
    nx: usize,
    nz: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_z: Arc<dyn Fft<f64>>,
    inv_z: Arc<dyn Fft<f64>>,
}

impl PlanePlans {
    pub fn new(nx: usize, nz: usize) -> Self {
        let mut planner = FftPlanner::new();
        PlanePlans {
            nx,
            nz,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_z: planner.plan_fft_forward(nz),
            inv_z: planner.plan_fft_inverse(nz),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn workspace(&self) -> PlaneWork {
        let scratch = [&self.fwd_x, &self.inv_x, &self.fwd_z, &self.inv_z]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        PlaneWork {
            scratch: vec![Complex64::default(); scratch],
            transposed: vec![Complex64::default(); self.len()],
        }
    }

    pub fn forward_z(&self, buf: &mut [Complex64], work: &mut PlaneWork) {
        run(&*self.fwd_z, buf, self.nz, &mut work.scratch);
    }

    pub fn inverse_z(&self, buf: &mut [Complex64], work: &mut PlaneWork) {
        run(&*self.inv_z, buf, self.nz, &mut work.scratch);
    }

    pub fn forward_x(&self, buf: &mut [Complex64], work: &mut PlaneWork) {
        self.along_x(&*self.fwd_x, buf, work);
    }

    pub fn inverse_x(&self, buf: &mut [Complex64], work: &mut PlaneWork) {
        self.along_x(&*self.inv_x, buf, work);
    }

    fn along_x(&self, plan: &dyn Fft<f64>, buf: &mut [Complex64], work: &mut PlaneWork) {
        let (nx, nz) = (self.nx, self.nz);
        if nz == 1 {
            run(plan, buf, nx, &mut work.scratch);
            return;
        }
        let t = &mut work.transposed;
        for i in 0..nx {
            for j in 0..nz {
                t[j * nx + i] = buf[i * nz + j];
            }
        }
        run(plan, t, nx, &mut work.scratch);
        for i in 0..nx {
            for j in 0..nz {
                buf[i * nz + j] = t[j * nx + i];
            }
        }
    }
}

pub(crate) struct PlaneWork {
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

fn run(plan: &dyn Fft<f64>, buf: &mut [Complex64], n: usize, scratch: &mut [Complex64]) {
    if n > 1 {
        plan.process_with_scratch(buf, scratch);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}
