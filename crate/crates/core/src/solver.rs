//! Sparse reconstruction by ADMM with matrix-free operators.
//!
//! Solves `min_H 1/2 ||Y - Psi H||^2 + lambda ||H||_1` by splitting `H = R`.
//! Because `Psi^H Psi` is treated as the identity, the primal update is closed
//! form and the only operator application is the one-off `D = Psi^H Y`:
//!
//! ```text
//! H <- (D + rho R - M) / (1 + rho)
//! R <- T(H + M / rho, lambda / rho)
//! M <- M + rho (H - R)
//! ```
//!
//! with `T` the complex soft threshold. `R` and `M` start at zero.

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::image_entropy;
use crate::operators::{ImageVolume, SensingOperator};
use crate::scene::ValidatedScene;
use crate::simulator::EchoTensor;
use crate::Result;

/// Voxels per work item in the elementwise loop. Fixed so that partial sums
/// are combined in the same order whatever the thread count.
const CHUNK: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("soft threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("regularisation parameter must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("empty regularisation grid")]
    EmptyGrid,
    #[error("invalid solver parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmParams {
    pub rho: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Evaluate the augmented Lagrangian every iteration. Costs one forward
    /// operator application per iteration.
    pub log_objective: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: 1.0,
            lambda: 0.0,
            max_iters: 50,
            tol: 1e-4,
            log_objective: false,
        }
    }
}

impl AdmmParams {
    pub fn with_lambda(lambda: f64) -> Self {
        AdmmParams {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SolverError::BadParams(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(SolverError::NegativeLambda(self.lambda));
        }
        if self.max_iters == 0 {
            return Err(SolverError::BadParams("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SolverError::BadParams(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Augmented Lagrangian, present only when logging is enabled.
    pub objective: Option<f64>,
    /// `||H - R||`.
    pub primal_residual: f64,
    /// `||H_t - H_{t-1}|| / ||H_t||`.
    pub relative_change: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub h: ImageVolume,
    pub r: ImageVolume,
    pub m: ImageVolume,
    /// Iterations performed.
    pub t: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

/// `(U / |U|) max(|U| - v, 0)` elementwise, zero where `U` is zero.
pub fn soft_threshold(u: &Array3<Complex64>, v: f64) -> Result<Array3<Complex64>, SolverError> {
    if !(v >= 0.0) {
        return Err(SolverError::NegativeThreshold(v));
    }
    Ok(u.mapv(|x| shrink(x, v)))
}

#[inline]
fn shrink(x: Complex64, v: f64) -> Complex64 {
    // squared compare first: most voxels are zeroed and skip the sqrt
    let sq = x.norm_sqr();
    if sq <= v * v {
        Complex64::default()
    } else if v == 0.0 {
        x
    } else {
        let mag = sq.sqrt();
        x * ((mag - v) / mag)
    }
}

/// Loop-invariant coefficients of one iteration.
#[derive(Clone, Copy)]
struct Coeffs {
    rho: f64,
    inv: f64,
    inv_rho: f64,
    thresh: f64,
}

/// Per-voxel iteration state, interleaved so the loop streams one buffer.
#[derive(Clone, Copy, Default)]
struct Cell {
    h: Complex64,
    r: Complex64,
    m: Complex64,
}

/// One fused update over a chunk. Returns `[||dH||^2, ||H||^2, ||H - R||^2]`.
fn sweep(c: Coeffs, cells: &mut [Cell], d: &[Complex64]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (cell, &d) in cells.iter_mut().zip(d) {
        let hn = (d + cell.r * c.rho - cell.m) * c.inv;
        let rn = shrink(hn + cell.m * c.inv_rho, c.thresh);
        let gap = hn - rn;
        acc[0] += (hn - cell.h).norm_sqr();
        acc[1] += hn.norm_sqr();
        acc[2] += gap.norm_sqr();
        *cell = Cell {
            h: hn,
            r: rn,
            m: cell.m + gap * c.rho,
        };
    }
    acc
}

/// Sparse reconstruction of `echo`.
pub fn admm_reconstruct(
    echo: &EchoTensor,
    scene: &ValidatedScene,
    params: &AdmmParams,
) -> Result<(ImageVolume, AdmmState)> {
    params.validate()?;
    let op = SensingOperator::new(scene)?;
    let dirty = op.inverse(echo)?;
    let objective = params.log_objective.then_some((&op, echo));
    let state = admm_iterate(&dirty, params, objective)?;
    let mut image = state.h.clone();
    image.provenance = format!("sparse reconstruction (lambda = {}, rho = {})", params.lambda, params.rho);
    Ok((image, state))
}

/// Runs the iteration from a precomputed `D = Psi^H Y`.
///
/// `objective` supplies the operator and echo needed to log the augmented
/// Lagrangian; it is only consulted when `params.log_objective` is set.
pub fn admm_iterate(
    dirty: &ImageVolume,
    params: &AdmmParams,
    objective: Option<(&SensingOperator<'_>, &EchoTensor)>,
) -> Result<AdmmState> {
    params.validate()?;
    let dims = dirty.dims();
    let d = dirty.data().as_standard_layout();
    let d = d.as_slice().expect("standard layout");
    let n = d.len();
    let mut cells = vec![Cell::default(); n];

    let c = Coeffs {
        rho: params.rho,
        inv: 1.0 / (1.0 + params.rho),
        inv_rho: 1.0 / params.rho,
        thresh: params.lambda / params.rho,
    };
    let mut history = Vec::with_capacity(params.max_iters);
    let mut converged = false;
    let mut t = 0;

    while t < params.max_iters {
        t += 1;
        // chunk boundaries are the same on both paths, so sums are identical
        let sums: Vec<[f64; 3]> = if n <= CHUNK || rayon::current_num_threads() == 1 {
            cells.chunks_mut(CHUNK).zip(d.chunks(CHUNK)).map(|(x, d)| sweep(c, x, d)).collect()
        } else {
            cells.par_chunks_mut(CHUNK).zip(d.par_chunks(CHUNK)).map(|(x, d)| sweep(c, x, d)).collect()
        };
        let [dh, hh, gap] = sums.iter().fold([0.0; 3], |a, s| [a[0] + s[0], a[1] + s[1], a[2] + s[2]]);
        let relative_change = if hh > 0.0 {
            (dh / hh).sqrt()
        } else if dh == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let objective = match (params.log_objective, objective) {
            (true, Some((op, echo))) => Some(augmented_lagrangian(op, echo, dims, &cells, params)?),
            _ => None,
        };
        history.push(IterationRecord {
            objective,
            primal_residual: gap.sqrt(),
            relative_change,
        });
        if relative_change < params.tol {
            converged = true;
            break;
        }
    }

    let wrap = |part: fn(&Cell) -> Complex64, tag: &str| {
        let v = cells.iter().map(part).collect();
        ImageVolume::from_parts(Array3::from_shape_vec(dims, v).expect("buffer matches dims"), tag)
    };
    Ok(AdmmState {
        h: wrap(|c| c.h, "admm primal"),
        r: wrap(|c| c.r, "admm auxiliary"),
        m: wrap(|c| c.m, "admm multiplier"),
        t,
        converged,
        history,
    })
}

/// `1/2 ||Y - Psi H||^2 + lambda ||R||_1 + Re<M, H - R> + rho/2 ||H - R||^2`.
fn augmented_lagrangian(
    op: &SensingOperator<'_>,
    echo: &EchoTensor,
    dims: [usize; 3],
    cells: &[Cell],
    params: &AdmmParams,
) -> Result<f64> {
    let h = cells.iter().map(|c| c.h).collect();
    let image = ImageVolume::from_parts(Array3::from_shape_vec(dims, h).expect("dims"), "");
    let predicted = op.forward(&image)?;
    let fidelity: f64 = echo
        .data()
        .iter()
        .zip(predicted.data().iter())
        .map(|(y, p)| (y - p).norm_sqr())
        .sum();
    let mut l1 = 0.0;
    let mut coupling = 0.0;
    let mut penalty = 0.0;
    for c in cells {
        let gap = c.h - c.r;
        l1 += c.r.norm();
        coupling += (c.m.conj() * gap).re;
        penalty += gap.norm_sqr();
    }
    Ok(0.5 * fidelity + params.lambda * l1 + coupling + 0.5 * params.rho * penalty)
}

/// `||Psi^H Psi H - H|| / ||H||`, the departure of the operator pair from
/// orthogonality on `image`.
pub fn orthogonality_defect(op: &SensingOperator<'_>, image: &ImageVolume) -> Result<f64> {
    let back = op.inverse(&op.forward(image)?)?;
    let diff: f64 = back
        .data()
        .iter()
        .zip(image.data().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(diff.sqrt() / image.norm())
}

/// `n` log-spaced candidates from `1e-3 max|D|` to `max|D|`.
pub fn default_lambda_grid(dirty: &ImageVolume, n: usize) -> Vec<f64> {
    let peak = dirty.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
    if n == 0 || peak == 0.0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![peak];
    }
    let (lo, hi) = ((1e-3f64).ln(), 0.0f64);
    (0..n)
        .map(|i| peak * (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub image: ImageVolume,
    /// `(lambda, entropy)` for every candidate in the order given.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the entropy-minimising `lambda` from `grid`, scoring the converged
/// auxiliary image and returning the primal image of the winner.
pub fn search_lambda(
    echo: &EchoTensor,
    scene: &ValidatedScene,
    template: &AdmmParams,
    grid: &[f64],
) -> Result<LambdaSearch> {
    let op = SensingOperator::new(scene)?;
    let dirty = op.inverse(echo)?;
    search_lambda_from_dirty(&dirty, template, grid)
}

/// [`search_lambda`] on a precomputed `D = Psi^H Y`.
pub fn search_lambda_from_dirty(dirty: &ImageVolume, template: &AdmmParams, grid: &[f64]) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(SolverError::EmptyGrid.into());
    }
    if let Some(&bad) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(SolverError::NegativeLambda(bad).into());
    }
    let mut best: Option<(f64, f64, ImageVolume)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let params = AdmmParams {
            lambda,
            log_objective: false,
            ..*template
        };
        let state = admm_iterate(dirty, &params, None)?;
        // R is exactly sparse while H only approaches it, so a lambda that
        // thresholds everything scores as the all-zero image
        let entropy = image_entropy(&state.r);
        log::debug!("lambda {lambda:.4e}: entropy {entropy:.4} bits after {} iterations", state.t);
        scores.push((lambda, entropy));
        let better = match &best {
            None => true,
            Some((bl, be, _)) => entropy < *be || (entropy == *be && lambda < *bl),
        };
        if better {
            best = Some((lambda, entropy, state.h));
        }
    }
    let (lambda, _, mut image) = best.expect("non-empty grid");
    image.provenance = format!("sparse reconstruction (lambda = {lambda}, searched)");
    Ok(LambdaSearch { lambda, image, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn dirty(seed: u64) -> ImageVolume {
        let data = Array3::from_shape_fn([5, 3, 4], |(i, j, k)| {
            let t = (i * 12 + j * 4 + k) as f64 + seed as f64 * 0.1;
            Complex64::new((t * 0.71).sin(), (t * 1.37).cos()) * (1.0 + (t * 0.3).sin().abs())
        });
        ImageVolume::new(data, "").unwrap()
    }

    fn rel(a: &ImageVolume, b: &ImageVolume) -> f64 {
        let diff: f64 = a.data().iter().zip(b.data().iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
        diff.sqrt() / b.norm()
    }

    #[test]
    fn soft_threshold_examples() {
        let u = Array3::from_elem([1, 1, 1], Complex64::new(3.0, 4.0));
        let out = soft_threshold(&u, 2.0).unwrap();
        assert!((out[[0, 0, 0]] - Complex64::new(1.8, 2.4)).norm() < 1e-15);

        let small = Array3::from_shape_fn([2, 2, 2], |(i, j, k)| Complex64::new(i as f64, (j + k) as f64) * 0.1);
        assert!(soft_threshold(&small, 1.0).unwrap().iter().all(|v| *v == Complex64::default()));
        assert_eq!(soft_threshold(&small, 0.0).unwrap(), small);
        assert_eq!(soft_threshold(&small, -1.0), Err(SolverError::NegativeThreshold(-1.0)));
        let zero = Array3::from_elem([1, 1, 1], Complex64::default());
        assert_eq!(soft_threshold(&zero, 0.5).unwrap(), zero);
    }

    #[test]
    fn zero_lambda_reaches_dirty_image() {
        let d = dirty(0);
        let params = AdmmParams {
            tol: 1e-12,
            max_iters: 30,
            ..Default::default()
        };
        let state = admm_iterate(&d, &params, None).unwrap();
        assert!(rel(&state.h, &d) < 1e-6);
        // first iterate is the scaled dirty image
        let first = admm_iterate(&d, &AdmmParams { max_iters: 1, ..params }, None).unwrap();
        let half = ImageVolume::new(d.data().mapv(|v| v * 0.5), "").unwrap();
        assert!(rel(&first.h, &half) < 1e-15);
    }

    #[test]
    fn large_lambda_gives_zero_image() {
        let d = dirty(1);
        let peak = d.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let params = AdmmParams {
            lambda: 4.0 * peak,
            max_iters: 200,
            tol: 1e-10,
            ..Default::default()
        };
        let state = admm_iterate(&d, &params, None).unwrap();
        assert!(state.r.data().iter().all(|v| *v == Complex64::default()));
        assert!(state.h.norm() < 1e-6 * d.norm());
    }

    #[test]
    fn fixed_point_is_soft_thresholded_dirty_image() {
        let d = dirty(2);
        let peak = d.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let lambda = 0.4 * peak;
        let params = AdmmParams {
            lambda,
            max_iters: 500,
            tol: 1e-13,
            ..Default::default()
        };
        let state = admm_iterate(&d, &params, None).unwrap();
        let expected = ImageVolume::new(soft_threshold(d.data(), lambda).unwrap(), "").unwrap();
        assert!(rel(&state.r, &expected) < 1e-9);
        let last = state.history.last().unwrap();
        assert!(last.primal_residual < 10.0 * params.tol * state.h.norm());
    }

    #[test]
    fn stops_on_relative_change() {
        let d = dirty(3);
        let state = admm_iterate(&d, &AdmmParams::default(), None).unwrap();
        assert!(state.converged);
        assert!(state.t < 50);
        assert!(state.history.last().unwrap().relative_change < 1e-4);
        assert_eq!(state.history.len(), state.t);
        assert!(state.history.iter().all(|r| r.objective.is_none()));
    }

    #[test]
    fn parameter_validation() {
        let d = dirty(0);
        for bad in [
            AdmmParams { rho: 0.0, ..Default::default() },
            AdmmParams { max_iters: 0, ..Default::default() },
            AdmmParams { tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(admm_iterate(&d, &bad, None), Err(crate::Error::Solver(SolverError::BadParams(_)))));
        }
        assert!(matches!(
            admm_iterate(&d, &AdmmParams::with_lambda(-1.0), None),
            Err(crate::Error::Solver(SolverError::NegativeLambda(_)))
        ));
    }

    #[test]
    fn lambda_search_degenerate_grids() {
        let d = dirty(4);
        let template = AdmmParams {
            tol: 1e-12,
            ..Default::default()
        };
        let only_zero = search_lambda_from_dirty(&d, &template, &[0.0]).unwrap();
        assert_eq!(only_zero.lambda, 0.0);
        assert!(rel(&only_zero.image, &d) < 1e-6);

        let big = 10.0 * d.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let s = search_lambda_from_dirty(&d, &AdmmParams { max_iters: 300, ..template }, &[0.0, big]).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.scores[1].1, f64::INFINITY);

        assert!(matches!(
            search_lambda_from_dirty(&d, &template, &[]),
            Err(crate::Error::Solver(SolverError::EmptyGrid))
        ));
    }

    #[test]
    fn default_grid_is_log_spaced() {
        let d = dirty(5);
        let peak = d.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let g = default_lambda_grid(&d, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-3 * peak).abs() < 1e-12 * peak);
        assert!((g[7] - peak).abs() < 1e-12 * peak);
        let ratio = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_shrinks_and_keeps_phase(re in -10.0f64..10.0, im in -10.0f64..10.0, v in 0.0f64..5.0) {
            let u = Complex64::new(re, im);
            let out = soft_threshold(&Array3::from_elem([1, 1, 1], u), v).unwrap()[[0, 0, 0]];
            let expected = (u.norm() - v).max(0.0);
            prop_assert!((out.norm() - expected).abs() < 1e-12);
            if out.norm() > 1e-9 {
                prop_assert!((out / out.norm() - u / u.norm()).norm() < 1e-9);
            }
        }

        #[test]
        fn iteration_is_deterministic(seed in 0u64..50, frac in 0.0f64..0.8) {
            let d = dirty(seed);
            let peak = d.data().iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let params = AdmmParams::with_lambda(frac * peak);
            let a = admm_iterate(&d, &params, None).unwrap();
            let b = admm_iterate(&d, &params, None).unwrap();
            prop_assert_eq!(a.h.data(), b.h.data());
        }
    }
}
