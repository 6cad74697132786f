//! End-to-end runs through simulator, reconstructors and metrics.

use mimosar::metrics::{image_entropy, local_maxima, max_projection, ImageAxis};
use mimosar::operators::SensingOperator;
use mimosar::scene::{validate, SceneConfig, ValidatedScene};
use mimosar::simulator::{add_noise, synthesize_echo, PointTarget};
use mimosar::solver::{admm_iterate, default_lambda_grid, search_lambda_from_dirty, AdmmParams};
use mimosar::Complex64;

fn desk() -> ValidatedScene {
    let text = include_str!("../../../configs/desk.toml");
    validate(&SceneConfig::from_toml_str(text).unwrap()).unwrap()
}

fn three_points(scene: &ValidatedScene) -> Vec<PointTarget> {
    let g = scene.grid();
    [(9, 4, 10), (21, 4, 12), (15, 4, 22)]
        .into_iter()
        .map(|(ix, iy, iz)| PointTarget::new(g.x[ix], g.y[iy], g.z[iz], Complex64::new(1.0, 0.0)))
        .collect()
}

const TRUTH: [(usize, usize); 3] = [(9, 10), (21, 12), (15, 22)];

fn near_truth(peaks: &[(usize, usize)]) -> bool {
    TRUTH
        .iter()
        .all(|&(x, z)| peaks.iter().any(|&(px, pz)| px.abs_diff(x) <= 1 && pz.abs_diff(z) <= 1))
}

#[test]
fn three_point_projection_has_three_peaks() {
    let scene = desk();
    let echo = synthesize_echo(&scene, &three_points(&scene)).unwrap();
    let dirty = SensingOperator::new(&scene).unwrap().inverse(&echo).unwrap();

    // the small aperture leaves cross-range sidelobes near -13 dB in the
    // frequency-domain image, so only its three strongest maxima are checked
    let map = max_projection(&dirty, ImageAxis::Y, 30.0).unwrap();
    let mut peaks = local_maxima(&map, -20.0);
    peaks.sort_by(|a, b| map[[b.0, b.1]].total_cmp(&map[[a.0, a.1]]));
    assert!(near_truth(&peaks[..3]), "{peaks:?}");

    let grid = default_lambda_grid(&dirty, 8);
    let sparse = search_lambda_from_dirty(&dirty, &AdmmParams::default(), &grid).unwrap();
    let map = max_projection(&sparse.image, ImageAxis::Y, 30.0).unwrap();
    let peaks = local_maxima(&map, -20.0);
    assert_eq!(peaks.len(), 3, "{peaks:?}");
    assert!(near_truth(&peaks), "{peaks:?}");
}

#[test]
fn sparse_image_has_lower_entropy_at_30_db() {
    let scene = desk();
    let echo = add_noise(&synthesize_echo(&scene, &three_points(&scene)).unwrap(), 30.0, 11);
    let dirty = SensingOperator::new(&scene).unwrap().inverse(&echo).unwrap();
    let grid = default_lambda_grid(&dirty, 8);
    let best = search_lambda_from_dirty(&dirty, &AdmmParams::default(), &grid).unwrap();
    assert!(image_entropy(&best.image) < image_entropy(&dirty));
}

#[test]
fn lambda_search_agrees_with_exhaustive_scoring() {
    let scene = desk();
    let echo = add_noise(&synthesize_echo(&scene, &three_points(&scene)).unwrap(), 25.0, 3);
    let dirty = SensingOperator::new(&scene).unwrap().inverse(&echo).unwrap();
    let grid = default_lambda_grid(&dirty, 6);
    let template = AdmmParams::default();
    let found = search_lambda_from_dirty(&dirty, &template, &grid).unwrap();

    // independent scoring: run every candidate, keep the first minimum
    let mut best = (f64::NAN, f64::INFINITY);
    for &lambda in &grid {
        let state = admm_iterate(&dirty, &AdmmParams { lambda, ..template }, None).unwrap();
        let score = image_entropy(&state.r);
        if score < best.1 {
            best = (lambda, score);
        }
    }
    assert_eq!(found.lambda, best.0);
    assert_eq!(found.scores.len(), grid.len());
}
