use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Deserialize;
use serde_json::json;

use mimosar::dataio::{self, ElementType, SliceSelection};
use mimosar::ibp::ibp_reconstruct;
use mimosar::metrics::{peak_location, image_entropy, section_entropy, MetricsReport};
use mimosar::operators::{ImageVolume, SensingOperator};
use mimosar::scene::{validate, SceneConfig, SceneError, ValidatedScene};
use mimosar::simulator::{add_noise, synthesize_echo, EchoTensor, PointTarget};
use mimosar::solver::{admm_iterate, default_lambda_grid, search_lambda_from_dirty, AdmmParams, SolverError};
use mimosar::Complex64;

use crate::manifest::{self, RunManifest};
use crate::{Algo, CompareArgs, MetricsArgs, ReconstructArgs, SimulateArgs, SolverArgs};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// Malformed input that the library never sees.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::error::Error for InputError {}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.into()))
}

/// Maps a failure to the process exit code: 2 for unparsable or invalid
/// input, 3 for numerical failures, 4 for I/O.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use mimosar::dataio::DataIoError;
    use mimosar::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Scene(SceneError::Io(_)) | E::DataIo(DataIoError::Io { .. }) => EXIT_IO,
                E::Scene(_)
                | E::DataIo(_)
                | E::DimensionMismatch { .. }
                | E::TooLarge { .. }
                | E::NoTargets
                | E::InvalidArgument(_)
                | E::IndexOutOfRange { .. }
                | E::Solver(SolverError::BadParams(_) | SolverError::NegativeLambda(_) | SolverError::EmptyGrid) => {
                    EXIT_USAGE
                }
                _ => EXIT_NUMERICAL,
            };
        }
    }
    1
}

fn load_scene(path: &Path) -> anyhow::Result<(ValidatedScene, String)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config = SceneConfig::from_toml_str(&text).map_err(mimosar::Error::from)?;
    let scene = validate(&config).map_err(mimosar::Error::from)?;
    Ok((scene, text))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    #[serde(default)]
    target: Vec<TargetEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    position: [f64; 3],
    /// `[re, im]`; defaults to a unit real reflectivity.
    #[serde(default = "unit_reflectivity")]
    reflectivity: [f64; 2],
}

fn unit_reflectivity() -> [f64; 2] {
    [1.0, 0.0]
}

fn load_targets(path: &Path) -> anyhow::Result<Vec<PointTarget>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading targets {}", path.display()))?;
    let file: TargetFile =
        toml::from_str(&text).map_err(|e| input_error(format!("targets file {}: {e}", path.display())))?;
    Ok(file
        .target
        .iter()
        .map(|t| {
            let [x, y, z] = t.position;
            PointTarget::new(x, y, z, Complex64::new(t.reflectivity[0], t.reflectivity[1]))
        })
        .collect())
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let (scene, text) = load_scene(&args.config)?;
    let targets = load_targets(&args.targets)?;
    let start = Instant::now();
    let mut echo = synthesize_echo(&scene, &targets)?;
    if let Some(snr) = args.snr {
        echo = add_noise(&echo, snr, args.seed);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let element = if args.double {
        ElementType::Complex128
    } else {
        ElementType::Complex64
    };
    dataio::write_tensor_with(&args.out, &echo, element, Some(&scene))?;

    let mut m = RunManifest::new("simulate").with_config(&args.config, &text);
    m.inputs.push(args.targets.clone());
    m.outputs.push(args.out.clone());
    m.parameters = json!({
        "targets": targets.len(),
        "snr_db": args.snr,
        "seed": args.seed,
        "element_type": if args.double { "complex128" } else { "complex64" },
        "dims": echo.dims(),
    });
    m.wall_time_s = Some(elapsed);
    m.write(&manifest::path_for(&args.out))
}

/// One reconstruction with its algorithm-only wall time and parameters.
struct Run {
    image: ImageVolume,
    wall_time_s: f64,
    parameters: serde_json::Value,
}

fn run_algo(algo: Algo, echo: &EchoTensor, scene: &ValidatedScene, s: &SolverArgs) -> anyhow::Result<Run> {
    let start = Instant::now();
    let (image, parameters) = match algo {
        Algo::Dtfda => (SensingOperator::new(scene)?.inverse(echo)?, json!({})),
        Algo::Ibp => {
            let stride = s.stride.unwrap_or_default();
            let stride_json = json!([stride.tx, stride.rx, stride.scan, stride.freq]);
            (ibp_reconstruct(echo, scene, stride)?, json!({ "stride": stride_json }))
        }
        Algo::Enhanced => {
            let template = AdmmParams {
                rho: s.rho,
                lambda: 0.0,
                max_iters: s.max_iters,
                tol: s.tol,
                log_objective: false,
            };
            template.validate().map_err(mimosar::Error::from)?;
            let op = SensingOperator::new(scene)?;
            let dirty = op.inverse(echo)?;
            match (s.lambda, s.lambda_auto) {
                (Some(lambda), _) => {
                    let params = AdmmParams { lambda, ..template };
                    let state = admm_iterate(&dirty, &params, None)?;
                    let p = json!({
                        "lambda": lambda, "rho": s.rho, "max_iters": s.max_iters, "tol": s.tol,
                        "iterations": state.t, "converged": state.converged,
                    });
                    (state.h, p)
                }
                (None, true) => {
                    let grid = default_lambda_grid(&dirty, s.lambda_candidates);
                    let found = search_lambda_from_dirty(&dirty, &template, &grid)?;
                    let p = json!({
                        "lambda": found.lambda, "lambda_auto": true, "rho": s.rho,
                        "max_iters": s.max_iters, "tol": s.tol,
                        "candidates": found.scores.iter().map(|(l, e)| json!({"lambda": l, "ie_bits": finite_or_null(*e)})).collect::<Vec<_>>(),
                    });
                    (found.image, p)
                }
                (None, false) => return Err(input_error("the enhanced reconstructor needs --lambda or --lambda-auto")),
            }
        }
    };
    Ok(Run {
        image,
        wall_time_s: start.elapsed().as_secs_f64(),
        parameters,
    })
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn summary(image: &ImageVolume) -> anyhow::Result<serde_json::Value> {
    let (peak, value) = peak_location(image)?;
    Ok(json!({
        "ie_bits": finite_or_null(image_entropy(image)),
        "peak_voxel": peak,
        "peak_value": value,
    }))
}

fn read_echo(path: &Path, scene: &ValidatedScene) -> anyhow::Result<EchoTensor> {
    let echo = dataio::read_tensor(path)
        .with_context(|| format!("reading echo {}", path.display()))?
        .into_echo()?;
    if echo.dims() != scene.echo_dims() {
        return Err(mimosar::Error::DimensionMismatch {
            expected: scene.echo_dims().to_vec(),
            actual: echo.dims().to_vec(),
        })
        .with_context(|| format!("echo {} does not match the config", path.display()));
    }
    Ok(echo)
}

pub fn reconstruct(args: &ReconstructArgs) -> anyhow::Result<()> {
    let (scene, text) = load_scene(&args.config)?;
    let echo = read_echo(&args.echo, &scene)?;
    let run = run_algo(args.algo, &echo, &scene, &args.solver)?;
    dataio::write_tensor_with(&args.out, &run.image, ElementType::Complex128, Some(&scene))?;
    log::info!("{} reconstruction took {:.3} s", args.algo.name(), run.wall_time_s);

    let mut m = RunManifest::new("reconstruct").with_config(&args.config, &text);
    m.inputs.push(args.echo.clone());
    m.outputs.push(args.out.clone());
    m.algorithm = Some(args.algo.name().into());
    m.parameters = run.parameters;
    m.wall_time_s = Some(run.wall_time_s);
    m.metrics = summary(&run.image)?;
    m.write(&manifest::path_for(&args.out))
}

fn axis_label(axis: mimosar::metrics::ImageAxis) -> String {
    axis.to_string()
}

pub fn metrics(args: &MetricsArgs) -> anyhow::Result<()> {
    if !(args.range > 0.0) {
        return Err(input_error(format!("--range must be positive, got {}", args.range)));
    }
    let image = dataio::read_tensor(&args.image)
        .with_context(|| format!("reading image {}", args.image.display()))?
        .into_image()?;
    let mut report = MetricsReport::compute(&image, args.projection.map(|a| (a, args.range)))?;
    if let Some((axis, index)) = args.section {
        report.image_entropy_bits = section_entropy(&image, axis, index)?;
        report.entropy_scope = format!("section {axis}={index}");
    }
    let record = report.to_record();
    print!("{record}");

    let mut outputs: Vec<PathBuf> = Vec::new();
    let manifest_path = match &args.out_prefix {
        Some(prefix) => {
            let with_suffix = |suffix: &str| {
                let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                name.push(suffix);
                prefix.with_file_name(name)
            };
            let txt = with_suffix(".txt");
            std::fs::write(&txt, &record).with_context(|| format!("writing {}", txt.display()))?;
            outputs.push(txt);
            if let Some(axis) = args.projection {
                let png = with_suffix(&format!("_proj_{}.png", axis_label(axis)));
                dataio::export_slice_image(&image, SliceSelection::Projection(axis), args.range, &png)?;
                outputs.push(png);
            }
            for &(axis, index) in &args.export_section {
                let png = with_suffix(&format!("_{}{index}.png", axis_label(axis)));
                dataio::export_slice_image(&image, SliceSelection::Section(axis, index), args.range, &png)?;
                outputs.push(png);
            }
            with_suffix(".manifest.json")
        }
        None => {
            if !args.export_section.is_empty() {
                return Err(input_error("--export-section needs --out-prefix"));
            }
            let mut name = args.image.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".metrics.manifest.json");
            args.image.with_file_name(name)
        }
    };

    let mut m = RunManifest::new("metrics");
    m.inputs.push(args.image.clone());
    m.outputs = outputs;
    m.parameters = json!({
        "projection": args.projection.map(axis_label),
        "range_db": args.range,
        "entropy_scope": report.entropy_scope,
    });
    m.metrics = json!({
        "ie_bits": finite_or_null(report.image_entropy_bits),
        "peak_voxel": report.peak_voxel,
        "peak_value": report.peak_value,
    });
    m.write(&manifest_path)
}

pub const CSV_HEADER: &str = "algo,ie_bits,wall_time_s,peak_x,peak_y,peak_z";

pub fn compare(args: &CompareArgs) -> anyhow::Result<()> {
    let (scene, text) = load_scene(&args.config)?;
    let echo = read_echo(&args.echo, &scene)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    let mut solver = args.solver.clone();
    if solver.lambda.is_none() {
        solver.lambda_auto = true;
    }
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut m = RunManifest::new("compare").with_config(&args.config, &text);
    m.inputs.push(args.echo.clone());
    let mut per_algo = serde_json::Map::new();
    let mut failures: Vec<(Algo, anyhow::Error)> = Vec::new();

    for &algo in &args.algos {
        let outcome = run_algo(algo, &echo, &scene, &solver).and_then(|run| {
            let path = args.out_dir.join(format!("{}.vol", algo.name()));
            dataio::write_tensor_with(&path, &run.image, ElementType::Complex128, Some(&scene))?;
            let (peak, _) = peak_location(&run.image)?;
            let ie = image_entropy(&run.image);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                algo.name(),
                ie,
                run.wall_time_s,
                peak[0],
                peak[1],
                peak[2]
            );
            per_algo.insert(
                algo.name().into(),
                json!({"parameters": run.parameters, "wall_time_s": run.wall_time_s, "metrics": summary(&run.image)?}),
            );
            m.outputs.push(path);
            Ok(())
        });
        if let Err(e) = outcome {
            log::error!("{} failed: {e:#}", algo.name());
            failures.push((algo, e));
        }
    }

    let csv_path = args.out_dir.join("compare.csv");
    std::fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    print!("{csv}");
    m.outputs.push(csv_path);
    m.algorithm = Some(args.algos.iter().map(|a| a.name()).collect::<Vec<_>>().join(","));
    m.parameters = json!({ "runs": per_algo });
    m.metrics = json!({ "failed": failures.iter().map(|(a, e)| json!({"algo": a.name(), "error": format!("{e:#}")})).collect::<Vec<_>>() });
    m.write(&args.out_dir.join("compare.manifest.json"))?;

    if failures.is_empty() {
        return Ok(());
    }
    let names = failures.iter().map(|(a, _)| a.name()).collect::<Vec<_>>().join(", ");
    let count = failures.len();
    // the first failure decides the exit code
    let (_, first) = failures.remove(0);
    Err(first.context(format!("{count} algorithm(s) failed: {names}")))
}
