use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimosar::dataio::read_tensor;
use mimosar::metrics::{image_entropy, peak_location};
use mimosar::operators::ImageVolume;

const TINY: &str = r#"
[medium]
relative_permittivity = 2.1

[arrays]
tx_x = [-0.011, 0.002, 0.014]
rx_x = { start = -0.0105, step = 0.003, count = 8 }
aperture_y = -0.1
scan_z = { start = -0.015, step = 0.002, count = 16 }

[sweep]
f_min = 31.5e9
f_max = 43.5e9
n_freq = 8

[grid]
x = { count = 16 }
y = { start = 0.0, step = 0.005, count = 8 }
z = { count = 16 }
"#;

const DESK: &str = include_str!("../../../configs/desk.toml");
const DESK_TARGETS: &str = include_str!("../../../configs/desk_targets.toml");
const EXPERIMENT_ONE: &str = include_str!("../../../configs/experiment_one.toml");

const ONE_TARGET: &str = "[[target]]\nposition = [0.0015, 0.02, -0.001]\n";

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn mimosar(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimosar"))
        .args(args.iter().map(|a| a.as_ref()))
        .env("MIMOSAR_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(w: &Work, config: &Path, targets: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let echo = w.path(out);
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> =
        vec![&"simulate", &"--config", &config, &"--targets", &targets, &"--out", &echo];
    for e in extra {
        args.push(e);
    }
    ok(mimosar(&args));
    echo
}

fn reconstruct(w: &Work, config: &Path, echo: &Path, out: &str, extra: &[&str]) -> (ImageVolume, serde_json::Value) {
    let image = w.path(out);
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> =
        vec![&"reconstruct", &"--config", &config, &"--echo", &echo, &"--out", &image];
    for e in extra {
        args.push(e);
    }
    ok(mimosar(&args));
    (read_tensor(&image).unwrap().into_image().unwrap(), manifest(&image))
}

fn manifest(output: &Path) -> serde_json::Value {
    let mut name = output.file_name().unwrap().to_os_string();
    name.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(output.with_file_name(name)).unwrap()).unwrap()
}

fn rel_diff(a: &ImageVolume, b: &ImageVolume) -> f64 {
    let d: f64 = a.data().iter().zip(b.data().iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    d.sqrt() / b.norm()
}

#[test]
fn simulate_writes_echo_with_config_dims_and_manifest() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let targets = w.file("t.toml", ONE_TARGET);
    let echo = simulate(&w, &config, &targets, "echo.vol", &[]);
    let echo_t = read_tensor(&echo).unwrap().into_echo().unwrap();
    assert_eq!(echo_t.data().dim(), (3, 8, 16, 8));

    let m = manifest(&echo);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"], mimosar::dataio::sha256_hex(TINY.as_bytes()));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_gives_identical_files() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let targets = w.file("t.toml", ONE_TARGET);
    let a = simulate(&w, &config, &targets, "a.vol", &["--snr", "20", "--seed", "5"]);
    let b = simulate(&w, &config, &targets, "b.vol", &["--snr", "20", "--seed", "5"]);
    let c = simulate(&w, &config, &targets, "c.vol", &["--snr", "20", "--seed", "6"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn full_size_layout_gives_expected_echo_shape() {
    let w = Work::new();
    let config = w.file("exp1.toml", EXPERIMENT_ONE);
    let targets = w.file("t.toml", "[[target]]\nposition = [0.0, 0.02, 0.0]\n");
    let echo = simulate(&w, &config, &targets, "echo.vol", &[]);
    let header = mimosar::dataio::read_header(&echo).unwrap();
    assert_eq!(header.dims(), vec![9, 31, 77, 51]);
}

#[test]
fn zero_lambda_enhanced_matches_dtfda() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let targets = w.file("t.toml", ONE_TARGET);
    let echo = simulate(&w, &config, &targets, "echo.vol", &["--snr", "30", "--double"]);
    let (dtfda, _) = reconstruct(&w, &config, &echo, "d.vol", &["--algo", "dtfda"]);
    let (enh, m) = reconstruct(
        &w,
        &config,
        &echo,
        "e.vol",
        &["--algo", "enhanced", "--lambda", "0", "--tol", "1e-12", "--max-iters", "60"],
    );
    assert!(rel_diff(&enh, &dtfda) <= 1e-6);
    assert_eq!(m["algorithm"], "enhanced");
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn back_projection_peak_matches_dtfda() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let targets = w.file("t.toml", ONE_TARGET);
    let echo = simulate(&w, &config, &targets, "echo.vol", &[]);
    let (dtfda, _) = reconstruct(&w, &config, &echo, "d.vol", &["--algo", "dtfda"]);
    let (ibp, _) = reconstruct(&w, &config, &echo, "i.vol", &["--algo", "ibp"]);
    let (pd, pi) = (peak_location(&dtfda).unwrap().0, peak_location(&ibp).unwrap().0);
    assert!((0..3).all(|a| pd[a].abs_diff(pi[a]) <= 1), "dtfda {pd:?} ibp {pi:?}");
}

fn metrics_record(stdout: &[u8]) -> std::collections::HashMap<String, String> {
    String::from_utf8_lossy(stdout)
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[test]
fn metrics_entropy_of_delta_and_uniform_images() {
    let w = Work::new();
    let mut delta = ndarray::Array3::zeros([4, 4, 4]);
    delta[[2, 1, 3]] = mimosar::Complex64::new(1.0, 1.0);
    let delta_path = w.path("delta.vol");
    mimosar::dataio::write_tensor(&delta_path, &ImageVolume::new(delta, "").unwrap()).unwrap();
    let uniform_path = w.path("uniform.vol");
    let uniform = ndarray::Array3::from_elem([4, 4, 2], mimosar::Complex64::new(0.3, 0.0));
    mimosar::dataio::write_tensor(&uniform_path, &ImageVolume::new(uniform, "").unwrap()).unwrap();

    let rec = metrics_record(&ok(mimosar(&[&"metrics", &"--image", &delta_path, &"--entropy"])).stdout);
    assert_eq!(rec["image_entropy_bits"].parse::<f64>().unwrap(), 0.0);
    assert_eq!((rec["peak_x"].as_str(), rec["peak_y"].as_str(), rec["peak_z"].as_str()), ("2", "1", "3"));

    let rec = metrics_record(&ok(mimosar(&[&"metrics", &"--image", &uniform_path, &"--entropy"])).stdout);
    assert!((rec["image_entropy_bits"].parse::<f64>().unwrap() - 5.0).abs() < 1e-12);
    assert!(w.path("uniform.vol.metrics.manifest.json").exists());
}

#[test]
fn compare_writes_one_row_per_algorithm() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let targets = w.file("t.toml", ONE_TARGET);
    let echo = simulate(&w, &config, &targets, "echo.vol", &["--snr", "25"]);
    let out = w.path("cmp");
    ok(mimosar(&[&"compare", &"--config", &config, &"--echo", &echo, &"--algos", &"dtfda,enhanced", &"--out-dir", &out]));
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "algo,ie_bits,wall_time_s,peak_x,peak_y,peak_z");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("dtfda,") && lines[2].starts_with("enhanced,"));
    assert!(out.join("dtfda.vol").exists() && out.join("enhanced.vol").exists());
    assert!(out.join("compare.manifest.json").exists());
}

#[test]
fn exit_codes_separate_usage_and_io_failures() {
    let w = Work::new();
    let config = w.file("tiny.toml", TINY);
    let missing = w.path("nope.vol");

    let out = mimosar(&[&"metrics", &"--image", &missing]);
    assert_eq!(out.status.code(), Some(4));

    let bad = w.file("bad.toml", &TINY.replace("relative_permittivity = 2.1", "relative_permittivity = 0.5"));
    let targets = w.file("t.toml", ONE_TARGET);
    let out = mimosar(&[&"simulate", &"--config", &bad, &"--targets", &targets, &"--out", &w.path("x.vol")]);
    assert_eq!(out.status.code(), Some(2));

    let echo = simulate(&w, &config, &targets, "echo.vol", &[]);
    let out = mimosar(&[&"reconstruct", &"--config", &config, &"--echo", &echo, &"--algo", &"enhanced", &"--out", &w.path("e.vol")]);
    assert_eq!(out.status.code(), Some(2));

    let other = w.file("other.toml", &TINY.replace("n_freq = 8", "n_freq = 9"));
    let out = mimosar(&[&"reconstruct", &"--config", &other, &"--echo", &echo, &"--algo", &"dtfda", &"--out", &w.path("d.vol")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn desk_scene_wall_time_and_entropy_ordering() {
    let w = Work::new();
    let config = w.file("desk.toml", DESK);
    let targets = w.file("targets.toml", DESK_TARGETS);
    let echo = simulate(&w, &config, &targets, "echo.vol", &["--snr", "25", "--seed", "1"]);

    let (dtfda, md) = reconstruct(&w, &config, &echo, "d.vol", &["--algo", "dtfda"]);
    let (enh, me) = reconstruct(&w, &config, &echo, "e.vol", &["--algo", "enhanced", "--lambda-auto"]);
    let (ibp, mi) = reconstruct(&w, &config, &echo, "i.vol", &["--algo", "ibp"]);
    let t = |m: &serde_json::Value| m["wall_time_s"].as_f64().unwrap();
    let (td, te, ti) = (t(&md), t(&me), t(&mi));
    assert!(ti > 10.0 * te && ti > 10.0 * td, "ibp {ti} enhanced {te} dtfda {td}");
    assert!(te >= 0.5 * td, "enhanced {te} dtfda {td}");

    let (ie, id, ii) = (image_entropy(&enh), image_entropy(&dtfda), image_entropy(&ibp));
    assert!(ie < id, "enhanced {ie} dtfda {id}");
    assert!(id <= ii * 1.05, "dtfda {id} ibp {ii}");
}

#[test]
fn exports_shallow_and_deep_sections_in_one_call() {
    let w = Work::new();
    let config = w.file("desk.toml", DESK);
    let targets = w.file("targets.toml", DESK_TARGETS);
    let echo = simulate(&w, &config, &targets, "echo.vol", &[]);
    let (img, _) = reconstruct(&w, &config, &echo, "d.vol", &["--algo", "dtfda"]);
    let deepest = img.data().dim().1 - 1;
    let prefix = w.path("desk");
    let image = w.path("d.vol");
    let deep = format!("y={deepest}");
    ok(mimosar(&[
        &"metrics",
        &"--image",
        &image,
        &"--projection",
        &"y",
        &"--range",
        &"30",
        &"--export-section",
        &"y=0",
        &"--export-section",
        &deep,
        &"--out-prefix",
        &prefix,
    ]));
    for name in ["desk.txt", "desk_proj_y.png", "desk_y0.png", &format!("desk_y{deepest}.png"), "desk.manifest.json"] {
        assert!(w.path(name).exists(), "missing {name}");
    }
    let png = std::fs::read(w.path("desk_y0.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
}
