//! End-to-end tests of the `lfdeconv` binary: exit codes, file outputs,
//! stdout contracts, and agreement with the library on the same inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfdeconv::io::{load_psf, read_tiff_stack, write_tiff_stack, PixelFormat, PsfLayoutDescriptor};
use lfdeconv::lfmodel::conv::engine_by_name;
use lfdeconv::lfmodel::forward_project;
use lfdeconv::metric::{dct_entropy, max_project_z, MetricConfig};
use lfdeconv::optics::{cutoff_region, OpticsParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lfdeconv"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .env_remove("LFDECONV_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

const OPTICS: &[&str] = &[
    "--wavelength-um",
    "0.52",
    "--na",
    "0.5",
    "--mla-pitch-um",
    "150",
    "--magnification",
    "40",
    "--nnum",
    "3",
];

fn optics_params() -> OpticsParams {
    OpticsParams {
        wavelength_um: 0.52,
        na: 0.5,
        mla_pitch_um: 150.0,
        magnification: 40.0,
        nnum: 3,
    }
}

/// Runs `simulate` into `dir` with the given prefix and seed; returns the
/// four output paths (phantom, psf, descriptor, measurement).
fn simulate(dir: &Path, prefix: &str, seed: &str, extra: &[&str]) -> [PathBuf; 4] {
    let mut args = vec!["simulate", "--out", prefix, "--seed", seed];
    args.extend_from_slice(extra);
    let out = run_in(dir, &args);
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr_str(&out));
    [
        dir.join(format!("{prefix}_phantom.tif")),
        dir.join(format!("{prefix}_psf.tif")),
        dir.join(format!("{prefix}_psf.json")),
        dir.join(format!("{prefix}_measurement.tif")),
    ]
}

#[test]
fn help_screens_exit_zero() {
    for args in [
        vec!["--help"],
        vec!["deconvolve", "--help"],
        vec!["metric", "--help"],
        vec!["simulate", "--help"],
        vec!["psfgen", "--help"],
        vec!["bench", "--help"],
        vec!["info", "--help"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(code(&out), 0, "{args:?} should exit 0");
        assert!(
            stdout_str(&out).contains("Usage"),
            "{args:?} should print usage"
        );
    }
}

#[test]
fn missing_psf_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["deconvolve", "--input", "a.tif", "--out", "b"],
    );
    assert_eq!(code(&out), 1);
    let err = stderr_str(&out);
    assert!(err.contains("--psf"), "stderr: {err}");
    assert!(err.contains("Usage"), "stderr: {err}");
}

#[test]
fn deconvolve_writes_outputs_and_reports_best_iter() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "7", &[]);

    let mut args = vec![
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "run",
        "--max-iters",
        "6",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));

    for name in ["run_volume.tif", "run_series.csv", "run_summary.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    let stdout = stdout_str(&out);
    let best_line = stdout
        .lines()
        .find(|l| l.starts_with("best_iter="))
        .expect("best_iter printed");
    let stop_line = stdout
        .lines()
        .find(|l| l.starts_with("stop_iter="))
        .expect("stop_iter printed");
    let best: usize = best_line["best_iter=".len()..].parse().unwrap();
    let stop: usize = stop_line["stop_iter=".len()..].parse().unwrap();

    // CSV argmax is the summary's (and stdout's) best_iter.
    let csv = std::fs::read_to_string(dir.path().join("run_series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iteration,dct_entropy,wall_ms");
    let mut argmax = 0usize;
    let mut best_entropy = f64::NEG_INFINITY;
    let mut last_iter = 0usize;
    for line in lines {
        let mut f = line.split(',');
        let it: usize = f.next().unwrap().parse().unwrap();
        let e: f64 = f.next().unwrap().parse().unwrap();
        if e > best_entropy {
            best_entropy = e;
            argmax = it;
        }
        last_iter = it;
    }
    assert_eq!(best, argmax);
    assert_eq!(stop, last_iter);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["best_iter"].as_u64().unwrap() as usize, argmax);
    assert_eq!(summary["stop_iter"].as_u64().unwrap() as usize, stop);
    assert_eq!(summary["config"]["workers"].as_u64().unwrap(), 1);

    // The written volume is the best-iteration snapshot in f32.
    let vol = read_tiff_stack(&dir.path().join("run_volume.tif")).unwrap();
    assert_eq!(vol.nz(), 3);
    assert!(vol.data().iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn fixed_iters_runs_exactly_that_many() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "11", &[]);

    let mut args = vec![
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "fx",
        "--fixed-iters",
        "7",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    assert!(stdout_str(&out).contains("stop_iter=7"));

    let csv = std::fs::read_to_string(dir.path().join("fx_series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8, "header plus exactly 7 entries");
}

#[test]
fn failed_runs_write_no_output_files() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "3", &[]);

    // Input validation failure: nonexistent measurement.
    let mut args = vec![
        "deconvolve",
        "--input",
        "nope.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "bad",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 2);
    assert!(stderr_str(&out).contains("nope.tif"));

    // Runtime failure: a zero memory budget no worker can satisfy.
    let mut args = vec![
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "bad",
        "--memory-budget-mb",
        "0",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 3);
    assert!(
        stderr_str(&out).contains("limiting term"),
        "budget refusal names the limiting term; stderr: {}",
        stderr_str(&out)
    );

    for name in ["bad_volume.tif", "bad_series.csv", "bad_summary.json"] {
        assert!(
            !dir.path().join(name).exists(),
            "{name} must not exist after a failed run"
        );
    }
    // No stray staging temporaries either.
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("stage"))
        .collect();
    assert!(leftovers.is_empty(), "staging leftovers: {leftovers:?}");
}

#[test]
fn metric_is_zero_for_constant_scale_invariant_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.tif");
    write_tiff_stack(
        &lfdeconv::lfmodel::Volume::filled(1, 9, 9, 3.7),
        &flat,
        PixelFormat::F32,
    )
    .unwrap();

    let mut args = vec!["metric", "--input", "flat.tif"];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_eq!(v["dct_entropy"].as_f64().unwrap(), 0.0);

    let region = cutoff_region(&optics_params(), 9, 9).unwrap();
    assert_eq!(v["x_s"].as_u64().unwrap() as usize, region.x_s);
    assert_eq!(v["y_s"].as_u64().unwrap() as usize, region.y_s);
    assert_eq!(v["g_s"].as_f64().unwrap(), region.g_s);

    // Textured image: CLI output equals the library on the same file, and
    // doubling the exposure does not change the entropy.
    let data: Vec<f64> = (0..81).map(|i| 1.0 + ((i * 37) % 11) as f64).collect();
    let textured = dir.path().join("tex.tif");
    write_tiff_stack(
        &lfdeconv::lfmodel::Volume::new(1, 9, 9, data.clone()).unwrap(),
        &textured,
        PixelFormat::F32,
    )
    .unwrap();
    let doubled = dir.path().join("tex2.tif");
    write_tiff_stack(
        &lfdeconv::lfmodel::Volume::new(1, 9, 9, data.iter().map(|v| v * 2.0).collect()).unwrap(),
        &doubled,
        PixelFormat::F32,
    )
    .unwrap();

    let entropy_of = |name: &str| -> f64 {
        let mut args = vec!["metric", "--input", name];
        args.extend_from_slice(OPTICS);
        let out = run_in(dir.path(), &args);
        assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
        let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
        v["dct_entropy"].as_f64().unwrap()
    };
    let e1 = entropy_of("tex.tif");
    let e2 = entropy_of("tex2.tif");
    assert_eq!(e1, e2, "exposure scaling must not change the entropy");

    let img = max_project_z(&read_tiff_stack(&textured).unwrap());
    let expected = dct_entropy(&img, &region, &MetricConfig::default()).unwrap();
    assert_eq!(e1, expected, "CLI must match the library bit-for-bit");
}

#[test]
fn metric_no_project_evaluates_first_page() {
    let dir = tempfile::tempdir().unwrap();
    // Page 0 constant, page 1 textured: projection sees texture, page 0 not.
    let mut data = vec![5.0; 81];
    data.extend((0..81).map(|i| 1.0 + ((i * 29) % 13) as f64));
    let stack = dir.path().join("stack.tif");
    write_tiff_stack(
        &lfdeconv::lfmodel::Volume::new(2, 9, 9, data).unwrap(),
        &stack,
        PixelFormat::F32,
    )
    .unwrap();

    let mut args = vec!["metric", "--input", "stack.tif", "--no-project"];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_eq!(v["dct_entropy"].as_f64().unwrap(), 0.0);
    assert_eq!(v["pages"].as_u64().unwrap(), 2);
    assert_eq!(v["projected"].as_bool().unwrap(), false);

    let mut args = vec!["metric", "--input", "stack.tif"];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert!(v["dct_entropy"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", "9", &[]);
    let b = simulate(dir.path(), "b", "9", &[]);
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(
            std::fs::read(pa).unwrap(),
            std::fs::read(pb).unwrap(),
            "{} vs {} must be byte-identical",
            pa.display(),
            pb.display()
        );
    }
    let c = simulate(dir.path(), "c", "10", &[]);
    assert_ne!(
        std::fs::read(&a[3]).unwrap(),
        std::fs::read(&c[3]).unwrap(),
        "different seeds must give different measurements"
    );
}

#[test]
fn simulate_without_noise_matches_forward_projection_of_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let [phantom_path, psf_path, desc_path, meas_path] =
        simulate(dir.path(), "clean", "5", &["--no-noise"]);

    let phantom = read_tiff_stack(&phantom_path).unwrap();
    let desc = PsfLayoutDescriptor::load(&desc_path).unwrap();
    let psf = load_psf(&psf_path, &desc).unwrap();
    let engine = engine_by_name("direct").unwrap();
    let fwd = forward_project(&phantom, &psf, engine.as_ref()).unwrap();

    let meas = read_tiff_stack(&meas_path).unwrap();
    assert_eq!(meas.nz(), 1);
    let mut worst: f64 = 0.0;
    for (&m, &f) in meas.data().iter().zip(fwd.data()) {
        worst = worst.max((m - (f as f32 as f64)).abs());
    }
    assert!(
        worst <= 1e-10,
        "measurement must equal the forward projection of the written inputs, worst diff {worst}"
    );
}

#[test]
fn psfgen_output_loads_back_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["psfgen", "--out", "g"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));

    let desc = PsfLayoutDescriptor::load(&dir.path().join("g_psf.json")).unwrap();
    let psf = load_psf(&dir.path().join("g_psf.tif"), &desc).unwrap();
    assert_eq!((psf.nz(), psf.nnum(), psf.kh(), psf.kw()), (3, 3, 7, 7));
    // Each z group still sums to ~1 after the f32 round trip.
    for z in 0..psf.nz() {
        let total: f64 = (0..9)
            .map(|ab| psf.kernel(z, ab / 3, ab % 3).iter().sum::<f64>())
            .sum();
        assert!((total - 1.0).abs() < 1e-5, "z={z} group sum {total}");
    }

    let out2 = run_in(dir.path(), &["psfgen", "--out", "h"]);
    assert_eq!(code(&out2), 0);
    assert_eq!(
        std::fs::read(dir.path().join("g_psf.tif")).unwrap(),
        std::fs::read(dir.path().join("h_psf.tif")).unwrap()
    );
}

#[test]
fn bench_reports_unity_baseline_and_nz_independent_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let common = &[
        "--iters",
        "2",
        "--height",
        "9",
        "--width",
        "9",
        "--sigma-slope",
        "0.05",
        "--shear",
        "0.3",
        "--json",
    ];

    let mut args = vec!["bench", "--workers-list", "1,2"];
    args.extend_from_slice(common);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_eq!(v["bit_identical"].as_bool().unwrap(), true);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows[0]["workers"].as_u64().unwrap(), 1);
    assert_eq!(rows[0]["speedup"].as_f64().unwrap(), 1.0);
    let bytes_nz3 = rows[1]["per_iteration_bytes"].as_u64().unwrap();

    let mut args = vec!["bench", "--workers-list", "1,2", "--nz", "5"];
    args.extend_from_slice(common);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    let bytes_nz5 = v["rows"][1]["per_iteration_bytes"].as_u64().unwrap();
    assert_eq!(
        bytes_nz3, bytes_nz5,
        "per-iteration traffic must not depend on nz"
    );
}

#[test]
fn workers_env_var_is_used_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "13", &[]);

    let base = [
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--fixed-iters",
        "2",
    ];

    let workers_used = |extra: &[&str], env: Option<&str>| -> u64 {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(OPTICS);
        let mut cmd = bin();
        cmd.current_dir(dir.path()).args(&args);
        match env {
            Some(v) => cmd.env("LFDECONV_WORKERS", v),
            None => cmd.env_remove("LFDECONV_WORKERS"),
        };
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
        let name = format!(
            "{}_summary.json",
            extra[extra.iter().position(|a| *a == "--out").unwrap() + 1]
        );
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap())
                .unwrap();
        summary["config"]["workers"].as_u64().unwrap()
    };

    assert_eq!(workers_used(&["--out", "e1"], Some("2")), 2);
    assert_eq!(workers_used(&["--out", "e2", "--workers", "1"], Some("2")), 1);
    assert_eq!(workers_used(&["--out", "e3"], None), 1);

    // Identical results whichever transport carried them.
    assert_eq!(
        std::fs::read(dir.path().join("e1_volume.tif")).unwrap(),
        std::fs::read(dir.path().join("e2_volume.tif")).unwrap()
    );
}

#[test]
fn u16_volume_export_is_opt_in_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "17", &[]);

    let mut args = vec![
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "q",
        "--fixed-iters",
        "2",
        "--pixel-format",
        "u16",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    assert!(dir.path().join("q_volume.tif").exists());
    assert!(
        dir.path().join("q_volume.tif.scale.json").exists(),
        "u16 export records its scaling in a sidecar"
    );

    // Default f32 export leaves no sidecar.
    let mut args = vec![
        "deconvolve",
        "--input",
        "sim_measurement.tif",
        "--psf",
        "sim_psf.tif",
        "--psf-desc",
        "sim_psf.json",
        "--out",
        "f",
        "--fixed-iters",
        "2",
    ];
    args.extend_from_slice(OPTICS);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0);
    assert!(!dir.path().join("f_volume.tif.scale.json").exists());
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "19", &[]);

    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "format_version = 1\nwavelength_um = 0.52\nna = 0.5\nmla_pitch_um = 150\n\
             magnification = 40\nnnum = 3\nfixed_iters = 3\n\
             input = {}\npsf = {}\npsf_descriptor = {}\noutput_prefix = cfgrun\n",
            dir.path().join("sim_measurement.tif").display(),
            dir.path().join("sim_psf.tif").display(),
            dir.path().join("sim_psf.json").display(),
        ),
    )
    .unwrap();

    let out = run_in(dir.path(), &["deconvolve", "--config", "run.cfg"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    assert!(stdout_str(&out).contains("stop_iter=3"));
    assert!(dir.path().join("cfgrun_volume.tif").exists());

    // A flag overrides the file's fixed_iters.
    let out = run_in(
        dir.path(),
        &[
            "deconvolve",
            "--config",
            "run.cfg",
            "--fixed-iters",
            "2",
            "--out",
            "cfgrun2",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    assert!(stdout_str(&out).contains("stop_iter=2"));

    // An invalid config is an input failure naming the line.
    std::fs::write(&cfg_path, "nnum = 14\n").unwrap();
    let out = run_in(dir.path(), &["deconvolve", "--config", "run.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_str(&out).contains("odd"), "stderr: {}", stderr_str(&out));
}
