//! End-to-end tests of the `splitflow` binary: artifact layout, exit codes,
//! determinism of emitted files, and the documented command behaviors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splitflow_core::io::{load_latent, save_latent};
use splitflow_core::latent::Latent;
use splitflow_core::scene::three_attribute_scene;

fn splitflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed: status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small, fast config sharing the benchmark scene.
fn write_test_config(dir: &Path) -> PathBuf {
    let config = r#"
[train]
steps = 300
batch_size = 32
seed = 7

[schedule]
total_steps = 50
eta_max = 33
eta_dec = 28

[edit]
seed = 5
source_options = [0, 0, 0]
target_options = [1, 1, 1]
source_text = "a dark narrow level pattern"
target_text = "a bright pattern, wide bands, tilted stripes"

[bench]
methods = ["baseline", "avg", "ltp", "ltp+vfa"]
seed_base = 50
seed_count = 3
target_cloud_samples = 20
data_seed = 9

[model]
hidden = [16, 16]

[output]
dir = "out"
"#;
    let path = dir.join("exp.toml");
    fs::write(&path, config).unwrap();
    path
}

fn sample_source(dir: &Path) -> PathBuf {
    let scene = three_attribute_scene();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
    let x0 = scene.sample_for(&[0, 0, 0], &mut rng).unwrap();
    let path = dir.join("source.sfl");
    save_latent(&x0, &path).unwrap();
    path
}

#[test]
fn train_edit_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_test_config(dir.path());
    let source = sample_source(dir.path());

    // Train: model file + loss curve.
    let out = splitflow(dir.path(), &["train", config.to_str().unwrap()]);
    assert_success(&out, "train");
    let model = dir.path().join("out/models/field.sfm");
    assert!(model.exists());
    let loss_csv = fs::read_to_string(dir.path().join("out/reports/loss.csv")).unwrap();
    assert!(loss_csv.starts_with("# splitflow-loss v1\nstep,loss\n"));
    assert_eq!(loss_csv.lines().count(), 302);

    // Determinism: retraining produces a byte-identical model.
    let before = fs::read(&model).unwrap();
    let out = splitflow(dir.path(), &["train", config.to_str().unwrap()]);
    assert_success(&out, "retrain");
    assert_eq!(before, fs::read(&model).unwrap());

    // Edit with the attribute decomposer: N = 3 and the eval-count formula.
    let out = splitflow(
        dir.path(),
        &[
            "edit",
            config.to_str().unwrap(),
            source.to_str().unwrap(),
            "--method",
            "splitflow",
            "--decomposer",
            "attribute",
        ],
    );
    assert_success(&out, "edit");
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 3 * (33 - 28) + 33 = 48
    assert!(stdout.contains("N=3"), "stdout: {stdout}");
    assert!(
        stdout.contains("velocity-delta evals=48"),
        "stdout: {stdout}"
    );
    let report = fs::read_to_string(dir.path().join("out/reports/edit_report.txt")).unwrap();
    assert!(report.contains("headline_evals: 48"));
    assert!(report.contains("vfa_evals: 3"));
    let edited = load_latent(dir.path().join("out/latents/edited.sfl")).unwrap();
    assert!(edited.is_finite());

    // Edit determinism: rerun yields byte-identical latent files.
    let bytes_before = fs::read(dir.path().join("out/latents/edited.sfl")).unwrap();
    let out = splitflow(
        dir.path(),
        &[
            "edit",
            config.to_str().unwrap(),
            source.to_str().unwrap(),
            "--method",
            "splitflow",
            "--decomposer",
            "attribute",
        ],
    );
    assert_success(&out, "re-edit");
    assert_eq!(
        bytes_before,
        fs::read(dir.path().join("out/latents/edited.sfl")).unwrap()
    );

    // Baseline method writes a report without sub-flows.
    let out = splitflow(
        dir.path(),
        &[
            "edit",
            config.to_str().unwrap(),
            source.to_str().unwrap(),
            "--method",
            "baseline",
        ],
    );
    assert_success(&out, "baseline edit");
    let report = fs::read_to_string(dir.path().join("out/reports/edit_report.txt")).unwrap();
    assert!(report.contains("headline_evals: 33"));

    // Bench: row count = methods x sweep points, CSV + plots emitted.
    let out = splitflow(dir.path(), &["bench", config.to_str().unwrap()]);
    assert_success(&out, "bench");
    let csv = fs::read_to_string(dir.path().join("out/reports/bench.csv")).unwrap();
    let data_rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("method"))
        .collect();
    assert_eq!(data_rows.len(), 4);
    assert!(csv.contains("# splitflow-metrics v1"));
    for plot in [
        "bench_mse.svg",
        "bench_psnr.svg",
        "bench_background_displacement.svg",
        "bench_energy_distance.svg",
    ] {
        assert!(dir.path().join("out/plots").join(plot).exists(), "{plot}");
    }

    // Bench determinism: byte-identical CSV on rerun.
    let out = splitflow(dir.path(), &["bench", config.to_str().unwrap()]);
    assert_success(&out, "re-bench");
    assert_eq!(
        csv,
        fs::read_to_string(dir.path().join("out/reports/bench.csv")).unwrap()
    );
}

#[test]
fn manual_decomposer_with_target_collapses_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_test_config(dir.path());
    let source = sample_source(dir.path());
    assert_success(
        &splitflow(dir.path(), &["train", config.to_str().unwrap()]),
        "train",
    );

    // Baseline output.
    assert_success(
        &splitflow(
            dir.path(),
            &[
                "edit",
                config.to_str().unwrap(),
                source.to_str().unwrap(),
                "--method",
                "baseline",
            ],
        ),
        "baseline",
    );
    let baseline = load_latent(dir.path().join("out/latents/edited.sfl")).unwrap();

    // Manual file holding exactly the target options.
    let manual = dir.path().join("subs.json");
    fs::write(&manual, "[[1, 1, 1]]").unwrap();
    assert_success(
        &splitflow(
            dir.path(),
            &[
                "edit",
                config.to_str().unwrap(),
                source.to_str().unwrap(),
                "--method",
                "splitflow",
                "--decomposer",
                &format!("manual:{}", manual.display()),
            ],
        ),
        "manual edit",
    );
    let split = load_latent(dir.path().join("out/latents/edited.sfl")).unwrap();
    let diff = split.sub(&baseline).unwrap().max_abs();
    // The stored latents are f32-quantized, so the 1e-8 collapse shows up
    // as bit-identical payloads.
    assert!(diff <= 1e-7, "manual collapse differs by {diff}");
}

#[test]
fn baseline_null_edit_returns_the_source() {
    // Matched guidance scales make identical conditions a fixed point.
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("null.toml");
    fs::write(
        &config,
        r#"
[train]
steps = 200
batch_size = 16
seed = 3

[model]
hidden = [16]

[edit]
cfg_src = 3.5
cfg_tgt = 3.5
source_options = [0, 0, 0]
target_options = [0, 0, 0]

[output]
dir = "out"
"#,
    )
    .unwrap();
    let source = sample_source(dir.path());
    assert_success(
        &splitflow(dir.path(), &["train", config.to_str().unwrap()]),
        "train",
    );
    assert_success(
        &splitflow(
            dir.path(),
            &[
                "edit",
                config.to_str().unwrap(),
                source.to_str().unwrap(),
                "--method",
                "baseline",
            ],
        ),
        "null edit",
    );
    let edited = load_latent(dir.path().join("out/latents/edited.sfl")).unwrap();
    let original = load_latent(&source).unwrap();
    let diff = edited.sub(&original).unwrap().max_abs();
    assert!(diff <= 1e-6, "null edit moved the latent by {diff}");
}

#[test]
fn rule_and_llm_decomposers_drive_edits() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_test_config(dir.path());
    let source = sample_source(dir.path());
    assert_success(
        &splitflow(dir.path(), &["train", config.to_str().unwrap()]),
        "train",
    );
    let out = splitflow(
        dir.path(),
        &[
            "edit",
            config.to_str().unwrap(),
            source.to_str().unwrap(),
            "--method",
            "splitflow",
            "--decomposer",
            "rule",
        ],
    );
    assert_success(&out, "rule edit");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("sub-conditions via Rule"),
        "stderr: {stderr}"
    );
}

#[test]
fn custom_two_cluster_scene_trains_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("clusters.toml");
    fs::write(
        &config,
        r#"
[scene]
shape = [2, 1, 1]
base_mean = [0.0, 0.0]
noise_std = 0.3

[[scene.attributes]]
name = "cluster"
coords = [0, 1]
options = [
    { label = "left", offset = [-1.5, -1.5] },
    { label = "right", offset = [1.5, 1.5] },
]

[model]
hidden = [16]

[train]
steps = 400
batch_size = 32
seed = 2

[edit]
source_options = [0]
target_options = [1]

[output]
dir = "out"
"#,
    )
    .unwrap();
    let out = splitflow(dir.path(), &["train", config.to_str().unwrap()]);
    assert_success(&out, "train 2-cluster");
    // Loss curve trends down.
    let loss_csv = fs::read_to_string(dir.path().join("out/reports/loss.csv")).unwrap();
    let losses: Vec<f64> = loss_csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < head, "loss did not trend down: {head} -> {tail}");

    // Generation from the trained field stays finite and lands near the
    // requested cluster's half-plane.
    let out = splitflow(
        dir.path(),
        &[
            "generate",
            config.to_str().unwrap(),
            "--options",
            "1",
            "--steps",
            "50",
            "--seed",
            "12",
            "--out",
            "gen.sfl",
        ],
    );
    assert_success(&out, "generate 2-cluster");
    let sample = load_latent(dir.path().join("gen.sfl")).unwrap();
    assert!(sample.data().iter().all(|v| v.is_finite()));
}

#[test]
fn decompose_psi2_template_reaches_the_endpoint() {
    use splitflow_core::decomp::stub::{StubResponse, StubServer};
    let server = StubServer::start(StubResponse::ChatContent(
        "1. x
2. y"
            .into(),
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(
        dir.path(),
        &[
            "decompose",
            "--src",
            "a cat on a mat",
            "--tgt",
            "a dog on a mat",
            "--backend",
            "llm",
            "--template",
            "psi2",
            "--base-url",
            server.base_url(),
            "--strict",
        ],
    );
    assert_success(&out, "decompose psi2");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1. x\n2. y");
    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    assert!(requests[0].body.contains("step-by-step changes"));
}

#[test]
fn llm_decomposer_round_trips_through_the_stub() {
    use splitflow_core::decomp::stub::{StubResponse, StubServer};
    let server = StubServer::start(StubResponse::ChatContent(
        "1. a bright pattern\n2. wide bands everywhere\n3. tilted stripes".into(),
    ))
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(write_test_config(dir.path())).unwrap();
    let config = dir.path().join("llm.toml");
    fs::write(
        &config,
        format!(
            "{base}\n[llm]\nbase_url = \"{}\"\nmodel = \"stub\"\ntimeout_secs = 5\n",
            server.base_url()
        ),
    )
    .unwrap();
    let source = sample_source(dir.path());
    assert_success(
        &splitflow(dir.path(), &["train", config.to_str().unwrap()]),
        "train",
    );
    let out = splitflow(
        dir.path(),
        &[
            "edit",
            config.to_str().unwrap(),
            source.to_str().unwrap(),
            "--method",
            "splitflow",
            "--decomposer",
            "llm",
            "--strict",
        ],
    );
    assert_success(&out, "llm edit");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("3 sub-conditions via Llm"),
        "stderr: {stderr}"
    );
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn missing_files_yield_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(dir.path(), &["train", "nope.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.toml"), "stderr: {stderr}");

    // Edit without a trained model is a config error too.
    let config = write_test_config(dir.path());
    let source = sample_source(dir.path());
    let out = splitflow(
        dir.path(),
        &["edit", config.to_str().unwrap(), source.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn training_divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diverge.toml");
    fs::write(
        &path,
        "[train]\nsteps = 40\nbatch_size = 8\nlearning_rate = 1e150\nseed = 1\n\n[model]\nhidden = [8]\n",
    )
    .unwrap();
    let out = splitflow(dir.path(), &["train", path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn invalid_schedule_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "[schedule]\ntotal_steps = 50\neta_max = 33\neta_dec = 33\n",
    )
    .unwrap();
    let out = splitflow(dir.path(), &["train", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vfa_check_behaviors() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(
        dir.path(),
        &[
            "vfa-check",
            "--trials",
            "500",
            "--seed",
            "3",
            "--out",
            "m.csv",
        ],
    );
    assert_success(&out, "vfa-check");
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));
    let hist = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(hist.starts_with("# splitflow-vfa-margins v1\n"));

    // Seeded rerun emits an identical histogram.
    let out = splitflow(
        dir.path(),
        &[
            "vfa-check",
            "--trials",
            "500",
            "--seed",
            "3",
            "--out",
            "m2.csv",
        ],
    );
    assert_success(&out, "vfa-check rerun");
    assert_eq!(hist, fs::read_to_string(dir.path().join("m2.csv")).unwrap());
}

#[test]
fn vfa_check_single_vector_trial_is_exact_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(
        dir.path(),
        &[
            "vfa-check",
            "--trials",
            "1",
            "--k-min",
            "1",
            "--k-max",
            "1",
            "--seed",
            "0",
            "--out",
            "one.csv",
        ],
    );
    assert_success(&out, "vfa-check k=1");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("aggregation 0.000e0"), "stdout: {stdout}");
}

#[test]
fn decompose_rule_backend_single_word() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(
        dir.path(),
        &[
            "decompose",
            "--src",
            "a cat",
            "--tgt",
            "dog",
            "--backend",
            "rule",
        ],
    );
    assert_success(&out, "decompose");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1. dog");
}

#[test]
fn init_config_writes_reference_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitflow(dir.path(), &["init-config", "--out", "ref.toml"]);
    assert_success(&out, "init-config");
    let text = fs::read_to_string(dir.path().join("ref.toml")).unwrap();
    assert!(text.contains("[schedule]"));
    assert!(text.contains("eta_dec = 28"));
    let out = splitflow(dir.path(), &["init-config", "--out", "ref.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_and_sample_source_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_test_config(dir.path());
    assert_success(
        &splitflow(dir.path(), &["train", config.to_str().unwrap()]),
        "train",
    );
    let out = splitflow(
        dir.path(),
        &[
            "generate",
            config.to_str().unwrap(),
            "--options",
            "1,1,1",
            "--steps",
            "10",
            "--out",
            "gen.sfl",
        ],
    );
    assert_success(&out, "generate");
    assert!(load_latent(dir.path().join("gen.sfl")).unwrap().is_finite());

    let out = splitflow(
        dir.path(),
        &[
            "sample-source",
            config.to_str().unwrap(),
            "--seed",
            "4",
            "--out",
            "src.json",
        ],
    );
    assert_success(&out, "sample-source");
    let json = fs::read_to_string(dir.path().join("src.json")).unwrap();
    let parsed: Latent = splitflow_core::io::latent_from_json(&json).unwrap();
    assert_eq!(
        parsed.shape(),
        three_attribute_scene().latent_shape().unwrap()
    );
}
