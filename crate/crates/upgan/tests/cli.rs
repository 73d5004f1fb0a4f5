//! End-to-end tests of the command-line interface, driving the compiled
//! binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::Command;

fn upgan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_upgan"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn upgan");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_train_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.toml");
    // 500 steps at scale 8 run in seconds and give the mask head time to
    // converge, so the swap stage has a usable generated mask
    fs::write(
        &path,
        "steps = 500\nbatch_size = 2\nscale = 8\nlambda3 = 0.0\n\
         checkpoint_every = 0\nsample_every = 250\nelastic_alpha = 1.0\nelastic_sigma = 1.0\n",
    )
    .unwrap();
    path
}

#[test]
fn synth_corpus_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("c1");
    let out2 = dir.path().join("c2");
    for out in [&out1, &out2] {
        run_ok(upgan().args([
            "synth-corpus",
            "--n",
            "6",
            "--identities",
            "3",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    let m1 = fs::read(out1.join("manifest.json")).unwrap();
    let m2 = fs::read(out2.join("manifest.json")).unwrap();
    assert_eq!(m1, m2);
    // every PNG byte-identical
    let mut names: Vec<String> = fs::read_dir(&out1)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in &names {
        let a = fs::read(out1.join(n)).unwrap();
        let b = fs::read(out2.join(n)).unwrap();
        assert_eq!(a, b, "{n} differs between runs");
    }
}

#[test]
fn fid_of_identical_directories_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    // pixel features are 16-dim, so more than 16 images are needed
    run_ok(upgan().args([
        "synth-corpus",
        "--n",
        "20",
        "--identities",
        "4",
        "--seed",
        "3",
        "--out",
        corpus.to_str().unwrap(),
    ]));
    let stdout = run_ok(upgan().args([
        "fid",
        "--a",
        corpus.to_str().unwrap(),
        "--b",
        corpus.to_str().unwrap(),
    ]));
    let value: f64 = stdout.trim().parse().expect("fid prints a number");
    assert!(value.abs() <= 1e-6, "fid of identical sets printed {value}");
}

#[test]
fn train_generate_obscure_swap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    run_ok(upgan().args([
        "synth-corpus",
        "--n",
        "8",
        "--identities",
        "4",
        "--seed",
        "5",
        "--out",
        corpus.to_str().unwrap(),
    ]));

    let train_out = dir.path().join("run");
    let config = tiny_train_config(dir.path());
    run_ok(upgan().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]));
    let ckpt = train_out.join("checkpoint_final.ckpt");
    assert!(ckpt.exists());
    assert!(train_out.join("metrics.jsonl").exists());
    assert!(train_out.join("manifest.json").exists());
    assert!(train_out.join("samples_step_250.png").exists());

    // generate from explicit utility inputs
    let gen_out = dir.path().join("gen");
    run_ok(upgan().args([
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap(),
        "--age",
        "0.4",
        "--gender",
        "1",
        "--skin-tone",
        "0.5",
        "--landmarks",
        "0.37,0.4,0.63,0.4,0.5,0.54,0.4,0.66,0.5,0.62,0.6,0.66,0.5,0.7",
    ]));
    assert!(gen_out.join("image.png").exists());
    assert!(gen_out.join("mask.png").exists());

    // ingest the corpus directory back through the file route
    let ingest_out = dir.path().join("ingested");
    run_ok(upgan().args([
        "ingest",
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        ingest_out.to_str().unwrap(),
    ]));
    let records_file = fs::read_to_string(ingest_out.join("records.jsonl")).unwrap();
    assert_eq!(records_file.lines().count(), 8);
    assert!(ingest_out.join("masks").exists());

    // obscure with a classical method
    let obs_out = dir.path().join("obscured");
    run_ok(upgan().args([
        "obscure",
        "--method",
        "pixelate",
        "--param",
        "8",
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        obs_out.to_str().unwrap(),
    ]));
    let metas: Vec<_> = fs::read_dir(&obs_out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".meta.json"))
        .collect();
    assert_eq!(metas.len(), 8, "one sidecar per record");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metas[0].path()).unwrap()).unwrap();
    assert_eq!(meta["method"], "Pixelation-8");
    assert_eq!(meta["block_size"], 8);

    // obscure with upgan (generated faces, no swap)
    let upg_out = dir.path().join("upgan-obscured");
    run_ok(upgan().args([
        "obscure",
        "--method",
        "upgan",
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        upg_out.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert!(fs::read_dir(&upg_out).unwrap().count() > 8);

    // swap generated faces onto the originals
    let swap_out = dir.path().join("swapped");
    run_ok(upgan().args([
        "swap",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        swap_out.to_str().unwrap(),
    ]));
    let swapped = fs::read_dir(&swap_out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".png"))
        .count();
    assert!(swapped > 0, "no swapped outputs written");
}

#[test]
fn report_renders_stored_table() {
    let dir = tempfile::tempdir().unwrap();
    let report = serde_json::json!({
        "corpus": "synthetic",
        "seed": 1,
        "rows": [
            {"method": "None", "threat_i": 0.95, "threat_ii": 0.95, "fid": null,
             "identifier_train_accuracy_i": 1.0, "identifier_train_accuracy_ii": 1.0},
            {"method": "Gaussian-15", "threat_i": 0.36, "threat_ii": 0.98, "fid": 386.31,
             "identifier_train_accuracy_i": 1.0, "identifier_train_accuracy_ii": 1.0},
        ],
    });
    fs::write(
        dir.path().join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .unwrap();
    let stdout = run_ok(upgan().args(["report", "--in", dir.path().to_str().unwrap()]));
    assert!(stdout.contains("Threat Model I"));
    assert!(stdout.contains("Threat Model II"));
    assert!(stdout.contains("FID"));
    assert!(stdout.contains("Gaussian-15"));
    assert!(stdout.contains("386.31"));
    let none_line = stdout.lines().find(|l| l.starts_with("None")).unwrap();
    assert!(none_line.trim_end().ends_with('-'));
}

#[test]
fn unknown_command_exits_2() {
    let out = upgan().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = upgan()
        .args([
            "train",
            "--corpus",
            missing.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr was: {stderr}");
}

#[test]
fn out_root_env_var_redirects_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = upgan()
        .env("UPGAN_OUT_ROOT", dir.path())
        .args([
            "synth-corpus",
            "--n",
            "4",
            "--identities",
            "2",
            "--seed",
            "1",
            "--out",
            "relative-corpus",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir
        .path()
        .join("relative-corpus")
        .join("manifest.json")
        .exists());
}
