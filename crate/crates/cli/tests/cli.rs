use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn redsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redsr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = redsr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "batch_size": 2, "patch": 16, "target_samples": 8, "epochs": 2, "iters_per_epoch": 2,
  "c_repr": 4, "blocks": 1, "degrader_width": 4, "generator_width": 4, "mlp_width": 8,
  "synthetic_count": 3, "synthetic_size": 64, "log_wall_time": false
}"#;

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = redsr(&["gen-data", "--hr-dir", "/nonexistent/images", "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = dir.path().join("kl.json");
    fs::write(&cfg, r#"{"kl_substitute": true, "loss_ed": true}"#).unwrap();
    assert_eq!(redsr(&["train", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(3));
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(redsr(&["train", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(3));
    assert_eq!(redsr(&["train", "--bogus"]).status.code(), Some(3));

    let data = dir.path().join("data");
    ok(&["gen-data", "--synthetic", "2", "--synthetic-size", "64", "--count", "2", "--out", p(&data)]);
    let ck = dir.path().join("bad.rdck");
    fs::write(&ck, b"RDCK\x01\x00\x00\x00garbage").unwrap();
    let report = dir.path().join("r.csv");
    let eval = redsr(&["eval", "--checkpoint", p(&ck), "--dataset", p(&data), "--report", p(&report)]);
    assert_eq!(eval.status.code(), Some(4));
    assert_eq!(redsr(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, empty) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("e"));
    let args = |out: &Path| {
        vec![
            "gen-data".to_string(), "--synthetic".into(), "3".into(), "--synthetic-size".into(), "64".into(),
            "--count".into(), "5".into(), "--mode".into(), "anisotropic_noise".into(), "--seed".into(), "4".into(),
            "--patch".into(), "16".into(), "--out".into(), p(out).into(),
        ]
    };
    for out in [&a, &b] {
        let args = args(out);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }

    ok(&["gen-data", "--synthetic", "1", "--count", "0", "--out", p(&empty)]);
    assert_eq!(fs::read_to_string(empty.join("manifest.json")).unwrap().trim(), "[]");
}

#[test]
fn train_eval_repr_sr_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let (run, split) = (dir.path().join("run"), dir.path().join("split"));
    let stdout = ok(&["train", "--config", p(&cfg), "--out", p(&run)]);
    assert!(stdout.contains("train effective config:"));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    ok(&["train", "--config", p(&cfg), "--out", p(&split), "--epochs", "1"]);
    ok(&["train", "--config", p(&cfg), "--out", p(&split), "--resume"]);
    for f in ["train_log.csv", "checkpoint.rdck"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }

    let data = dir.path().join("data");
    ok(&[
        "gen-data", "--synthetic", "3", "--synthetic-size", "64", "--count", "6", "--sigma-set", "0.5,3",
        "--patch", "16", "--out", p(&data),
    ]);
    let ck = run.join("checkpoint.rdck");
    let report = dir.path().join("eval.csv");
    ok(&["eval", "--checkpoint", p(&ck), "--dataset", p(&data), "--report", p(&report)]);
    let table = fs::read_to_string(&report).unwrap();
    let manifest: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let mut sigmas: Vec<String> = manifest.iter().map(|e| e["spec"]["sigma1"].to_string()).collect();
    sigmas.sort();
    sigmas.dedup();
    let distinct = sigmas.len();
    assert_eq!(table.lines().next().unwrap(), "sigma1,sigma2,theta,noise,count,psnr,ssim");
    assert_eq!(table.lines().count(), 1 + distinct);

    let reps = dir.path().join("reps");
    ok(&["repr", "--checkpoint", p(&ck), "--dataset", p(&data), "--out", p(&reps)]);
    let labels = fs::read_to_string(reps.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 6);
    assert!(reps.join("reps.rdt").exists());

    let lr = dir.path().join("lr.ppm");
    let sr = dir.path().join("sr.rdt");
    let hr = data.join("hr_00000.rdt");
    ok(&["degrade", "--input", p(&hr), "--output", p(&lr), "--sigma1", "1.5", "--noise", "2"]);
    ok(&["sr", "--checkpoint", p(&ck), "--input", p(&lr), "--output", p(&sr)]);
    assert!(fs::read(&lr).unwrap().starts_with(b"P6\n16 16\n255\n"));
    assert!(fs::read(&sr).unwrap().starts_with(b"RDT1"));
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    assert!(out.contains("pass"));
    assert!(!out.contains("FAIL"));
}
