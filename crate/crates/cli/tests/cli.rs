use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sldm_cli::pipeline::{Run, Stage, StageStatus};
use sldm_cli::{run_pipeline, RunConfig, RunManifest};

fn tiny_in(dir: &Path) -> RunConfig {
    let mut c = RunConfig::tiny();
    c.out_dir = dir.to_path_buf();
    c
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn sldm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sldm")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn tiny_run_is_complete_resumable_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let m = run_pipeline(tiny_in(a.path())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    println!("tiny pipeline: {secs:.1}s");
    assert!(secs < 600.0);

    let names: Vec<&str> = m.records.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(names, Stage::ALL.map(Stage::name));
    assert!(m.missing_artifacts().is_empty());
    let listed: Vec<&String> = m.records.iter().flat_map(|r| &r.artifacts).collect();
    for f in csv_files(a.path()) {
        assert!(listed.contains(&&f), "{f} is not in the manifest");
        let text = std::fs::read_to_string(a.path().join(&f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={}", m.config_hash), "{f}");
    }
    assert!(a.path().join("config.toml").exists());

    let mut run = Run::open(tiny_in(a.path())).unwrap();
    for stage in Stage::ALL {
        assert_eq!(run.run_stage(stage).unwrap(), StageStatus::Skipped);
    }
    assert_eq!(RunManifest::open(a.path(), &m.config_hash).unwrap().records.len(), Stage::ALL.len());
    assert_eq!(run.verify_outcome(), Some(true));

    run_pipeline(tiny_in(b.path())).unwrap();
    let files = csv_files(a.path());
    assert_eq!(files, csv_files(b.path()));
    assert!(files.len() >= 10);
    for f in &files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    for f in ["samples/p0007.sldm", "train/score.ckpt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let mut other = tiny_in(a.path());
    other.seeds.sampling += 1;
    assert_eq!(Run::open(other).err().unwrap().exit_code(), 2);
}

#[test]
fn stage_without_inputs_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::open(tiny_in(dir.path())).unwrap();
    let err = run.run_stage(Stage::Train).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(run.manifest.records.is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    assert_eq!(sldm(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sldm(&["gen-data", "--preset", "huge", "--out", out]).status.code(), Some(2));
    assert_eq!(sldm(&["train", "--preset", "tiny", "--out", out]).status.code(), Some(3));

    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, "[schedule]\ntheta_min = 0.0\n").unwrap();
    let o = sldm(&["verify", "--preset", "tiny", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("[FAIL] schedule"), "{text}");
    assert_eq!(text.matches("[PASS]").count() + text.matches("[FAIL]").count(), 1, "suite must stop at the schedule");

    let fresh = dir.path().join("verify_only");
    let o = sldm(&["verify", "--preset", "tiny", "--out", fresh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("overall: PASS"));
}

#[test]
fn explicit_flags_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[schedule]\nT = 30\n[phantom]\nsize = 48\n").unwrap();
    let o = sldm(&["config", "--preset", "tiny", "--config", cfg.to_str().unwrap(), "--steps", "40"]);
    assert_eq!(o.status.code(), Some(0));
    let c = RunConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(c.schedule.steps, 40);
    assert_eq!(c.phantom.size, 48);
    assert_eq!(c.training.iterations, RunConfig::tiny().training.iterations);
}

#[test]
fn standalone_saem_sweeps_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let size = 16;
    let mask = sldm::ImageGrid::from_fn(size, size, |_, x| 0.3 + 0.01 * x as f64);
    let fill = sldm::ImageGrid::from_fn(size, size, |y, x| 0.3 + 0.01 * x as f64 + if (5..11).contains(&y) { 0.2 } else { 0.0 });
    let roi = sldm::ImageGrid::from_fn(size, size, |y, _| (5..11).contains(&y) as u8 as f64);
    sldm::io::FlatTensor::from_grid(&mask).save(p("mask.sldm")).unwrap();
    sldm::io::FlatTensor::from_grid(&fill).save(p("fill.sldm")).unwrap();
    sldm::io::png::write_gray16(p("roi.png"), &roi).unwrap();
    let o = sldm(&[
        "saem",
        "--mask",
        p("mask.sldm").to_str().unwrap(),
        "--fill",
        p("fill.sldm").to_str().unwrap(),
        "--roi",
        p("roi.png").to_str().unwrap(),
        "--lambda",
        "0",
        "--lambda",
        "1",
        "--output",
        p("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    let means: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 2);
    assert!(means[1] > means[0] + 0.1, "{text}");
    let zero = sldm::io::FlatTensor::load(p("out/saem_lambda0.00.sldm")).unwrap().to_grid().unwrap();
    let d = zero.data().iter().zip(mask.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-6, "{d}");
    assert!(p("out/histogram_lambda1.00.csv").exists());
    assert_eq!(sldm(&["saem", "--mask", "x.png"]).status.code(), Some(2));
}
