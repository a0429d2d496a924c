use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ladlab::biasdata::{write_idx_images, write_idx_labels};

const TINY: &str = r#"{
  "generator": {"num_classes": 4, "image_size": [8, 8, 1], "samples_per_class": 10},
  "test_samples_per_class": 5,
  "vqvae": {"num_codes": 8, "code_dim": 2, "num_tokens": 4, "encoder_hidden": [16], "decoder_hidden": [16],
            "optim": {"epochs": 2}},
  "f": {"hidden": [8], "optim": {"epochs": 2}},
  "f_strong": {"hidden": [8], "optim": {"epochs": 2}},
  "walk": {"steps": 3}
}"#;

fn ladlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ladlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("LADLAB_SEED")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    for cmd in ["generate", "run-experiment"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for d in [&a, &b] {
            let out = ladlab(&[cmd, "--config", &cfg, "-o", s(d)]);
            assert!(
                out.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let (fa, fb) = (files(&a), files(&b));
        assert!(fa.iter().any(|(p, _)| p == Path::new("manifest.json")));
        assert_eq!(fa, fb, "{cmd} outputs differ");
    }
}

#[test]
fn staged_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let d = |n: &str| tmp.path().join(n);
    let run = |args: &[&str]| {
        let out = ladlab(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["generate", "--config", &cfg, "-o", s(&d("gen"))]);
    let train = d("gen").join("train.dataset");
    run(&[
        "train-vqvae",
        "--config",
        &cfg,
        "-o",
        s(&d("vq")),
        "--dataset",
        s(&train),
    ]);
    let vq = d("vq").join("vqvae.ckpt");
    run(&[
        "train-biased",
        "--config",
        &cfg,
        "-o",
        s(&d("f")),
        "--dataset",
        s(&train),
        "--vqvae",
        s(&vq),
    ]);
    let f = d("f").join("f.ckpt");
    run(&[
        "walk",
        "--config",
        &cfg,
        "-o",
        s(&d("walk")),
        "--dataset",
        s(&train),
        "--vqvae",
        s(&vq),
        "--f",
        s(&f),
    ]);
    let debiased = d("walk").join("debiased.dataset");
    run(&[
        "train-strong",
        "--config",
        &cfg,
        "-o",
        s(&d("strong")),
        "--dataset",
        s(&debiased),
    ]);
    let strong = d("strong").join("f_strong.ckpt");
    let evals: Vec<PathBuf> = fs::read_dir(d("gen"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("eval_")
        })
        .collect();
    assert_eq!(evals.len(), 2);
    let mut args = vec![
        "evaluate",
        "--config",
        &cfg,
        "-o",
        s(&d("eval")).to_owned().leak(),
        "--classifier",
        s(&strong),
    ];
    for e in &evals {
        args.push("--dataset");
        args.push(s(e));
    }
    run(&args);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d("eval").join("evaluation.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("accuracy"));
}

#[test]
fn bad_idx_magic_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("imgs.idx");
    let labels = tmp.path().join("labels.idx");
    write_idx_images(&imgs, &[0u8; 4 * 64], 4, 8, 8).unwrap();
    write_idx_labels(&labels, &[0, 1, 2, 3]).unwrap();
    let cfg = tmp.path().join("idx.json");
    let paths = format!(
        r#"{{"train_images": "{i}", "train_labels": "{l}", "test_images": "{l}", "test_labels": "{l}"}}"#,
        i = imgs.display(),
        l = labels.display()
    );
    fs::write(
        &cfg,
        format!(r#"{{"generator": {{"kind": "idx_ingest", "num_classes": 4, "image_size": [8, 8, 1], "idx": {paths}}}}}"#),
    )
    .unwrap();
    let out = ladlab(&[
        "generate",
        "--config",
        s(&cfg),
        "-o",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn non_empty_output_dir_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    fs::create_dir(&out_dir).unwrap();
    fs::write(out_dir.join("keep.txt"), "x").unwrap();
    let args = [
        "one-pixel",
        "--set",
        "max_iterations=5",
        "--set",
        "train_samples_per_class=20",
        "-o",
        s(&out_dir),
    ];
    assert_eq!(ladlab(&args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    let out = ladlab(&forced);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("gr_series.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = ladlab(&[
        "generate",
        "--config",
        s(&missing),
        "-o",
        s(&tmp.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out = ladlab(&[
        "generate",
        "--set",
        "walk.alpah=0.1",
        "-o",
        s(&tmp.path().join("b")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("walk"));

    let out = ladlab(&[
        "generate",
        "--set",
        "bias.bias_ratio=1.5",
        "-o",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(ladlab(&[]).status.code(), Some(2));
    assert_eq!(ladlab(&["--help"]).status.code(), Some(0));
}
