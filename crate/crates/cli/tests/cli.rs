use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn texdistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texdistill"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

const TINY: &[&str] = &[
    "--data",
    "synthetic:grating",
    "--n-train",
    "8",
    "--n-test-good",
    "3",
    "--n-test-defect",
    "3",
    "--input-size",
    "64",
    "--batch-size",
    "4",
    "--epochs",
    "1",
    "--resnet-weights",
    "seeded:0",
    "--effnet-weights",
    "seeded:0",
];

fn train_tiny(out: &Path, method: &str) -> PathBuf {
    let out_s = out.to_str().unwrap();
    let mut args = vec![
        "train",
        "--method",
        method,
        "--seed",
        "3",
        "--out-dir",
        out_s,
    ];
    args.extend_from_slice(TINY);
    let o = texdistill(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = PathBuf::from(stdout(&o).trim());
    assert!(ckpt.is_file());
    let run = ckpt.parent().unwrap();
    assert!(run
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("run_"));
    assert!(run.file_name().unwrap().to_str().unwrap().contains("_3"));
    assert!(run.join("curve.csv").is_file());
    assert!(run.join("best.json").is_file());
    let cfg = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains(&format!("method = {method}")), "{cfg}");
    ckpt
}

#[test]
fn train_eval_infer_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(&tmp.path().join("train"), "reduced");
    let ckpt_s = ckpt.to_str().unwrap();

    let data = tmp.path().join("data");
    let o = texdistill(&[
        "make-synthetic",
        "--family",
        "grating",
        "--n-train",
        "2",
        "--n-test-good",
        "3",
        "--n-test-defect",
        "3",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let category = data.join("grating");
    assert!(category.join("train/good").is_dir());
    assert!(category.join("config.txt").is_file());

    let mut reports = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("eval{i}"));
        let o = texdistill(&[
            "eval",
            "--checkpoint",
            ckpt_s,
            "--data",
            category.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("image_auroc"));
        let run = only_run_dir(&out);
        let kv = fs::read_to_string(run.join("report.kv")).unwrap();
        assert!(
            kv.contains("pixel_auroc=0.") || kv.contains("pixel_auroc=1"),
            "{kv}"
        );
        assert_eq!(
            fs::read_to_string(run.join("scores.csv"))
                .unwrap()
                .lines()
                .count(),
            7
        );
        reports.push(kv);
    }
    assert_eq!(reports[0], reports[1]);

    let images = tmp.path().join("images");
    fs::create_dir(&images).unwrap();
    let goods: Vec<_> = fs::read_dir(category.join("test/good"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    for (i, g) in goods.iter().chain(goods.iter()).take(4).enumerate() {
        fs::copy(g, images.join(format!("img{i}.png"))).unwrap();
    }
    fs::write(images.join("broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("infer");
    let o = texdistill(&[
        "infer",
        "--checkpoint",
        ckpt_s,
        "--input",
        images.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.png"));
    let run = only_run_dir(&out);
    for i in 0..4 {
        assert!(run.join(format!("img{i}_map.pfm")).is_file());
        assert!(run.join(format!("img{i}_overlay.png")).is_file());
    }
    assert_eq!(
        fs::read_to_string(run.join("scores.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let o = texdistill(&[
        "infer",
        "--checkpoint",
        ckpt_s,
        "--input",
        images.join("broken.png").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let out = tmp.path().join("bench");
    let o = texdistill(&[
        "bench",
        "--checkpoint",
        ckpt_s,
        "--runs",
        "10",
        "--warmup",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kv = fs::read_to_string(only_run_dir(&out).join("latency.kv")).unwrap();
    for key in ["fps=", "latency_mean_ms=", "latency_p95_ms=", "n_runs=10"] {
        assert!(kv.contains(key), "{kv}");
    }
    let o = texdistill(&["bench", "--checkpoint", ckpt_s, "--runs", "5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_without_masks_omits_pixel_auroc() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(&tmp.path().join("train"), "mixed");
    let data = tmp.path().join("data");
    let o = texdistill(&[
        "make-synthetic",
        "--n-train",
        "2",
        "--n-test-good",
        "2",
        "--n-test-defect",
        "2",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::remove_dir_all(data.join("grating/ground_truth")).unwrap();
    let out = tmp.path().join("eval");
    let o = texdistill(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.join("grating").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kv = fs::read_to_string(only_run_dir(&out).join("report.kv")).unwrap();
    assert!(kv.contains("pixel_auroc=none"), "{kv}");
    assert!(kv.contains("image_auroc="));
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = texdistill(&[
        "train",
        "--split-ratio",
        "1.5",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split_ratio"), "{}", stderr(&o));

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nepochs = 2\nlearning_rat = 0.1\n").unwrap();
    let o = texdistill(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));

    let o = texdistill(&["ablate-layers", "--presets", "ablation_l12,ablation_l12"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = tmp.path().join("run.cfg");
    let mut text = String::from("# tiny run\nepochs = 2\nseed = 5\n");
    for pair in TINY.chunks(2).filter(|p| p[0] != "--epochs") {
        text.push_str(&format!(
            "{} = {}\n",
            pair[0].trim_start_matches("--").replace('-', "_"),
            pair[1]
        ));
    }
    fs::write(&cfg, text).unwrap();
    let o = texdistill(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_run_dir(&out);
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.contains("epochs = 1"), "{resolved}");
    assert!(resolved.contains("seed = 5"), "{resolved}");
    assert_eq!(
        fs::read_to_string(run.join("curve.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
}

#[test]
fn ablation_deduplicates_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablate");
    let mut args = vec![
        "ablate-layers",
        "--presets",
        "ablation_l12,ablation_l23,ablation_l12",
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend(TINY.iter().copied().take(TINY.len() - 2));
    let o = Command::new(env!("CARGO_BIN_EXE_texdistill"))
        .args(&args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("more than once"));
    let table = fs::read_to_string(only_run_dir(&out).join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("ablation_l12") && table.contains("ablation_l23"));
}
