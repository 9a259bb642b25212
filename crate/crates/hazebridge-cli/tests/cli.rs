//! End-to-end smoke of the command-line pipeline on a miniature corpus.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hazebridge"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap().to_string();
    let data = format!("{root}/data");
    let synth_args = |out: &str| {
        vec![
            "synth".to_string(),
            "--out".into(),
            out.to_string(),
            "--seed".into(),
            "3".into(),
            "--set".into(),
            "synth.count=8".into(),
            "--set".into(),
            "synth.test_count=2".into(),
            "--set".into(),
            "synth.size=16".into(),
        ]
    };
    fn to_refs(v: &[String]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }
    run_ok(&to_refs(&synth_args(&data)));
    assert!(Path::new(&data).join("manifest.toml").exists());
    assert!(Path::new(&data).join("resolved_config.toml").exists());

    // same seed, second directory: bitwise identical dataset
    let data2 = format!("{root}/data2");
    run_ok(&to_refs(&synth_args(&data2)));
    let a = std::fs::read(Path::new(&data).join("hazy/item0005.ppm")).unwrap();
    let b = std::fs::read(Path::new(&data2).join("hazy/item0005.ppm")).unwrap();
    assert_eq!(a, b);

    // tiny model + 4 training iterations per stage
    let common = [
        "--seed",
        "3",
        "--set",
        "model.base_channels=8",
        "--set",
        "model.groups=4",
        "--set",
        "train.batch_size=2",
        "--set",
        "schedule.t_steps=8",
        "--set",
        "train.checkpoint_every=0",
    ];
    let s1 = format!("{root}/s1");
    let mut args: Vec<&str> = vec![
        "train", "--stage", "1", "--out", &s1, "--set", "train.stage1_iters=4",
    ];
    let dataset_arg = format!("train.dataset={data}");
    args.extend(["--set", &dataset_arg]);
    args.extend(common);
    run_ok(&args);
    let ckpt1 = format!("{s1}/ckpt_stage1.hbc");
    assert!(Path::new(&ckpt1).exists());
    assert!(Path::new(&s1).join("loss_stage1.csv").exists());

    let s2 = format!("{root}/s2");
    let mut args: Vec<&str> = vec![
        "train",
        "--stage",
        "2",
        "--checkpoint",
        &ckpt1,
        "--out",
        &s2,
        "--set",
        "train.stage2_iters=4",
    ];
    args.extend(["--set", &dataset_arg]);
    args.extend(common);
    run_ok(&args);
    let ckpt2 = format!("{s2}/ckpt_stage2.hbc");
    assert!(Path::new(&ckpt2).exists());

    // stage-2 training rejects a stage-2 checkpoint as its reference
    let out = bin()
        .args([
            "train",
            "--stage",
            "2",
            "--checkpoint",
            &ckpt2,
            "--out",
            &format!("{root}/bad"),
            "--set",
            &dataset_arg,
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(5), "checkpoint errors exit with 5");

    // sample twice with the same seed: identical outputs
    let hazy_dir = format!("{data}/hazy");
    for out_dir in [format!("{root}/dehazed_a"), format!("{root}/dehazed_b")] {
        run_ok(&[
            "sample",
            &hazy_dir,
            "--checkpoint",
            &ckpt2,
            "--out",
            &out_dir,
            "--seed",
            "9",
            "--steps",
            "3",
            "--sampler",
            "posterior",
        ]);
    }
    let a = std::fs::read(format!("{root}/dehazed_a/item0000.ppm")).unwrap();
    let b = std::fs::read(format!("{root}/dehazed_b/item0000.ppm")).unwrap();
    assert_eq!(a, b);

    // evaluation produces a CSV with aggregates
    let eval_dir = format!("{root}/eval");
    run_ok(&[
        "eval",
        &format!("{root}/dehazed_a"),
        &format!("{data}/clean"),
        "--out",
        &eval_dir,
    ]);
    let report = std::fs::read_to_string(format!("{eval_dir}/report.csv")).unwrap();
    assert!(report.starts_with("item,psnr_db,ssim"));
    assert!(report.contains("mean,"));

    // schedule inspection prints the hand-derived table
    let out = bin()
        .args(["schedule", "4", "1.0", "--out", &format!("{root}/sched")])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("0.37500000"));
    assert!(text.contains("0.33333333"));

    // missing input directory: categorized io failure
    let out = bin()
        .args([
            "sample",
            &format!("{root}/nope"),
            "--checkpoint",
            &ckpt2,
            "--out",
            &format!("{root}/x"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // malformed config file: config error
    std::fs::write(format!("{root}/bad.toml"), "not = [valid").unwrap();
    let out = bin()
        .args([
            "schedule",
            "4",
            "1.0",
            "--config",
            &format!("{root}/bad.toml"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
