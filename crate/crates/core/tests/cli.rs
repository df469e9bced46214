use std::fs;
use std::path::Path;
use std::process::Command;

use frame_contrast::cli::{
    CHART_FILE, CHECKPOINT_FILE, CONFIG_ECHO, LOSS_LOG, METRICS_FILE, SUMMARY_FILE, SWEEP_FILE, TABLE_FILE,
};
use frame_contrast::data::{FEATURES_FILE, MANIFEST_FILE};

fn run(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_frame-contrast"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: [&str; 10] = [
    "--set",
    "warmup_steps=2",
    "--set",
    "total_steps=20",
    "--set",
    "lr=0.01",
    "--set",
    "batch_size=4",
    "--set",
    "strategy=\"fixed-k:3\"",
];

fn gen(dir: &Path, pairs: &str, skip: &str) -> i32 {
    run(&[
        "gen-data",
        "--num-pairs",
        pairs,
        "--num-topics",
        "4",
        "--skip",
        skip,
        "--seed",
        "5",
        "--out",
        p(dir),
    ])
}

#[test]
fn gen_data_writes_dataset_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(gen(&a, "7", "0"), 0);
    assert_eq!(gen(&b, "7", "0"), 0);
    let manifest = fs::read_to_string(a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert!(a.join(CONFIG_ECHO).exists());
    for f in [FEATURES_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_eval_sweep_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_dir, test_dir) = (tmp.path().join("train"), tmp.path().join("test"));
    assert_eq!(gen(&train_dir, "16", "0"), 0);
    assert_eq!(gen(&test_dir, "8", "16"), 0);

    let run_dir = tmp.path().join("run");
    let mut args = vec!["train", "--data", p(&train_dir), "--out", p(&run_dir)];
    args.extend(QUICK);
    assert_eq!(run(&args), 0);
    let log = fs::read_to_string(run_dir.join(LOSS_LOG)).unwrap();
    assert!(log.starts_with("step,l1,l2,total,lr\n"));
    assert_eq!(log.lines().count(), 21);

    let ckpt = run_dir.join(CHECKPOINT_FILE);
    let metrics = |out: &Path| {
        let code = run(&[
            "eval",
            "--ckpt",
            p(&ckpt),
            "--data",
            p(&test_dir),
            "--dual-softmax",
            "--out",
            p(out),
        ]);
        assert_eq!(code, 0);
        fs::read(out.join(METRICS_FILE)).unwrap()
    };
    let first = metrics(&tmp.path().join("e1"));
    assert_eq!(first, metrics(&tmp.path().join("e2")));
    assert!(String::from_utf8(first)
        .unwrap()
        .starts_with("r1,r5,r10,medr,accuracy,"));

    let sweep_dir = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--data",
        p(&train_dir),
        "--test",
        p(&test_dir),
        "--strategy-grid",
        "baseline,fixed-k:3,random:3",
        "--seeds",
        "0,1",
        "--out",
        p(&sweep_dir),
    ];
    args.extend(QUICK);
    assert_eq!(run(&args), 0);
    let sweep = fs::read_to_string(sweep_dir.join(SWEEP_FILE)).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3 * 2);

    let report_dir = tmp.path().join("report");
    assert_eq!(
        run(&[
            "report",
            "--in",
            p(&sweep_dir.join(SWEEP_FILE)),
            "--out",
            p(&report_dir)
        ]),
        0
    );
    for f in [TABLE_FILE, SUMMARY_FILE, CHART_FILE] {
        assert!(report_dir.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(report_dir.join(SUMMARY_FILE))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let out = tmp.path().join("o");
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--bogus"]), 1);
    assert_eq!(gen(&data, "8", "0"), 0);
    assert_eq!(
        run(&["train", "--data", p(&data), "--out", p(&out), "--set", "no_such_key=1"]),
        1
    );
    assert_eq!(
        run(&["train", "--data", p(&tmp.path().join("missing")), "--out", p(&out)]),
        2
    );

    let bad = tmp.path().join("bad.fckp");
    fs::write(&bad, b"FCKP\x01\x00").unwrap();
    assert_eq!(
        run(&["eval", "--ckpt", p(&bad), "--data", p(&data), "--out", p(&out)]),
        2
    );

    let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--set", "lr=1e300"];
    args.extend(&QUICK[..4]);
    assert_eq!(run(&args), 3);
}
