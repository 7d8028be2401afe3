use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn agt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agt"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--synthetic",
    "--synthetic-size",
    "200",
    "--layers",
    "3",
    "--hidden",
    "16",
    "--embedding-dim",
    "16",
    "--lr",
    "1.0",
    "--epochs",
    "12",
    "--seed",
    "2",
];

fn train(dir: &Path) -> Output {
    let ck = dir.join("ck.json");
    let run = dir.join("run");
    let mut args = vec!["train", "--checkpoint", path(&ck), "--out-dir", path(&run)];
    args.extend_from_slice(SMALL);
    agt(&args)
}

#[test]
fn train_eval_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = fs::read_to_string(dir.path().join("run/epoch_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 12);
    assert!(log.lines().all(|l| l.split('\t').count() == 5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("layers=3\n") && stderr.contains("lr=1\n"));

    let ck = dir.path().join("ck.json");
    let mut args = vec!["eval", "--checkpoint", path(&ck)];
    args.extend_from_slice(SMALL);
    let out = agt(&args);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let acc = stdout.strip_prefix("accuracy\t").unwrap().trim_end();
    assert_eq!(acc.len(), 6, "four decimals: {acc}");
    let best = fs::read_to_string(dir.path().join("run/epoch_log.tsv")).unwrap();
    let best_dev = best
        .lines()
        .map(|l| l.split('\t').nth(3).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert_eq!(acc, format!("{best_dev:.4}"));

    let an = dir.path().join("an");
    let mut args = vec![
        "analyze",
        "--checkpoint",
        path(&ck),
        "--out-dir",
        path(&an),
        "--heatmaps",
        "1",
    ];
    args.extend_from_slice(SMALL);
    let out = agt(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svgs: Vec<_> = fs::read_dir(&an)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".svg"))
        .collect();
    assert_eq!(svgs.len(), 1);
    assert!(an.join("heatmap_1.svg").exists());
    let dump = fs::read_to_string(an.join("records.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 40);
    for name in [
        "phrase_lengths.tsv",
        "spikiness.tsv",
        "gates.tsv",
        "selected_words.tsv",
        "heatmaps.txt",
    ] {
        assert!(an.join(name).exists(), "{name}");
    }
}

#[test]
fn eval_on_treebank_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth");
    let out = agt(&[
        "synth",
        "--out-dir",
        path(&data),
        "--synthetic-size",
        "100",
        "--seed",
        "4",
    ]);
    assert!(out.status.success());
    let train_file = data.join("train.txt");
    let test_file = data.join("test.txt");
    assert_eq!(fs::read_to_string(&test_file).unwrap().lines().count(), 20);

    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "train = {}\ndev = {}\nlayers = 2\nhidden = 8\nembedding-dim = 8\nepochs = 2\nmode = sentences\n",
            path(&train_file),
            path(&test_file)
        ),
    )
    .unwrap();
    let ck = dir.path().join("ck.json");
    let out = agt(&[
        "train",
        "--config",
        path(&cfg),
        "--checkpoint",
        path(&ck),
        "--out-dir",
        path(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = agt(&[
        "eval",
        "--checkpoint",
        path(&ck),
        "--test",
        path(&test_file),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("accuracy\t"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(agt(&["gradcheck"]).status.code(), Some(0));
    assert_eq!(agt(&["eval", "--synthetic"]).status.code(), Some(2));
    assert_eq!(
        agt(&["train", "--dropout", "1.0", "--synthetic"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(agt(&["bogus"]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        agt(&["eval", "--synthetic", "--checkpoint", path(&missing)])
            .status
            .code(),
        Some(1)
    );
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "(2 (3 unclosed)\n").unwrap();
    let ck = dir.path().join("ck.json");
    let out = agt(&[
        "train",
        "--train",
        path(&bad),
        "--dev",
        path(&bad),
        "--checkpoint",
        path(&ck),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn gradcheck_reports_every_tensor() {
    let out = agt(&["gradcheck", "--seed", "5"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("projection.weight\t"));
    assert!(stdout.contains("layer2.gate.bias\t"));
    assert!(!stdout.contains("FAIL"));
}
