use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use breathorder::dataio::Dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_breathorder"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn breathorder")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_requested_count_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["synth", "--out", "a", "--sequences", "4", "--clips", "5", "--seed", "9"],
        dir,
    );
    ok(
        &["synth", "--out", "b", "--sequences", "4", "--clips", "5", "--seed", "9"],
        dir,
    );
    let data = Dataset::load(&dir.join("a")).unwrap();
    assert_eq!(data.len(), 4);
    assert!(data.sequences.iter().all(|s| s.num_clips() == 5));
    let files = tree_bytes(&dir.join("a"));
    assert_eq!(files.iter().filter(|(name, _)| name.ends_with(".vclp")).count(), 20);
    assert!(files.iter().any(|(name, _)| name == "manifest.json"));
    assert_eq!(tree_bytes(&dir.join("a")), tree_bytes(&dir.join("b")));
}

#[test]
fn too_few_clips_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", "x", "--sequences", "2", "--clips", "2"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["bogus"], tmp.path())), 1);
    assert_eq!(code(&run(&["synth"], tmp.path())), 1);
    assert_eq!(code(&run(&["--help"], tmp.path())), 0);
}

#[test]
fn full_keep_ratio_leaves_clips_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--out", "data", "--sequences", "2", "--clips", "3"], dir);
    ok(
        &[
            "mask",
            "--data",
            "data",
            "--out",
            "m",
            "--keep-ratio",
            "1.0",
            "--previews",
            "0",
        ],
        dir,
    );
    let a = Dataset::load(&dir.join("data")).unwrap();
    let b = Dataset::load(&dir.join("m")).unwrap();
    assert_eq!(a.sequences, b.sequences);
}

#[test]
fn default_mask_keeps_four_of_sixteen_tiles() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--out", "data", "--sequences", "1", "--clips", "3"], dir);
    ok(&["mask", "--data", "data", "--out", "m", "--previews", "1"], dir);
    let previews: Vec<_> = fs::read_dir(dir.join("m/previews")).unwrap().collect();
    assert_eq!(previews.len(), 1);
    let csv = fs::read_to_string(previews[0].as_ref().unwrap().path().join("tiles.csv")).unwrap();
    let mut per_frame = std::collections::BTreeMap::<usize, (usize, usize)>::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = per_frame.entry(f[0].parse().unwrap()).or_default();
        e.0 += 1;
        e.1 += usize::from(f[4] == "1");
    }
    assert!(!per_frame.is_empty());
    for (frame, (tiles, kept)) in per_frame {
        assert_eq!((tiles, kept), (16, 4), "frame {frame}");
    }
}

#[test]
fn missing_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&run(&["mask", "--data", "absent", "--out", "m"], dir)), 2);
    assert_eq!(code(&run(&["train", "--data", "absent", "--out", "r"], dir)), 2);
    assert_eq!(code(&run(&["eval", "--run", "absent", "--out", "e"], dir)), 2);
    assert_eq!(code(&run(&["inspect", "absent.bock"], dir)), 2);
}

#[test]
fn eval_without_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--out", "data", "--sequences", "5", "--clips", "3"], dir);
    ok(
        &[
            "train", "--data", "data", "--out", "run", "--method", "tt_cls", "--epochs", "1",
        ],
        dir,
    );
    fs::remove_file(dir.join("run/model.bock")).unwrap();
    assert_eq!(code(&run(&["eval", "--run", "run", "--out", "e"], dir)), 2);
}

#[test]
fn train_then_eval_tags_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &[
            "synth",
            "--out",
            "data",
            "--sequences",
            "5",
            "--clips",
            "4",
            "--seed",
            "2",
        ],
        dir,
    );
    ok(
        &[
            "train",
            "--data",
            "data",
            "--out",
            "run",
            "--method",
            "embedding",
            "--posenc",
            "ape",
            "--mgm",
            "off",
            "--epochs",
            "1",
            "--seed",
            "2",
        ],
        dir,
    );
    for f in [
        "model.bock",
        "ckpt_epoch1.bock",
        "train_log.csv",
        "epochs.csv",
        "config.json",
        "split.json",
    ] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    ok(&["eval", "--run", "run", "--out", "ev"], dir);
    let csv = fs::read_to_string(dir.join("ev/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,posenc,mgm,accuracy,f1");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("embedding,ape,off,"), "{}", lines[1]);
    assert!(dir.join("ev/run_meta.json").exists());

    ok(&["curve", "--run", "run", "--out", "cv"], dir);
    let curve = fs::read_to_string(dir.join("cv/curve.csv")).unwrap();
    assert!(curve.starts_with("delta,n,accuracy,low_confidence\n"));
    assert!(fs::read_to_string(dir.join("cv/curve.svg")).unwrap().contains("<svg"));
}

#[test]
fn inspect_reports_dataset_size() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--out", "data", "--sequences", "3", "--clips", "3"], dir);
    let out = ok(&["inspect", "data"], dir);
    assert!(out.contains("3 sequences, 9 clips"), "{out}");
}

#[test]
fn gradcheck_passes_on_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "--seeds", "4", "--out", "g"], tmp.path());
    let csv = fs::read_to_string(tmp.path().join("g/gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")));
}
