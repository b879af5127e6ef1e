use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqloc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: u64) {
    let out = seqloc(&["simulate", "--out", p(dir), "--seed", &seed.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to.join(e.file_name()));
        } else {
            fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

#[test]
fn simulate_localize_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 3);
    for f in ["gt_poses.csv", "scene.toml", "gt_inliers", "matches", "references", "queries"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let est = tmp.path().join("est");
    let out = seqloc(&["localize", "--dataset", p(&data), "--out", p(&est), "--matcher", "precomputed_file", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["poses.csv", "estimates.csv", "pgo.csv", "timing.csv", "config.toml"] {
        assert!(est.join(f).exists(), "{f}");
    }

    let eval = tmp.path().join("eval");
    let out = seqloc(&["evaluate", "--est", p(&est), "--gt", p(&data.join("gt_poses.csv")), "--out", p(&eval)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("10 of 10 frames localized"));
    let summary = fs::read_to_string(eval.join("summary.csv")).unwrap();
    assert!(summary.starts_with("n_frames,n_localized,pct_localized"));

    // Same inputs, fewer threads: identical deterministic outputs.
    let again = tmp.path().join("again");
    let out = seqloc(&["localize", "--dataset", p(&data), "--out", p(&again), "--matcher", "precomputed_file", "--jobs", "1"]);
    assert!(out.status.success());
    for f in ["poses.csv", "estimates.csv", "pgo.csv"] {
        assert_eq!(fs::read(est.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_wins_over_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 4);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[retrieval]\nk = 2\n[matching]\nkind = \"synthetic_oracle\"\n").unwrap();
    let est = tmp.path().join("est");
    let out = seqloc(&[
        "localize", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&est), "--k", "3", "--batch", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used = fs::read_to_string(est.join("config.toml")).unwrap();
    let used: toml::Table = toml::from_str(&used).unwrap();
    assert_eq!(used["retrieval"]["k"].as_integer(), Some(2));
    assert_eq!(used["batch"]["n"].as_integer(), Some(5));
    assert_eq!(used["matching"]["kind"].as_str(), Some("synthetic_oracle"));
}

#[test]
fn evaluate_against_itself_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 5);
    let est = tmp.path().join("est");
    fs::create_dir_all(&est).unwrap();
    fs::copy(data.join("gt_poses.csv"), est.join("poses.csv")).unwrap();
    let out = seqloc(&["evaluate", "--est", p(&est), "--gt", p(&data.join("gt_poses.csv")), "--out", p(&est)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("(100.0%), median error 0.0000 m / 0.000 deg"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(seqloc(&["localize", "--bogus"]).status.code(), Some(1));
    assert_eq!(seqloc(&["localize", "--out", "x"]).status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[pnp]\nnot_a_key = 3\n").unwrap();
    let out = seqloc(&["localize", "--config", p(&bad), "--dataset", "d", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));

    let out = seqloc(&["localize", "--dataset", p(&tmp.path().join("missing")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = seqloc(&["evaluate", "--est", p(tmp.path()), "--gt", p(&tmp.path().join("nope.csv")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    // Queries from one world, references from another: nothing localizes.
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate(&a, 6);
    simulate(&b, 7);
    fs::remove_dir_all(a.join("references")).unwrap();
    copy_dir(&b.join("references"), &a.join("references"));
    let est = tmp.path().join("est");
    let out = seqloc(&["localize", "--dataset", p(&a), "--out", p(&est), "--matcher", "synthetic_oracle"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(est.join("poses.csv").exists());
}

#[test]
fn report_concatenates_with_source() {
    let tmp = tempfile::tempdir().unwrap();
    let (x, y) = (tmp.path().join("x.csv"), tmp.path().join("y.csv"));
    fs::write(&x, "a,b\n1,2\n").unwrap();
    fs::write(&y, "a,b\n3,4\n5,6\n").unwrap();
    let out_file = tmp.path().join("all.csv");
    let out = seqloc(&["report", "--out", p(&out_file), p(&x), p(&y)]);
    assert!(out.status.success());
    let text = fs::read_to_string(&out_file).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "source,a,b");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].ends_with(",5,6") && lines[3].starts_with(p(&y)));

    fs::write(&y, "a,c\n3,4\n").unwrap();
    assert_eq!(seqloc(&["report", "--out", p(&out_file), p(&x), p(&y)]).status.code(), Some(2));
}
