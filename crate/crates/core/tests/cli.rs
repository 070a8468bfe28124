use std::path::Path;
use std::process::{Command, Output};

fn mbsniff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbsniff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn generate(out: &Path, seed: &str) -> Output {
    mbsniff(&[
        "generate", "--grid", "toy", "--count", "12", "--seed", seed, "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(generate(&a, "4").status.success());
    assert!(generate(&b, "4").status.success());
    assert!(generate(&c, "5").status.success());
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(&a[..4], b"SUMS");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.sums");
    let ckpt = dir.path().join("toy.sumw");
    let log = dir.path().join("log.tsv");
    assert!(generate(&data, "1").status.success());
    let d = data.to_str().unwrap();
    let c = ckpt.to_str().unwrap();
    let out = mbsniff(&[
        "train", "--data", d, "--out", c, "--encoders", "2", "--d-model", "8", "--heads", "2",
        "--d-ff", "16", "--steps", "3", "--batch-size", "4", "--log", log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(log).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step\t"));

    for args in [
        vec!["eval", "--data", d, "--checkpoint", c],
        vec!["sense", "--data", d, "--method", "model", "--checkpoint", c],
        vec!["classify", "--data", d, "--checkpoint", c],
        vec!["ber-curve", "--data", d, "--receiver", "model", "--checkpoint", c, "--oracle", "none"],
        vec!["ber-curve", "--data", d, "--receiver", "somp"],
        vec!["sense", "--data", d, "--channels", "2"],
    ] {
        let out = mbsniff(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn gradcheck_passes() {
    let out = mbsniff(&["gradcheck"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().count() > 10);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.sums");
    let out = mbsniff(&["sense", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let junk = dir.path().join("junk.sums");
    std::fs::write(&junk, b"SUMSjunk").unwrap();
    let out = mbsniff(&["sense", "--data", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let data = dir.path().join("ok.sums");
    assert!(generate(&data, "1").status.success());
    let out = mbsniff(&["ber-curve", "--data", data.to_str().unwrap(), "--oracle", "occupancy"]);
    assert_eq!(out.status.code(), Some(2));
}
