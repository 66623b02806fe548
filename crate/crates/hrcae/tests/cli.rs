mod common;

use std::path::Path;
use std::process::{Command, Output};

use hrcae::formats::write_json;

fn hrcae(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrcae")).arg("--config").arg(cfg).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_command_sequence() {
    let root = tempfile::tempdir().unwrap();
    let cfg_path = root.path().join("run.json");
    write_json(&cfg_path, &common::quick_config(root.path())).unwrap();

    let o = hrcae(&cfg_path, &["synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("8 participants (4 pretrain, 2 positive, 2 control)"));
    assert!(root.path().join("data/manifest.json").exists());

    let o = hrcae(&cfg_path, &["preprocess"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("pretrain") && l.contains(" 4 ") && l.contains(" 120 ")));
    assert!(root.path().join("cache/index.json").exists());

    let o = hrcae(&cfg_path, &["train", "--output", root.path().join("pre").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(root.path().join("pre/pretrained.ckpt").exists());

    let o = hrcae(&cfg_path, &["loso", "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("overall uar"));
    let results = std::fs::read_to_string(root.path().join("out/results.csv")).unwrap();
    assert!(results.starts_with("fold,mode,shift,tp,fp,tn,fn,uar,precision,f1,sensitivity,specificity"));
    assert_eq!(results.lines().count(), 3);

    let o = hrcae(&cfg_path, &["scan", "--participant", "pos001"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 9);
}

#[test]
fn bad_input_exits_with_one() {
    let root = tempfile::tempdir().unwrap();
    let cfg_path = root.path().join("run.json");
    write_json(&cfg_path, &common::quick_config(root.path())).unwrap();
    // no cohort written yet
    let o = hrcae(&cfg_path, &["preprocess"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(&cfg_path, "{ not json").unwrap();
    assert_eq!(hrcae(&cfg_path, &["synth"]).status.code(), Some(1));
}

#[test]
fn gradcheck_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let cfg_path = root.path().join("run.json");
    write_json(&cfg_path, &hrcae::config::RunConfig::default()).unwrap();
    let o = hrcae(&cfg_path, &["gradcheck", "--probes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = hrcae(&cfg_path, &["gradcheck", "--probes", "3", "--fault", "prelu"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).lines().any(|l| l.starts_with("prelu") && l.ends_with("FAIL")));
    assert_eq!(hrcae(&cfg_path, &["gradcheck", "--fault", "nonsense"]).status.code(), Some(1));
}
