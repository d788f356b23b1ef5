use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn fastdemo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastdemo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn demo_refine_compare_dataset() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = fastdemo(&["demo", "--task", "flat_erase", "--seed", "2", "--out", "demo"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("demo/demo_ref.traj").is_file() && d.join("demo/demo_measured.traj").is_file());

    let o = fastdemo(&["refine", "--demo", "demo", "--mode", "playback", "--speed", "2..4", "--out", "pb"], d);
    assert_eq!(code(&o), 0);
    let o = fastdemo(
        &["refine", "--demo", "demo", "--mode", "i2rlc", "--max-speed", "4", "--iters", "2", "--gain", "0.5", "--out", "i2"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("i2/results.json")).unwrap()).unwrap();
    assert_eq!(results["runs"][0]["playbacks"], 6);
    assert_eq!(results["refinement"]["learning_gain"], 0.5);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("i2/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["command"], "refine");

    let o = fastdemo(&["compare", "pb/results.json", "i2/results.json", "--out", "cmp"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(d.join("cmp/table_dtw.csv")).unwrap();
    assert!(table.starts_with("method,x2,x3,x4\nplayback,"));

    let o = fastdemo(
        &["dataset", "--demo", "demo", "--reference", "i2/runs/i2rlc_x04/refined_x04.traj", "--rollouts", "2", "--out", "ds"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("ds/episodes/episode_001/observation.traj").is_file());
    assert!(d.join("ds/episodes/episode_001/action.traj").is_file());
}

#[test]
fn invalid_task_is_schema_error() {
    let tmp = TempDir::new().unwrap();
    let o = fastdemo(&["demo", "--task", "window_cleaning", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SchemaError"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn bad_config_file_is_schema_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.toml"), "format_version = 1\n[task]\nkind = \"flat_erase\"\nbogus = 3\n").unwrap();
    let o = fastdemo(&["demo", "--config", "bad.toml", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SchemaError"));
}

#[test]
fn missing_demo_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = fastdemo(&["refine", "--demo", "nowhere", "--mode", "irlc", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn peg_irlc_with_lowered_limit_exits_stopped() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&fastdemo(&["demo", "--task", "peg_in_hole", "--seed", "1", "--out", "peg"], d)), 0);
    let o = fastdemo(
        &["refine", "--demo", "peg", "--mode", "irlc", "--speed", "10", "--force-limit", "40", "--emit", "none", "--out", "r"],
        d,
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("stopped at x10 iteration 14"));
    let o = fastdemo(
        &["refine", "--demo", "peg", "--mode", "i2rlc", "--max-speed", "10", "--force-limit", "40", "--out", "r2"],
        d,
    );
    assert_eq!(code(&o), 0);
}

#[test]
fn demo_is_byte_identical_for_a_fixed_seed() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        assert_eq!(code(&fastdemo(&["demo", "--task", "curved_erase", "--out", out], d)), 0);
    }
    for f in ["demo_ref.traj", "demo_measured.traj", "manifest.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap());
    }
}
