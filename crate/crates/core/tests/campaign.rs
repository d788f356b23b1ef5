use fastdemo::campaign::*;
use fastdemo::refinement::{Mode, RefinementConfig};
use fastdemo::scenarios::TaskKind;
use std::fs;
use std::path::Path;
use tempfile::TempDir;

fn demo_dir(root: &Path, kind: TaskKind, seed: u64) -> std::path::PathBuf {
    let out = root.join(format!("demo_{}_{seed}", kind.name()));
    cmd_demo(&DemoRequest {
        scenario: ScenarioConfig::for_task(kind),
        seed,
        out: out.clone(),
    })
    .unwrap();
    out
}

fn refine(demo: &Path, out: &Path, mode: Mode, speeds: Vec<usize>, max_speed: usize) -> RefineOutcome {
    cmd_refine(&RefineRequest {
        demo_dir: demo.to_path_buf(),
        scenario: None,
        refinement: RefinementConfig {
            mode,
            max_speed,
            ..Default::default()
        },
        speeds,
        force_limit: None,
        seed: None,
        out: out.to_path_buf(),
        emit: Emit::default(),
    })
    .unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn demo_outputs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = demo_dir(tmp.path(), TaskKind::FlatErase, 3);
    let b = tmp.path().join("again");
    cmd_demo(&DemoRequest {
        scenario: ScenarioConfig::for_task(TaskKind::FlatErase),
        seed: 3,
        out: b.clone(),
    })
    .unwrap();
    for f in [DEMO_REF_FILE, DEMO_MEASURED_FILE, SCENARIO_FILE, MANIFEST_FILE] {
        assert_eq!(sha(&a.join(f)), sha(&b.join(f)), "{f}");
    }
    let loaded = load_demo(&a).unwrap();
    assert_eq!(loaded.demo.reference.len(), loaded.demo.measured.len());
    assert_eq!(loaded.demo.reference.rate_hz(), 50.0);
    assert_eq!(loaded.seed, 3);
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::CurvedErase, 1);
    let m = Manifest::load(&d).unwrap();
    assert_eq!(m.command, "demo");
    assert_eq!(m.seed, 1);
    assert_eq!(m.files.len(), 3);
    for f in &m.files {
        let bytes = fs::read(d.join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes);
        use sha2::Digest;
        assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), f.sha256);
    }
    let echoed: ScenarioConfig = serde_json::from_value(m.config).unwrap();
    assert_eq!(echoed, ScenarioConfig::for_task(TaskKind::CurvedErase));
}

#[test]
fn i2rlc_results_shape() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::FlatErase, 1);
    let out = tmp.path().join("i2");
    let r = refine(&d, &out, Mode::I2rlc, vec![], 10);
    assert_eq!(r.status(), RunStatus::Completed);
    let run = &r.results.runs[0];
    assert_eq!(run.playbacks, 27);
    let rows: usize = run.stages.iter().map(|s| s.iterations.len()).sum();
    assert_eq!(rows, 27);
    let refined: Vec<_> = run.stages.iter().filter_map(|s| s.refined.as_ref()).collect();
    assert_eq!(refined.len(), 9);
    for p in refined {
        assert!(out.join(p).is_file());
    }
    let csv = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 28);
    assert!(fs::metadata(out.join("learning_curve.svg")).unwrap().len() > 0);
    let reloaded = ResultsFile::load(&out.join(RESULTS_FILE)).unwrap();
    assert_eq!(reloaded, r.results);
    let text = fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
    assert!(!text.contains(tmp.path().to_str().unwrap()), "results must not embed absolute paths");
}

#[test]
fn playback_single_row() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::FlatErase, 1);
    let r = refine(&d, &tmp.path().join("pb"), Mode::PlaybackOnly, vec![10], 10);
    let run = &r.results.runs[0];
    assert_eq!(run.stages.len(), 1);
    assert_eq!(run.stages[0].iterations.len(), 1);
    assert!(run.stages[0].refined.is_none());
}

#[test]
fn compare_grid_and_errors() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::FlatErase, 1);
    let speeds: Vec<usize> = (2..=10).collect();
    let pb = tmp.path().join("pb");
    let ir = tmp.path().join("irlc");
    let i2 = tmp.path().join("i2");
    refine(&d, &pb, Mode::PlaybackOnly, speeds.clone(), 10);
    refine(&d, &ir, Mode::Irlc, speeds.clone(), 10);
    refine(&d, &i2, Mode::I2rlc, vec![], 10);
    let out = tmp.path().join("cmp");
    let c = cmd_compare(&CompareRequest {
        results: vec![pb.join(RESULTS_FILE), ir.join(RESULTS_FILE), i2.join(RESULTS_FILE)],
        out: out.clone(),
        emit: Emit::default(),
    })
    .unwrap();
    assert_eq!(c.methods, ["playback", "irlc", "i2rlc"]);
    assert_eq!(c.speeds, speeds);
    assert_eq!(c.dtw.len(), 3);
    assert!(c.dtw.iter().all(|row| row.len() == 9 && row.iter().all(Option::is_some)));
    for n in &speeds {
        assert!(c.cell("playback", *n).unwrap() >= c.cell("i2rlc", *n).unwrap(), "x{n}");
    }
    let table = fs::read_to_string(out.join("table_dtw.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("method,x2,"));
    for f in ["learning_curves.svg", "xy_overlay_x10.svg", "table_rms_force.csv"] {
        assert!(fs::metadata(out.join(f)).unwrap().len() > 0, "{f}");
    }

    let peg = demo_dir(tmp.path(), TaskKind::PegInHole, 1);
    let peg_pb = tmp.path().join("peg_pb");
    refine(&peg, &peg_pb, Mode::PlaybackOnly, vec![2], 10);
    let err = cmd_compare(&CompareRequest {
        results: vec![pb.join(RESULTS_FILE), peg_pb.join(RESULTS_FILE)],
        out: tmp.path().join("bad"),
        emit: Emit::none(),
    })
    .unwrap_err();
    assert!(matches!(err, CampaignError::Mismatch(_)), "{err}");

    let err = cmd_compare(&CompareRequest {
        results: vec![pb.join(RESULTS_FILE)],
        out: tmp.path().join("bad"),
        emit: Emit::none(),
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[test]
fn stopped_campaign_status() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::PegInHole, 1);
    let r = cmd_refine(&RefineRequest {
        demo_dir: d,
        scenario: None,
        refinement: RefinementConfig {
            mode: Mode::Irlc,
            ..Default::default()
        },
        speeds: vec![10],
        force_limit: Some(40.0),
        seed: None,
        out: tmp.path().join("stop"),
        emit: Emit::none(),
    })
    .unwrap();
    assert_eq!(r.status(), RunStatus::Stopped);
    assert_eq!(r.status().exit_code(), EXIT_STOPPED);
    let stop = r.results.runs[0].stop.as_ref().unwrap();
    assert_eq!(stop.speed, 10);
    assert!(!tmp.path().join("stop/learning_curve.csv").exists());
}

#[test]
fn dataset_counts_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::FlatErase, 1);
    let i2 = tmp.path().join("i2");
    let r = refine(&d, &i2, Mode::I2rlc, vec![], 3);
    let reference = i2.join(r.results.runs[0].stages[0].refined.as_ref().unwrap());
    let req = |k: usize, out: &str| DatasetRequest {
        demo_dir: d.clone(),
        scenario: None,
        reference: reference.clone(),
        rollouts: k,
        sigma_pos: DEFAULT_SIGMA_POS,
        sigma_rot: DEFAULT_SIGMA_ROT,
        seed: 5,
        force_limit: None,
        out: tmp.path().join(out),
    };
    let empty = cmd_dataset(&req(0, "empty")).unwrap();
    assert_eq!(empty.episode_count, 0);
    assert!(empty.episodes.is_empty());

    let a = cmd_dataset(&req(3, "a")).unwrap();
    let b = cmd_dataset(&req(3, "b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.episode_count, 3);
    for e in &a.episodes {
        let obs = e.observation.as_ref().unwrap();
        assert_eq!(sha(&tmp.path().join("a").join(obs)), sha(&tmp.path().join("b").join(obs)));
        assert_eq!(e.seed, episode_seed(5, e.index));
    }
}

#[test]
fn dataset_excludes_tripped_episodes() {
    let tmp = TempDir::new().unwrap();
    let d = demo_dir(tmp.path(), TaskKind::FlatErase, 1);
    let idx = cmd_dataset(&DatasetRequest {
        demo_dir: d.clone(),
        scenario: None,
        reference: d.join(DEMO_REF_FILE),
        rollouts: 2,
        sigma_pos: DEFAULT_SIGMA_POS,
        sigma_rot: DEFAULT_SIGMA_ROT,
        seed: 0,
        force_limit: Some(1.0),
        out: tmp.path().join("ds"),
    })
    .unwrap();
    assert_eq!(idx.episode_count, 0);
    assert_eq!(idx.excluded.len(), 2);
    assert!(idx.excluded.iter().all(|e| e.stop.is_some()));
}
