//! End-to-end checks of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use oneshot_daug::world::GmmWorld;
use oneshot_daug::RasterImage;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_oneshot-daug"));
    c.env_remove("ONESHOT_DAUG_SEED");
    c
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, config).unwrap();
    bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn noiseless_world_is_solved_without_augmentation() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "world.std=0\nmode=none\nepisode.episodes=40\n",
        &["eval"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("accuracy=1.0000"), "{}", stdout(&o));
    let rows = read_csv(&dir.path().join("out/episodes.csv"));
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r[0] == "v1"));
}

#[test]
fn missing_config_names_the_path() {
    let o = bin()
        .args(["--config", "/no/such/dir/run.cfg", "eval"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/dir/run.cfg"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "episodes=10\n", &["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key episodes"));
}

#[test]
fn eta_sweep_rows_and_diversity() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "episode.episodes=12\n",
        &["sweep", "--axis", "eta=0.2,0.7,1.0"],
    );
    assert!(o.status.success());
    let rows = read_csv(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 3);
    let div: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(div.windows(2).all(|w| w[1] >= w[0]), "{div:?}");
}

#[test]
fn count_grid_matches_plain_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "episode.episodes=10\n";
    let o = run(
        dir.path(),
        cfg,
        &[
            "sweep",
            "--axis",
            "K_a_sup=0,1,2,3",
            "--axis",
            "K_a_qry=0,1,2,3",
        ],
    );
    assert!(o.status.success());
    let rows = read_csv(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 16);
    let matrix = read_csv(&dir.path().join("out/ka_matrix.csv"));
    assert_eq!(matrix.len(), 4);
    let plain = tempfile::tempdir().unwrap();
    let o = run(plain.path(), &format!("{cfg}mode=none\n"), &["eval"]);
    assert!(o.status.success());
    let summary = read_csv(&plain.path().join("out/summary.csv"));
    assert_eq!(rows[0][1..3], ["0", "0"]);
    assert_eq!(rows[0][4], summary[0][7]);
}

#[test]
fn empty_sweep_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "", &["sweep", "--axis", "eta="]);
    assert!(!o.status.success());
    let o = run(dir.path(), "", &["sweep", "--axis", "zeta=1"]);
    assert!(!o.status.success());
}

#[test]
fn prop1_audit_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "prop1.random_tables=1000\n",
        &["theory", "prop1"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("max gap="));
    assert!(dir.path().join("out/prop1_audit.csv").exists());
}

#[test]
fn prop3_with_single_draw_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "prop3.cases=2:1\n", &["theory", "prop3"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("precondition"));
}

#[test]
fn bound_comparison_needs_the_encoder_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "bound.resamples=100\n",
        &["theory", "bound-compare"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("C_enc"));
}

#[test]
fn all_audits_write_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "bound.c_enc=1\nbound.resamples=500\nprop3.trials=5000\nmargin.trials=100\nmargin.rate_repeats=4\nprop1.random_tables=500\n";
    let o = run(dir.path(), cfg, &["theory", "all"]);
    assert!(o.status.success(), "{}", stdout(&o));
    for name in [
        "prop1_audit",
        "prop3_audit",
        "margin_bound_audit",
        "bound_comparison",
    ] {
        assert!(
            dir.path().join(format!("out/{name}.csv")).exists(),
            "{name}"
        );
    }
}

#[test]
fn dumped_source_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "aug.variants=0\n",
        &["dump-variants", "--class", "2"],
    );
    assert!(o.status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path().join("out")).unwrap().collect();
    assert_eq!(files.len(), 1);
    let path = dir.path().join("out/view_0.pgm");
    let bytes = std::fs::read(&path).unwrap();
    let img = RasterImage::read_pgm(&path).unwrap();
    assert_eq!(img.to_pgm_bytes(), bytes);
}

#[test]
fn dumped_variants_classify_like_memory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "aug.variants=3\nseed=4\n",
        &["dump-variants", "--class", "5"],
    );
    assert!(o.status.success());
    let world = GmmWorld::default_world();
    let schedule = oneshot_daug::diffusion::VarianceSchedule::default();
    let cfg = oneshot_daug::augment::AugConfig {
        variants: 3,
        ..Default::default()
    };
    let set =
        oneshot_daug::augment::augment_set(world.template(5), &cfg, &world, &schedule, 4).unwrap();
    for k in 0..4 {
        let disk = RasterImage::read_pgm(&dir.path().join(format!("out/view_{k}.pgm"))).unwrap();
        // the file format clamps to [0, 1], so compare with the clamped in-memory view
        let mem = set.view(k).quantized();
        assert_eq!(
            world.nearest_template(&disk),
            world.nearest_template(&mem),
            "view {k}"
        );
        assert_eq!(disk.to_pgm_bytes(), mem.to_pgm_bytes());
    }
}

#[test]
fn seed_environment_variable_overrides_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "mode=none\nepisode.episodes=5\nseed=1\n";
    run(a.path(), cfg, &["eval"]);
    let cfg_path = b.path().join("run.cfg");
    std::fs::write(&cfg_path, "mode=none\nepisode.episodes=5\nseed=99\n").unwrap();
    let o = bin()
        .env("ONESHOT_DAUG_SEED", "1")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(b.path().join("out"))
        .arg("eval")
        .output()
        .unwrap();
    assert!(o.status.success());
    let read = |d: &Path| std::fs::read(d.join("out/episodes.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn parallel_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "episode.episodes=6\n";
    let oa = run(a.path(), cfg, &["--jobs", "1", "eval", "--save-aug"]);
    let ob = run(b.path(), cfg, &["--jobs", "3", "eval", "--save-aug"]);
    assert!(oa.status.success() && ob.status.success());
    for f in [
        "episodes.csv",
        "summary.csv",
        "aug/episode0_support0/view_2.pgm",
    ] {
        let read = |d: &Path| std::fs::read(d.join("out").join(f)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{f}");
    }
}
