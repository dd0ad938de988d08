//! End-to-end tests of the command-line interface: artifacts on disk,
//! determinism, density reporting and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn hintmvs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hintmvs"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_writes_triplets_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scene.txt");
    std::fs::write(
        &config,
        "width 64\nheight 48\nviews 5\nrig arc 6.0 0.5\ntarget 0 0 12\nstandoff 12\nwall 0 0 20 40 28\nsphere 0.5 0 9 1.5\n",
    )
    .unwrap();
    let out = hintmvs(
        &["generate", "--config", "scene.txt", "--out", "a", "--seed", "9"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..5 {
        assert!(dir.path().join(format!("a/images/{i:04}.png")).is_file());
        assert!(dir.path().join(format!("a/cams/{i:04}.txt")).is_file());
        assert!(dir.path().join(format!("a/depths/{i:04}.pfm")).is_file());
    }
    assert!(dir.path().join("a/pair.txt").is_file());
    // same seed, same bytes
    let out2 = hintmvs(
        &["generate", "--config", "scene.txt", "--out", "b", "--seed", "9"],
        dir.path(),
    );
    assert!(out2.status.success());
    for rel in ["images/0002.png", "depths/0003.pfm", "cams/0001.txt", "pair.txt"] {
        assert_eq!(
            read(&dir.path().join("a").join(rel)),
            read(&dir.path().join("b").join(rel)),
            "{rel} differs between identical seeds"
        );
    }
    let out3 = hintmvs(
        &["generate", "--config", "scene.txt", "--out", "c", "--seed", "10"],
        dir.path(),
    );
    assert!(out3.status.success());
    assert_ne!(
        read(&dir.path().join("a/images/0000.png")),
        read(&dir.path().join("c/images/0000.png")),
        "different seeds must change the render"
    );
}

#[test]
fn generate_rejects_bad_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.txt");
    std::fs::write(&config, "width 64\nheight 48\nbogus_key 1\nwall 0 0 20 40 28\n").unwrap();
    let out = hintmvs(
        &["generate", "--config", "bad.txt", "--out", "x", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));
}

fn generate_default_scene(dir: &Path, name: &str, views: usize) {
    let out = hintmvs(
        &[
            "generate",
            "--out",
            name,
            "--seed",
            "4",
            "--width",
            "64",
            "--height",
            "48",
            "--views",
            &views.to_string(),
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn reconstruct_is_deterministic_and_reports_densities() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 5);
    let args = [
        "reconstruct",
        "--dataset",
        "scene",
        "--out",
        "r1",
        "--mode",
        "fmvg",
        "--density",
        "0.03",
        "--seed",
        "3",
        "--c",
        "auto",
    ];
    let out = hintmvs(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("r1/report.txt")).unwrap();
    let merged: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("mean_density_merged "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (0.10..=0.15).contains(&merged),
        "merged density {merged} outside the aggregation range"
    );
    let filtered: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("mean_density_final "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(filtered <= merged);
    for i in 0..5 {
        assert!(dir.path().join(format!("r1/depth_{i:04}.pfm")).is_file());
        assert!(dir.path().join(format!("r1/conf_{i:04}.pfm")).is_file());
        assert!(dir.path().join(format!("r1/hints_{i:04}.txt")).is_file());
    }
    // a rerun with the same seed produces identical bytes
    let mut args2 = args;
    args2[4] = "r2";
    let out2 = hintmvs(&args2, dir.path());
    assert!(out2.status.success());
    for i in 0..5 {
        assert_eq!(
            read(&dir.path().join(format!("r1/depth_{i:04}.pfm"))),
            read(&dir.path().join(format!("r2/depth_{i:04}.pfm"))),
            "depth {i} differs across reruns"
        );
    }
}

#[test]
fn unguided_mode_ignores_hints_entirely() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 3);
    // bake hint files into a copy of the dataset
    let out = hintmvs(
        &[
            "generate", "--out", "hinted", "--seed", "4", "--width", "64", "--height", "48",
            "--views", "3", "--density", "0.05",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    for (dataset, outdir) in [("scene", "u1"), ("hinted", "u2")] {
        let out = hintmvs(
            &[
                "reconstruct", "--dataset", dataset, "--out", outdir, "--mode", "unguided",
                "--c", "auto",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for i in 0..3 {
        assert_eq!(
            read(&dir.path().join(format!("u1/depth_{i:04}.pfm"))),
            read(&dir.path().join(format!("u2/depth_{i:04}.pfm"))),
            "unguided output must not depend on hint files"
        );
    }
}

#[test]
fn guided_mode_without_hint_sources_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 3);
    // strip ground truth so there is nothing to sample hints from
    std::fs::remove_dir_all(dir.path().join("scene/depths")).unwrap();
    let out = hintmvs(
        &[
            "reconstruct", "--dataset", "scene", "--out", "r", "--mode", "fmvg", "--c", "auto",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("hint"),
        "diagnostic should mention hints: {}",
        stderr(&out)
    );
}

#[test]
fn evaluate_scores_perfect_estimates_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 3);
    let out = hintmvs(
        &[
            "evaluate",
            "--est",
            "scene/depths",
            "--gt",
            "scene/depths",
            "--tau",
            "1,2,3,4",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains(">1"), "thresholds echoed in the header: {text}");
    for tau in ["1", "2", "3", "4"] {
        assert!(
            text.contains(&format!("mean tau {tau} rate 0.000000")),
            "{text}"
        );
    }
}

#[test]
fn evaluate_rejects_mismatched_view_sets() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 3);
    generate_default_scene(dir.path(), "other", 5);
    let out = hintmvs(
        &[
            "evaluate",
            "--est",
            "other/depths",
            "--gt",
            "scene/depths",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("view sets differ"));
}

#[test]
fn fuse_ground_truth_reconstructs_the_surface() {
    let dir = tempfile::tempdir().unwrap();
    // a single wall: every ground-truth point is co-visible, so the fused
    // cloud must cover it almost exactly
    let config = dir.path().join("wall.txt");
    std::fs::write(
        &config,
        "width 64\nheight 48\nviews 5\nrig lateral 0.3\ntarget 0 0 8\nstandoff 8\nwall 0 0 8 3.2 2.2\n",
    )
    .unwrap();
    let gen = hintmvs(
        &["generate", "--config", "wall.txt", "--out", "scene", "--seed", "2"],
        dir.path(),
    );
    assert!(gen.status.success(), "{}", stderr(&gen));
    let out = hintmvs(
        &[
            "fuse",
            "--dataset",
            "scene",
            "--out",
            "cloud.ply",
            "--min-views",
            "2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(dir.path().join("cloud.ply").is_file());
    let avg: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("average "))
        .expect("metrics printed when ground truth exists")
        .parse()
        .unwrap();
    assert!(avg < 1e-3, "perfect depths must fuse onto the surface, avg {avg}");
}

#[test]
fn fuse_with_unsatisfiable_min_views_warns_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    generate_default_scene(dir.path(), "scene", 3);
    let out = hintmvs(
        &[
            "fuse",
            "--dataset",
            "scene",
            "--out",
            "cloud.ply",
            "--min-views",
            "9",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("empty"), "{}", stdout(&out));
}

#[test]
fn ablate_prints_variant_rows_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = hintmvs(
        &[
            "ablate", "--seeds", "1", "--width", "64", "--height", "48", "--views", "3",
            "--out", "report.txt",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for row in ["unguided", "g ", "mvg", "fmvg", "none", "all"] {
        assert!(text.contains(row), "missing row {row} in:\n{text}");
    }
    for check in [
        "unguided_gt_g",
        "g_ge_fmvg",
        "fmvg_le_mvg",
        "all_le_stage1_le_none",
        "zero_hints_equals_unguided",
    ] {
        assert!(text.contains(check), "missing check {check}");
    }
    let zero_line = text
        .lines()
        .find(|l| l.contains("zero_hints_equals_unguided"))
        .unwrap();
    assert!(zero_line.contains("PASS"), "{zero_line}");
    assert!(dir.path().join("report.txt").is_file());
}

#[test]
fn unknown_flags_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hintmvs(&["reconstruct", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
