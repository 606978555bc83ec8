use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contour_mean::contour::Contour;
use contour_mean::geometry::{diameter, Vec2};
use contour_mean::interp::{interpolate, InterpRequest};
use contour_mean::io::{ContourFile, LabeledContour};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contour-mean"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn polar(n: usize, f: impl Fn(f64) -> f64) -> Vec<Vec2> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).map(|t| Vec2::from_polar(f(t), t)).collect()
}

fn ellipse(n: usize, a: f64, b: f64) -> Vec<Vec2> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).map(|t| Vec2::new(a * t.cos(), b * t.sin())).collect()
}

fn square() -> Vec<Vec2> {
    vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
}

fn write_set(dir: &Path, name: &str, contours: Vec<Vec<Vec2>>) -> PathBuf {
    let path = dir.join(name);
    ContourFile::new(contours.into_iter().map(|p| LabeledContour::new(None, p)).collect()).write(&path).unwrap();
    path
}

fn max_error(a: &[Vec2], b: &[Vec2]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).fold(0.0, f64::max)
}

fn matrix(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mean_of_two_identical_squares() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_set(dir.path(), "in.txt", vec![square(), square()]);
    let out = dir.path().join("out");
    let o = run(&["mean", s(&input), "--output-dir", s(&out), "--svg", s(&dir.path().join("m.svg"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let trace: Vec<f64> =
        std::fs::read_to_string(out.join("energy_trace.txt")).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert!(!trace.is_empty() && trace.iter().all(|e| e.abs() < 1e-20));

    let mean = ContourFile::read(out.join("mean.txt")).unwrap();
    assert_eq!(mean.len(), 1);
    assert_eq!(mean.contours[0].label.as_deref(), Some("mean"));
    let expected = contour_mean::contour::resample_uniform_arclength(&square(), 256).unwrap();
    assert!(max_error(&mean.contours[0].points, expected.points()) <= 1e-9);

    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("centroid-displacement "));
    assert_eq!(summary.lines().filter(|l| l.starts_with("dissimilarity ")).count(), 2);
    let svg = std::fs::read_to_string(dir.path().join("m.svg")).unwrap();
    assert!(svg.contains(contour_mean::svg::MEAN_STROKE));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_set(dir.path(), "one.txt", vec![square()]);
    let o = run(&["mean", s(&one), "--output-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("need at least 2 contours"));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "contourset v1\ncontour 3\n0 0\n1 1\n").unwrap();
    let o = run(&["distance", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(code(&run(&["mean", s(&dir.path().join("missing.txt"))])), 2);

    let two = write_set(dir.path(), "two.txt", vec![square(), square()]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "pionts = 64\n").unwrap();
    assert_eq!(code(&run(&["mean", s(&two), "--config", s(&cfg)])), 2);
    assert_eq!(code(&run(&["mean", s(&two), "--exponent", "-0.5"])), 2);
    assert_eq!(code(&run(&["mean", s(&two), "--points", "abc"])), 2);
}

#[test]
fn distance_of_an_identical_pair_is_negligible() {
    let dir = tempfile::tempdir().unwrap();
    let blob = polar(90, |t| 1.0 + 0.2 * (3.0 * t).cos());
    let input = write_set(dir.path(), "in.txt", vec![blob.clone(), blob]);
    let o = run(&["distance", s(&input), "--output-dir", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let d = matrix(&std::fs::read_to_string(dir.path().join("distance.txt")).unwrap());
    assert_eq!((d.len(), d[0].len()), (2, 2));
    assert_eq!((d[0][0], d[1][1]), (0.0, 0.0));
    assert!(d[0][1].abs() <= 1e-8 && d[0][1] == d[1][0]);
}

#[test]
fn distance_matrix_is_symmetric_and_flags_outliers() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_set(
        dir.path(),
        "three.txt",
        vec![polar(80, |_| 1.0), ellipse(80, 1.3, 0.8), polar(80, |t| 1.0 + 0.15 * (4.0 * t).sin())],
    );
    let o = run(&["distance", s(&input), "--output-dir", s(dir.path()), "--points", "128"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let d = matrix(&text);
    assert_eq!(d.len(), 3);
    for i in 0..3 {
        assert_eq!(d[i].len(), 3);
        assert_eq!(d[i][i], 0.0);
        for j in 0..3 {
            assert_eq!(d[i][j], d[j][i]);
            assert!(i == j || d[i][j] > 0.0);
        }
    }
    assert!(text.contains("# asymmetry "));

    let mut members: Vec<Vec<Vec2>> = (0..5).map(|k| polar(80, move |_| 1.0 + 0.01 * k as f64)).collect();
    members.push(polar(80, |t| 1.0 + 0.45 * (5.0 * t).cos()));
    let input = write_set(dir.path(), "outlier.txt", members);
    let o = run(&["distance", s(&input), "--output-dir", s(dir.path()), "--points", "128", "--flag-outliers", "3.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("# outliers 5\n"));
}

#[test]
fn interpolating_identical_slices_gives_copies() {
    let dir = tempfile::tempdir().unwrap();
    let blob = polar(70, |t| 1.0 + 0.2 * (3.0 * t).cos());
    let input = write_set(dir.path(), "in.txt", vec![blob.clone(), blob.clone()]);
    let o = run(&["interpolate", s(&input), "--output-dir", s(dir.path()), "--frames-per-gap", "1", "--points", "128"]);
    assert_eq!(code(&o), 0);
    let stack = ContourFile::read(dir.path().join("interpolated.txt")).unwrap();
    assert_eq!(stack.len(), 3);
    let first = &stack.contours[0].points;
    let diam = diameter(first);
    for c in &stack.contours {
        assert!(max_error(&c.points, first) <= 1e-6 * diam);
    }
}

#[test]
fn interpolated_midframe_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (polar(100, |_| 1.0), ellipse(100, 1.4, 0.7));
    let input = write_set(dir.path(), "in.txt", vec![a.clone(), b.clone()]);
    let o = run(&["interpolate", s(&input), "--output-dir", s(dir.path()), "--points", "128"]);
    assert_eq!(code(&o), 0);
    let stack = ContourFile::read(dir.path().join("interpolated.txt")).unwrap();
    assert_eq!(stack.len(), 3);

    let ra = contour_mean::contour::resample_uniform_arclength(&a, 128).unwrap();
    let rb = contour_mean::contour::resample_uniform_arclength(&b, 128).unwrap();
    let mid: Contour = interpolate(&InterpRequest::new(ra, rb, vec![0.5])).unwrap().remove(0);
    assert!(max_error(&stack.contours[1].points, mid.points()) <= 1e-12);
}

#[test]
fn zero_frames_echo_the_resampled_input() {
    let dir = tempfile::tempdir().unwrap();
    let slices = vec![square(), ellipse(50, 1.2, 0.9), polar(60, |t| 1.0 + 0.1 * t.cos())];
    let input = write_set(dir.path(), "in.txt", slices.clone());
    let o = run(&["interpolate", s(&input), "--output-dir", s(dir.path()), "--frames-per-gap", "0", "--points", "64"]);
    assert_eq!(code(&o), 0);
    let stack = ContourFile::read(dir.path().join("interpolated.txt")).unwrap();
    let expected = ContourFile::read(&input).unwrap().resampled(64).unwrap();
    assert_eq!(stack.len(), expected.len());
    for (c, e) in stack.contours.iter().zip(&expected) {
        assert_eq!(c.points.as_slice(), e.points());
    }
}

#[test]
fn outputs_are_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_set(
        dir.path(),
        "in.txt",
        vec![polar(80, |t| 1.0 + 0.1 * (2.0 * t).cos()), ellipse(90, 1.3, 0.9), polar(70, |t| 1.1 + 0.1 * (3.0 * t).sin())],
    );
    let outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = ["1", "3", "3"]
        .iter()
        .enumerate()
        .map(|(k, threads)| {
            let out = dir.path().join(format!("out{k}"));
            let o = run(&["mean", s(&input), "--points", "64", "--threads", threads, "--output-dir", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            let read = |name: &str| std::fs::read(out.join(name)).unwrap();
            (read("mean.txt"), read("energy_trace.txt"), read("summary.txt"))
        })
        .collect();
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_set(dir.path(), "in.txt", vec![square(), square()]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("points = 40\noutput-dir = \"{}\"\n", s(&dir.path().join("fromfile")))).unwrap();

    assert_eq!(code(&run(&["mean", s(&input), "--config", s(&cfg)])), 0);
    let mean = ContourFile::read(dir.path().join("fromfile/mean.txt")).unwrap();
    assert_eq!(mean.contours[0].points.len(), 40);

    assert_eq!(code(&run(&["mean", s(&input), "--config", s(&cfg), "--points", "24"])), 0);
    let mean = ContourFile::read(dir.path().join("fromfile/mean.txt")).unwrap();
    assert_eq!(mean.contours[0].points.len(), 24);
}

#[test]
fn roundtrip_check_reports_each_contour() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_set(dir.path(), "in.txt", vec![polar(100, |t| 1.0 + 0.2 * (3.0 * t).cos()), ellipse(100, 2.0, 1.0)]);
    let o = run(&["roundtrip-check", s(&input)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("contour ")).count(), 2);
    let help = String::from_utf8(run(&["--help"]).stdout).unwrap();
    assert!(help.contains("interpolate") && !help.contains("roundtrip-check"));
}
