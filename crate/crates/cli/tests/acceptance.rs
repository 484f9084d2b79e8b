//! CLI-level acceptance: determinism of denoise outputs, exit-code contract,
//! and the cost comparison of the two sweeps via the bench subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdsplit_core::imaging::{synthesize_test_image, Image, TestImageKind};
use pdsplit_core::linop::GridShape;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pdsplit")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pdsplit-test-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// ASCII PGM writer local to the tests, independent of the binary's codec.
fn write_pgm_ascii(path: &Path, img: &Image) {
    let s = img.shape;
    assert_eq!(s.channels(), 1);
    let mut text = format!("P2\n{} {}\n255\n", s.cols(), s.rows());
    for r in 0..s.rows() {
        let row: Vec<String> = (0..s.cols())
            .map(|c| {
                let v = img.pixels[s.index(r, c, 0)].clamp(0.0, 1.0);
                format!("{}", (v * 255.0).round() as u8)
            })
            .collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("PDSPLIT_LOG", "quiet")
        .output()
        .expect("spawning the CLI")
}

fn stdout_field(out: &Output, key: &str) -> Option<String> {
    let text = String::from_utf8_lossy(&out.stdout);
    for token in text.split_whitespace() {
        if let Some(rest) = token.strip_prefix(&format!("{key}=")) {
            return Some(rest.to_string());
        }
    }
    None
}

/// Two invocations with identical config and seed produce byte-identical
/// output image and CSV.
#[test]
fn criterion_12_cli_determinism() {
    let dir = temp_dir("determinism");
    let clean = synthesize_test_image(
        TestImageKind::PiecewiseAffine,
        GridShape::new(16, 16, 1).unwrap(),
        41,
    );
    let input = dir.join("clean.pgm");
    write_pgm_ascii(&input, &clean);

    let mut artifacts = Vec::new();
    for tag in ["a", "b"] {
        let out_img = dir.join(format!("out-{tag}.pgm"));
        let out_csv = dir.join(format!("metrics-{tag}.csv"));
        let out = run(&[
            "denoise",
            "--input",
            input.to_str().unwrap(),
            "--output",
            out_img.to_str().unwrap(),
            "--metrics",
            out_csv.to_str().unwrap(),
            "--noise-sigma",
            "0.08",
            "--seed",
            "7",
            "--iters",
            "150",
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        artifacts.push((fs::read(&out_img).unwrap(), fs::read(&out_csv).unwrap()));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "output images differ");
    assert_eq!(artifacts[0].1, artifacts[1].1, "metrics CSVs differ");
    println!(
        "ACCEPTANCE cli_determinism: PASS (image {} bytes, csv {} bytes)",
        artifacts[0].0.len(),
        artifacts[0].1.len()
    );
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn constant_image_passes_through() {
    let dir = temp_dir("constant");
    let input = dir.join("flat.pgm");
    let img = Image::constant(GridShape::new(8, 8, 1).unwrap(), 100.0 / 255.0);
    write_pgm_ascii(&input, &img);
    let output = dir.join("out.pgm");
    let out = run(&[
        "denoise",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--iters",
        "400",
    ]);
    assert!(out.status.success());
    // the restored constant image quantizes back to the input bytes
    let restored = fs::read(&output).unwrap();
    let expected_pixels: Vec<u8> = vec![100u8; 64];
    assert_eq!(&restored[restored.len() - 64..], &expected_pixels[..]);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_input_exits_2() {
    let out = run(&[
        "denoise",
        "--input",
        "/nonexistent/definitely-missing.pgm",
        "--output",
        "/tmp/never-written.pgm",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn violating_steps_exit_3_with_named_inequality() {
    let dir = temp_dir("cert");
    let input = dir.join("img.pgm");
    write_pgm_ascii(
        &input,
        &synthesize_test_image(TestImageKind::Blocks, GridShape::new(8, 8, 1).unwrap(), 4),
    );
    let out = run(&[
        "denoise",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.join("out.pgm").to_str().unwrap(),
        "--tau",
        "5",
        "--theta1",
        "5",
        "--theta2",
        "5",
        "--gamma1",
        "5",
        "--gamma2",
        "5",
        "--sigma",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("alpha_bar"),
        "violated inequality not printed: {stderr}"
    );
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_flag_exits_1() {
    let out = run(&["denoise", "--mystery", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn csv_rows_match_iterations() {
    let dir = temp_dir("csvrows");
    let input = dir.join("img.pgm");
    write_pgm_ascii(
        &input,
        &synthesize_test_image(TestImageKind::Blocks, GridShape::new(8, 8, 1).unwrap(), 4),
    );
    let csv = dir.join("m.csv");
    let out = run(&[
        "denoise",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.join("out.pgm").to_str().unwrap(),
        "--metrics",
        csv.to_str().unwrap(),
        "--iters",
        "57",
        "--tol",
        "0",
    ]);
    assert!(out.status.success());
    let iterations: usize = stdout_field(&out, "iterations").unwrap().parse().unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,time_s,objective,fixed_point_residual,isnr");
    assert_eq!(lines.len(), iterations + 1, "rows = iterations + header");
    assert_eq!(iterations, 57);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn validate_subcommand_passes() {
    let out = run(&["validate"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all") && stdout.contains("checks passed"));
    // the report includes a per-check max error column
    assert!(stdout.contains("max_error"));
}

#[test]
fn bench_compares_methods_deterministically() {
    let dir = temp_dir("bench");
    let input = dir.join("img.pgm");
    write_pgm_ascii(
        &input,
        &synthesize_test_image(
            TestImageKind::PiecewiseAffine,
            GridShape::new(16, 16, 1).unwrap(),
            13,
        ),
    );
    let run_bench = |csv_stem: &Path| -> (f64, usize, usize, Vec<u8>, Vec<u8>) {
        let out = run(&[
            "bench",
            "--input",
            input.to_str().unwrap(),
            "--metrics",
            csv_stem.to_str().unwrap(),
            "--noise-sigma",
            "0.08",
            "--seed",
            "3",
            "--iters",
            "12000",
            "--tol",
            "1e-4",
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let ratio: f64 = stdout_field(&out, "op_ratio").unwrap().parse().unwrap();
        let fb_iters: usize = stdout_field(&out, "fb_iters").unwrap().parse().unwrap();
        let fbf_iters: usize = stdout_field(&out, "fbf_iters").unwrap().parse().unwrap();
        let fb_csv = fs::read(csv_stem.with_file_name(format!(
            "{}.fb.csv",
            csv_stem.file_name().unwrap().to_string_lossy()
        )))
        .unwrap();
        let fbf_csv = fs::read(csv_stem.with_file_name(format!(
            "{}.fbf.csv",
            csv_stem.file_name().unwrap().to_string_lossy()
        )))
        .unwrap();
        (ratio, fb_iters, fbf_iters, fb_csv, fbf_csv)
    };
    let first = run_bench(&dir.join("m1"));
    let second = run_bench(&dir.join("m2"));

    assert!(first.0 > 1.0, "op ratio {} not above 1", first.0);
    // both traces converged inside the budget
    assert!(first.1 < 12000, "fb did not converge ({} iters)", first.1);
    assert!(first.2 < 12000, "fbf did not converge ({} iters)", first.2);
    // identical seeds produce identical CSVs
    assert_eq!(first.3, second.3);
    assert_eq!(first.4, second.4);
    fs::remove_dir_all(&dir).ok();
}
