use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gmpce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmpce"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = gmpce(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary_value(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no '{key}' in summary:\n{text}"));
    line.split('=')
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn moments_verify_against_quadrature() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    ok(&[
        "moments",
        "--model",
        "tiny2",
        "--verify",
        "-o",
        out.to_str().unwrap(),
    ]);
    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    let first = moments.lines().nth(1).unwrap();
    assert!(first.ends_with(",1"), "{first}");
    let worst = csv_rows(&out.join("verify.csv"))
        .iter()
        .map(|r| r.last().unwrap().parse::<f64>().unwrap())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-8, "{worst}");
    for file in ["config.json", "summary.txt", "mixture.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
}

#[test]
fn reruns_and_config_replays_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = [
        "mc",
        "--model",
        "tiny2",
        "--samples",
        "10000",
        "--seed",
        "3",
    ];
    ok(&[&args[..], &["-o", a.to_str().unwrap()]].concat());
    let first = fs::read(a.join("mc.csv")).unwrap();
    ok(&[&args[..], &["-o", a.to_str().unwrap()]].concat());
    assert_eq!(first, fs::read(a.join("mc.csv")).unwrap());
    ok(&[
        "mc",
        "--config",
        a.join("config.json").to_str().unwrap(),
        "-o",
        b.to_str().unwrap(),
    ]);
    for file in ["mc.csv", "histogram.csv", "summary.txt", "mixture.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn basis_factor_is_lower_triangular() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    ok(&["basis", "--model", "tiny3", "-o", out.to_str().unwrap()]);
    let rows = csv_rows(&out.join("cholesky.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        let i: usize = r[0].parse().unwrap();
        let j: usize = r[1].parse().unwrap();
        assert!(j <= i, "entry ({i}, {j}) above the diagonal");
    }
    assert_eq!(csv_rows(&out.join("index.csv")).len(), 20);
}

#[test]
fn planted_fit_then_stats_and_density() {
    let tmp = tempfile::tempdir().unwrap();
    let fit = tmp.path().join("fit");
    ok(&[
        "fit",
        "--model",
        "poly-planted-6",
        "--held-out",
        "2000",
        "--compare-random",
        "-o",
        fit.to_str().unwrap(),
    ]);
    let err = summary_value(&fit, "testing error");
    assert!(err < 1e-8, "testing error {err}");
    assert!(fit.join("random.csv").exists());
    assert!(fit.join("convergence.csv").exists());

    let coeffs = fit.join("coefficients.csv");
    let c0: f64 = csv_rows(&coeffs)[0].last().unwrap().parse().unwrap();
    let st = tmp.path().join("stats");
    ok(&[
        "stats",
        "--coefficients",
        coeffs.to_str().unwrap(),
        "-o",
        st.to_str().unwrap(),
    ]);
    let mean: f64 = csv_rows(&st.join("stats.csv"))[0][0].parse().unwrap();
    assert_eq!(mean, c0);

    let dens = tmp.path().join("density");
    ok(&[
        "density",
        "--model",
        "poly-planted-6",
        "--coefficients",
        coeffs.to_str().unwrap(),
        "--samples",
        "20000",
        "-o",
        dens.to_str().unwrap(),
    ]);
    assert!(csv_rows(&dens.join("density.csv")).len() > 100);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let unknown = gmpce(&["basis", "--model", "nope", "-o", out.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(1));
    let missing = tmp.path().join("missing.json");
    let io = gmpce(&[
        "basis",
        "--mixture",
        missing.to_str().unwrap(),
        "-p",
        "2",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(io.status.code(), Some(3));
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "wrong header\n").unwrap();
    let parse = gmpce(&[
        "stats",
        "--coefficients",
        bad.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(parse.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("line 1"));
}
