use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sicpln(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicpln"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = sicpln(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn read_matrix(path: PathBuf) -> Vec<Vec<f64>> {
    let text = String::from_utf8(read(path)).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

const SIM_FILES: [&str; 5] = ["Y.csv", "X.csv", "O.csv", "B_true.csv", "Sigma_true.csv"];
const FIT_FILES: [&str; 6] = ["B.csv", "Sigma.csv", "M.csv", "S.csv", "path.csv", "diagnostics.json"];

#[test]
fn simulate_same_seed_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n", "30", "--p", "3", "--seed", "7", "--out", "a"]);
    ok(d, &["simulate", "--n", "30", "--p", "3", "--seed", "7", "--out", "b"]);
    ok(d, &["simulate", "--n", "30", "--p", "3", "--seed", "8", "--out", "c"]);
    for f in SIM_FILES {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    assert_ne!(read(d.join("a/Y.csv")), read(d.join("c/Y.csv")));
}

#[test]
fn bench_rejects_zero_replications() {
    let tmp = TempDir::new().unwrap();
    let out = sicpln(tmp.path(), &["bench", "--replications", "0", "--out", "b"]);
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("b").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&sicpln(d, &["fit", "--bogus"])), 1);
    assert_eq!(code(&sicpln(d, &["frobnicate"])), 1);
    assert_eq!(code(&sicpln(d, &["simulate", "--n", "ten", "--out", "s"])), 1);
    assert_eq!(code(&sicpln(d, &["simulate", "--kind", "banded", "--out", "s"])), 1);
    // fit needs somewhere to write
    ok(d, &["simulate", "--n", "20", "--p", "2", "--out", "s"]);
    assert_eq!(code(&sicpln(d, &["fit", "--y", "s/Y.csv", "--header"])), 1);
    // an offset file and an offset column conflict
    let out = sicpln(
        d,
        &["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--o", "s/O.csv", "--offset-log-col", "1", "--header", "--out", "f"],
    );
    assert_eq!(code(&out), 1);
    assert_eq!(code(&sicpln(d, &["--help"])), 0);
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.cfg"), "n = 20\ncolour = blue\n").unwrap();
    assert_eq!(code(&sicpln(d, &["--config", "c.cfg", "simulate", "--out", "s"])), 1);
    fs::write(d.join("c.cfg"), "n = 20\nthis line has no equals sign\n").unwrap();
    assert_eq!(code(&sicpln(d, &["--config", "c.cfg", "simulate", "--out", "s"])), 1);
}

#[test]
fn bad_data_exits_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("text.csv"), "1,2\n3,x\n").unwrap();
    fs::write(d.join("ragged.csv"), "1,2\n3\n").unwrap();
    fs::write(d.join("negative.csv"), "1,2\n-3,4\n").unwrap();
    fs::write(d.join("fractional.csv"), "1,2\n3.5,4\n").unwrap();
    for f in ["text.csv", "ragged.csv", "negative.csv", "fractional.csv", "missing.csv"] {
        let out = sicpln(d, &["fit", "--y", f, "--out", "f"]);
        assert_eq!(code(&out), 2, "{f}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = sicpln(d, &["fit", "--y", "text.csv", "--out", "f"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1, column 1"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.cfg"), "# scenario\nn = 25\np = 2\nseed = 3\n").unwrap();
    ok(d, &["--config", "c.cfg", "simulate", "--p", "3", "--out", "s"]);
    let y = read_matrix(d.join("s/Y.csv"));
    assert_eq!(y.len(), 25);
    assert_eq!(y[0].len(), 3);
    let manifest = String::from_utf8(read(d.join("s/manifest.cfg"))).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("p = 3"));
}

#[test]
fn fit_zeroes_truly_absent_covariates_and_replays_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n", "1000", "--p", "4", "--seed", "11", "--out", "s"]);
    ok(d, &["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--header", "--out", "f"]);
    for f in FIT_FILES {
        assert!(d.join("f").join(f).exists(), "{f}");
    }

    let truth = read_matrix(d.join("s/B_true.csv"));
    let fitted = read_matrix(d.join("f/B.csv"));
    assert_eq!(truth.len(), fitted.len());
    let mut zeros = 0;
    let mut hits = 0;
    for (t, f) in truth.iter().zip(&fitted).skip(1) {
        for (tv, fv) in t.iter().zip(f) {
            if *tv == 0.0 {
                zeros += 1;
                hits += usize::from(*fv == 0.0);
            }
        }
    }
    assert!(zeros > 0);
    assert!(hits as f64 >= 0.8 * zeros as f64, "{hits}/{zeros} exact zeros");
    // the file spells exact zeros as "0"
    let text = String::from_utf8(read(d.join("f/B.csv"))).unwrap();
    assert!(text.lines().skip(1).any(|l| l.split(',').any(|c| c == "0")));

    let path = String::from_utf8(read(d.join("f/path.csv"))).unwrap();
    assert_eq!(path.lines().next().unwrap(), "step,eps,coef_row,coef_col,value");
    assert_eq!(path.lines().count(), 1 + 50 * 7 * 4);

    ok(d, &["--config", "f/manifest.cfg", "fit", "--out", "g"]);
    for f in FIT_FILES {
        assert_eq!(read(d.join("f").join(f)), read(d.join("g").join(f)), "{f}");
    }
}

#[test]
fn predict_and_path_follow_a_fit() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n", "60", "--p", "3", "--seed", "5", "--out", "s"]);
    ok(d, &["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--header", "--eps-steps", "8", "--out", "f"]);

    ok(d, &["predict", "--fit", "f", "--x", "s/X.csv", "--header", "--out", "marginal.csv"]);
    let marginal = read_matrix(d.join("marginal.csv"));
    assert_eq!((marginal.len(), marginal[0].len()), (60, 3));
    assert!(marginal.iter().flatten().all(|v| *v > 0.0 && v.is_finite()));

    ok(d, &["predict", "--fit", "f", "--y", "s/Y.csv", "--x", "s/X.csv", "--header", "--in-sample", "--out", "vi.csv"]);
    let y = read_matrix(d.join("s/Y.csv"));
    let vi = read_matrix(d.join("vi.csv"));
    let mse = |p: &[Vec<f64>]| -> f64 {
        y.iter().flatten().zip(p.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 180.0
    };
    assert!(mse(&vi) < mse(&marginal));
    assert_eq!(code(&sicpln(d, &["predict", "--fit", "f", "--in-sample", "--out", "x.csv"])), 1);

    ok(d, &["path", "--fit", "f", "--species", "2", "--out", "p.csv"]);
    let text = String::from_utf8(read(d.join("p.csv"))).unwrap();
    assert!(text.starts_with("step,eps,b0,"));
    assert_eq!(text.lines().count(), 1 + 8);
    assert_eq!(code(&sicpln(d, &["path", "--fit", "f", "--species", "3", "--out", "q.csv"])), 1);

    ok(d, &["--config", "marginal.csv.manifest.cfg", "predict", "--out", "again.csv"]);
    assert_eq!(read(d.join("marginal.csv")), read(d.join("again.csv")));
}

#[test]
fn offset_column_is_logged_and_removed() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut y = String::from("a,b\n");
    let mut x = String::from("effort,z\n");
    for i in 0..40 {
        let effort = 1.0 + (i % 5) as f64;
        y.push_str(&format!("{},{}\n", (2.0 * effort) as u32 + i % 3, i % 4));
        x.push_str(&format!("{effort},{}\n", (i % 7) as f64 / 7.0));
    }
    fs::write(d.join("y.csv"), y).unwrap();
    fs::write(d.join("x.csv"), x).unwrap();
    ok(d, &["fit", "--y", "y.csv", "--x", "x.csv", "--header", "--offset-log-col", "0", "--eps-steps", "5", "--out", "f"]);
    let b = read_matrix(d.join("f/B.csv"));
    assert_eq!(b.len(), 2, "intercept and z remain");
    let diag = String::from_utf8(read(d.join("f/diagnostics.json"))).unwrap();
    assert!(diag.contains("\"z\"") && !diag.contains("\"effort\""));
    assert_eq!(
        code(&sicpln(d, &["fit", "--y", "y.csv", "--x", "x.csv", "--header", "--offset-log-col", "5", "--out", "g"])),
        1
    );
}

#[test]
fn bench_writes_replayable_summaries() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let grid = ["bench", "--n", "40", "--p", "2", "--kinds", "diagonal", "--replications", "3", "--eps-steps", "6"];
    ok(d, &[&grid[..], &["--out", "a"]].concat());
    ok(d, &[&grid[..], &["--threads", "1", "--out", "b"]].concat());
    for f in ["records.csv", "summary.csv"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    let summary = String::from_utf8(read(d.join("a/summary.csv"))).unwrap();
    let rows: Vec<_> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("n40_p2_diagonal,PLN,3,"));
    assert!(rows[1].starts_with("n40_p2_diagonal,SICPLN,3,"));

    ok(d, &["--config", "a/manifest.cfg", "bench", "--out", "c"]);
    assert_eq!(read(d.join("a/summary.csv")), read(d.join("c/summary.csv")));

    // an external fit that knows the truth exactly
    fs::write(
        d.join("base.csv"),
        "scenario,replication,method,coef_row,coef_col,value\n\
         n40_p2_diagonal,0,oracle,1,1,0.5\n\
         n40_p2_diagonal,0,oracle,2,0,1\n",
    )
    .unwrap();
    ok(d, &[&grid[..], &["--import-baseline", "base.csv", "--holdout", "--out", "h"]].concat());
    let records = String::from_utf8(read(d.join("h/records.csv"))).unwrap();
    assert!(records.lines().any(|l| l.starts_with("n40_p2_diagonal,oracle,0,")));

    fs::write(
        d.join("stray.csv"),
        "scenario,replication,method,coef_row,coef_col,value\nn99_p2_full,0,oracle,0,0,1\n",
    )
    .unwrap();
    assert_eq!(code(&sicpln(d, &[&grid[..], &["--import-baseline", "stray.csv", "--out", "z"]].concat())), 1);
}
