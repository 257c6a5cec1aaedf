use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "k,alpha_k,b_k,f_train,f_test,gnorm_train,gnorm_test,elapsed_s";

fn radopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radopt"))
        .args(args)
        .output()
        .expect("spawn radopt")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_writes_identical_metric_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        stdout(&radopt(&[
            "run",
            "--problem",
            "pca",
            "--method",
            "radam",
            "--data",
            "synth:n=8,p=2,N=64,noise=0.1,seed=3",
            "--iters",
            "40",
            "--seeds",
            "0,1,2",
            "--batch",
            "8",
            "--batch-schedule",
            "exp:2:10",
            "--out",
            dir.path().to_str().unwrap(),
        ]));
    }
    let fa = csv_files(a.path());
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, csv_files(b.path()));
    let text = String::from_utf8(fa[0].1.clone()).unwrap();
    assert_eq!(text.lines().next(), Some(HEADER));
    assert_eq!(text.lines().count(), 1 + 41);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# lrmc pilot\nproblem=lrmc\ndata=synth:n=10,N=12,p=2,obs=0.6,seed=1\niters=30\nseeds=0\nalpha=1e-2\nbatch=4\n",
    )
    .unwrap();
    let out = dir.path().join("runs");
    stdout(&radopt(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--iters",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
    let files = csv_files(&out);
    assert_eq!(files.len(), 1);
    assert!(files[0].0.starts_with("lrmc_"), "{}", files[0].0);
    let text = String::from_utf8(files[0].1.clone()).unwrap();
    // K = 5 from the flag, not 30 from the file.
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.lines().nth(1).unwrap().starts_with("1,1e-2,4,"));
}

#[test]
fn grid_reports_best_step_size() {
    let s = stdout(&radopt(&[
        "grid",
        "--data",
        "synth:n=8,p=2,N=64,noise=0,seed=5",
        "--method",
        "rsgd",
        "--iters",
        "100",
        "--seeds",
        "0,1",
        "--alphas",
        "1e-1,1e-6",
    ]));
    assert!(s.starts_with("alpha,mean_final_f_train\n"));
    assert!(s.contains("best alpha 1e-1"), "{s}");
}

#[test]
fn table_marks_misses_with_dash() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout(&radopt(&[
        "table",
        "--data",
        "synth:n=8,p=2,N=256,noise=0.1,seed=5",
        "--methods",
        "rsgd,ramsgrad",
        "--batches",
        "16,64",
        "--alpha",
        "1e-2",
        "--iters",
        "60",
        "--seeds",
        "0,1",
        "--threshold",
        "1e-9",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "method,alpha,b,seed0,seed1,mean");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1..].iter().all(|l| l.ends_with(",-,-,-")), "{s}");
    assert_eq!(fs::read_to_string(dir.path().join("table.csv")).unwrap(), s);
}

#[test]
fn reads_idx_and_delimited_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("images.idx");
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 6, 0, 0, 0, 2, 0, 0, 0, 2];
    bytes.extend((0..24u8).map(|v| v.wrapping_mul(37)));
    fs::write(&idx, bytes).unwrap();
    stdout(&radopt(&[
        "run",
        "--data",
        idx.to_str().unwrap(),
        "--rank",
        "2",
        "--iters",
        "3",
        "--seeds",
        "0",
        "--batch",
        "2",
    ]));

    let ratings = dir.path().join("ratings.txt");
    let mut text = String::from("user;item;rating\n");
    for u in 0..6 {
        for i in 0..5 {
            if (u + i) % 3 != 0 {
                text.push_str(&format!("{u};{i};{}\n", (u * i) % 5 + 1));
            }
        }
    }
    fs::write(&ratings, text).unwrap();
    let s = stdout(&radopt(&[
        "run",
        "--problem",
        "lrmc",
        "--data",
        ratings.to_str().unwrap(),
        "--delimiter",
        ";",
        "--rank",
        "2",
        "--split",
        "1",
        "--iters",
        "3",
        "--seeds",
        "0",
        "--batch",
        "2",
    ]));
    assert!(s.contains("0,completed,"), "{s}");
}

#[test]
fn verify_writes_text_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout(&radopt(&["verify", "--out", dir.path().to_str().unwrap()]));
    assert!(s.lines().all(|l| l.starts_with("PASS ")), "{s}");
    assert_eq!(fs::read_to_string(dir.path().join("verify.txt")).unwrap(), s);
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("check,value,limit,pass\n"));
}

#[test]
fn invalid_input_fails_cleanly() {
    let bad_method = radopt(&["run", "--method", "sgd"]);
    assert!(!bad_method.status.success());
    let bad_schedule = radopt(&["run", "--batch-schedule", "lin:2", "--iters", "1"]);
    assert!(!bad_schedule.status.success());
    assert!(String::from_utf8_lossy(&bad_schedule.stderr).starts_with("error:"));
    let missing = radopt(&["run", "--data", "/nonexistent/file.csv", "--iters", "1"]);
    assert!(!missing.status.success());
}
