//! Exit codes and reproducibility of the `ippgd` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ippgd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ippgd"))
        .args(args)
        .current_dir(dir)
        .env_remove("IPPGD_THREADS")
        .output()
        .expect("spawn ippgd")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUADRATIC: &str = r#"
[problem]
kind = "quadratic"
dim = 16
constraints = 4
kappa = 5.0
seed = 2

[solver]
method = "PGD"
grad_tol = 1e-9
"#;

const SMALL_BENCH: &str = r#"
[bench]
grids = [8, 16]
max_iters = 400

[[bench.cases]]
nu = [1.0, 1.0, 5.0]
tau = 0.5
"#;

#[test]
fn solve_exit_codes_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ok.toml"), QUADRATIC).unwrap();
    let o = ippgd(&["solve", "ok.toml", "--trace", "t.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for key in ["iterations=", "final_grad_norm=", "constraint_res="] {
        assert!(out.contains(key), "summary lacks {key}: {out}");
    }
    let trace = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(trace.starts_with("k,f,grad_norm_M,constraint_res,E1,E2,E,delta_est,n_mg,theta_est\n"));

    fs::write(dir.path().join("short.toml"), format!("{QUADRATIC}max_iters = 2\n")).unwrap();
    let o = ippgd(&["solve", "short.toml", "--trace", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tau.toml"), format!("{QUADRATIC}tau = 0.0\n")).unwrap();
    let o = ippgd(&["solve", "tau.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("tau must be in (0,1]") && e.contains("solver.tau"), "{e}");

    fs::write(dir.path().join("unk.toml"), QUADRATIC.replace("seed = 2", "seed = 2\nsede = 3")).unwrap();
    let o = ippgd(&["solve", "unk.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let o = ippgd(&["solve", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.toml"), QUADRATIC.replace("PGD", "IPPGDv-tau")).unwrap();
    ippgd(&["solve", "q.toml", "--trace", "a.csv"], dir.path());
    ippgd(&["solve", "q.toml", "--trace", "b.csv"], dir.path());
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn bench_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.toml"), SMALL_BENCH).unwrap();
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_ippgd"))
            .args(["bench", "b.toml", "--no-time", "--out", out])
            .current_dir(dir.path())
            .env("IPPGD_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(dir.path().join(out)).unwrap()
    };
    let one = run("1", "one.csv");
    let three = run("3", "three.csv");
    assert_eq!(one, three);
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert!(!text.contains("FAILED"));
}

#[test]
fn bench_failed_rows_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.toml"), SMALL_BENCH.replace("[8, 16]", "[4]")).unwrap();
    let o = ippgd(&["bench", "b.toml", "--no-time", "--out", "r.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(text.matches("FAILED").count(), 4);
}

#[test]
fn bench_rejects_bad_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.toml"), SMALL_BENCH).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ippgd"))
        .args(["bench", "b.toml"])
        .current_dir(dir.path())
        .env("IPPGD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("IPPGD_THREADS"));
}

#[test]
fn check_scopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ippgd(&["check", "--scope", "projection"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
    let o = ippgd(&["check", "--scope", "bogus"], dir.path());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn flow_writes_trajectory_and_reports_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[problem]
kind = "quadratic"
dim = 10
constraints = 3
kappa = 3.0
seed = 4

[flow]
dt = 0.01
t_end = 10.0
start = "ones"
"#;
    fs::write(dir.path().join("f.toml"), cfg).unwrap();
    let o = ippgd(&["flow", "f.toml", "--out", "f.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("fitted_rate=") && out.contains("omega="), "{out}");
    let csv = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,E1,E2,E,constraint_res"));
    let e: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(e.len(), 1001);
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn flow_blow_up_exits_one_with_last_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[problem]
kind = "quadratic"
dim = 10
constraints = 3
kappa = 3.0
seed = 4

[flow]
integrator = "euler"
dt = 1.0
alpha = 50.0
t_end = 200.0
start = "ones"
"#;
    fs::write(dir.path().join("f.toml"), cfg).unwrap();
    let o = ippgd(&["flow", "f.toml", "--out", "f.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("last finite state"), "{e}");
    let dumped: Vec<f64> = e
        .lines()
        .skip_while(|l| !l.starts_with("last finite state"))
        .skip(1)
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(dumped.len(), 10);
    assert!(dumped.iter().all(|v| v.is_finite()));
    assert!(fs::read_to_string(dir.path().join("f.csv")).unwrap().lines().count() > 1);
}
