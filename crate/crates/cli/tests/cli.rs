use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const COLUMNS: &str =
    "k,batch_size,cum_evals,eff_passes,f_sampled,f_true,gap,grad_norm,step,ls_evals,pair_accepted";

fn incgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incgrad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("experiment.ini");
    fs::write(&path, body).unwrap();
    path
}

const QUADRATIC: &str = "
[problem]
model = quadratic
source = synthetic
m = 32
n = 10
data_seed = 5

[run]
iterations = 100
seeds = 7

[method.lbfgs]
kind = deterministic-qn
";

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(header: &str, name: &str) -> usize {
    header.split(',').position(|c| c == name).unwrap()
}

#[test]
fn run_on_quadratic_converges_and_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUADRATIC);
    let out = dir.path().join("out");
    let o = incgrad(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = fs::read_to_string(out.join("lbfgs_seed7.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, COLUMNS);
    let gap_col = column(header, "gap");
    let final_gap: f64 = rows(&csv)
        .iter()
        .rev()
        .find_map(|r| r[gap_col].parse().ok())
        .unwrap();
    assert!(final_gap < 1e-8, "final gap {final_gap}");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("lbfgs,deterministic-qn,7,"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}\n[method.hybrid]\nkind = hybrid-qn\n[method.sgd]\nkind = stochastic-gd\nalpha = 0.1\n");
    let cfg = write_config(dir.path(), &body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = incgrad(&[
            "--threads",
            threads,
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    for name in [
        "lbfgs_seed7.csv",
        "hybrid_seed7.csv",
        "sgd_seed7_step1e-1.csv",
        "summary.csv",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eff_passes_is_cum_evals_over_m() {
    let dir = tempfile::tempdir().unwrap();
    let body = QUADRATIC.replace("iterations = 100", "passes = 3")
        + "\n[method.hybrid]\nkind = hybrid-qn\n";
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = incgrad(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for name in ["lbfgs_seed7.csv", "hybrid_seed7.csv"] {
        let csv = fs::read_to_string(out.join(name)).unwrap();
        for r in rows(&csv) {
            let evals: u64 = r[2].parse().unwrap();
            let passes: f64 = r[3].parse().unwrap();
            assert_eq!(passes, evals as f64 / 32.0);
        }
    }
}

#[test]
fn missing_dataset_exits_with_config_error_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let body = QUADRATIC
        .replace("model = quadratic", "model = binary-logistic")
        .replace(
            "source = synthetic",
            "source = file\npath = no_such_file.svm",
        );
    let cfg = write_config(dir.path(), &body);
    let o = incgrad(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        text(&o.stderr).contains("problem.path"),
        "{}",
        text(&o.stderr)
    );
}

#[test]
fn bad_value_names_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{QUADRATIC}\n[method.s]\nkind = stochastic-gd\nalpha = fast\n"),
    );
    let o = incgrad(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        text(&o.stderr).contains("method.s.alpha"),
        "{}",
        text(&o.stderr)
    );
}

#[test]
fn run_reads_libsvm_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tiny.svm"),
        "+1 1:1.0 2:0.5\n-1 1:-1.0 3:2.0\n+1 2:1.5 3:-0.5\n-1 1:-0.5 2:-1.0\n",
    )
    .unwrap();
    let body = "[problem]\nmodel = binary-logistic\nsource = file\npath = tiny.svm\nlambda = 0.1\n[run]\niterations = 50\n[method.lbfgs]\nkind = deterministic-qn\n";
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let o = incgrad(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(out.join("lbfgs_seed1.csv").is_file());

    let o = incgrad(&["stats", dir.path().join("tiny.svm").to_str().unwrap()]);
    assert!(o.status.success());
    let s = text(&o.stdout);
    assert!(
        s.contains("examples: 4") && s.contains("features: 3") && s.contains("nonzeros: 8"),
        "{s}"
    );
}

#[test]
fn verify_rates_suites() {
    for suite in ["strong", "sampling", "lemma"] {
        let o = incgrad(&["verify-rates", suite]);
        assert!(o.status.success(), "{suite}: {}", text(&o.stdout));
        let s = text(&o.stdout);
        assert!(s.lines().all(|l| l.contains(" PASS ")), "{s}");
    }
    let o = incgrad(&["verify-rates", "strong"]);
    let line = text(&o.stdout);
    // max ratio ≤ 1 − ρ with ρ = μ/(2L) = 0.125
    let ratio: f64 = line
        .split("max ratio ")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(ratio <= 0.875);
    let o = incgrad(&["verify-rates", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("invalid value"));
}

const SWEEP: &str = "
[problem]
model = binary-logistic
source = synthetic
m = 500
n = 10
lambda = 0.01
data_seed = 2

[run]
passes = 5
seeds = 1

[method.sgd]
kind = stochastic-gd
alpha = 1
";

#[test]
fn sweep_writes_grid_and_stable_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let mut rankings = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = incgrad(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        let traces = fs::read_dir(&out)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_str()
                    .unwrap()
                    .starts_with("sgd_seed1_step")
            })
            .count();
        assert_eq!(traces, 7);
        rankings.push(fs::read_to_string(out.join("ranking.csv")).unwrap());
    }
    assert_eq!(rankings[0], rankings[1]);
    let ranking = &rankings[0];
    assert_eq!(ranking.lines().count(), 8);

    // some grid step beats the unit step after 5 passes
    let score = |step: &str| -> f64 {
        ranking
            .lines()
            .find(|l| l.split(',').nth(2) == Some(step))
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .unwrap()
    };
    let best: f64 = ranking
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert!(best < score("1e0"), "{ranking}");
}

#[test]
fn sweep_without_stochastic_method_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUADRATIC);
    let o = incgrad(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_quadratic_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quadratic.ini");
    let out = dir.path().join("out");
    let o = incgrad(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("summary.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
}
