use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rpareto"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn grid_sites(dir: &Path, nx: usize, ny: usize, spacing: f64) -> PathBuf {
    let mut text = String::from("id,x,y\n");
    for j in 0..ny {
        for i in 0..nx {
            text.push_str(&format!(
                "s{i}_{j},{},{}\n",
                i as f64 * spacing,
                j as f64 * spacing
            ));
        }
    }
    let path = dir.join(format!("sites_{nx}x{ny}.csv"));
    fs::write(&path, text).unwrap();
    path
}

fn simulate(dir: &Path, sites: &Path, n: usize, seed: u64, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&[
        "simulate",
        "--model",
        "pareto",
        "--kappa",
        "1",
        "--tau",
        "25",
        "--sites",
        p(sites),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_shape_and_determinism() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 10, 10, 10.0);
    let a = simulate(dir.path(), &sites, 100, 7, "a.csv");
    let b = simulate(dir.path(), &sites, 100, 7, "b.csv");
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split(',').count() == 100));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let meta = fs::read_to_string(dir.path().join("a.csv.meta.jsonl")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(meta.lines().next().unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["params"]["kappa"], 1.0);
}

#[test]
fn simulate_rejects_large_shape() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 2, 2, 1.0);
    let o = run(&[
        "simulate",
        "--model",
        "maxstable",
        "--kappa",
        "3",
        "--tau",
        "1",
        "--sites",
        p(&sites),
        "--n",
        "5",
        "--out",
        p(&dir.path().join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa <= 2"));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 4, 4, 10.0);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let o = run(&[
            "--threads",
            threads,
            "simulate",
            "--model",
            "maxstable",
            "--kappa",
            "1",
            "--tau",
            "10",
            "--sites",
            p(&sites),
            "--n",
            "50",
            "--seed",
            "2",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success());
        outputs.push(fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn fit_recovers_simulated_shape() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 5, 5, 20.0);
    let data = simulate(dir.path(), &sites, 2000, 11, "data.csv");
    let report = dir.path().join("fit.json");
    let o = run(&[
        "fit",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--objective",
        "spectral",
        "--risk",
        "sum",
        "--quantile",
        "0.95",
        "--starts",
        "2",
        "--seed",
        "1",
        "--margins",
        "pareto",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&report);
    for key in [
        "objective",
        "risk",
        "quantile",
        "n_events",
        "theta_hat",
        "se",
        "godambe",
        "converged",
        "runtime_seconds",
        "seed",
        "qmc",
    ] {
        assert!(r.get(key).is_some(), "missing `{key}`");
    }
    assert_eq!(r["n_events"], 100);
    assert_eq!(r["converged"], true);
    let kappa = r["theta_hat"]["kappa"].as_f64().unwrap();
    let tau = r["theta_hat"]["tau"].as_f64().unwrap();
    assert!((kappa - 1.0).abs() < 0.15, "kappa {kappa}");
    assert!((tau - 25.0).abs() < 5.0, "tau {tau}");
    assert!(r["se"]["kappa"].as_f64().unwrap() > 0.0);

    let table = dir.path().join("diag.csv");
    let o = run(&[
        "diagnose",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--fit",
        p(&report),
        "--risk",
        "sum",
        "--quantile",
        "0.95",
        "--bins",
        "8",
        "--out",
        p(&table),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("distance,pi_model,pi_empirical,n_pairs_events")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            l.split(',')
                .map(|f| f.parse().unwrap_or(f64::NAN))
                .collect()
        })
        .filter(|r: &Vec<f64>| r[2].is_finite())
        .collect();
    assert!(rows.len() >= 4);
    assert!(rows.iter().all(|r| r[0] > 0.0));
    let n = rows.len() as f64;
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n;
    let (mm, me) = (mean(1), mean(2));
    let cov: f64 = rows.iter().map(|r| (r[1] - mm) * (r[2] - me)).sum();
    assert!(cov > 0.0);
}

#[test]
fn censored_fit_on_many_sites_warns() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 23, 22, 10.0);
    let data = simulate(dir.path(), &sites, 20, 3, "data.csv");
    let report = dir.path().join("fit.json");
    let o = run(&[
        "fit",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--objective",
        "censored",
        "--risk",
        "max",
        "--quantile",
        "0.9",
        "--starts",
        "1",
        "--qmc-p",
        "31",
        "--qmc-shifts",
        "2",
        "--max-evals",
        "2",
        "--no-godambe",
        "--margins",
        "pareto",
        "--out",
        p(&report),
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("expect long run times"));
    assert_eq!(o.status.code(), Some(3));
    let r = json(&report);
    assert_eq!(r["converged"], false);
    assert_eq!(r["qmc"]["p"], 31);
}

#[test]
fn input_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 3, 3, 1.0);
    let data = simulate(dir.path(), &sites, 30, 1, "data.csv");
    let o = run(&[
        "fit",
        "--data",
        p(&data),
        "--sites",
        p(&dir.path().join("missing.csv")),
        "--objective",
        "spectral",
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "fit",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--objective",
        "spectral",
        "--risk",
        "max",
        "--quantile",
        "0.5",
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sum risk"));
}

#[test]
fn empty_exceedance_set_exits_three() {
    let dir = TempDir::new().unwrap();
    let sites = grid_sites(dir.path(), 3, 3, 1.0);
    let data = simulate(dir.path(), &sites, 10, 1, "data.csv");
    let report = dir.path().join("r.json");
    let o = run(&[
        "fit",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--objective",
        "spectral",
        "--quantile",
        "0.99",
        "--out",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&[
        "diagnose",
        "--data",
        p(&data),
        "--sites",
        p(&sites),
        "--fit",
        p(&report),
        "--quantile",
        "0.99",
        "--out",
        p(&dir.path().join("d.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mvnprob_identity_quadrant() {
    let dir = TempDir::new().unwrap();
    let sigma = dir.path().join("sigma.csv");
    let upper = dir.path().join("upper.csv");
    fs::write(&sigma, "1,0\n0,1\n").unwrap();
    fs::write(&upper, "0,0\n").unwrap();
    let args = [
        "mvnprob",
        "--sigma",
        p(&sigma),
        "--upper",
        p(&upper),
        "--p",
        "499",
        "--shifts",
        "10",
        "--seed",
        "4",
    ];
    let o = run(&args);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let value: f64 = text
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 0.25).abs() < 1e-3);
    assert_eq!(run(&args).stdout, o.stdout);

    fs::write(&sigma, "1,0.5\n0.2,1\n").unwrap();
    assert_eq!(run(&args).status.code(), Some(2));
}
