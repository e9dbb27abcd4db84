use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phpoisson::io::{self, Model};
use phpoisson::linalg::Matrix;
use phpoisson::phpoisson as ph;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phpoisson"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tridiagonal_json() -> String {
    let d = [5.0f64, 9.0, 13.0, 17.0, 21.0];
    let mut b = Matrix::from_diag(&d);
    for i in 0..4 {
        b[(i, i + 1)] = 0.05;
        b[(i + 1, i)] = 0.05;
    }
    let w = [5.0, 2.5, 3.0, 2.25, 6.0];
    let raw: Vec<f64> = w.iter().zip(d).map(|(w, d)| w * (-d).exp()).collect();
    let rep = ph::normalize(&raw, &b).unwrap();
    io::model_to_json(&Model::PHPoisson(rep), false).unwrap()
}

/// `quantity,value` rows as pairs.
fn table(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

fn lookup(rows: &[(String, f64)], key: &str) -> f64 {
    rows.iter().find(|r| r.0 == key).unwrap().1
}

#[test]
fn moments_of_tridiagonal_model() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let out = stdout(&run(&["moments", "--model", s(&model)]));
    let rows = table(&out);
    assert!((lookup(&rows, "mean") - 13.84).abs() <= 0.01);
    assert!((lookup(&rows, "variance") - 47.31).abs() <= 0.02);
    assert!(out.ends_with("# tail_bound=0e0\n"));
}

#[test]
fn convert_gives_physical_rate() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let out = run(&["convert", "--model", s(&model)]);
    match io::parse_model(&stdout(&out)).unwrap() {
        Model::Physical(p) => assert_eq!(p.nu(), 21.05),
        other => panic!("got {}", other.kind()),
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("# tail_bound="));
}

#[test]
fn pmf_of_zero_rate_model() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", r#"{"kind":"ph-poisson","beta":[1.0],"B":[[0.0]]}"#);
    let out = stdout(&run(&["pmf", "--model", s(&model)]));
    assert_eq!(out, "n,p\n0,1.0\n# tail_bound=0e0\n");
}

#[test]
fn convert_round_trip_keeps_pmf() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let phys = write(&dir, "p.json", &stdout(&run(&["convert", "--model", s(&model)])));
    let args = |m: &Path| -> Vec<String> {
        ["pmf", "--model", s(m), "--n-max", "50", "--digits", "12"]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };
    let a = stdout(&bin().args(args(&model)).output().unwrap());
    let b = stdout(&bin().args(args(&phys)).output().unwrap());
    let body = |t: &str| t.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&a), body(&b));
    assert_eq!(a.lines().count(), 53);
}

#[test]
fn output_file_and_pretty_table() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let target = dir.path().join("moments.txt");
    let out = run(&["moments", "--model", s(&model), "--pretty", "--out", s(&target)]);
    assert!(stdout(&out).is_empty());
    let text = fs::read_to_string(&target).unwrap();
    assert!(text.starts_with("mean"));
}

#[test]
fn compound_mass_and_mean() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let sev = write(&dir, "f.csv", "n,f\n1,0.5\n2,0.3\n3,0.2\n");
    let out = stdout(&run(&["compound", "--model", s(&model), "--severity", s(&sev)]));
    let g: Vec<f64> = table(&out).iter().map(|r| r.1).collect();
    let mass: f64 = g.iter().sum();
    let mean: f64 = g.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    let rep = match io::parse_model(&tridiagonal_json()).unwrap() {
        Model::PHPoisson(r) => r,
        other => panic!("got {}", other.kind()),
    };
    let freq_mean = ph::moments(&rep, 2).unwrap().mean;
    assert!((mean - freq_mean * 1.7).abs() < 1e-6, "{mean}");
}

#[test]
fn reduce_drops_unreachable_phase() {
    let dir = TempDir::new().unwrap();
    let model = write(
        &dir,
        "g.json",
        r#"{"kind":"genab0","beta":[0.5,0.0],"A":[[0.2,0.0],[0.1,0.3]],"B":[[0.4,0.0],[0.0,0.1]]}"#,
    );
    match io::parse_model(&stdout(&run(&["reduce", "--model", s(&model)]))).unwrap() {
        Model::GenAB0(r) => assert_eq!(r.order(), 1),
        other => panic!("got {}", other.kind()),
    }
}

#[test]
fn simulate_fit_and_kkt() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.json", &tridiagonal_json());
    let sample = stdout(&run(&[
        "simulate", "--model", s(&model), "--method", "exact", "--n-samples", "400", "--seed", "3",
    ]));
    let values: Vec<&str> = sample.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(values[0], "y");
    assert_eq!(values.len(), 401);
    let sample_path = write(&dir, "y.csv", &sample);

    let fitted = dir.path().join("fit.json");
    let trace = stdout(&run(&[
        "fit", "--sample", s(&sample_path), "--order", "2", "--max-iter", "40", "--model-out", s(&fitted),
    ]));
    assert!(trace.starts_with("iter,loglik,nu,alpha_1,alpha_2,p_1_1,p_1_2,p_2_1,p_2_2,mstep,extrapolated,stochastic\n"));
    assert!(trace.contains("# iterations="));
    let logliks: Vec<f64> = trace
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(logliks.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));

    let kkt = stdout(&run(&["kkt", "--model", s(&fitted), "--sample", s(&sample_path)]));
    assert!(kkt.starts_with("quantity,i,j,value\nr_nu,,,"));
    assert!(kkt.contains("# max_abs="));

    let same = stdout(&run(&[
        "simulate", "--model", s(&model), "--method", "exact", "--n-samples", "400", "--seed", "3",
    ]));
    assert_eq!(sample, same);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["pmf", "--model", s(&missing)]).status.code(), Some(1));

    let broken = write(&dir, "broken.json", "{ not json");
    let out = run(&["pmf", "--model", s(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind=parse reason=\""));
    assert_eq!(run(&["pmf"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));

    let unnormalized = write(&dir, "u.json", r#"{"kind":"ph-poisson","beta":[1.0],"B":[[2.0]]}"#);
    assert_eq!(run(&["pmf", "--model", s(&unnormalized)]).status.code(), Some(3));

    let divergent = write(&dir, "d.json", r#"{"kind":"genab0","beta":[1.0],"A":[[1.5]],"B":[[0.5]]}"#);
    let out = run(&["pmf", "--model", s(&divergent)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=divergence"));

    // survival probability is far too small for rejection sampling
    let model = write(&dir, "m.json", &tridiagonal_json());
    let out = run(&["simulate", "--model", s(&model), "--n-samples", "1000"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=acceptance"));
}
