use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_ADVECTION: &str = "\
[model]
kind = advection
n = 10
steps = 20
dt = 0.05

[background]
length = 2

[model_error]
length = 2

[observations]
space_stride = 2
time_stride = 5

[precond]
methods = none, revd, nystrom, ritzit
k = 4
l = 2
seeds = 0..4
loop = 1
spectrum = true
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wc4dvar"));
    c.env_remove("WC4DVAR_THREADS");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wc4dvar-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_consistent_csvs() {
    let dir = scratch("run");
    let cfg = write_config(&dir, SMALL_ADVECTION);
    let out = dir.join("out");
    let o = run(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("control dimension 210"), "{}", stdout(&o));
    assert!(stdout(&o).contains("20 observations"));

    let history = read(&out.join("cost_history.csv"));
    assert!(!history.contains('\r'));
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("spec,seed,iteration,quadratic_cost,relative_residual"));
    assert!(read(&out.join("ritz_values.csv")).starts_with("spec,seed,index,theta\n"));
    assert!(read(&out.join("extremes.csv")).starts_with("spec,seed,lambda_min,lambda_max\n"));

    // Summary means agree with means recomputed from the history, with runs
    // that stopped early carrying their last value forward.
    let mut series: std::collections::BTreeMap<(String, String), Vec<f64>> = Default::default();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        series
            .entry((f[0].to_string(), f[1].to_string()))
            .or_default()
            .push(f[3].parse().unwrap());
    }
    let summary = read(&out.join("summary.csv"));
    let mut checked = 0;
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let it: usize = f[1].parse().unwrap();
        let values: Vec<f64> = series
            .iter()
            .filter(|((spec, _), _)| spec == f[0])
            .map(|(_, s)| s[it.min(s.len() - 1)])
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let got: f64 = f[2].parse().unwrap();
        assert!((got - mean).abs() <= 1e-12 * mean.abs(), "{line}");
        assert_eq!(f[4].parse::<usize>().unwrap(), values.len());
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn reruns_and_dumped_config_are_byte_identical() {
    let dir = scratch("rerun");
    let cfg = write_config(&dir, SMALL_ADVECTION);
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    assert_eq!(code(&run(&["run", "--config", p(&cfg), "--out", p(&a)])), 0);
    let o = bin()
        .env("WC4DVAR_THREADS", "1")
        .args(["run", "--config", p(&cfg), "--out", p(&b)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let dumped = a.join("config.cfg");
    assert_eq!(code(&run(&["run", "--config", p(&dumped), "--out", p(&c)])), 0);
    for file in ["cost_history.csv", "ritz_values.csv", "summary.csv", "extremes.csv", "config.cfg"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
        assert_eq!(read(&a.join(file)), read(&c.join(file)), "{file}");
    }
}

#[test]
fn precond_none_matches_rank_zero() {
    let dir = scratch("rank0");
    let cfg = write_config(&dir, SMALL_ADVECTION);
    let (a, b) = (dir.join("none"), dir.join("k0"));
    assert_eq!(code(&run(&["run", "--config", p(&cfg), "--precond", "none", "--out", p(&a)])), 0);
    let o = run(&[
        "run", "--config", p(&cfg), "--set", "precond.methods=revd", "--set", "precond.k=0",
        "--set", "precond.seeds=0", "--out", p(&b),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let costs = |path: &Path| -> Vec<String> {
        read(&path.join("cost_history.csv"))
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(2).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(costs(&a), costs(&b));
}

#[test]
fn spectrum_has_unit_cluster_and_plots() {
    let dir = scratch("spectrum");
    let cfg = write_config(&dir, SMALL_ADVECTION);
    let out = dir.join("out");
    let o = run(&["spectrum", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out.join("spectrum.csv"));
    let none: Vec<f64> = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("none,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(none.len(), 210);
    assert!(none.windows(2).all(|w| w[0] >= w[1]));
    let unit = none.iter().filter(|v| (*v - 1.0).abs() < 1e-8).count();
    assert_eq!(unit, 210 - 20);
    for spec in ["revd_k4_l2", "nystrom_k4_l2", "ritzit_k4_l2"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{spec},"))).count(), 210);
    }

    let svg = dir.join("spectrum.svg");
    let o = run(&["plot", "--input", p(&out.join("spectrum.csv")), "--log", "--out", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read(&svg);
    assert_eq!(doc.matches("<circle").count(), 4 * 210);
    assert_eq!(doc.matches("<g fill").count(), 4);
}

#[test]
fn plot_cost_history_lines_are_deterministic() {
    let dir = scratch("plot");
    let history = dir.join("cost_history.csv");
    fs::write(
        &history,
        "spec,seed,iteration,quadratic_cost,relative_residual\n\
         none,,0,10,1\nnone,,1,5,0.5\n\
         revd_k5_l5,0,0,10,1\nrevd_k5_l5,0,1,4,0.4\nrevd_k5_l5,1,0,10,1\nrevd_k5_l5,1,1,2,0.2\n\
         nystrom_k5_l5,0,0,10,1\nnystrom_k5_l5,0,1,3,0.3\n\
         ritzit_k5_l5,0,0,10,1\nritzit_k5_l5,0,1,1,0.1\n",
    )
    .unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&run(&["plot", "--input", p(&history), "--out", p(out)])), 0);
    }
    let doc = read(&a.join("cost_history.svg"));
    assert_eq!(doc, read(&b.join("cost_history.svg")));
    assert_eq!(doc.matches("<polyline").count(), 4);
    assert!(doc.contains(">revd_k5_l5<"));
}

#[test]
fn plot_rejects_empty_and_malformed_input() {
    let dir = scratch("plot-bad");
    let cases = [
        ("empty.csv", "spec,index,eigenvalue\n"),
        ("ragged.csv", "spec,index,eigenvalue\nnone,1\n"),
        ("text.csv", "spec,index,eigenvalue\nnone,1,abc\n"),
        ("unknown.csv", "a,b\n1,2\n"),
    ];
    for (name, body) in cases {
        let input = dir.join(name);
        fs::write(&input, body).unwrap();
        let svg = dir.join(format!("{name}.svg"));
        let o = run(&["plot", "--input", p(&input), "--out", p(&svg)]);
        assert_eq!(code(&o), 2, "{name}");
        assert!(!svg.exists(), "{name}");
    }
    let input = dir.join("neg.csv");
    fs::write(&input, "spec,index,eigenvalue\nnone,1,-1\n").unwrap();
    assert_eq!(code(&run(&["plot", "--input", p(&input), "--log", "--out", p(&dir)])), 2);
}

#[test]
fn exit_codes() {
    let dir = scratch("codes");
    let out = dir.join("out");

    let cfg = write_config(&dir, "[precond]\nk = five\n");
    assert_eq!(code(&run(&["run", "--config", p(&cfg), "--out", p(&out)])), 2);
    let missing = dir.join("missing.cfg");
    assert_eq!(code(&run(&["run", "--config", p(&missing), "--out", p(&out)])), 2);
    assert_eq!(code(&run(&["run", "--out", p(&out)])), 2);

    let cfg = write_config(&dir, SMALL_ADVECTION);
    let o = run(&["spectrum", "--config", p(&cfg), "--set", "output.dense_cap=100", "--out", p(&out)]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("smaller"));
    assert!(!out.join("spectrum.csv").exists());

    let o = run(&[
        "run", "--config", p(&cfg), "--set", "precond.methods=deterministic", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 2);

    let cfg = write_config(&dir, "[model]\nkind = lorenz96\nn = 40\nsteps = 10\ndt = 2.0\nspinup_steps = 50\n");
    let o = run(&["run", "--config", p(&cfg), "--precond", "none", "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical failure"));

    let o = bin()
        .env("WC4DVAR_THREADS", "zero")
        .args(["run", "--config", p(&cfg), "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn observation_sweep_counts() {
    let dir = scratch("sweep-obs");
    let cfg = write_config(
        &dir,
        "[model]\nkind = lorenz96\n\n[solver]\nfirst_loop_max_iter = 1\nmax_iter = 2\n\n\
         [precond]\nmethods = none\nloop = 1\n\n[sweep]\naxis = obs\nvalues = 10/10, 5/5, 2/2\n",
    );
    let out = dir.join("out");
    let o = run(&["sweep", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for q in ["120 observations", "480 observations", "3000 observations"] {
        assert!(text.contains(q), "{q} missing in {text}");
    }
    let summary = read(&out.join("sweep_summary.csv"));
    assert!(summary.starts_with("axis,value,spec,iteration,mean,std,count\n"));
    assert!(summary.contains("\nobs,5/5,none,0,"));
    assert!(out.join("obs_2_2").join("cost_history.csv").exists());
}

#[test]
fn oversampling_sweep_reports_spread() {
    let dir = scratch("sweep-l");
    let text = format!("{SMALL_ADVECTION}\n[sweep]\naxis = l\nvalues = 1, 3\n");
    let cfg = write_config(&dir, &text.replace("methods = none, revd, nystrom, ritzit", "methods = revd"));
    let out = dir.join("out");
    let o = run(&["sweep", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out.join("sweep_summary.csv"));
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert!(rows.iter().any(|r| r.starts_with("l,1,revd_k4_l1,1,")));
    assert!(rows.iter().any(|r| r.starts_with("l,3,revd_k4_l3,1,")));
    // Iteration 0 is the common starting cost, so no spread.
    for r in rows.iter().filter(|r| r.split(',').nth(3) == Some("0")) {
        assert_eq!(r.split(',').nth(5), Some("0"), "{r}");
    }
    let svg = dir.join("std.svg");
    let o = run(&["plot", "--input", p(&out.join("sweep_summary.csv")), "--y", "std", "--out", p(&svg)]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&svg).matches("<polyline").count(), 2);
}
