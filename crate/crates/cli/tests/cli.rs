use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_panelvar"));
    c.env_remove("PANELVAR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Small panel with unit and time structure plus deterministic wiggle.
fn wavy_panel(n: usize, t: usize) -> String {
    let mut s = String::from("unit");
    for p in 0..t {
        s.push_str(&format!(",{}", 2000 + p));
    }
    s.push('\n');
    for i in 0..n {
        s.push_str(&format!("u{i}"));
        for p in 0..t {
            let v = i as f64 * 0.3 + (p as f64 * 0.7).sin() + ((i * 7 + p * 13) % 11) as f64 * 0.1;
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn summary_field(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    row[k].to_string()
}

#[test]
fn help_lists_defaults() {
    let o = run(&["placebo", "--help"]);
    assert!(o.status.success());
    let h = stdout(&o);
    for needle in [
        "[default: 500]",
        "[default: 20240101]",
        "[default: sc]",
        "[default: nt-1]",
        "[default: 40]",
    ] {
        assert!(h.contains(needle), "missing {needle} in help:\n{h}");
    }
    let h = stdout(&run(&["power", "--help"]));
    assert!(h.contains("[default: -3:3:25]"));
    assert!(h.contains("[default: 0.05]"));
}

#[test]
fn constant_panel_has_zero_effect_and_zero_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "flat.csv",
        "unit,1,2,3\na,5,5,5\nb,5,5,5\nc,5,5,5\n",
    );
    for imputer in ["twfe", "sc", "sdid"] {
        let o = run(&[
            "estimate",
            "--panel",
            &p,
            "--treated-unit",
            "c",
            "--treated-period",
            "3",
            "--imputer",
            imputer,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "flat");
        assert_eq!(row[1], "3");
        for v in &row[2..] {
            assert!(v.parse::<f64>().unwrap().abs() < 1e-12, "{imputer}: {out}");
        }
    }
}

#[test]
fn estimate_json_carries_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "w.csv", &wavy_panel(6, 8));
    let o = run(&[
        "estimate",
        "--panel",
        &p,
        "--treated-unit",
        "u2",
        "--treated-period",
        "2005",
        "--imputer",
        "twfe",
        "--format",
        "json",
        "--dataset",
        "demo",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["dataset"], "demo");
    assert_eq!(v["treated_unit"], "u2");
    assert_eq!(v["treated_period"], "2005");
    assert!(v["se_m"].as_f64().unwrap() > 0.0);
}

#[test]
fn unknown_label_reports_available_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "unit,1,2\na,1,2\nb,3,4\n");
    let o = run(&[
        "estimate",
        "--panel",
        &p,
        "--treated-unit",
        "zz",
        "--treated-period",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert!(err.contains("'zz'") && err.contains("a,b"), "{err}");
}

#[test]
fn exit_codes() {
    // Missing input is a runtime error.
    let o = run(&["estimate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--panel"));
    // Bad flags are usage errors.
    assert_eq!(run(&["placebo", "--case", "5"]).status.code(), Some(2));
    assert_eq!(run(&["placebo", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["placebo", "--case", "1", "--params", "x.json"])
            .status
            .code(),
        Some(2)
    );
    let o = run(&["placebo", "--params", "/nonexistent/params.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["power", "--case", "1", "--alpha", "1.5", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "# study settings\nreps = 7\nimputer = \"twfe\"\nn_units = 8\nn-periods = 8\ncase = 2\n",
    );
    let o = run(&["placebo", "--config", &cfg, "--reps", "3", "--case", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_field(&stdout(&o), "reps"), "3");

    let o = run(&["placebo", "--config", &cfg, "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["summary"]["reps"], 7);
    assert_eq!(v["imputer"]["kind"], "twfe");
    assert!(v["baseline"].as_str().unwrap().contains("N=8"));

    let bad = write(dir.path(), "bad.cfg", "no_such_flag = 1\n");
    let o = run(&["placebo", "--config", &bad, "--case", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-flag"));
}

#[test]
fn same_seed_same_output_across_thread_counts() {
    let args = [
        "placebo",
        "--case",
        "4",
        "--reps",
        "12",
        "--n-units",
        "10",
        "--n-periods",
        "9",
        "--imputer",
        "sc",
        "--seed",
        "99",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let mut seq = args.to_vec();
    seq.extend(["--threads", "1"]);
    assert_eq!(run(&seq).stdout, a.stdout);
    let c = bin()
        .args(args)
        .env("PANELVAR_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(c.stdout, a.stdout);

    let mut other = args.to_vec();
    *other.last_mut().unwrap() = "100";
    assert_ne!(run(&other).stdout, a.stdout);
}

#[test]
fn power_csv_is_tidy() {
    let o = run(&[
        "power",
        "--case",
        "1",
        "--reps",
        "20",
        "--n-units",
        "8",
        "--n-periods",
        "8",
        "--grid",
        "-1:1:5",
        "--imputer",
        "twfe",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "method,tau,power,mc_se");
    assert_eq!(lines.len(), 1 + 4 * 5);
    for m in ["UP", "TP", "M", "C"] {
        assert_eq!(
            lines
                .iter()
                .filter(|l| l.starts_with(&format!("{m},")))
                .count(),
            5
        );
    }
}

#[test]
fn dgp_fit_feeds_placebo_and_power_runs_on_a_panel() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "w.csv", &wavy_panel(10, 12));
    let params = dir.path().join("params.json");
    let o = run(&[
        "dgp-fit",
        "--panel",
        &p,
        "--rank",
        "2",
        "--imputer",
        "twfe",
        "--out",
        params.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with(
        "dataset,n_units,n_periods,v_exp_nu,v_exp_xi,k_nu,k_xi,rho1,rho2,separation\nw,10,12,"
    ));
    assert!(params.exists());

    let o = run(&[
        "placebo",
        "--params",
        params.to_str().unwrap(),
        "--reps",
        "5",
        "--imputer",
        "twfe",
        "--sampling",
        "propensity",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_field(&stdout(&o), "reps"), "5");

    let o = run(&[
        "power",
        "--panel",
        &p,
        "--reps",
        "5",
        "--imputer",
        "twfe",
        "--grid",
        "0:2:3",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["heterosk"]["v_exp_nu"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["curve"]["tau_grid"].as_array().unwrap().len(), 3);
}

#[test]
fn placebo_records_file() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    let o = run(&[
        "placebo",
        "--case",
        "1",
        "--reps",
        "4",
        "--n-units",
        "6",
        "--n-periods",
        "6",
        "--imputer",
        "twfe",
        "--records",
        rec.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(rec).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("rep,"));
}
