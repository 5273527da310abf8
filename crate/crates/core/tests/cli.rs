use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mocobo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocobo"))
        .args(args)
        .env_remove("MOCOBO_SCENARIO_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.split([',', '\n'])
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let o = mocobo(&["simulate", "--scenario", "no-such-thing"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("testbed-iv"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = mocobo(&["simulate", "--engine", "magic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reference_link_frames_decode() {
    for s in ["link-iv", "link-ev"] {
        let o = mocobo(&["link", "--scenario", s]);
        assert!(o.status.success(), "{}", stderr(&o));
        let err = stderr(&o);
        assert!(err.contains("received=111-01010011"), "{err}");
        assert!(err.contains("errors=0"), "{err}");
        assert!(stdout(&o).starts_with("symbol,statistic,decision\n"));
    }
}

#[test]
fn link_through_platform_engine() {
    let o = mocobo(&["link", "--scenario", "link-ev", "--engine", "platform"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("errors=0"));
}

#[test]
fn missed_preamble_exits_with_sync_code() {
    let o = mocobo(&["link", "--scenario", "link-iv", "--threshold", "50"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn outputs_are_deterministic() {
    let args = [
        "link",
        "--scenario",
        "link-ev",
        "--sigma",
        "0.05",
        "--seed",
        "3",
    ];
    let a = mocobo(&args);
    let b = mocobo(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    let c = mocobo(&[
        "link",
        "--scenario",
        "link-ev",
        "--sigma",
        "0.05",
        "--seed",
        "4",
    ]);
    assert_ne!(a.stdout, c.stdout);

    let sweep = ["link", "--sweep", "0.1,0.2", "--frames", "20"];
    assert_eq!(mocobo(&sweep).stdout, mocobo(&sweep).stdout);
}

#[test]
fn sweep_output_layout() {
    let o = mocobo(&["link", "--sweep", "0,0.3", "--frames", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("sigma,bits,errors,lost_frames,ber")
    );
    let ber = column(&out, "ber");
    assert_eq!(ber[0], 0.0);
    assert!(ber[1] >= ber[0]);
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let shown = mocobo(&["scenarios", "--show", "testbed-ev"]);
    assert!(shown.status.success());
    let path = dir.path().join("bench.toml");
    fs::write(&path, &shown.stdout).unwrap();

    let from_file = mocobo(&["simulate", "--scenario", path.to_str().unwrap()]);
    let builtin = mocobo(&["simulate", "--scenario", "testbed-ev"]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    assert_eq!(from_file.stdout, builtin.stdout);

    let via_dir = Command::new(env!("CARGO_BIN_EXE_mocobo"))
        .args(["simulate", "--scenario", "bench"])
        .env("MOCOBO_SCENARIO_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(via_dir.stdout, builtin.stdout);
}

#[test]
fn invalid_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(mocobo(&["scenarios", "--show", "testbed-iv"]).stdout).unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, text.replace("k_e = 0.00151", "k_e = -0.00151")).unwrap();
    let o = mocobo(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pk:"), "{}", stderr(&o));
}

#[test]
fn zero_dose_scenario_gives_zero_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    fs::write(
        &path,
        "name = \"empty\"\nroute = \"ev\"\n\n[pk]\nk_a = 0.00327\nk_e = 0.00151\nv = 649.0\n\n[grid]\ndt = 1.0\nhorizon = 500.0\n\n[platform]\nq_a = 0.98\nq_e = 0.98\nv_a = 299.7\nv_b = 649.0\n",
    )
    .unwrap();
    let o = mocobo(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("t,analytic,convolution,ode,platform")
    );
    for name in ["analytic", "convolution", "ode", "platform"] {
        assert!(column(&out, name).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn impulse_columns() {
    let o = mocobo(&["impulse", "--scenario", "testbed-ev", "--horizon", "3000"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let iv = column(&out, "iv_normalized");
    assert_eq!(iv[0], 1.0);
    let ev = column(&out, "ev_normalized");
    assert_eq!(ev[0], 0.0);
    let peak = ev.iter().cloned().fold(0.0, f64::max);
    assert_eq!(peak, 1.0);
    let argmax = ev.iter().position(|&v| v == 1.0).unwrap();
    assert!((argmax as f64 - 439.0).abs() <= 1.0, "argmax {argmax}");
}

fn simulated_csv(dir: &Path, scenario: &str) -> String {
    let path = dir.join(format!("{scenario}.csv"));
    let o = mocobo(&[
        "simulate",
        "--scenario",
        scenario,
        "--dt",
        "10",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    path.to_str().unwrap().to_string()
}

#[test]
fn fit_recovers_simulated_constants() {
    let dir = tempfile::tempdir().unwrap();
    let ev = simulated_csv(dir.path(), "testbed-ev");
    for method in ["lsq", "residuals"] {
        let o = mocobo(&[
            "fit", &ev, "--route", "ev", "--dose", "130", "--column", "ode", "--method", method,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!((field(&out, "k_a") / 3.27e-3 - 1.0).abs() < 0.01, "{out}");
        assert!((field(&out, "k_e") / 1.51e-3 - 1.0).abs() < 0.01, "{out}");
        assert!(out.contains("flip_flop_alternative"));
    }

    let iv = simulated_csv(dir.path(), "testbed-iv");
    let k: Vec<f64> = ["lsq", "residuals"]
        .iter()
        .map(|m| {
            let o = mocobo(&[
                "fit",
                &iv,
                "--scenario",
                "testbed-iv",
                "--column",
                "analytic",
                "--method",
                m,
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
            field(&stdout(&o), "k_e")
        })
        .collect();
    assert!((k[0] / k[1] - 1.0).abs() < 0.01);
    assert!((k[1] / 1.51e-3 - 1.0).abs() < 1e-6);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "t,c\n0,1\n1,0.5\n2,oops\n3,0.1\n").unwrap();
    let o = mocobo(&[
        "fit",
        path.to_str().unwrap(),
        "--route",
        "iv",
        "--dose",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn plan_modes() {
    let o = mocobo(&[
        "plan", "--ka", "2.89e-4", "--ke", "4.47e-5", "--mode", "flows", "--va", "355", "--vb",
        "2292",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!((field(&out, "q_a") / 0.1025 - 1.0).abs() < 0.005);
    assert!(!out.contains("warning"));

    let o = mocobo(&[
        "plan", "--ka", "1.69e-4", "--ke", "5.08e-4", "--mode", "volumes", "--q", "0.1025",
    ]);
    let out = stdout(&o);
    assert!((field(&out, "v_a") - 606.5).abs() < 0.1);
    assert!(!out.contains("warning"));

    let o = mocobo(&["plan", "--ka", "1e-3", "--ke", "1e-3", "--mode", "volumes"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scenario_listing() {
    let o = mocobo(&["scenarios", "--list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in [
        "chlorphenesin-human",
        "vinpocetine-rat",
        "testbed-iv",
        "testbed-ev",
        "link-iv",
        "link-ev",
    ] {
        assert!(out.contains(name));
    }
}
