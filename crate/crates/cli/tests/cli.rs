use std::fs;
use std::process::Command;

fn gridsched() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridsched"))
}

const TOY: &str = r#"
s_base_mva = 3.0
v_base_kv = 12.66
interface_bus = 1

[upstream]
v_th = 1.0
z_th = [0.02, 0.1]

[[transformers.unit]]
capacity_mva = 3.0
x = 0.1
r = 0.006
x_m = 390.0
r_c = 400.0
tap_min = -2
tap_max = 2
delta_u_percent = 1.0

[[capacitor]]
bus = 4
kvar = 360.0
steps = 4

[[device]]
name = "der"
kind = "der"
bus = 3
s_kva = 900.0
price = 60.0

[[line]]
from = 1
to = 2
r_ohm = 1.07
x_ohm = 0.8

[[line]]
from = 2
to = 3
r_ohm = 1.6
x_ohm = 1.07

[[line]]
from = 2
to = 4
r_ohm = 1.34
x_ohm = 1.6

[[load]]
bus = 3
p_kw = 900.0
q_kvar = 360.0

[[load]]
bus = 4
p_kw = 750.0
q_kvar = 450.0
"#;

#[test]
fn help_lists_defaults() {
    let out = gridsched().args(["scenario", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success());
    for flag in ["--mode", "--workers", "--feasibility-tol", "--output", "[default: 1]", "[default: out]"] {
        assert!(text.contains(flag), "{flag} missing from\n{text}");
    }
}

#[test]
fn solve_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("toy.toml");
    fs::write(&net, TOY).unwrap();
    let out_dir = dir.path().join("out");
    let out = gridsched()
        .args(["solve", "--network"])
        .arg(&net)
        .args(["--load", "0.8", "-o"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.csv", "nodes.jsonl", "timings.csv", "series_cost.csv", "series_tap.csv", "series_voltage.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn scenario_replay_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("toy.toml");
    fs::write(&net, TOY).unwrap();
    let sc = dir.path().join("day.toml");
    fs::write(&sc, "[[hour]]\nload = 0.5\nrho_a = 40\n[[hour]]\nload = 1.0\nrho_a = 60\n[[hour]]\nload = 0.7\nrho_a = 50\n").unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let st = gridsched()
            .args(["scenario", "--network"])
            .arg(&net)
            .arg("--scenario")
            .arg(&sc)
            .arg("-o")
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(st.success());
        fs::read(out_dir.join("results.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.toml");
    fs::write(&sc, "[[hour]]\nrho_a = 40\nload = 0.5\nmystery = 1\n").unwrap();
    let out = gridsched().arg("scenario").arg("--scenario").arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("mystery") && err.contains("bad.toml"), "{err}");
    fs::write(&sc, "name = \"empty\"\n").unwrap();
    let out = gridsched().arg("scenario").arg("--scenario").arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_root_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("toy.toml");
    fs::write(&net, TOY).unwrap();
    // 1.7: the power flow converges but no schedule meets the limits;
    // 3.0: no operating point at all
    for load in ["1.7", "3.0"] {
        let out = gridsched()
            .args(["solve", "--network"])
            .arg(&net)
            .args(["--load", load, "-o"])
            .arg(dir.path().join("out"))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(3), "{load}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn budget_exceeded_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridsched()
        .args(["solve", "--node-budget", "1", "--no-heuristic", "--load", "0.6", "-o"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn estimate_reports_json() {
    // primary snapshots of a 0.98 pu source behind 0.02 + 0.1j
    let (vth, r, x) = (0.98f64, 0.02f64, 0.1f64);
    let mut rows = String::from("timestamp,bus,v,i,phase_offset,p,q\n");
    for (k, (i, phi)) in [(0.4f64, -0.3f64), (0.7, -0.45), (0.55, -0.1)].iter().enumerate() {
        let (ix, iy) = (i * phi.cos(), i * phi.sin());
        let (vx, vy) = (vth - (r * ix - x * iy), -(r * iy + x * ix));
        let v = vx.hypot(vy);
        let off = phi - vy.atan2(vx);
        rows.push_str(&format!("{k},primary,{v},{i},{off},,\n"));
    }
    rows.push_str("0,18,0.97,,,0.03,0.013\n1,18,1.01,,,0.0315,0.0139\n");
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, rows).unwrap();
    let out = gridsched().arg("estimate").arg(&m).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["thevenin"]["v_th"].as_f64().unwrap() - vth).abs() < 1e-9);
    assert!((v["thevenin"]["z_th"]["x"].as_f64().unwrap() - r).abs() < 1e-9);
    assert_eq!(v["loads"][0]["bus"], 18);
    assert_eq!(v["reschedule"], true);
}
