use nsmt::assembly::FlowField;
use nsmt::io;
use nsmt::Grid;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[channel]
nu = 1.0
L = 1.0
a = 0.0
rho = 2e4
sigma = 1.0

[numerics]
Ny = 16
Nt = 32
Kmax = 2
Nx = 8
"#;

fn nsmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsmt")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_field(path: &Path, amp: f64) {
    let g = Grid::new(16, 1.0).unwrap();
    let pi = std::f64::consts::PI;
    let d = |y: f64| (pi * y).sin() - pi * y * (1.0 - y);
    let dd = |y: f64| pi * (pi * y).cos() - pi * (1.0 - 2.0 * y);
    let f = FlowField::from_fn(8, &g, |x: f64, y: f64| {
        (-amp * (x.sin() + 0.25 * (2.0 * x).sin()) * dd(y), amp * (x.cos() + 0.5 * (2.0 * x).cos()) * d(y))
    });
    io::write_field_csv(path, &f, &g).unwrap();
}

#[test]
fn full_pipeline_runs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let field = root.join("field.csv");
    write_field(&field, 2e5);
    let spec_dir = root.join("spec");
    let o = nsmt(&["decompose", "--config", s(&cfg), "--out", s(&spec_dir), "--field", s(&field)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(spec_dir.join("spectrum.csv").exists() && spec_dir.join("budget.csv").exists());

    let modes = root.join("modes");
    let spectrum = spec_dir.join("spectrum.csv");
    let o = nsmt(&[
        "optimize", "--config", s(&cfg), "--out", s(&modes), "--spectrum", s(&spectrum), "--all-modes", "--workers", "2",
        "--format", "bin",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for k in [-2, -1, 1, 2] {
        assert!(io::mode_dir(&modes, k).join("pair.toml").exists());
    }
    let m = io::RunManifest::read(&modes).unwrap();
    assert_eq!(m.outcomes.len(), 4);
    assert!(m.config.contains("rho"));

    let o = nsmt(&["assemble", "--config", s(&cfg), "--out", s(&modes), "--pairs", s(&modes), "--spectrum", s(&spectrum)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = io::read_summary(&modes.join("summary.toml")).unwrap();
    assert_eq!(summary.modes.len(), 4);
    assert!(summary.modes.iter().any(|m| m.k == summary.argmax && m.t_k == summary.t_star));
    let resim = fs::read_to_string(modes.join("resimulation.toml")).unwrap();
    let change: f64 = resim.lines().next().unwrap().split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(change <= 1e-8, "{resim}");

    let o = nsmt(&["verify", "--dir", s(&modes), "--config", s(&cfg)]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(!out.contains("FAIL"));
    let o = nsmt(&["verify", "--dir", s(&spec_dir), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let o = nsmt(&["report", "--dir", s(&modes), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("T_k*") && table.contains("T* ="), "{table}");

    // solve-mode with the stored optimal control reproduces the stored terminal state
    let o = nsmt(&[
        "solve-mode", "--config", s(&cfg), "--out", s(&root.join("fwd")), "--spectrum", s(&spectrum), "--k", "-1", "--t",
        &format!("{:.17e}", summary.modes.iter().find(|m| m.k == -1).unwrap().t_k),
        "--control", s(&io::mode_dir(&modes, -1).join("w_star.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fwd = io::RunManifest::read(&root.join("fwd")).unwrap();
    let r = fwd.outcomes[0].terminal_residual.unwrap();
    let stored = summary.modes.iter().find(|m| m.k == -1).unwrap().terminal_residual;
    assert!((r - stored).abs() <= 1e-9 * stored.max(1.0), "{r} vs {stored}");
}

#[test]
fn optimize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let field = root.join("field.csv");
    write_field(&field, 2e5);
    let spec_dir = root.join("spec");
    nsmt(&["decompose", "--config", s(&cfg), "--out", s(&spec_dir), "--field", s(&field)]);
    let spectrum = spec_dir.join("spectrum.csv");
    let mut outputs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "3")] {
        let out = root.join(run);
        let o = nsmt(&["optimize", "--config", s(&cfg), "--out", s(&out), "--spectrum", s(&spectrum), "--k", "2", "--workers", workers]);
        assert_eq!(o.status.code(), Some(0));
        let d = io::mode_dir(&out, 2);
        outputs.push((fs::read(d.join("w_star.csv")).unwrap(), fs::read(d.join("v_star.csv")).unwrap(), fs::read(d.join("pair.toml")).unwrap()));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn zero_mode_is_rejected_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let field = root.join("field.csv");
    // only k = 2 carries energy
    let g = Grid::new(16, 1.0).unwrap();
    let f = FlowField::from_fn(8, &g, |x: f64, y: f64| (0.0, (2.0 * x).cos() * y * y * (1.0 - y).powi(2)));
    io::write_field_csv(&field, &f, &g).unwrap();
    let spec_dir = root.join("spec");
    nsmt(&["decompose", "--config", s(&cfg), "--out", s(&spec_dir), "--field", s(&field)]);
    let o = nsmt(&[
        "optimize", "--config", s(&cfg), "--out", s(&root.join("m")), "--spectrum", s(&spec_dir.join("spectrum.csv")), "--k", "1",
        "--budget", s(&spec_dir.join("budget.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    let rec: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(rec["error"], "degenerate_input");
    assert_eq!(rec["exit_code"], 3);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let field = root.join("field.csv");
    write_field(&field, 1.0);
    for (text, needle) in [
        ("[channel]\nnu=1\nL=1\nrho=1\nnuu=2\n", "nuu"),
        ("[channel]\nnu=1\nL=1\nrho=1\n[numerics]\nNy=4\n", "grid too coarse"),
        ("[channel]\nnu=1\nL=1\n", "rho"),
    ] {
        let cfg = root.join("bad.toml");
        fs::write(&cfg, text).unwrap();
        let o = nsmt(&["decompose", "--config", s(&cfg), "--out", s(&root.join("o")), "--field", s(&field)]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle));
    }
}

#[test]
fn unreachable_tolerance_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    // a budget this small cannot reach an absolute tolerance within a short horizon cap
    fs::write(&cfg, format!("{CONFIG}\n[optimizer]\ntol_terminal = 1e-3\nt_max = 0.02\n").replace("rho = 2e4", "rho = 1e-6")).unwrap();
    let field = root.join("field.csv");
    write_field(&field, 2e5);
    let spec_dir = root.join("spec");
    nsmt(&["decompose", "--config", s(&cfg), "--out", s(&spec_dir), "--field", s(&field)]);
    let o = nsmt(&[
        "optimize", "--config", s(&cfg), "--out", s(&root.join("m")), "--spectrum", s(&spec_dir.join("spectrum.csv")), "--k", "1",
        "--eps-schedule", "1e-1,1e-2",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_flags_a_tampered_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let field = root.join("field.csv");
    write_field(&field, 2e5);
    let spec_dir = root.join("spec");
    nsmt(&["decompose", "--config", s(&cfg), "--out", s(&spec_dir), "--field", s(&field)]);
    let m = root.join("m");
    nsmt(&["optimize", "--config", s(&cfg), "--out", s(&m), "--spectrum", s(&spec_dir.join("spectrum.csv")), "--k", "1"]);
    let p = io::mode_dir(&m, 1).join("pair.toml");
    let text = fs::read_to_string(&p).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| if l.starts_with("rho_k") { "rho_k = 1e-3".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&p, tampered).unwrap();
    let o = nsmt(&["verify", "--dir", s(&m)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL mode 1 budget"));
}
