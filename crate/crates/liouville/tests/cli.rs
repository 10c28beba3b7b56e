use std::path::Path;
use std::process::Command;

use liouville::cli::{parse_config, parse_config_str, CliError, ScenarioConfig};

const SUBCRITICAL: &str = "\
# subcritical disc
[surface]
kind = disc
refinement = 3

[singularities]
interior = 0,0,-0.5

[curvature]
k = constant:1
h = constant:0
";

fn tool(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_liouville")).args(args).current_dir(dir).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn minimal_config_fills_defaults_and_round_trips() {
    let c = parse_config_str(SUBCRITICAL, Path::new(".")).unwrap();
    let d = ScenarioConfig::default();
    assert_eq!(c.tol_grad, d.tol_grad);
    assert_eq!(c.mu, vec![1.0]);
    assert_eq!(c.interior, vec![([0.0, 0.0], -0.5)]);
    let text = c.emit();
    assert!(text.contains("tol_grad = 0.00000001"));
    assert_eq!(parse_config_str(&text, Path::new(".")).unwrap(), c);
}

#[test]
fn semantic_and_syntax_errors() {
    let e = parse_config_str("[singularities]\ninterior = 0,0,-1.5\n", Path::new(".")).unwrap_err();
    assert!(matches!(e, CliError::Semantic(_)));
    assert!(e.to_string().contains("alpha > -1"), "{e}");
    let e = parse_config_str("[curvature]\nk = constant:1\nk = constant:2\n", Path::new(".")).unwrap_err();
    assert!(matches!(e, CliError::Syntax { line: 3, .. }), "{e}");
    let e = parse_config_str("[run]\nmu = 1.5\n", Path::new(".")).unwrap_err();
    assert!(matches!(e, CliError::Semantic(_)));
    let e = parse_config_str("[curvature]\nk = table:does_not_exist.txt\n", Path::new(".")).unwrap_err();
    assert!(matches!(e, CliError::Semantic(_)));
}

#[test]
fn table_curvature_is_resolved_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("h.txt"), "0.5\n".repeat(48)).unwrap();
    let cfg = write_config(dir.path(), "c.ini", "[surface]\nkind = disc\nrefinement = 2\n[curvature]\nh = table:h.txt\n");
    let c = parse_config(Path::new(&cfg)).unwrap();
    let (sc, _) = liouville::cli::build_scenario(&c).unwrap();
    assert_eq!(sc.mesh.n_boundary(), 48);
    assert!(sc.data.h_raw.iter().all(|&h| h == 0.5));
    assert_eq!(parse_config_str(&c.emit(), Path::new("/")).unwrap(), c);
}

#[test]
fn info_prints_classification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.ini", SUBCRITICAL);
    let out = tool(&["info", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "classification=subcritical chi=0.5 tau=1.0"), "{text}");
    let info = std::fs::read_to_string(dir.path().join("o/info.json")).unwrap();
    assert!(info.starts_with("# liouville "));
    let conf = std::fs::read_to_string(dir.path().join("o/config.ini")).unwrap();
    let hash = conf.lines().next().unwrap().split("config_hash=").nth(1).unwrap();
    assert_eq!(hash.len(), 64);
    assert!(info.lines().next().unwrap().ends_with(hash));
}

#[test]
fn solve_writes_converged_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.ini", SUBCRITICAL);
    let out = tool(&["solve", "--config", &cfg, "--out", "o", "--threads", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/report.json")).unwrap();
    let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["report"]["solve"]["status"], "converged");
    assert_eq!(v["report"]["morse_mean_field"], 0.0);
    assert!(v["report"]["gauss_bonnet_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn sweep_through_gamma_records_failures_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SUBCRITICAL}\n[run]\nlambda_grid = 3.14, 9, 12.566370614359172, 15\nwarm_start = false\n");
    let cfg = write_config(dir.path(), "c.ini", &text);
    let a = tool(&["sweep", "--config", &cfg, "--out", "a"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = tool(&["sweep", "--config", &cfg, "--out", "b"], dir.path());
    assert_eq!(b.status.code(), Some(0));
    let ca = std::fs::read(dir.path().join("a/sweep.csv")).unwrap();
    let cb = std::fs::read(dir.path().join("b/sweep.csv")).unwrap();
    assert_eq!(ca, cb);
    let csv = String::from_utf8(ca).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# liouville "));
    assert!(lines[1].contains("gamma_distance"));
    assert_eq!(lines.len(), 6);
    assert!(lines[2].contains(",converged,"));
    assert!(lines[2..].iter().any(|l| !l.contains(",converged,")), "{csv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.ini", "[surface]\nkind = disc\nkind = disc\n");
    assert_eq!(tool(&["info", "--config", &bad, "--out", "o"], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), "c.ini", SUBCRITICAL);
    assert_eq!(tool(&["frobnicate", "--config", &cfg, "--out", "o"], dir.path()).status.code(), Some(2));
    // the bubble scales are not resolved by a level-3 disc
    let coarse = write_config(dir.path(), "coarse.ini", &format!("{SUBCRITICAL}\n[run]\natoms = 1,0,1\n"));
    assert_eq!(tool(&["bubbles", "--config", &coarse, "--out", "o"], dir.path()).status.code(), Some(4));
    // λ = 10π from u = 0 with too few iterations
    let capped = write_config(dir.path(), "capped.ini", &format!("{SUBCRITICAL}\n[solver]\nmax_iter = 1\n"));
    assert_eq!(tool(&["solve", "--config", &capped, "--out", "o"], dir.path()).status.code(), Some(3));
}

#[test]
fn limit_and_probe_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.ini", "[run]\nlimit_alpha = 0\nlimit_h0 = -1\n");
    let out = tool(&["limit", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("log_cap_certified=true"));

    let probe = "[surface]\nkind = annulus\nrefinement = 2\ngrade_points = 1,0\ngrade_levels = 14\n\
                 [curvature]\nk = constant:1\nh = constant:1\n[run]\nlambda = 31.41592653589793\natoms = 1,0,1\nprobe_kind = boundary\n";
    let cfg = write_config(dir.path(), "p.ini", probe);
    let out = tool(&["probe", "--config", &cfg, "--out", "p", "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("within_bound=true"));
    let out = tool(&["bubbles", "--config", &cfg, "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("p/bubbles.csv").exists());
}
