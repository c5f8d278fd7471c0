use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 5

[contract]
n_exercise = 15
q_max = 6
Q_min = 50
Q_max = 80
strike = 20.0

[model]
alpha = 0.4
sigma = 0.7
f0 = 20.0

[solver]
paths = 4000

[euler_gap]
paths = 2000
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn swing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swing")).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn verify_passes_on_the_reference_setup() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ref.toml", BASE);
    let out = swing(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let stdout = text(&out);
    for name in ["cholesky_identity", "domination_values", "euler_gap", "stein_identity:exp", "bang_bang:pen"] {
        assert!(stdout.contains(&format!("PASS {name}")), "{name} missing:\n{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn non_convex_field_fails_with_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let text_cfg = format!("{BASE}\n[verify]\nfield = {{ kind = \"sqrt_abs\", c = 0.2 }}\n");
    let cfg = write_config(dir.path(), "bad.toml", &text_cfg);
    let out = swing(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = text(&out);
    let block: Vec<&str> = stdout
        .lines()
        .skip_while(|l| !l.starts_with("FAIL field_convexity:verify.field"))
        .take(4)
        .collect();
    assert_eq!(block.len(), 4, "{stdout}");
    assert!(block[3].contains("witness") && block[3].contains("x = "), "{block:?}");
}

#[test]
fn inadmissible_correlation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = BASE.replace("alpha = 0.4", "factor_count = 3\nalpha = 0.8\nrho = -0.6");
    let cfg = write_config(dir.path(), "rho.toml", &bad);
    let out = swing(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).is_empty(), "suite must not run");
}

#[test]
fn sweep_writes_stable_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let zero = format!("{}\n[[scenarios]]\nname = \"flat\"\nsigma = 0.0\n[[scenarios]]\nname = \"vol\"\n", BASE);
    let cfg = write_config(dir.path(), "sweep.toml", &zero);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, engine) in [(&out_a, "lsmc"), (&out_b, "lsmc")] {
        let o = swing(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--engine", engine]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["flat.csv", "vol.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    let flat = std::fs::read_to_string(out_a.join("flat.csv")).unwrap();
    let mut lines = flat.lines();
    assert_eq!(lines.next(), Some("f0,price,delta"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 13);
    for r in rows {
        let want = 80.0 * (r[0] - 20.0f64).max(0.0) - 50.0 * (20.0 - r[0]).max(0.0);
        assert!((r[1] - want).abs() <= 1e-9 * want.abs().max(1.0), "{r:?}");
    }
}

#[test]
fn scenario_filter_and_seed_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = format!("{}\n[[scenarios]]\nname = \"a\"\n[[scenarios]]\nname = \"b\"\nsigma = 0.2\n", BASE);
    let cfg = write_config(dir.path(), "s.toml", &cfg_text);
    let path = cfg.to_str().unwrap();
    let out = swing(&["price", "--config", path, "--scenario", "b", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = text(&out);
    assert!(stdout.contains("scenario b") && !stdout.contains("scenario a"), "{stdout}");
    assert_eq!(swing(&["price", "--config", path, "--scenario", "zzz"]).status.code(), Some(1));
    assert_eq!(swing(&["price", "--config", path, "--engine", "fancy"]).status.code(), Some(1));
    assert_eq!(swing(&["price", "--config", "/nonexistent.toml"]).status.code(), Some(1));
}

#[test]
fn euler_gap_reports_a_shrinking_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.toml", BASE);
    let out_dir = dir.path().join("gap");
    let out = swing(&["euler-gap", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out).contains("strictly decreasing: true"), "{}", text(&out));
    let csv = std::fs::read_to_string(out_dir.join("euler_gap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
