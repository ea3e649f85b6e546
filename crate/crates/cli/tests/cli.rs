use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fracbayes"));
    c.env_remove("FRACBAYES_SEED");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/examples").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_experiment(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut v = serde_json::json!({
        "schema_version": 1,
        "experiment": "consistency",
        "truth": { "function": { "kind": "additive_sine" }, "support": [1] },
        "p": 2,
        "d0": 2,
        "n_grid": [10, 20],
        "replicates": 2,
        "seed": 7,
        "gp": { "grid": 8 }
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn divergence_prints_closed_form_kl() {
    let o = bin().args(["divergence", "--config"]).arg(example("divergence.json")).output().unwrap();
    assert!(o.status.success());
    let out = stdout(&o);
    let row = out.lines().nth(1).unwrap();
    let value: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 0.5).abs() < 1e-9, "{out}");
}

#[test]
fn kernel_spectrum_lists_paired_eigenvalues() {
    let o = bin().args(["kernel-spectrum", "--family", "se", "--a", "2", "--m", "5"]).output().unwrap();
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "index,eigenvalue,eigenfunction,asymptotic_comparator,ratio");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[2].split(',').nth(1), lines[3].split(',').nth(1));
}

#[test]
fn complexity_and_delta_write_tables() {
    let dir = scratch("tables");
    for (cmd, cfg, file) in [
        ("complexity", "complexity.json", "complexity.csv"),
        ("delta", "delta.json", "delta.csv"),
    ] {
        let o = bin().args([cmd, "--config"]).arg(example(cfg)).arg("--out").arg(&dir).output().unwrap();
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(fs::read_to_string(dir.join(file)).unwrap().lines().count() > 2);
    }
}

#[test]
fn single_runs_emit_model_tables() {
    let dir = scratch("runs");
    let o = bin().args(["gpvs-run", "--config"]).arg(example("gpvs_run.json")).arg("--out").arg(dir.join("gpvs")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("gpvs/models.csv").exists());
    assert!(dir.join("gpvs/diagnostics.json").exists());
    let o = bin().args(["drvs-run", "--config"]).arg(example("drvs_run.json")).arg("--out").arg(dir.join("drvs")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("drvs/models.csv").exists());
    assert!(dir.join("drvs/mixture_draws.csv").exists());
}

#[test]
fn experiment_exit_codes() {
    let dir = scratch("exit");
    let ok = small_experiment(&dir, serde_json::json!({}));
    let o = bin().args(["experiment", "--workers", "2", "--config"]).arg(&ok).arg("--out").arg(dir.join("ok")).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("ok/rows.csv").exists());

    // the default mixture schedule is infeasible at these n, so every cell errors
    let bad_cells = small_experiment(
        &dir,
        serde_json::json!({"family": "drvs", "drvs": {"evidence": {"method": "prior_importance", "draws": 50}}}),
    );
    let o = bin().args(["experiment", "--config"]).arg(&bad_cells).arg("--out").arg(dir.join("bad")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(fs::read_to_string(dir.join("bad/errors.csv")).unwrap().lines().count() > 1);

    let o = bin().args(["experiment", "--config"]).arg(dir.join("missing.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_env_overrides_master_seed() {
    let dir = scratch("seed");
    let cfg = small_experiment(&dir, serde_json::json!({}));
    let run = |sub: &str, seed: Option<&str>| {
        let mut c = bin();
        if let Some(s) = seed {
            c.env("FRACBAYES_SEED", s);
        }
        let o = c.args(["experiment", "--config"]).arg(&cfg).arg("--out").arg(dir.join(sub)).output().unwrap();
        (o.status.code(), fs::read(dir.join(sub).join("rows.csv")).ok())
    };
    let (code, base) = run("base", None);
    assert_eq!(code, Some(0));
    let (_, same) = run("same", Some("7"));
    let (_, other) = run("other", Some("8"));
    assert_eq!(base, same);
    assert_ne!(base, other);
    let (code, _) = run("garbage", Some("not-a-number"));
    assert_eq!(code, Some(2));
}
