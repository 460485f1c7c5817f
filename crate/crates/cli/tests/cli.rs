use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn stcar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn simulate_small(dir: &Path, lattice: &str) {
    let o = stcar(dir, &["simulate", "--lattice", lattice, "--seed", "4", "-o", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn prior_reports_sigma_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let o = stcar(dir.path(), &["prior", "--target", "sigma", "--u", "0.7071067811865476", "--alpha", "0.9", "-o", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&read(dir.path().join("p/prior.json"))).unwrap();
    let psi = json["psi"].as_f64().unwrap();
    let mean = json["mean"].as_f64().unwrap();
    assert!((psi - 3.2565).abs() < 1e-3, "{psi}");
    assert!((mean - 0.307).abs() < 1e-3, "{mean}");
    assert!(stdout(&o).contains("psi = 3.256"));
    let table = read(dir.path().join("p/prior.csv"));
    assert_eq!(table.lines().next(), Some("theta,density,kld,distance,clamped"));
    assert_eq!(table.lines().count(), 201);
}

#[test]
fn missing_data_file_is_a_data_error_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "4x4");
    let o = stcar(dir.path(), &["fit", "--counts", "missing.csv", "--adjacency", "sim/adjacency.txt"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing.csv"), "{err}");
    assert!(err.contains("hint:"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "sede = 3\n").unwrap();
    let o = stcar(dir.path(), &["fit", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = stcar(dir.path(), &["fit", "--counts", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--adjacency"));
    let o = stcar(dir.path(), &["prior", "--target", "phi"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let start = Instant::now();
    let o = stcar(d, &["simulate", "--seed", "8", "-o", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["counts.csv", "adjacency.txt", "truth.json", "manifest.json"] {
        assert!(d.join("sim").join(f).exists(), "{f}");
    }
    let o = stcar(
        d,
        &["fit", "--counts", "sim/counts.csv", "--adjacency", "sim/adjacency.txt", "--kind", "bym", "-o", "fit"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs() < 120);

    let hyper = read(d.join("fit/hyperparameters.csv"));
    let rows: Vec<&str> = hyper.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["phi", "sigma", "r"]);
    let fixed = read(d.join("fit/fixed_effects.csv"));
    assert_eq!(fixed.lines().next(), Some("effect,mean,sd,0.025quant,0.975quant"));
    assert_eq!(fixed.lines().count(), 1 + 4 + 2);
    assert_eq!(read(d.join("fit/latent_field.csv")).lines().count(), 1 + 400);
    let waic: serde_json::Value = serde_json::from_str(&read(d.join("fit/waic.json"))).unwrap();
    assert!(waic["waic"].as_f64().unwrap().is_finite());

    let manifest: serde_json::Value = serde_json::from_str(&read(d.join("fit/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["wall_time_s"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["config"]["model"]["kind"], "BYM");

    // the echoed config reproduces the run
    let o = stcar(d, &["fit", "--config", "fit/run_config.toml", "-o", "again"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["fixed_effects.csv", "hyperparameters.csv", "latent_field.csv", "waic.json"] {
        assert_eq!(read(d.join("fit").join(f)), read(d.join("again").join(f)), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 5\n[model]\nkind = \"LCAR\"\n[grid]\npoints_per_axis = 5\n",
    )
    .unwrap();
    let o = stcar(dir.path(), &["fit", "--config", "run.toml", "--kind", "pcar", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("kind = \"PCAR\""), "{text}");
    assert!(text.contains("points_per_axis = 5"));
    assert!(text.contains("seed = 5"));
}

#[test]
fn filter_writes_the_design_and_scales() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_small(d, "5x5");
    let o = stcar(
        d,
        &[
            "filter", "--counts", "sim/counts.csv", "--adjacency", "sim/adjacency.txt",
            "--filter-covariates", "x1", "-k", "6", "-o", "filt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let design = read(d.join("filt/filtered_design.csv"));
    assert_eq!(design.lines().next(), Some("area_id,year,x1,x2"));
    assert_eq!(design.lines().count(), 1 + 100);
    let scales = read(d.join("filt/filter_scales.csv"));
    assert!(scales.lines().nth(1).unwrap().starts_with("x1,6,"));
}

#[test]
fn compare_has_the_table_layout_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_small(d, "4x4");
    let args = [
        "compare", "--counts", "sim/counts.csv", "--adjacency", "sim/adjacency.txt",
        "--points-per-axis", "3", "--waic-draws", "100", "--k-values", "3,5,20",
    ];
    let run = |out: &str| {
        let mut a = args.to_vec();
        a.extend(["-o", out]);
        let o = stcar(d, &a);
        assert!(o.status.success(), "{}", stderr(&o));
        read(d.join(out).join("compare.csv"))
    };
    let first = run("c1");
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(
        lines[0],
        "model,prior,Base_WAIC,Base_P_eff,S+3_WAIC,S+3_P_eff,S+5_WAIC,S+5_P_eff,S+20_WAIC,S+20_P_eff,error"
    );
    assert_eq!(lines.len(), 11);
    let labels: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(labels[0], "ICAR -");
    assert_eq!(labels[1..4], ["PCAR Unif", "PCAR PC1", "PCAR PC2"]);
    assert_eq!(labels[9], "BYM PC2");
    // k = 20 exceeds the 16 areas: recorded per row, the sweep continues
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        assert!(cells[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(cells[8], "");
        assert!(l.contains("S+20:"));
    }
    assert_eq!(first, run("c2"));
}
