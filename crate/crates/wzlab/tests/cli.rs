//! End-to-end checks of the wzlab binary: exit codes, output schemas, seed
//! precedence, and bit-for-bit reproducibility across thread counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wzlab"));
    // A seed left in the ambient environment must not leak into tests.
    cmd.env_remove("WZLAB_SEED");
    cmd
}

/// Config small enough that the density table builds in a few seconds. The
/// region grids leave wide slack margins: the distortion coordinate is a
/// single-sample squared error with standard deviation near 0.87, so tight
/// targets go infeasible on unlucky moment draws.
const QUICK: &str = r#"{
  "moments": { "n": 60, "n_trials": 300 },
  "regression": { "n_test": 100 },
  "region": {
    "n_grid": [200, 500],
    "epsilon_grid": [0.1],
    "d_grid": [0.8],
    "g_grid": [1.3, 1.6],
    "rates": [1.2],
    "tol_bits": 0.003,
    "mc_samples": 30000,
    "s_points": 21
  },
  "codec": {
    "n": 8, "r1": 1.25, "r": 0.75,
    "n_trials": 12, "bound_samples": 60,
    "d_target": 0.5, "g_target": 1.6
  },
  "density": { "grid_points": 512, "quad_tol": 1e-6, "pad_sd": 6.0 }
}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let output = bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Split a CSV into its meta lines and data lines, checking the stamp shape.
fn split_csv(text: &str) -> (Vec<&str>, Vec<&str>) {
    let (meta, data): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with('#'));
    assert_eq!(meta.len(), 3, "expected three meta lines, got {meta:?}");
    assert!(meta[0].starts_with("# config_hash="));
    assert!(meta[1].starts_with("# seed="));
    assert!(meta[2].starts_with("# version="));
    (meta, data)
}

fn parse_rows(text: &str, header: &str) -> Vec<Vec<String>> {
    let (_, data) = split_csv(text);
    assert_eq!(data[0], header);
    data[1..]
        .iter()
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect()
}

fn seed_of(text: &str) -> u64 {
    let (meta, _) = split_csv(text);
    meta[1].trim_start_matches("# seed=").parse().unwrap()
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.json", r#"{"regoin": {}}"#);
    let out = bin()
        .args(["moments", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("regoin"), "stderr: {stderr}");
}

#[test]
fn invalid_value_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "neg.json",
        r#"{"model": {"beta": [2.0], "sigma2": -1.0, "y_law": {"kind": "uniform", "lo": -1.0, "hi": 1.0}}}"#,
    );
    let out = bin()
        .args(["moments", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.sigma2"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["asymptotic", "--config"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_domain_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // Distortion targets above sigma2 pass config validation (they are
    // positive and finite) but fail in the rate computation.
    let config = write_config(dir.path(), "wide.json", r#"{"region": {"d_grid": [2.0]}}"#);
    let out = bin()
        .args(["asymptotic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn asymptotic_schemas_parse() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);
    let out = dir.path().join("out");
    run_ok("asymptotic", &config, &out, &[]);

    let rates = parse_rows(&read(&out, "asymptotic_rates.csv"), "d,rate_bits");
    assert_eq!(rates.len(), 1);
    let r: f64 = rates[0][1].parse().unwrap();
    assert!((r - 0.5 * (1.0f64 / 0.8).log2()).abs() < 1e-12);

    let regions = parse_rows(
        &read(&out, "asymptotic_regions.csv"),
        "n,epsilon,D,G,rate_bits,regime,delta",
    );
    assert_eq!(regions.len(), 2);
    for row in &regions {
        assert_eq!(row[0], "0");
        assert_eq!(row[5], "asymptotic");
        let rate: f64 = row[4].parse().unwrap();
        assert!((rate - r).abs() < 1e-12, "no trade-off in the limit");
    }

    let loss = parse_rows(
        &read(&out, "root_loss_bounds.csv"),
        "rate_bits,lower,upper,achieved",
    );
    assert_eq!(loss.len(), 1);
    let lower: f64 = loss[0][1].parse().unwrap();
    let upper: f64 = loss[0][2].parse().unwrap();
    let achieved: f64 = loss[0][3].parse().unwrap();
    assert_eq!(achieved, lower);
    assert!(achieved < upper);
}

#[test]
fn moments_json_has_envelope_and_moment_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);
    let out = dir.path().join("out");
    run_ok("moments", &config, &out, &["--seed", "3"]);

    let v: serde_json::Value = serde_json::from_str(&read(&out, "moments.json")).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["data"]["j"].as_array().unwrap().len(), 4);
    assert_eq!(v["data"]["v"].as_array().unwrap().len(), 16);
    let j0 = v["data"]["j"][0].as_f64().unwrap();
    let j1 = v["data"]["j"][1].as_f64().unwrap();
    assert!((j0 + j1 - 0.5).abs() < 0.4, "rate sum way off: {}", j0 + j1);
}

#[test]
fn regions_sweep_schema_and_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);
    let out = dir.path().join("out");
    run_ok("regions", &config, &out, &[]);

    let header = "n,epsilon,D,G,rate_bits,regime,delta";
    let rows = parse_rows(&read(&out, "regions.csv"), header);
    assert_eq!(rows.len(), 4, "2 block lengths x 2 generalization targets");
    let rate = |n: &str, g: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == n && r[3] == g)
            .unwrap_or_else(|| panic!("missing row {n}/{g}"))[4]
            .parse()
            .unwrap()
    };
    // Rate is nonincreasing in the generalization target at fixed (n, D).
    assert!(rate("200", "1.3") >= rate("200", "1.6") - 1e-9);
    assert!(rate("500", "1.3") >= rate("500", "1.6") - 1e-9);
    // Longer blocks approach the asymptotic rate from above.
    let asym = 0.5 * (1.0f64 / 0.8).log2();
    for g in ["1.3", "1.6"] {
        assert!(rate("500", g) < rate("200", g));
        assert!(rate("500", g) > asym - 0.01);
        assert!(rate("200", g) - asym < 0.9, "finite penalty blew up");
    }

    let floors = parse_rows(&read(&out, "region_gfloors.csv"), header);
    assert_eq!(floors.len(), 2);
    for row in &floors {
        assert_eq!(row[5], "finite");
        let rate: f64 = row[4].parse().unwrap();
        assert!(rate <= 1.2 + 1e-9, "rate {rate} above its budget");
        let g: f64 = row[3].parse().unwrap();
        let delta: f64 = row[6].parse().unwrap();
        assert!((delta - (g - 1.0)).abs() < 1e-12);
    }
    // The floor relaxes as blocks grow.
    let f200: f64 = floors.iter().find(|r| r[0] == "200").unwrap()[3]
        .parse()
        .unwrap();
    let f500: f64 = floors.iter().find(|r| r[0] == "500").unwrap()[3]
        .parse()
        .unwrap();
    assert!(f500 <= f200 + 0.006, "floors {f200} -> {f500}");
}

#[test]
fn codec_outputs_parse_and_agree_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);
    let out = dir.path().join("out");
    run_ok("codec", &config, &out, &[]);

    let rows = parse_rows(
        &read(&out, "codec_trials.csv"),
        "trial_id,encode_ok,debin_ok,cause,distortion,gen_error",
    );
    assert_eq!(rows.len(), 12);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], k.to_string());
        for flag in [&row[1], &row[2]] {
            assert!(flag == "true" || flag == "false");
        }
        assert!(
            ["none", "no-typical-codeword", "no-candidate", "ambiguous"].contains(&row[3].as_str()),
            "cause {}",
            row[3]
        );
        // NaN parses as a float; every numeric field must.
        let _: f64 = row[4].parse().unwrap();
        let _: f64 = row[5].parse().unwrap();
        let ok = row[2] == "true";
        assert_eq!(row[3] == "none", ok);
        assert_eq!(row[4].parse::<f64>().unwrap().is_nan(), !ok);
    }

    let summary: serde_json::Value =
        serde_json::from_str(&read(&out, "codec_summary.json")).unwrap();
    let d = &summary["data"];
    assert_eq!(d["n_trials"], 12);
    let counts: usize = d["cause_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c[1].as_u64().unwrap() as usize)
        .sum();
    assert_eq!(counts, 12);
    let emp = d["empirical_excess"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&emp));
    let bound = d["bound"]["total"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&bound));
}

#[test]
fn seed_flag_beats_environment_which_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);

    let out_flag = dir.path().join("flag");
    let output = bin()
        .args(["asymptotic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_flag)
        .args(["--seed", "3"])
        .env("WZLAB_SEED", "5")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(seed_of(&read(&out_flag, "asymptotic_rates.csv")), 3);

    let out_env = dir.path().join("env");
    let output = bin()
        .args(["asymptotic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_env)
        .env("WZLAB_SEED", "5")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(seed_of(&read(&out_env, "asymptotic_rates.csv")), 5);

    let out_cfg = dir.path().join("cfg");
    run_ok("asymptotic", &config, &out_cfg, &[]);
    assert_eq!(seed_of(&read(&out_cfg, "asymptotic_rates.csv")), 7);

    let broken = bin()
        .args(["asymptotic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .env("WZLAB_SEED", "fast")
        .output()
        .unwrap();
    assert_eq!(broken.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok("codec", &config, &a, &["--threads", "1"]);
    run_ok("codec", &config, &b, &["--threads", "4"]);
    assert_eq!(read(&a, "codec_trials.csv"), read(&b, "codec_trials.csv"));
    assert_eq!(
        read(&a, "codec_summary.json"),
        read(&b, "codec_summary.json")
    );

    let c = dir.path().join("c");
    let d = dir.path().join("d");
    run_ok("moments", &config, &c, &["--threads", "1"]);
    run_ok("moments", &config, &d, &["--threads", "4"]);
    assert_eq!(read(&c, "moments.json"), read(&d, "moments.json"));
}

#[test]
fn json_format_emits_envelopes_for_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "q.json", QUICK);
    let out = dir.path().join("out");
    run_ok("regions", &config, &out, &["--format", "json"]);

    for name in ["regions.json", "region_gfloors.json"] {
        let v: serde_json::Value = serde_json::from_str(&read(&out, name)).unwrap();
        assert!(v["data"].is_array(), "{name} data is not an array");
        let first = &v["data"][0];
        for key in [
            "n",
            "epsilon",
            "d_target",
            "g_target",
            "rate_bits",
            "regime",
            "delta",
        ] {
            assert!(!first[key].is_null(), "{name} row missing {key}");
        }
    }
    assert!(!out.join("regions.csv").exists());
}
