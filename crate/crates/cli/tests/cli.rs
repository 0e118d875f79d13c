use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use haloscope_cli::output::{read_csv, sha256_file};

fn haloscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haloscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_documents_every_subcommand_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("simulate", &["--duration", "--name", "--config", "--seed", "--out"]),
        ("serve", &["--endpoint", "--run", "--chunk", "--max-retries", "--drop-after"]),
        ("collect", &["--endpoint", "--tolerance", "--deadline"]),
        ("correlate", &["--run"]),
        ("scan", &["--run", "--trials", "--cl"]),
        ("inject", &["--frequency", "--epsilon", "--trials", "--cl"]),
        ("limits", &["--run", "--cl"]),
        ("reproduce-paper", &["--profile", "--compare"]),
        ("export-plots", &["--artifacts"]),
    ];
    for (cmd, flags) in cases {
        let o = haloscope(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(haloscope(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(haloscope(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(haloscope(&["reproduce-paper", "--profile", "huge"]).status.code(), Some(2));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\n  \"seed\": 1,\n  \"detection\": { \"cll\": 0.9 }\n}\n").unwrap();
    let o = haloscope(&["--config", p(&cfg), "simulate", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_run_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = haloscope(&["correlate", "--run", p(&dir.path().join("nope.amlr")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_deterministic_and_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = haloscope(&["simulate", "--duration", "20", "--seed", "5", "--out", p(d)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(sha256_file(&a.join("run.amlr")).unwrap(), sha256_file(&b.join("run.amlr")).unwrap());
    assert_eq!(
        fs::read(a.join("run.amlr.json")).unwrap(),
        fs::read(b.join("run.amlr.json")).unwrap()
    );
    let side: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run.amlr.json")).unwrap()).unwrap();
    assert_eq!(side["n_records"], 15);
    assert_eq!(side["samples_per_record"], 20_000);
    assert!(side["spec_hash"].as_str().unwrap().len() == 64);
    assert!(side["tool_version"].as_str().unwrap().starts_with("haloscope"));
}

#[test]
fn zero_duration_is_a_valid_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = haloscope(&["simulate", "--duration", "0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, run) = haloscope_wire::read_run_file(&dir.path().join("run.amlr")).unwrap();
    assert_eq!(run.records.len(), 15);
    assert!(run.records.iter().all(|r| r.samples.is_empty()));
}

#[test]
fn data_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_haloscope"))
        .args(["simulate", "--duration", "1"])
        .env(haloscope_wire::DATA_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("run.amlr").exists());
}

#[test]
fn export_plots_needs_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = haloscope(&["export-plots", "--artifacts", p(dir.path()), "--out", p(&dir.path().join("plots"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("plots").join("fig_sensitivity.csv").exists());
}

/// correlate, limits and scan on a short run: schemas, stamps and
/// byte-identical reruns.
#[test]
fn analysis_pipeline_schemas_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{ "run_spec": "spec.json", "seed": 11 }"#).unwrap();
    let spec = haloscope::simnet::RunSpec::two_station_default(11).with_duration(200.0);
    fs::write(dir.path().join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let c = p(&cfg);
    let run = dir.path().join("run.amlr");
    let o = haloscope(&["--config", c, "simulate", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let mut hashes = Vec::new();
    for out in ["o1", "o2"] {
        let out = dir.path().join(out);
        for cmd in ["correlate", "limits", "scan"] {
            let o = haloscope(&["--config", c, cmd, "--run", p(&run), "--out", p(&out)]);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let mut names: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        hashes.push(
            names
                .iter()
                .map(|n| (n.clone(), sha256_file(&out.join(n)).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(hashes[0], hashes[1]);

    let out = dir.path().join("o1");
    let sens = read_csv(&out.join("sensitivity.csv")).unwrap();
    assert_eq!(sens.header, ["N", "fT_per_sqrtHz"]);
    assert_eq!(sens.rows.len(), 105);
    assert_eq!(sens.config_hash.as_deref().map(str::len), Some(64));
    let avg = read_csv(&out.join("average_cross_station_only.csv")).unwrap();
    assert_eq!(avg.header, ["frequency_hz", "mean_real", "bin_sigma"]);
    assert_eq!(avg.rows.len(), 49_900);
    let excl = read_csv(&out.join("exclusion.csv")).unwrap();
    assert_eq!(excl.header, ["mass_eV", "epsilon_95"]);
    let prov: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("exclusion.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["config_hash"].as_str(), sens.config_hash.as_deref());
    assert!(prov["provenance"]["run_id"].is_string());

    let jsonl = fs::read_to_string(out.join("candidates.jsonl")).unwrap();
    let mut lines = jsonl.lines();
    assert!(lines.next().unwrap().starts_with("# haloscope "));
    for l in lines.take(20) {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        for k in ["frequency", "snr", "implied_epsilon", "veto_status", "reasons"] {
            assert!(v.get(k).is_some(), "candidate lacks {k}");
        }
    }

    let (meta, arrays) = haloscope_cli::commands::read_container(&out.join("spectra.amlx")).unwrap();
    assert_eq!(meta["grid"]["len"], 49_900);
    assert_eq!(arrays.iter().filter(|(n, _)| n.starts_with("pair:") && n.ends_with(":re")).count(), 105);
    let (_, mean) = arrays.iter().find(|(n, _)| n == "average:cross_station_only:mean_real").unwrap();
    let from_csv: f64 = avg.rows[123][1].parse().unwrap();
    assert_eq!(mean[123], from_csv);

    let plots = dir.path().join("plots");
    let o = haloscope(&["export-plots", "--artifacts", p(&out), "--out", p(&plots)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&plots.join("fig_sensitivity.csv")).unwrap().header, ["N", "fT_per_sqrtHz"]);
    assert_eq!(read_csv(&plots.join("fig_exclusion.csv")).unwrap().header, ["mass_eV", "epsilon_95"]);
    assert_eq!(
        read_csv(&plots.join("fig_snr_histogram.csv")).unwrap().header,
        ["snr_bin", "count", "subset_label"]
    );
}

#[test]
fn constants_dump_is_json() {
    let o = haloscope(&["constants"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["constants"].is_object() || v["constants"].is_array());
}
