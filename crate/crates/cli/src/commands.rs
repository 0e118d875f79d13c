//! Subcommand implementations, independent of argument parsing.

use std::collections::BTreeSet;
use std::io::Read;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use haloscope::correlator::{sensitivity_curve, spectra_bundle, AveragedSpectrum, SpectraBundle, Subset, Weighting};
use haloscope::detect::{analyze, inject_and_recover_many, Threshold, VetoReason};
use haloscope::physics::{DpdmParams, CONSTANTS};
use haloscope::simnet::{generate_run, RunData};
use haloscope_wire::{
    read_run_file, run_collector_on, run_node, run_uuid, spec_hash_warning, write_run, CollectorConfig, FaultPlan,
    NodeConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::config::Resolved;
use crate::error::{CliError, Result};
use crate::output::{num, read_csv, Output, TOOL_VERSION};

/// A run from a file, or simulated from the config when no file is given.
pub struct LoadedRun {
    pub run: RunData,
    pub run_id: String,
    pub spec_hash: String,
    pub spec_hash_mismatch: bool,
}

pub fn load_run(cfg: &Resolved, path: Option<&Path>) -> Result<LoadedRun> {
    let expected = cfg.spec.spec_hash();
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Data(format!("run file {} does not exist", p.display())));
            }
            let (header, run) = read_run_file(p)?;
            // Logged as a warning; also recorded in the outputs.
            let warning = spec_hash_warning(&header, &expected);
            Ok(LoadedRun {
                run,
                run_id: header.run_id.to_string(),
                spec_hash: header.spec_hash,
                spec_hash_mismatch: warning.is_some(),
            })
        }
        None => Ok(LoadedRun {
            run: generate_run(&cfg.spec)?,
            run_id: run_uuid(&expected).to_string(),
            spec_hash: expected,
            spec_hash_mismatch: false,
        }),
    }
}

pub fn constants(out: Option<&Output>) -> Result<String> {
    let value = json!({ "tool_version": TOOL_VERSION, "constants": CONSTANTS });
    let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(out) = out {
        out.json("constants.json", &json!({ "constants": CONSTANTS }))?;
    }
    Ok(text)
}

#[derive(Debug, Serialize)]
pub struct RunSidecar {
    pub run_file: String,
    pub run_id: String,
    pub spec_hash: String,
    pub n_records: usize,
    pub samples_per_record: usize,
    pub sample_rate_hz: f64,
    pub start_time_gps_ns: u64,
}

fn sidecar(path: &Path, run: &RunData, run_id: String, spec_hash: String) -> RunSidecar {
    let first = run.records.first();
    RunSidecar {
        run_file: path.file_name().unwrap_or_default().to_string_lossy().into(),
        run_id,
        spec_hash,
        n_records: run.records.len(),
        samples_per_record: first.map_or(0, |r| r.samples.len()),
        sample_rate_hz: first.map_or(0.0, |r| r.sample_rate),
        start_time_gps_ns: first.map_or(0, |r| r.start_time),
    }
}

fn sidecar_name(run_file: &str) -> String {
    format!("{run_file}.json")
}

/// Simulate the configured run into `out/<name>` plus a JSON sidecar.
pub fn simulate(cfg: &Resolved, out: &Output, name: &str) -> Result<PathBuf> {
    let run = generate_run(&cfg.spec)?;
    let path = out.path(name);
    let header = write_run(&run, &path, &cfg.spec.spec_hash())?;
    out.json(
        &sidecar_name(name),
        &sidecar(&path, &run, header.run_id.to_string(), header.spec_hash),
    )?;
    Ok(path)
}

pub struct ServeOptions {
    pub chunk: usize,
    pub max_retries: u32,
    pub drop_after: Vec<usize>,
}

/// Stream a run to a collector, one node thread per station.
pub fn serve(run: &RunData, endpoint: &str, opts: &ServeOptions) -> Result<usize> {
    let stations: BTreeSet<String> = run.records.iter().map(|r| r.station_id.clone()).collect();
    let handles: Vec<_> = stations
        .into_iter()
        .enumerate()
        .map(|(i, st)| {
            let records: Vec<_> = run.records.iter().filter(|r| r.station_id == st).cloned().collect();
            let endpoint = endpoint.to_string();
            let cfg = NodeConfig {
                chunk: opts.chunk,
                max_retries: opts.max_retries,
                fault: FaultPlan {
                    disconnect_after: if i == 0 { opts.drop_after.iter().copied().collect() } else { BTreeSet::new() },
                },
                ..NodeConfig::default()
            };
            thread::spawn(move || run_node(&records, &endpoint, &cfg))
        })
        .collect();
    let mut frames = 0;
    for h in handles {
        frames += h.join().map_err(|_| CliError::Data("node thread panicked".into()))??.frames;
    }
    Ok(frames)
}

pub struct CollectOptions {
    pub tolerance_s: f64,
    pub deadline: Duration,
}

/// Collect the configured sensors from `endpoint` and write a run file.
pub fn collect(cfg: &Resolved, endpoint: &str, out: &Output, name: &str, opts: &CollectOptions) -> Result<PathBuf> {
    let listener = TcpListener::bind(endpoint).map_err(|e| CliError::Usage(format!("cannot listen on {endpoint}: {e}")))?;
    eprintln!("collector listening on {}", listener.local_addr()?);
    let expected = cfg
        .spec
        .sensors
        .iter()
        .map(|s| haloscope::simnet::SensorKey {
            station_id: s.station_id.clone(),
            sensor_id: s.sensor_id.clone(),
        })
        .collect();
    let ccfg = CollectorConfig {
        expected,
        tolerance_s: opts.tolerance_s,
        deadline: opts.deadline,
    };
    let (run, report) = run_collector_on(listener, &ccfg)?;
    let path = out.path(name);
    let header = write_run(&run, &path, &cfg.spec.spec_hash())?;
    let mut side = serde_json::to_value(sidecar(&path, &run, header.run_id.to_string(), header.spec_hash))
        .map_err(|e| CliError::Data(e.to_string()))?;
    side["trimmed_samples"] = report.total_trimmed().into();
    side["duplicate_frames"] = report.duplicates.into();
    out.json(&sidecar_name(name), &side)?;
    Ok(path)
}

/// Binary container written by `correlate`:
///
/// ```text
/// "AMLX" version(u8 = 1) meta_len(u32 LE) meta(JSON, meta_len bytes)
/// then, for each entry of meta.arrays in order, meta.grid.len f64 LE values
/// ```
/// `meta.arrays` names each array: `auto:<sensor>:{re,re_var}`,
/// `pair:<a>|<b>:{re,im,re_var}` and `average:<subset>:{mean_real,bin_sigma}`.
pub const CONTAINER_MAGIC: &[u8; 4] = b"AMLX";

fn container(bundle: &SpectraBundle, averages: &[AveragedSpectrum], cfg_hash: &str, run_id: &str) -> Result<Vec<u8>> {
    let mut names = Vec::new();
    let mut arrays: Vec<Vec<f64>> = Vec::new();
    for a in &bundle.autos {
        names.push(format!("auto:{}:re", a.a));
        arrays.push(a.real());
        names.push(format!("auto:{}:re_var", a.a));
        arrays.push(a.re_var.clone());
    }
    for p in &bundle.pairs {
        let id = format!("pair:{}|{}", p.a, p.b);
        names.push(format!("{id}:re"));
        arrays.push(p.real());
        names.push(format!("{id}:im"));
        arrays.push(p.values.iter().map(|v| v.im).collect());
        names.push(format!("{id}:re_var"));
        arrays.push(p.re_var.clone());
    }
    for avg in averages {
        names.push(format!("average:{}:mean_real", avg.subset_label.label()));
        arrays.push(avg.mean_real.clone());
        names.push(format!("average:{}:bin_sigma", avg.subset_label.label()));
        arrays.push(avg.bin_sigma.clone());
    }
    let meta = json!({
        "tool_version": TOOL_VERSION,
        "config_hash": cfg_hash,
        "run_id": run_id,
        "grid": bundle.grid,
        "sensors": bundle.sensors.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "n_segments": bundle.n_segments,
        "effective_segments": bundle.effective_segments,
        "window": bundle.window,
        "units": "T^2/Hz",
        "arrays": names,
    });
    let meta = serde_json::to_vec(&meta).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = Vec::with_capacity(9 + meta.len() + arrays.len() * bundle.grid.len * 8);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.push(1);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for a in &arrays {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Read a `correlate` container back: metadata and named arrays.
pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<(String, Vec<f64>)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| CliError::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 9 || &bytes[..4] != CONTAINER_MAGIC || bytes[4] != 1 {
        return Err(bad("not a spectra container"));
    }
    let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(bytes.get(9..9 + meta_len).ok_or_else(|| bad("truncated"))?)
        .map_err(|e| bad(&e.to_string()))?;
    let len = meta["grid"]["len"].as_u64().ok_or_else(|| bad("no grid"))? as usize;
    let names: Vec<String> = serde_json::from_value(meta["arrays"].clone()).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[9 + meta_len..];
    if body.len() != names.len() * len * 8 {
        return Err(bad("body size does not match metadata"));
    }
    let arrays = names
        .into_iter()
        .zip(body.chunks_exact(len * 8))
        .map(|(n, c)| (n, c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()))
        .collect();
    Ok((meta, arrays))
}

/// All spectra, the three subset averages and the sensitivity curve.
pub fn correlate(cfg: &Resolved, loaded: &LoadedRun, out: &Output) -> Result<()> {
    let bundle = spectra_bundle(&loaded.run, &cfg.spectral)?;
    let mut averages = Vec::new();
    for subset in [Subset::All, Subset::CrossStationOnly, Subset::SameStationOnly] {
        match bundle.average(subset, cfg.detection.weighting) {
            Ok(avg) => averages.push(avg),
            Err(haloscope::Error::EmptySubset(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    out.bytes("spectra.amlx", &container(&bundle, &averages, &out.config_hash, &loaded.run_id)?)?;
    for avg in &averages {
        out.csv(
            &format!("average_{}.csv", avg.subset_label.label()),
            &["frequency_hz", "mean_real", "bin_sigma"],
            avg.grid
                .frequencies()
                .into_iter()
                .zip(avg.mean_real.iter().zip(&avg.bin_sigma))
                .map(|(f, (m, s))| vec![num(f), num(*m), num(*s)]),
        )?;
    }
    let f_ref = bundle.grid.frequency(bundle.grid.len / 2);
    let curve = sensitivity_curve(&bundle.pairs, f_ref)?;
    out.csv(
        "sensitivity.csv",
        &["N", "fT_per_sqrtHz"],
        curve.iter().map(|p| vec![p.n.to_string(), num(p.asd * 1e15)]),
    )?;
    out.json(
        "spectra.json",
        &json!({
            "run_id": loaded.run_id,
            "spec_hash": loaded.spec_hash,
            "spec_hash_mismatch": loaded.spec_hash_mismatch,
            "pairs": bundle.pairs.len(),
            "bins": bundle.grid.len,
            "n_segments": bundle.n_segments,
            "sensitivity_reference_hz": f_ref,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    frequency: f64,
    snr: f64,
    threshold: f64,
    implied_epsilon: f64,
    veto_status: haloscope::detect::VetoStatus,
    reasons: &'a [VetoReason],
}

pub struct ScanSummary {
    pub bins: usize,
    pub candidates: usize,
    pub passed: usize,
}

/// Candidates above the Monte-Carlo threshold, with vetoes.
pub fn scan(cfg: &Resolved, loaded: &LoadedRun, out: &Output) -> Result<ScanSummary> {
    let analysis = analyze(&loaded.run, &cfg.spec, &cfg.analysis(), None)?;
    let lines: Vec<_> = analysis
        .candidates
        .iter()
        .map(|c| CandidateLine {
            frequency: c.frequency,
            snr: c.snr,
            threshold: c.threshold,
            implied_epsilon: c.implied_epsilon,
            veto_status: c.veto_status,
            reasons: &c.reasons,
        })
        .collect();
    out.jsonl("candidates.jsonl", &lines)?;
    let passed = analysis.candidates.iter().filter(|c| !c.is_rejected()).count();
    let label = analysis.average.subset_label.label();
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for &s in &analysis.snr.snr {
        *counts.entry((s / 0.25).floor() as i64).or_default() += 1;
    }
    out.csv(
        "snr_histogram.csv",
        &["snr_bin", "count", "subset_label"],
        counts
            .into_iter()
            .map(|(k, c)| vec![num((k as f64 + 0.5) * 0.25), c.to_string(), label.to_string()]),
    )?;
    let summary = ScanSummary {
        bins: analysis.snr.snr.len(),
        candidates: analysis.candidates.len(),
        passed,
    };
    out.json(
        "scan.json",
        &json!({
            "run_id": loaded.run_id,
            "spec_hash_mismatch": loaded.spec_hash_mismatch,
            "subset": label,
            "bins": summary.bins,
            "candidates": summary.candidates,
            "flagged_fraction": summary.candidates as f64 / summary.bins as f64,
            "passed_vetoes": passed,
            "threshold": analysis.threshold,
        }),
    )?;
    Ok(summary)
}

/// Inject tones, rerun the pipeline and report recovery and vetoes.
pub fn inject(cfg: &Resolved, loaded: &LoadedRun, tones: &[DpdmParams], out: &Output) -> Result<Vec<Vec<String>>> {
    let acfg = cfg.analysis();
    let (analysis, recs) = inject_and_recover_many(&loaded.run, &cfg.spec, tones, &acfg, None)?;
    let bins: Vec<usize> = recs.iter().map(|r| r.bin).collect();
    let vetoed = if acfg.run_vetoes {
        analysis.veto_bins(&bins, &acfg.veto)?
    } else {
        Vec::new()
    };
    let rows: Vec<Vec<String>> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (status, reasons) = match vetoed.get(i) {
                Some(c) => (
                    serde_json::to_string(&c.veto_status).unwrap().trim_matches('"').to_string(),
                    c.reasons
                        .iter()
                        .map(|x| serde_json::to_string(x).unwrap().trim_matches('"').to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
                None => ("not_run".into(), String::new()),
            };
            vec![
                num(r.frequency),
                num(r.injected_epsilon),
                num(r.recovered_epsilon),
                num(r.ratio()),
                num(r.snr),
                num(r.threshold),
                num(r.expected_snr),
                r.detected.to_string(),
                status,
                reasons,
            ]
        })
        .collect();
    out.csv(
        "injection.csv",
        &[
            "frequency_hz",
            "injected_epsilon",
            "recovered_epsilon",
            "ratio",
            "snr",
            "threshold",
            "expected_snr",
            "detected",
            "veto_status",
            "reasons",
        ],
        rows.clone(),
    )?;
    Ok(rows)
}

/// Exclusion curve CSV and provenance sidecar.
pub fn limits(cfg: &Resolved, loaded: &LoadedRun, out: &Output) -> Result<(f64, f64)> {
    let mut acfg = cfg.analysis();
    acfg.run_vetoes = false;
    let mut threshold = Threshold::constant(f64::INFINITY, acfg.cl);
    threshold.method = "not used: upper limit from per-bin sigma".into();
    let analysis = analyze(&loaded.run, &cfg.spec, &acfg, Some(threshold))?;
    let curve = analysis.exclusion_curve(acfg.cl, &loaded.run_id, &out.config_hash)?;
    out.csv(
        "exclusion.csv",
        &["mass_eV", "epsilon_95"],
        curve.masses.iter().zip(&curve.epsilon_95).map(|(m, e)| vec![num(*m), num(*e)]),
    )?;
    let slope = curve.log_slope();
    let top = *curve.frequencies.last().unwrap_or(&0.0);
    let at_top = curve.at_frequency(top).unwrap_or(f64::NAN);
    out.json(
        "exclusion.provenance.json",
        &json!({
            "provenance": curve.provenance,
            "subset": analysis.average.subset_label.label(),
            "weighting": match acfg.weighting { Weighting::Uniform => "uniform", Weighting::InverseVariance => "inverse_variance" },
            "frequency_range_hz": [curve.frequencies.first(), curve.frequencies.last()],
            "log_slope": slope,
            "spec_hash_mismatch": loaded.spec_hash_mismatch,
        }),
    )?;
    Ok((slope, at_top))
}

/// Plot-ready tables from earlier artifacts.
pub fn export_plots(artifacts: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let specs: [(&str, &str, &[&str]); 3] = [
        ("sensitivity.csv", "fig_sensitivity.csv", &["N", "fT_per_sqrtHz"]),
        ("exclusion.csv", "fig_exclusion.csv", &["mass_eV", "epsilon_95"]),
        ("snr_histogram.csv", "fig_snr_histogram.csv", &["snr_bin", "count", "subset_label"]),
    ];
    // Check everything before writing anything.
    let mut tables = Vec::new();
    for (src, _, columns) in specs {
        let path = artifacts.join(src);
        if !path.exists() {
            return Err(CliError::Data(format!("missing upstream artifact {}", path.display())));
        }
        let t = read_csv(&path)?;
        if t.header != *columns {
            return Err(CliError::Data(format!(
                "{} has columns {:?}, expected {:?}",
                path.display(),
                t.header,
                columns
            )));
        }
        tables.push(t);
    }
    let mut written = Vec::new();
    for ((_, dst, columns), t) in specs.iter().zip(tables) {
        let out = Output::new(out_dir, t.config_hash.as_deref().unwrap_or("unknown"))?;
        written.push(out.csv(dst, columns, t.rows)?);
    }
    Ok(written)
}
