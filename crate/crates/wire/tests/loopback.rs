use std::collections::BTreeSet;
use std::net::TcpListener;
use std::thread;

use haloscope::simnet::{generate_run, RunData, RunSpec, SensorKey};
use haloscope_wire::{
    read_run, record_frames, run_collector_on, run_node, write_run, Collector, CollectorConfig, FaultPlan,
    NodeConfig, WireError,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn keys(run: &RunData) -> Vec<SensorKey> {
    run.records.iter().map(|r| r.key()).collect()
}

/// Stream every station of `run` from its own node thread and collect.
fn stream(run: &RunData, fault: FaultPlan) -> (RunData, usize, usize) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = listener.local_addr().unwrap().to_string();
    let cfg = CollectorConfig::new(keys(run));
    let collector = thread::spawn(move || run_collector_on(listener, &cfg));
    let stations: BTreeSet<String> = run.records.iter().map(|r| r.station_id.clone()).collect();
    let nodes: Vec<_> = stations
        .into_iter()
        .enumerate()
        .map(|(i, st)| {
            let records: Vec<_> = run.records.iter().filter(|r| r.station_id == st).cloned().collect();
            let endpoint = endpoint.clone();
            let cfg = NodeConfig {
                fault: if i == 0 { fault.clone() } else { FaultPlan::default() },
                ..NodeConfig::default()
            };
            thread::spawn(move || run_node(&records, &endpoint, &cfg).unwrap())
        })
        .collect();
    let reports: Vec<_> = nodes.into_iter().map(|n| n.join().unwrap()).collect();
    let (collected, report) = collector.join().unwrap().unwrap();
    assert_eq!(report.total_trimmed(), 0);
    (
        collected,
        reports.iter().map(|r| r.frames).sum(),
        reports.iter().map(|r| r.reconnects).sum(),
    )
}

/// simulate -> stream over loopback (with dropped connections) -> collect
/// equals simulate -> write -> read, bitwise.
#[test]
fn full_run_survives_loopback_and_disconnects() {
    let spec = RunSpec::two_station_default(3);
    let run = generate_run(&spec).unwrap();
    assert_eq!(run.records.len(), 15);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.amlr");
    write_run(&run, &path, &spec.spec_hash()).unwrap();
    let from_file = read_run(&path).unwrap();
    assert_eq!(from_file, run);

    let fault = FaultPlan {
        disconnect_after: [0, 17, 500, 900].into_iter().collect(),
    };
    let (collected, frames, reconnects) = stream(&run, fault);
    assert_eq!(frames, 15 * 489);
    assert_eq!(reconnects, 4);
    assert_eq!(collected, from_file);
    for (a, b) in collected.records.iter().zip(&run.records) {
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn empty_run_streams_cleanly() {
    let spec = RunSpec::two_station_default(3).with_duration(0.0);
    let run = generate_run(&spec).unwrap();
    let (collected, frames, _) = stream(&run, FaultPlan::default());
    assert_eq!(frames, 0);
    assert!(collected.records.iter().all(|r| r.samples.is_empty()));
    assert_eq!(keys(&collected), keys(&run));
}

/// Collector output does not depend on frame arrival order, including
/// duplicated frames.
#[test]
fn collector_is_permutation_invariant() {
    let spec = RunSpec::two_station_default(4).with_duration(60.0);
    let run = generate_run(&spec).unwrap();
    let mut frames = Vec::new();
    for r in &run.records {
        let mut f = record_frames(r, 4096).unwrap();
        let end = f.last().unwrap().end_time_ns();
        let mut marker = f[0].clone();
        marker.samples.clear();
        marker.start_time_gps_ns = end;
        f.push(marker);
        frames.extend(f);
    }
    let expected = keys(&run);
    let mut reference = None;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for shuffle in 0..10 {
        let mut order = frames.clone();
        order.extend(frames.iter().take(shuffle * 3).cloned());
        order.shuffle(&mut rng);
        let mut c = Collector::new();
        for f in order {
            c.ingest(f).unwrap();
        }
        assert_eq!(c.duplicates(), shuffle * 3);
        let (out, _) = c.finish(&expected, 1e-5).unwrap();
        match &reference {
            None => {
                assert_eq!(out, run);
                reference = Some(out);
            }
            Some(r) => assert_eq!(&out, r),
        }
    }
}

#[test]
fn offset_node_is_trimmed_and_off_grid_node_rejected() {
    let spec = RunSpec::two_station_default(5).with_duration(30.0);
    let run = generate_run(&spec).unwrap();
    let expected = keys(&run);
    let ingest = |run: &RunData| {
        let mut c = Collector::new();
        for r in &run.records {
            let frames = record_frames(r, 4096).unwrap();
            let mut marker = frames[0].clone();
            marker.start_time_gps_ns = frames.last().unwrap().end_time_ns();
            marker.samples.clear();
            for f in frames.into_iter().chain([marker]) {
                c.ingest(f).unwrap();
            }
        }
        c
    };

    let mut late = run.clone();
    late.records[4].start_time += 2_000_000_000;
    let (out, report) = ingest(&late).finish(&expected, 10e-6).unwrap();
    assert!(out.is_aligned());
    assert_eq!(out.records[0].samples.len(), 30_000 - 2_000);
    assert_eq!(report.total_trimmed(), 15 * 2_000);

    // Half a sample (500 us) off the common grid.
    let mut skewed = run.clone();
    skewed.records[7].start_time += 5_500_000;
    match ingest(&skewed).finish(&expected, 10e-6) {
        Err(WireError::Misaligned { sensor, .. }) => assert_eq!(sensor, expected[7].to_string()),
        other => panic!("{other:?}"),
    }
}
