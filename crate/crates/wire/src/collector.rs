use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use haloscope::simnet::{RunData, SensorKey, TimeSeriesRecord};

use crate::error::{Result, WireError};
use crate::frame::{read_frame, Frame};
use crate::node::ACK_MAGIC;

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    pub expected: Vec<SensorKey>,
    /// Largest accepted offset of a sensor's sample grid from the common grid.
    pub tolerance_s: f64,
    /// How long to wait for every expected sensor to finish streaming.
    pub deadline: Duration,
}

impl CollectorConfig {
    pub fn new(expected: Vec<SensorKey>) -> Self {
        Self {
            expected,
            tolerance_s: 10e-6,
            deadline: Duration::from_secs(120),
        }
    }
}

/// What alignment did to each sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// Sensor whose grid defines the common grid.
    pub reference: SensorKey,
    pub start_time_ns: u64,
    pub length: usize,
    /// Samples dropped from the (head, tail) of each record.
    pub trimmed: BTreeMap<SensorKey, (usize, usize)>,
    /// Sub-sample offset of each sensor's grid from the reference grid, s.
    pub grid_offsets_s: BTreeMap<SensorKey, f64>,
    pub duplicates: usize,
}

impl AlignmentReport {
    pub fn total_trimmed(&self) -> usize {
        self.trimmed.values().map(|(a, b)| a + b).sum()
    }
}

#[derive(Debug, Clone, Default)]
struct Assembly {
    frames: BTreeMap<u64, Frame>,
    /// Start time and rate of the end-of-stream marker (a zero-sample frame).
    end: Option<(u64, u32)>,
}

/// Order-independent reassembly of frames into records.
#[derive(Debug, Clone, Default)]
pub struct Collector {
    sensors: BTreeMap<SensorKey, Assembly>,
    duplicates: usize,
}

fn key_of(frame: &Frame) -> SensorKey {
    SensorKey {
        station_id: frame.station_id.clone(),
        sensor_id: frame.sensor_id.clone(),
    }
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one frame. Returns `false` for an exact duplicate; a duplicate
    /// start time with a different payload is an error.
    pub fn ingest(&mut self, frame: Frame) -> Result<bool> {
        let key = key_of(&frame);
        let entry = self.sensors.entry(key).or_default();
        let conflict = || WireError::ConflictingDuplicate {
            sensor: frame.sensor_label(),
            start_time_ns: frame.start_time_gps_ns,
        };
        if frame.samples.is_empty() {
            let marker = (frame.start_time_gps_ns, frame.sample_rate_mhz);
            return match entry.end {
                Some(t) if t == marker => {
                    self.duplicates += 1;
                    Ok(false)
                }
                Some(_) => Err(conflict()),
                None => {
                    entry.end = Some(marker);
                    Ok(true)
                }
            };
        }
        if let Some(other) = entry.frames.values().next() {
            if other.sample_rate_mhz != frame.sample_rate_mhz {
                return Err(WireError::Protocol(format!(
                    "{} changed sample rate mid-stream",
                    frame.sensor_label()
                )));
            }
        }
        match entry.frames.get(&frame.start_time_gps_ns) {
            Some(old) if old.same_payload(&frame) => {
                self.duplicates += 1;
                Ok(false)
            }
            Some(_) => Err(conflict()),
            None => {
                entry.frames.insert(frame.start_time_gps_ns, frame);
                Ok(true)
            }
        }
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// True once every expected sensor has sent its end marker.
    pub fn has_ended(&self, expected: &[SensorKey]) -> bool {
        expected
            .iter()
            .all(|k| self.sensors.get(k).is_some_and(|a| a.end.is_some()))
    }

    fn record(&self, key: &SensorKey) -> Result<TimeSeriesRecord> {
        let a = self
            .sensors
            .get(key)
            .filter(|a| a.end.is_some())
            .ok_or_else(|| WireError::MissingSensor(key.to_string()))?;
        let (end, end_rate) = a.end.unwrap();
        let incomplete = |detail: String| WireError::Incomplete {
            sensor: key.to_string(),
            detail,
        };
        let Some(first) = a.frames.values().next() else {
            return Ok(TimeSeriesRecord {
                station_id: key.station_id.clone(),
                sensor_id: key.sensor_id.clone(),
                start_time: end,
                sample_rate: end_rate as f64 / 1000.0,
                samples: Vec::new(),
            });
        };
        let mut samples = Vec::with_capacity(a.frames.values().map(|f| f.samples.len()).sum());
        let mut next = first.start_time_gps_ns;
        for f in a.frames.values() {
            if f.start_time_gps_ns != next {
                return Err(incomplete(format!(
                    "frame at {} ns does not follow {} ns",
                    f.start_time_gps_ns, next
                )));
            }
            samples.extend_from_slice(&f.samples);
            next = f.end_time_ns();
        }
        if next != end || end_rate != first.sample_rate_mhz {
            return Err(incomplete(format!("data ends at {next} ns, end marker at {end} ns")));
        }
        Ok(TimeSeriesRecord {
            station_id: key.station_id.clone(),
            sensor_id: key.sensor_id.clone(),
            start_time: first.start_time_gps_ns,
            sample_rate: first.sample_rate(),
            samples,
        })
    }

    /// Reassemble the expected sensors and trim them to the largest window
    /// on a common sample grid. Records come back in `expected` order.
    pub fn finish(&self, expected: &[SensorKey], tolerance_s: f64) -> Result<(RunData, AlignmentReport)> {
        if expected.is_empty() {
            return Err(WireError::Protocol("expected sensor list is empty".into()));
        }
        for k in self.sensors.keys().filter(|k| !expected.contains(k)) {
            log::warn!("ignoring frames from unexpected sensor {k}");
        }
        let records = expected.iter().map(|k| self.record(k)).collect::<Result<Vec<_>>>()?;
        let rate = records[0].sample_rate;
        if rate <= 0.0 {
            return Err(WireError::Protocol("zero sample rate".into()));
        }
        for r in &records {
            if r.sample_rate != rate {
                return Err(WireError::Protocol(format!(
                    "{} runs at {} Hz, others at {rate} Hz",
                    r.key(),
                    r.sample_rate
                )));
            }
        }
        align(records, rate, tolerance_s, self.duplicates)
    }
}

/// Grid index of `start` relative to `reference`, and the residual offset
/// in seconds.
fn grid_position(start: u64, reference: u64, rate: f64) -> (i64, f64) {
    let d = (start as i128 - reference as i128) as f64 * 1e-9;
    let n = (d * rate).round();
    (n as i64, d - n / rate)
}

fn align(
    records: Vec<TimeSeriesRecord>,
    rate: f64,
    tolerance_s: f64,
    duplicates: usize,
) -> Result<(RunData, AlignmentReport)> {
    // The reference grid is the one shared by the most sensors; ties go to
    // the earliest in sensor order, so one bad clock cannot reject the rest.
    let within = |r: &TimeSeriesRecord, reference: u64| grid_position(r.start_time, reference, rate).1.abs() <= tolerance_s;
    let mut best = (0usize, 0usize);
    for (i, candidate) in records.iter().enumerate() {
        let votes = records.iter().filter(|r| within(r, candidate.start_time)).count();
        let better = votes > best.1
            || (votes == best.1 && records[i].key() < records[best.0].key());
        if better {
            best = (i, votes);
        }
    }
    let reference = records[best.0].start_time;
    let reference_key = records[best.0].key();
    let mut offsets = BTreeMap::new();
    let mut index = Vec::with_capacity(records.len());
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].key());
    for &i in &order {
        let r = &records[i];
        let (n, off) = grid_position(r.start_time, reference, rate);
        if off.abs() > tolerance_s {
            return Err(WireError::Misaligned {
                sensor: r.key().to_string(),
                offset_s: off,
                tolerance_s,
            });
        }
        offsets.insert(r.key(), off);
        index.push((i, n));
    }
    index.sort_by_key(|&(i, _)| i);
    let from = index.iter().map(|&(_, n)| n).max().unwrap();
    let to = index
        .iter()
        .map(|&(i, n)| n + records[i].samples.len() as i64)
        .min()
        .unwrap();
    if to < from {
        return Err(WireError::Protocol("sensor records do not overlap in time".into()));
    }
    let length = (to - from) as usize;
    let start_time_ns = (reference as i128 + (from as f64 * 1e9 / rate).round() as i128) as u64;

    let mut trimmed = BTreeMap::new();
    let aligned = records
        .into_iter()
        .zip(&index)
        .map(|(r, &(_, n))| {
            let head = (from - n) as usize;
            trimmed.insert(r.key(), (head, r.samples.len() - head - length));
            TimeSeriesRecord {
                samples: r.samples[head..head + length].to_vec(),
                start_time: start_time_ns,
                ..r
            }
        })
        .collect();
    let report = AlignmentReport {
        reference: reference_key,
        start_time_ns,
        length,
        trimmed,
        grid_offsets_s: offsets,
        duplicates,
    };
    Ok((RunData { records: aligned }, report))
}

/// Listen on `endpoint` and collect a run from concurrent node sessions.
pub fn run_collector(endpoint: &str, cfg: &CollectorConfig) -> Result<(RunData, AlignmentReport)> {
    let listener = TcpListener::bind(endpoint)?;
    log::info!("collector listening on {}", listener.local_addr()?);
    run_collector_on(listener, cfg)
}

fn session(stream: TcpStream, state: Arc<Mutex<Collector>>, fatal: Arc<Mutex<Option<WireError>>>) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut reader = std::io::BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = stream;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                // A damaged frame is not acked; the node resends it.
                log::debug!("session {peer}: {e}");
                return;
            }
        };
        let start = frame.start_time_gps_ns;
        let result = state.lock().unwrap().ingest(frame);
        if let Err(e) = result {
            log::error!("session {peer}: {e}");
            fatal.lock().unwrap().get_or_insert(e);
            return;
        }
        let mut ack = Vec::with_capacity(12);
        ack.extend_from_slice(ACK_MAGIC);
        ack.extend_from_slice(&start.to_le_bytes());
        if writer.write_all(&ack).is_err() {
            return;
        }
    }
}

/// [`run_collector`] on an already bound listener.
pub fn run_collector_on(listener: TcpListener, cfg: &CollectorConfig) -> Result<(RunData, AlignmentReport)> {
    if cfg.expected.is_empty() {
        return Err(WireError::Protocol("expected sensor list is empty".into()));
    }
    listener.set_nonblocking(true)?;
    let state = Arc::new(Mutex::new(Collector::new()));
    let fatal: Arc<Mutex<Option<WireError>>> = Arc::new(Mutex::new(None));
    let mut open: Vec<TcpStream> = Vec::new();
    let mut workers = Vec::new();
    let deadline = Instant::now() + cfg.deadline;
    let outcome = loop {
        if let Some(e) = fatal.lock().unwrap().take() {
            break Err(e);
        }
        if state.lock().unwrap().has_ended(&cfg.expected) {
            break Ok(());
        }
        if Instant::now() >= deadline {
            let c = state.lock().unwrap();
            let missing = cfg
                .expected
                .iter()
                .filter(|k| !c.has_ended(std::slice::from_ref(k)))
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            break Err(WireError::MissingSensor(missing));
        }
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                if let Ok(s) = stream.try_clone() {
                    open.push(s);
                }
                let (st, fa) = (state.clone(), fatal.clone());
                workers.push(thread::spawn(move || session(stream, st, fa)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => break Err(e.into()),
        }
    };
    // Let in-flight acks go out, then close whatever is still open.
    thread::sleep(Duration::from_millis(20));
    for s in &open {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
    for w in workers {
        let _ = w.join();
    }
    outcome?;
    let collected = state.lock().unwrap().clone();
    collected.finish(&cfg.expected, cfg.tolerance_s)
}
