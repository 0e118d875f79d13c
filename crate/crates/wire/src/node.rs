use std::collections::BTreeSet;
use std::io::{BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use haloscope::simnet::TimeSeriesRecord;

use crate::error::{Result, WireError};
use crate::frame::{encode_frame, rate_to_mhz, span_ns, Frame, MAX_SAMPLES};

/// Collector acknowledgement: magic plus the acked frame's start time.
pub const ACK_MAGIC: &[u8; 4] = b"AMLA";

/// Deliberate faults for exercising the retry path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    /// Drop the connection right after sending the n-th frame (0-based,
    /// counting every send), before its ack is read. The frame is sent
    /// again on the next connection.
    pub disconnect_after: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub chunk: usize,
    /// Consecutive failed attempts tolerated before giving up.
    pub max_retries: u32,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    pub io_timeout: Duration,
    pub fault: FaultPlan,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            chunk: 4096,
            max_retries: 8,
            backoff_initial: Duration::from_millis(20),
            backoff_max: Duration::from_secs(2),
            io_timeout: Duration::from_secs(30),
            fault: FaultPlan::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeReport {
    /// Data frames delivered (end-of-stream markers excluded).
    pub frames: usize,
    /// Every frame write, including resends and markers.
    pub sends: usize,
    pub reconnects: usize,
}

/// Data frames interleaved across records by chunk index, then one
/// zero-sample end marker per record at its end time.
fn schedule(records: &[TimeSeriesRecord], chunk: usize) -> Result<Vec<Frame>> {
    let mut out = Vec::new();
    let rates = records
        .iter()
        .map(|r| rate_to_mhz(r.sample_rate))
        .collect::<Result<Vec<_>>>()?;
    let longest = records.iter().map(|r| r.samples.len().div_ceil(chunk)).max().unwrap_or(0);
    for c in 0..longest {
        for (r, &mhz) in records.iter().zip(&rates) {
            if let Some(s) = r.samples.chunks(chunk).nth(c) {
                out.push(Frame {
                    station_id: r.station_id.clone(),
                    sensor_id: r.sensor_id.clone(),
                    start_time_gps_ns: r.start_time + span_ns(c * chunk, r.sample_rate),
                    sample_rate_mhz: mhz,
                    samples: s.to_vec(),
                });
            }
        }
    }
    for (r, &mhz) in records.iter().zip(&rates) {
        out.push(Frame {
            station_id: r.station_id.clone(),
            sensor_id: r.sensor_id.clone(),
            start_time_gps_ns: r.start_time + span_ns(r.samples.len(), r.sample_rate),
            sample_rate_mhz: mhz,
            samples: Vec::new(),
        });
    }
    Ok(out)
}

fn connect(endpoint: &str, timeout: Duration) -> std::io::Result<TcpStream> {
    let mut last = None;
    for addr in endpoint.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| std::io::Error::other("endpoint resolves to no address")))
}

fn read_ack(stream: &mut TcpStream, expected: u64) -> Result<()> {
    let mut ack = [0u8; 12];
    stream.read_exact(&mut ack)?;
    if &ack[..4] != ACK_MAGIC {
        return Err(WireError::Protocol("bad ack magic".into()));
    }
    let got = u64::from_le_bytes(ack[4..].try_into().unwrap());
    if got != expected {
        return Err(WireError::Protocol(format!("ack for {got} ns, expected {expected} ns")));
    }
    Ok(())
}

/// Stream `records` to the collector at `endpoint`, frame by frame, each
/// acked before the next is sent. Transient failures reconnect with
/// exponential backoff and resend the unacked frame.
pub fn run_node(records: &[TimeSeriesRecord], endpoint: &str, cfg: &NodeConfig) -> Result<NodeReport> {
    if cfg.chunk == 0 || cfg.chunk > MAX_SAMPLES {
        return Err(WireError::InvalidField(format!("chunk size {} outside 1..=2^20", cfg.chunk)));
    }
    let frames = schedule(records, cfg.chunk)?;
    let mut report = NodeReport::default();
    let mut stream: Option<TcpStream> = None;
    let mut failures = 0u32;
    let mut backoff = cfg.backoff_initial;
    let mut next = 0;
    let fail = |failures: &mut u32, backoff: &mut Duration, why: String| -> Result<()> {
        *failures += 1;
        if *failures > cfg.max_retries {
            return Err(WireError::Unreachable {
                endpoint: endpoint.to_string(),
                attempts: *failures,
                last: why,
            });
        }
        log::debug!("node: {why}; retry {failures} in {backoff:?}");
        thread::sleep(*backoff);
        *backoff = (*backoff * 2).min(cfg.backoff_max);
        Ok(())
    };
    while next < frames.len() {
        let s = match stream.as_mut() {
            Some(s) => s,
            None => match connect(endpoint, cfg.io_timeout) {
                Ok(s) => {
                    if report.sends > 0 {
                        report.reconnects += 1;
                    }
                    stream.insert(s)
                }
                Err(e) => {
                    fail(&mut failures, &mut backoff, e.to_string())?;
                    continue;
                }
            },
        };
        let frame = &frames[next];
        let bytes = encode_frame(frame)?;
        let sent = {
            let mut w = BufWriter::new(&mut *s);
            w.write_all(&bytes).and_then(|_| w.flush())
        };
        report.sends += 1;
        if let Err(e) = sent {
            stream = None;
            fail(&mut failures, &mut backoff, e.to_string())?;
            continue;
        }
        if cfg.fault.disconnect_after.contains(&(report.sends - 1)) {
            log::debug!("node: injected disconnect after send {}", report.sends - 1);
            stream = None;
            continue;
        }
        match read_ack(s, frame.start_time_gps_ns) {
            Ok(()) => {
                if !frame.samples.is_empty() {
                    report.frames += 1;
                }
                next += 1;
                failures = 0;
                backoff = cfg.backoff_initial;
            }
            Err(e) => {
                stream = None;
                fail(&mut failures, &mut backoff, e.to_string())?;
            }
        }
    }
    if let Some(s) = stream {
        let _ = s.shutdown(std::net::Shutdown::Write);
    }
    Ok(report)
}
