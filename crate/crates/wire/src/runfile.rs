//! Run files: a header, every record's frames in order, and a footer.
//!
//! ```text
//! header  "AMLR" ver  station(16, zero) sensor(16, zero) start_ns rate_mhz n_records
//!         run_uuid(16) spec_hash(64, ASCII hex, zero-padded) crc32
//! body    frames ("AMLS"), each record contiguous and in time order
//! footer  "AMLF" ver  n_records  { station(16) sensor(16) start_ns rate_mhz frames(u32) samples(u64) }*
//!         crc32
//! ```
//! Start and rate in the header are those of the first record (zero for an
//! empty run). The footer carries every record's start and rate, so
//! zero-length records survive a roundtrip.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use haloscope::simnet::{RunData, TimeSeriesRecord};
use uuid::Uuid;

use crate::error::{Result, WireError};
use crate::frame::{
    check_crc, check_magic, encode_frame, put_header, rate_to_mhz, read_frame, record_frames, u32_at, u64_at,
    Frame, FRAME_MAGIC, HEADER_LEN, ID_LEN,
};

pub const RUN_MAGIC: &[u8; 4] = b"AMLR";
pub const FOOTER_MAGIC: &[u8; 4] = b"AMLF";
/// Samples per frame in run files.
pub const RUN_CHUNK: usize = 4096;
const HASH_LEN: usize = 64;
const RUN_HEADER_LEN: usize = HEADER_LEN + 16 + HASH_LEN + 4;
const ENTRY_LEN: usize = 2 * ID_LEN + 8 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFileHeader {
    pub run_id: Uuid,
    pub spec_hash: String,
    pub start_time_gps_ns: u64,
    pub sample_rate_mhz: u32,
    pub n_records: u32,
}

/// Deterministic run id: UUID v5 of the run-spec hash.
pub fn run_uuid(spec_hash: &str) -> Uuid {
    Uuid::new_v5(&Uuid::NAMESPACE_OID, spec_hash.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
struct FooterEntry {
    station_id: String,
    sensor_id: String,
    start_ns: u64,
    rate_mhz: u32,
    frames: u32,
    samples: u64,
}

fn corrupt(e: WireError) -> WireError {
    match e {
        WireError::Io(io) if io.kind() != ErrorKind::UnexpectedEof => WireError::Io(io),
        WireError::CorruptFile(_) => e,
        other => WireError::CorruptFile(other.to_string()),
    }
}

fn put_fixed(out: &mut Vec<u8>, s: &str, len: usize, what: &str) -> Result<()> {
    if s.len() > len || s.as_bytes().contains(&0) {
        return Err(WireError::InvalidField(format!("{what} {s:?} does not fit {len} bytes")));
    }
    out.extend_from_slice(s.as_bytes());
    out.resize(out.len() + len - s.len(), 0);
    Ok(())
}

fn get_fixed(raw: &[u8], what: &str) -> Result<String> {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    if raw[end..].iter().any(|&b| b != 0) {
        return Err(WireError::CorruptFile(format!("{what} is not zero-padded")));
    }
    String::from_utf8(raw[..end].to_vec()).map_err(|_| WireError::CorruptFile(format!("{what} is not UTF-8")))
}

/// Write `run` to `path`, tagged with the hash of the run spec that made it.
pub fn write_run(run: &RunData, path: &Path, spec_hash: &str) -> Result<RunFileHeader> {
    let (start, rate_mhz) = match run.records.first() {
        Some(r) => (r.start_time, rate_to_mhz(r.sample_rate)?),
        None => (0, 0),
    };
    let header = RunFileHeader {
        run_id: run_uuid(spec_hash),
        spec_hash: spec_hash.to_string(),
        start_time_gps_ns: start,
        sample_rate_mhz: rate_mhz,
        n_records: u32::try_from(run.records.len())
            .map_err(|_| WireError::InvalidField("too many records".into()))?,
    };
    let mut head = Vec::with_capacity(RUN_HEADER_LEN);
    put_header(&mut head, RUN_MAGIC, "", "", start, rate_mhz, header.n_records)?;
    head.extend_from_slice(header.run_id.as_bytes());
    put_fixed(&mut head, spec_hash, HASH_LEN, "spec hash")?;
    let crc = crc32fast::hash(&head);
    head.extend_from_slice(&crc.to_le_bytes());

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&head)?;
    let mut footer = Vec::with_capacity(9 + ENTRY_LEN * run.records.len() + 4);
    footer.extend_from_slice(FOOTER_MAGIC);
    footer.push(crate::frame::VERSION);
    footer.extend_from_slice(&header.n_records.to_le_bytes());
    for record in &run.records {
        let frames = record_frames(record, RUN_CHUNK)?;
        for f in &frames {
            out.write_all(&encode_frame(f)?)?;
        }
        put_fixed(&mut footer, &record.station_id, ID_LEN, "station_id")?;
        put_fixed(&mut footer, &record.sensor_id, ID_LEN, "sensor_id")?;
        footer.extend_from_slice(&record.start_time.to_le_bytes());
        footer.extend_from_slice(&rate_to_mhz(record.sample_rate)?.to_le_bytes());
        footer.extend_from_slice(&(frames.len() as u32).to_le_bytes());
        footer.extend_from_slice(&(record.samples.len() as u64).to_le_bytes());
    }
    let crc = crc32fast::hash(&footer);
    footer.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&footer)?;
    out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(header)
}

pub fn read_run(path: &Path) -> Result<RunData> {
    read_run_file(path).map(|(_, run)| run)
}

/// Read a run file, verifying every CRC, per-sensor contiguity and the
/// footer counts. Any inconsistency is a [`WireError::CorruptFile`].
pub fn read_run_file(path: &Path) -> Result<(RunFileHeader, RunData)> {
    let mut reader = BufReader::with_capacity(1 << 20, File::open(path)?);
    read_run_from(&mut reader).map_err(corrupt)
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            WireError::CorruptFile("file ends early".into())
        } else {
            e.into()
        }
    })
}

fn read_run_from<R: Read>(r: &mut R) -> Result<(RunFileHeader, RunData)> {
    let mut head = [0u8; RUN_HEADER_LEN];
    read_exact_or_truncated(r, &mut head)?;
    check_magic(&head, RUN_MAGIC, "AMLR")?;
    check_crc(&head[..RUN_HEADER_LEN - 4], u32_at(&head, RUN_HEADER_LEN - 4))?;
    let at = 5 + 2 * ID_LEN;
    let header = RunFileHeader {
        start_time_gps_ns: u64_at(&head, at),
        sample_rate_mhz: u32_at(&head, at + 8),
        n_records: u32_at(&head, at + 12),
        run_id: Uuid::from_bytes(head[HEADER_LEN..HEADER_LEN + 16].try_into().unwrap()),
        spec_hash: get_fixed(&head[HEADER_LEN + 16..HEADER_LEN + 16 + HASH_LEN], "spec hash")?,
    };

    // Body: frames until the footer magic.
    let mut records: Vec<(Frame, u32)> = Vec::new();
    let footer_start;
    loop {
        let mut magic = [0u8; 4];
        read_exact_or_truncated(r, &mut magic)?;
        if &magic == FOOTER_MAGIC {
            footer_start = magic;
            break;
        }
        if &magic != FRAME_MAGIC {
            return Err(WireError::CorruptFile(format!("unexpected block {magic:02x?}")));
        }
        let mut chained = (&magic[..]).chain(&mut *r);
        let frame = read_frame(&mut chained)?.ok_or_else(|| WireError::CorruptFile("file ends early".into()))?;
        match records.last_mut() {
            Some((rec, n)) if rec.station_id == frame.station_id && rec.sensor_id == frame.sensor_id => {
                if frame.sample_rate_mhz != rec.sample_rate_mhz || frame.start_time_gps_ns != rec.end_time_ns() {
                    return Err(WireError::CorruptFile(format!(
                        "frame of {} at {} ns does not continue its record",
                        frame.sensor_label(),
                        frame.start_time_gps_ns
                    )));
                }
                rec.samples.extend_from_slice(&frame.samples);
                *n += 1;
            }
            _ => {
                if records
                    .iter()
                    .any(|(f, _)| f.station_id == frame.station_id && f.sensor_id == frame.sensor_id)
                {
                    return Err(WireError::CorruptFile(format!(
                        "frames of {} are not contiguous",
                        frame.sensor_label()
                    )));
                }
                records.push((frame, 1));
            }
        }
    }

    let mut fixed = [0u8; 9];
    fixed[..4].copy_from_slice(&footer_start);
    read_exact_or_truncated(r, &mut fixed[4..])?;
    check_magic(&fixed, FOOTER_MAGIC, "AMLF")?;
    let n = u32_at(&fixed, 5) as usize;
    if n != header.n_records as usize {
        return Err(WireError::CorruptFile(format!(
            "footer lists {n} records, header {}",
            header.n_records
        )));
    }
    let mut rest = vec![0u8; n * ENTRY_LEN + 4];
    read_exact_or_truncated(r, &mut rest)?;
    let mut footer = fixed.to_vec();
    footer.extend_from_slice(&rest);
    let body_len = footer.len() - 4;
    check_crc(&footer[..body_len], u32_at(&footer, body_len))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(WireError::CorruptFile("trailing bytes after footer".into()));
    }

    let entries = (0..n)
        .map(|i| {
            let e = &rest[i * ENTRY_LEN..(i + 1) * ENTRY_LEN];
            Ok(FooterEntry {
                station_id: get_fixed(&e[..ID_LEN], "station_id")?,
                sensor_id: get_fixed(&e[ID_LEN..2 * ID_LEN], "sensor_id")?,
                start_ns: u64_at(e, 2 * ID_LEN),
                rate_mhz: u32_at(e, 2 * ID_LEN + 8),
                frames: u32_at(e, 2 * ID_LEN + 12),
                samples: u64_at(e, 2 * ID_LEN + 16),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Pair footer entries with body records; empty records have no frames.
    let mut body = records.into_iter().peekable();
    let mut out = Vec::with_capacity(n);
    for e in entries {
        let from_body = body
            .next_if(|(f, _)| f.station_id == e.station_id && f.sensor_id == e.sensor_id);
        let (samples, frames, start, rate) = match from_body {
            Some((f, k)) => (f.samples, k, f.start_time_gps_ns, f.sample_rate_mhz),
            None => (Vec::new(), 0, e.start_ns, e.rate_mhz),
        };
        if frames != e.frames || samples.len() as u64 != e.samples || start != e.start_ns || rate != e.rate_mhz {
            return Err(WireError::CorruptFile(format!(
                "footer entry for {}/{} does not match the body",
                e.station_id, e.sensor_id
            )));
        }
        if rate == 0 {
            return Err(WireError::CorruptFile("zero sample rate".into()));
        }
        out.push(TimeSeriesRecord {
            station_id: e.station_id,
            sensor_id: e.sensor_id,
            start_time: start,
            sample_rate: rate as f64 / 1000.0,
            samples,
        });
    }
    if body.next().is_some() {
        return Err(WireError::CorruptFile("body holds records missing from the footer".into()));
    }
    Ok((header, RunData { records: out }))
}

/// Warning text when a run file was produced from a different spec.
pub fn spec_hash_warning(header: &RunFileHeader, expected: &str) -> Option<String> {
    (header.spec_hash != expected).then(|| {
        let msg = format!(
            "run {} was generated from spec {}, analysing with spec {}",
            header.run_id, header.spec_hash, expected
        );
        log::warn!("{msg}");
        msg
    })
}
