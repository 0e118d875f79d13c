use haloscope::simnet::TimeSeriesRecord;

use crate::error::{Result, WireError};

pub const FRAME_MAGIC: &[u8; 4] = b"AMLS";
pub const VERSION: u8 = 1;
pub const ID_LEN: usize = 16;
/// magic + version + two ids + start + rate + count.
pub const HEADER_LEN: usize = 4 + 1 + 2 * ID_LEN + 8 + 4 + 4;
/// Header plus trailing CRC: the size of an empty frame.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + 4;
pub const MAX_SAMPLES: usize = 1 << 20;

/// One contiguous chunk of a sensor's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub station_id: String,
    pub sensor_id: String,
    pub start_time_gps_ns: u64,
    pub sample_rate_mhz: u32,
    pub samples: Vec<f64>,
}

impl Frame {
    pub fn sample_rate(&self) -> f64 {
        self.sample_rate_mhz as f64 / 1000.0
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + 8 * self.samples.len()
    }

    /// Start time of the sample following this frame.
    pub fn end_time_ns(&self) -> u64 {
        self.start_time_gps_ns + span_ns(self.samples.len(), self.sample_rate())
    }

    /// Identical key and bitwise-identical payload.
    pub fn same_payload(&self, other: &Frame) -> bool {
        self.sample_rate_mhz == other.sample_rate_mhz
            && self.samples.len() == other.samples.len()
            && self.samples.iter().zip(&other.samples).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn sensor_label(&self) -> String {
        format!("{}/{}", self.station_id, self.sensor_id)
    }
}

/// Nanoseconds covered by `count` samples at `rate` Hz.
pub fn span_ns(count: usize, rate: f64) -> u64 {
    (count as f64 * 1e9 / rate).round() as u64
}

/// Exact millihertz representation of a sample rate.
pub fn rate_to_mhz(rate: f64) -> Result<u32> {
    let mhz = (rate * 1000.0).round();
    if !(mhz >= 1.0 && mhz <= u32::MAX as f64) || mhz / 1000.0 != rate {
        return Err(WireError::InvalidField(format!(
            "sample rate {rate} Hz is not a whole number of millihertz"
        )));
    }
    Ok(mhz as u32)
}

fn put_id(out: &mut Vec<u8>, id: &str, what: &str) -> Result<()> {
    let bytes = id.as_bytes();
    if bytes.len() > ID_LEN || bytes.contains(&0) {
        return Err(WireError::InvalidField(format!(
            "{what} {id:?} must be at most {ID_LEN} bytes without NUL"
        )));
    }
    out.extend_from_slice(bytes);
    out.resize(out.len() + ID_LEN - bytes.len(), 0);
    Ok(())
}

fn get_id(raw: &[u8], what: &str) -> Result<String> {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    if raw[end..].iter().any(|&b| b != 0) {
        return Err(WireError::InvalidField(format!("{what} is not zero-padded")));
    }
    String::from_utf8(raw[..end].to_vec())
        .map_err(|_| WireError::InvalidField(format!("{what} is not UTF-8")))
}

/// Fixed header fields shared by frames and run files.
pub(crate) fn put_header(
    out: &mut Vec<u8>,
    magic: &[u8; 4],
    station_id: &str,
    sensor_id: &str,
    start_ns: u64,
    rate_mhz: u32,
    count: u32,
) -> Result<()> {
    out.extend_from_slice(magic);
    out.push(VERSION);
    put_id(out, station_id, "station_id")?;
    put_id(out, sensor_id, "sensor_id")?;
    out.extend_from_slice(&start_ns.to_le_bytes());
    out.extend_from_slice(&rate_mhz.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    Ok(())
}

pub(crate) fn check_magic(buf: &[u8], magic: &'static [u8; 4], name: &'static str) -> Result<()> {
    if buf.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: buf.len(),
        });
    }
    if &buf[..4] != magic {
        return Err(WireError::BadMagic {
            found: buf[..4].try_into().unwrap(),
            expected: name,
        });
    }
    if buf.len() < 5 {
        return Err(WireError::Truncated {
            needed: 5,
            available: buf.len(),
        });
    }
    if buf[4] != VERSION {
        return Err(WireError::UnsupportedVersion(buf[4]));
    }
    Ok(())
}

pub(crate) fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

pub(crate) fn u64_at(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

pub(crate) fn check_crc(body: &[u8], stored: u32) -> Result<()> {
    let computed = crc32fast::hash(body);
    if computed != stored {
        return Err(WireError::CrcMismatch { stored, computed });
    }
    Ok(())
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>> {
    if frame.samples.len() > MAX_SAMPLES {
        return Err(WireError::FrameTooLarge(frame.samples.len().min(u32::MAX as usize) as u32));
    }
    if frame.sample_rate_mhz == 0 {
        return Err(WireError::InvalidField("sample rate must be positive".into()));
    }
    let mut out = Vec::with_capacity(frame.encoded_len());
    put_header(
        &mut out,
        FRAME_MAGIC,
        &frame.station_id,
        &frame.sensor_id,
        frame.start_time_gps_ns,
        frame.sample_rate_mhz,
        frame.samples.len() as u32,
    )?;
    for s in &frame.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Total length of the frame starting at `buf`, once enough of the header
/// is present to tell.
pub(crate) fn frame_len(buf: &[u8]) -> Result<usize> {
    check_magic(buf, FRAME_MAGIC, "AMLS")?;
    if buf.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: buf.len(),
        });
    }
    let count = u32_at(buf, HEADER_LEN - 4);
    if count as usize > MAX_SAMPLES {
        return Err(WireError::FrameTooLarge(count));
    }
    Ok(FRAME_OVERHEAD + 8 * count as usize)
}

/// Decode the frame at the start of `buf`; returns it with the number of
/// bytes consumed. Trailing bytes are left to the caller.
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize)> {
    let len = frame_len(buf)?;
    if buf.len() < len {
        return Err(WireError::Truncated {
            needed: len,
            available: buf.len(),
        });
    }
    check_crc(&buf[..len - 4], u32_at(buf, len - 4))?;
    let station_id = get_id(&buf[5..5 + ID_LEN], "station_id")?;
    let sensor_id = get_id(&buf[5 + ID_LEN..5 + 2 * ID_LEN], "sensor_id")?;
    let at = 5 + 2 * ID_LEN;
    let start_time_gps_ns = u64_at(buf, at);
    let sample_rate_mhz = u32_at(buf, at + 8);
    if sample_rate_mhz == 0 {
        return Err(WireError::InvalidField("sample rate must be positive".into()));
    }
    let samples = buf[HEADER_LEN..len - 4]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        Frame {
            station_id,
            sensor_id,
            start_time_gps_ns,
            sample_rate_mhz,
            samples,
        },
        len,
    ))
}

/// Read one frame from a stream. `Ok(None)` on a clean end of stream
/// between frames.
pub fn read_frame<R: std::io::Read>(reader: &mut R) -> Result<Option<Frame>> {
    let mut header = vec![0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => {
                return Err(WireError::Truncated {
                    needed: HEADER_LEN,
                    available: got,
                })
            }
            n => got += n,
        }
    }
    let len = frame_len(&header)?;
    header.resize(len, 0);
    let mut filled = HEADER_LEN;
    while filled < len {
        match reader.read(&mut header[filled..])? {
            0 => {
                return Err(WireError::Truncated {
                    needed: len,
                    available: filled,
                })
            }
            n => filled += n,
        }
    }
    decode_frame(&header).map(|(f, _)| Some(f))
}

/// Cut a record into frames of at most `chunk` samples, in time order.
/// An empty record gives no frames.
pub fn record_frames(record: &TimeSeriesRecord, chunk: usize) -> Result<Vec<Frame>> {
    if chunk == 0 || chunk > MAX_SAMPLES {
        return Err(WireError::InvalidField(format!("chunk size {chunk} outside 1..=2^20")));
    }
    let rate_mhz = rate_to_mhz(record.sample_rate)?;
    Ok(record
        .samples
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| Frame {
            station_id: record.station_id.clone(),
            sensor_id: record.sensor_id.clone(),
            start_time_gps_ns: record.start_time + span_ns(i * chunk, record.sample_rate),
            sample_rate_mhz: rate_mhz,
            samples: c.to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> Frame {
        Frame {
            station_id: "hb".into(),
            sensor_id: "hb01".into(),
            start_time_gps_ns: 1_234_567_890_123,
            sample_rate_mhz: 1_000_000,
            samples: (0..n).map(|i| (i as f64 * 0.37).sin() * 1e-14).collect(),
        }
    }

    #[test]
    fn empty_frame_is_header_plus_crc() {
        let bytes = encode_frame(&frame(0)).unwrap();
        assert_eq!(HEADER_LEN, 53);
        assert_eq!(bytes.len(), 57);
        assert_eq!(&bytes[..4], b"AMLS");
        assert_eq!(decode_frame(&bytes).unwrap(), (frame(0), 57));
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut f = frame(100);
        f.samples[3] = -0.0;
        f.samples[4] = f64::MIN_POSITIVE / 4.0;
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), 57 + 800);
        let (g, used) = decode_frame(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert!(g.same_payload(&f));
        assert_eq!(g.samples[3].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn sample_byte_flip_is_crc_mismatch() {
        let mut bytes = encode_frame(&frame(10)).unwrap();
        bytes[HEADER_LEN + 5] ^= 0x10;
        assert!(matches!(decode_frame(&bytes), Err(WireError::CrcMismatch { .. })));
    }

    #[test]
    fn each_header_fault_has_its_own_error() {
        let good = encode_frame(&frame(4)).unwrap();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(decode_frame(&b), Err(WireError::BadMagic { .. })));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode_frame(&b), Err(WireError::UnsupportedVersion(2))));
        assert!(matches!(decode_frame(&good[..good.len() - 1]), Err(WireError::Truncated { .. })));
        assert!(matches!(decode_frame(&good[..20]), Err(WireError::Truncated { .. })));
        let mut b = good.clone();
        b[HEADER_LEN - 4..HEADER_LEN].copy_from_slice(&((MAX_SAMPLES as u32) + 1).to_le_bytes());
        assert!(matches!(decode_frame(&b), Err(WireError::FrameTooLarge(_))));
    }

    #[test]
    fn oversized_ids_and_frames_are_rejected_on_encode() {
        let mut f = frame(1);
        f.station_id = "a-station-name-too-long".into();
        assert!(matches!(encode_frame(&f), Err(WireError::InvalidField(_))));
        let mut f = frame(0);
        f.samples = vec![0.0; MAX_SAMPLES + 1];
        assert!(matches!(encode_frame(&f), Err(WireError::FrameTooLarge(_))));
        assert!(encode_frame(&frame(MAX_SAMPLES)).is_ok());
    }

    #[test]
    fn chunking_is_ceiling_division() {
        let rec = TimeSeriesRecord {
            sensor_id: "s".into(),
            station_id: "st".into(),
            start_time: 0,
            sample_rate: 1000.0,
            samples: vec![0.0; 2_000_000],
        };
        let frames = record_frames(&rec, 4096).unwrap();
        assert_eq!(frames.len(), 489);
        assert_eq!(frames.last().unwrap().samples.len(), 2_000_000 - 488 * 4096);
        assert!(frames.windows(2).all(|w| w[0].end_time_ns() == w[1].start_time_gps_ns));
        let empty = TimeSeriesRecord { samples: vec![], ..rec };
        assert!(record_frames(&empty, 4096).unwrap().is_empty());
    }

    #[test]
    fn fractional_millihertz_rates_are_refused() {
        assert_eq!(rate_to_mhz(1000.0).unwrap(), 1_000_000);
        assert_eq!(rate_to_mhz(0.5).unwrap(), 500);
        assert!(rate_to_mhz(1000.0005).is_err());
        assert!(rate_to_mhz(0.0).is_err());
    }
}
