//! Streaming and storage for magnetometer network data.
//!
//! Frames are fixed-layout little-endian records closed by a CRC32. Nodes
//! push frames to a collector over TCP with at-least-once delivery; the
//! collector dedupes, reassembles and trims every sensor to a shared GPS
//! grid. Run files wrap the same frames between a header and a footer.

pub mod collector;
pub mod error;
pub mod frame;
pub mod node;
pub mod runfile;

use std::path::PathBuf;

pub use collector::{run_collector, run_collector_on, AlignmentReport, Collector, CollectorConfig};
pub use error::{Result, WireError};
pub use frame::{decode_frame, encode_frame, record_frames, Frame, FRAME_OVERHEAD, HEADER_LEN, MAX_SAMPLES};
pub use node::{run_node, FaultPlan, NodeConfig, NodeReport};
pub use runfile::{read_run, read_run_file, run_uuid, spec_hash_warning, write_run, RunFileHeader};

/// Environment variable overriding [`data_dir`].
pub const DATA_DIR_ENV: &str = "HALOSCOPE_DATA_DIR";

/// Default directory for run files: `$HALOSCOPE_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}
