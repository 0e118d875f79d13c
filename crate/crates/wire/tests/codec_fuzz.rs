use haloscope_wire::{decode_frame, encode_frame, Frame, WireError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_frame(rng: &mut ChaCha8Rng) -> Frame {
    let n = rng.random_range(0..64);
    Frame {
        station_id: ["hb", "wh", "station-sixteen!"][rng.random_range(0..3)].into(),
        sensor_id: format!("s{:02}", rng.random_range(0..15)),
        start_time_gps_ns: rng.random(),
        sample_rate_mhz: rng.random_range(1..=u32::MAX),
        samples: (0..n).map(|_| f64::from_bits(rng.random())).collect(),
    }
}

fn bitwise_eq(a: &Frame, b: &Frame) -> bool {
    a.station_id == b.station_id
        && a.sensor_id == b.sensor_id
        && a.start_time_gps_ns == b.start_time_gps_ns
        && a.same_payload(b)
}

/// 10^5 random mutations: every one either decodes to the original frame
/// (the mutation only touched bytes past its end) or fails with one of the
/// codec errors.
#[test]
fn mutations_never_misdecode() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    let mut counts = [0usize; 6];
    for _ in 0..100_000 {
        let frame = sample_frame(&mut rng);
        let good = encode_frame(&frame).unwrap();
        let mut bad = good.clone();
        match rng.random_range(0..5) {
            0 => {
                let i = rng.random_range(0..bad.len());
                bad[i] ^= 1 << rng.random_range(0..8);
            }
            1 => {
                for _ in 0..rng.random_range(2..8) {
                    let i = rng.random_range(0..bad.len());
                    bad[i] = rng.random();
                }
            }
            2 => bad.truncate(rng.random_range(0..bad.len())),
            3 => {
                let i = rng.random_range(0..=bad.len());
                bad.insert(i, rng.random());
            }
            _ => {
                let i = rng.random_range(0..bad.len());
                bad.remove(i);
            }
        }
        match decode_frame(&bad) {
            Ok((f, used)) => {
                assert!(bitwise_eq(&f, &frame), "mis-decoded mutation");
                assert_eq!(&bad[..used], &good[..]);
                counts[0] += 1;
            }
            Err(WireError::BadMagic { .. }) => counts[1] += 1,
            Err(WireError::UnsupportedVersion(_)) => counts[2] += 1,
            Err(WireError::CrcMismatch { .. }) => counts[3] += 1,
            Err(WireError::Truncated { .. }) => counts[4] += 1,
            Err(WireError::FrameTooLarge(_)) | Err(WireError::InvalidField(_)) => counts[5] += 1,
            Err(e) => panic!("unexpected error kind {e:?}"),
        }
    }
    // Every error path was exercised.
    assert!(counts[1..5].iter().all(|&c| c > 0), "{counts:?}");
}

proptest! {
    #[test]
    fn arbitrary_bytes_decode_or_error(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn roundtrip_identity(
        start in any::<u64>(),
        rate in 1u32..,
        bits in proptest::collection::vec(any::<u64>(), 0..300),
        station in "[a-z0-9]{0,16}",
    ) {
        let f = Frame {
            station_id: station,
            sensor_id: "s".into(),
            start_time_gps_ns: start,
            sample_rate_mhz: rate,
            samples: bits.into_iter().map(f64::from_bits).collect(),
        };
        let bytes = encode_frame(&f).unwrap();
        let (g, used) = decode_frame(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert!(bitwise_eq(&f, &g));
    }
}
