//! Trace-file format properties and config-profile parity.

use proptest::prelude::*;

use scat::config::{ExperimentConfig, Scenario};
use scat::leakage::TraceSet;
use scat::trace_file;

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    proptest::sample::select(Scenario::ALL.to_vec())
}

fn arb_set() -> impl Strategy<Value = TraceSet> {
    (
        0usize..6,
        0usize..24,
        proptest::option::of(proptest::array::uniform16(any::<u8>())),
        any::<u64>(),
        1e-12f64..1e-6,
    )
        .prop_map(|(n, samples, key, seed, period)| {
            let mut rng = scat::seeds::rng(seed);
            use rand::Rng;
            let mut set = TraceSet::new(samples, period, key);
            for _ in 0..n {
                let pt: [u8; 16] = rng.random();
                let ct: [u8; 16] = rng.random();
                let trace: Vec<f32> = (0..samples)
                    .map(|_| {
                        // Finite but otherwise arbitrary magnitudes.
                        let raw = rng.random::<f32>() * 2.0 - 1.0;
                        raw * 10f32.powi(rng.random_range(-8..4))
                    })
                    .collect();
                set.push_trace(pt, ct, &trace);
            }
            set
        })
}

proptest! {
    #[test]
    fn round_trip_preserves_everything(set in arb_set(), scenario in arb_scenario()) {
        let bytes = trace_file::encode(&set, scenario);
        let (back, s2) = trace_file::decode(&bytes).unwrap();
        prop_assert_eq!(s2, scenario);
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(trace_file::encode(&back, s2), bytes);
    }

    #[test]
    fn corrupted_headers_never_panic(set in arb_set(), scenario in arb_scenario(), flip in 0usize..24, bit in 0u8..8) {
        let mut bytes = trace_file::encode(&set, scenario);
        if flip < bytes.len() {
            bytes[flip] ^= 1 << bit;
        }
        // Must either decode to something or produce a structured error.
        let _ = trace_file::decode(&bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let _ = trace_file::decode(&bytes);
    }
}

#[test]
fn absurd_declared_counts_fail_as_truncation() {
    // Valid header claiming u32::MAX traces of u32::MAX samples; the sizing
    // arithmetic must not wrap into a small allocation.
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"SCAT");
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.push(0); // unprotected
    bytes.push(0); // no key
    bytes.extend_from_slice(&u32::MAX.to_le_bytes());
    bytes.extend_from_slice(&u32::MAX.to_le_bytes());
    bytes.extend_from_slice(&1e-9f64.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 64]);
    match trace_file::decode(&bytes) {
        Err(scat::error::TraceFileError::Truncated { field, .. }) => {
            assert_eq!(field, "samples");
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn shipped_defaults_profile_matches_builtin_defaults() {
    let text = include_str!("../../../configs/defaults.toml");
    let parsed = ExperimentConfig::from_toml(text).expect("defaults profile parses");
    assert_eq!(parsed, ExperimentConfig::default());
}
