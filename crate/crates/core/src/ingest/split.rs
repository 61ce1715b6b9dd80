use std::collections::HashMap;

use crate::error::IngestError;
use crate::model::{LabelTable, Split, SplitAssignment};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// MurmurHash3 finalizer; FNV-1a alone leaves the high bits poorly mixed
/// for ids that differ only in trailing characters.
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// `fmix64(FNV-1a(decimal(seed) ‖ 0x00 ‖ patient_id))`.
pub fn split_hash(seed: u64, patient_id: &str) -> u64 {
    let h = fnv1a(seed.to_string().into_bytes(), FNV_OFFSET);
    let h = fnv1a([0u8], h);
    fmix64(fnv1a(patient_id.bytes(), h))
}

fn is_test(seed: u64, patient_id: &str, test_fraction: f64) -> bool {
    const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;
    (split_hash(seed, patient_id) as f64) / TWO_POW_64 < test_fraction
}

/// Assigns each patient (and so every one of their images) to train or test.
pub fn assign_split(
    labels: &LabelTable,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::Invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut cache: HashMap<&str, Split> = HashMap::new();
    let assignment = labels
        .patient_ids()
        .iter()
        .map(|p| {
            *cache.entry(p.as_str()).or_insert_with(|| {
                if is_test(seed, p, test_fraction) {
                    Split::Test
                } else {
                    Split::Train
                }
            })
        })
        .collect();
    Ok(SplitAssignment {
        assignment,
        test_fraction,
        seed,
    })
}
