//! Shared fixtures for the benchmarks.

use treeguard_core::ingest::encode_can_features;
use treeguard_core::synth::{generate_can_frames, SynthMix};
use treeguard_core::{compute_min_max, normalize, CanEncoding, Dataset, LabelMapSpec, NormalizationParams};

/// Normalized synthetic five-class CAN dataset with its raw form and
/// normalization.
pub struct CanFixture {
    pub raw: Dataset,
    pub data: Dataset,
    pub norm: NormalizationParams,
}

pub fn can_fixture(frames: usize, seed: u64) -> CanFixture {
    let records = generate_can_frames(frames, SynthMix::default(), seed);
    let raw =
        encode_can_features(&records, CanEncoding::Numeric, &LabelMapSpec::can()).expect("synthetic frames encode");
    let norm = compute_min_max(&raw).expect("non-empty");
    let data = normalize(&raw, &norm).expect("matching widths");
    CanFixture { raw, data, norm }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_normalized() {
        let f = can_fixture(500, 1);
        assert_eq!(f.raw.n_rows(), 500);
        assert!(f.data.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.norm.len(), f.data.n_features());
    }
}
