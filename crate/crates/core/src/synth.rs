//! Synthetic in-vehicle traffic with four injected attack types, for tests,
//! benchmarks and demos when the real captures are not at hand.
//!
//! * Normal: a fixed set of periodic identifiers whose payloads vary within
//!   per-identifier patterns and end in zero padding.
//! * DoS: identifier `0x000` flooding with an all-zero payload.
//! * Fuzzy: uniformly random identifier and payload.
//! * RPM spoofing: identifier `0x316` (also used by normal traffic) with a
//!   fixed forged payload.
//! * Gear spoofing: identifier `0x43F` (also used by normal traffic) with a
//!   fixed forged payload.

use rand::Rng as _;

use crate::ingest::CanFrameRecord;
use crate::seed;

pub const RPM_ID: u16 = 0x316;
pub const GEAR_ID: u16 = 0x43F;
pub const RPM_SPOOF: [u8; 8] = [0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6f];
pub const GEAR_SPOOF: [u8; 8] = [0x01, 0x45, 0x60, 0xff, 0x6b, 0x00, 0x00, 0x00];

/// Raw labels as they would come from the capture files.
pub const SYNTH_LABELS: [&str; 5] = ["Normal", "DoS", "Fuzzy", "RPM", "Gear"];

const NORMAL_IDS: [u16; 16] = [
    0x018, 0x034, 0x042, 0x043, 0x044, 0x0a0, 0x0a1, 0x153, 0x164, 0x220, 0x2a0, 0x2c0, RPM_ID, 0x329, GEAR_ID, 0x545,
];

/// Class mix of the generated traffic, as fractions of the frame count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthMix {
    pub dos: f64,
    pub fuzzy: f64,
    pub rpm: f64,
    pub gear: f64,
}

impl Default for SynthMix {
    fn default() -> Self {
        Self {
            dos: 0.10,
            fuzzy: 0.08,
            rpm: 0.06,
            gear: 0.06,
        }
    }
}

fn normal_payload(id: u16, rng: &mut seed::Rng) -> [u8; 8] {
    let mut d = [0u8; 8];
    match id {
        RPM_ID => {
            // engine status: counters and an rpm value that never repeats the forged bytes
            d = [
                0x05,
                0x20,
                rng.gen_range(0x00..0x60),
                0x09,
                0x20,
                0x20,
                0x00,
                rng.gen_range(0x70..0x80),
            ];
        }
        GEAR_ID => {
            d = [0x01, 0x45, 0x60, 0xff, rng.gen_range(0x60..0x68), 0x00, 0x00, 0x00];
        }
        _ => {
            // signal bytes up front, zero padding in the tail as on real buses
            let salt = (id & 0xff) as u8;
            for (i, b) in d.iter_mut().enumerate().take(5) {
                *b = if i % 2 == 0 {
                    salt.wrapping_mul(i as u8 + 1)
                } else {
                    rng.gen()
                };
            }
        }
    }
    d
}

/// `n` frames with timestamps in increasing order. The same `(n, mix, seed)`
/// always yields the same frames.
pub fn generate_can_frames(n: usize, mix: SynthMix, seed: u64) -> Vec<CanFrameRecord> {
    let mut rng = seed::rng(seed, "synth.can", 0);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.gen();
        let (label, can_id, data) = if u < mix.dos {
            (SYNTH_LABELS[1], 0x000, [0u8; 8])
        } else if u < mix.dos + mix.fuzzy {
            let mut d = [0u8; 8];
            rng.fill(&mut d);
            (SYNTH_LABELS[2], rng.gen_range(0..=0x7FF), d)
        } else if u < mix.dos + mix.fuzzy + mix.rpm {
            (SYNTH_LABELS[3], RPM_ID, RPM_SPOOF)
        } else if u < mix.dos + mix.fuzzy + mix.rpm + mix.gear {
            (SYNTH_LABELS[4], GEAR_ID, GEAR_SPOOF)
        } else {
            let id = NORMAL_IDS[rng.gen_range(0..NORMAL_IDS.len())];
            (SYNTH_LABELS[0], id, normal_payload(id, &mut rng))
        };
        frames.push(CanFrameRecord {
            timestamp: 1_478_198_376.0 + i as f64 * 0.000_25,
            can_id,
            dlc: 8,
            data,
            label: label.to_string(),
        });
    }
    frames
}

/// Format a frame as a capture log line (`timestamp,id,dlc,bytes...,flag`).
/// Attack frames get flag `T`, normal frames `R`.
pub fn format_can_line(frame: &CanFrameRecord) -> String {
    let mut line = format!("{:.6},{:04x},{}", frame.timestamp, frame.can_id, frame.dlc);
    for b in &frame.data[..usize::from(frame.dlc)] {
        line.push_str(&format!(",{b:02x}"));
    }
    line.push_str(if frame.label == SYNTH_LABELS[0] { ",R" } else { ",T" });
    line
}
