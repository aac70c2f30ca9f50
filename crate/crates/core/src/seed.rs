//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline is keyed by a master seed plus a short
//! label path (`[c]` for clustering `c`, `[c, b]` for knockoff draw `b` of
//! clustering `c`), so any cell of the ensemble can be regenerated alone.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a label path.
///
/// The label count is folded in first, so `[]`, `[0]` and `[0, 0]` all map to
/// different streams.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut state = mix64(master ^ GOLDEN);
    state = mix64(state.wrapping_add(GOLDEN).wrapping_add(labels.len() as u64));
    for &label in labels {
        state = mix64(state.wrapping_add(GOLDEN) ^ mix64(label.wrapping_add(GOLDEN)));
    }
    state
}
