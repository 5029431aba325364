/// Derives a child seed from a base seed and a list of stream identifiers.
///
/// SplitMix64 finalizer over each component, so per-week and per-portfolio
/// streams are independent of thread scheduling.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix(base);
    for &p in parts {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
