//! Counter-based uniforms: Philox4x32-10 keyed by the run seed.
//!
//! The variate for a site is a pure function of `(seed, trial, site)`, so any
//! trial can be replayed in isolation and in any order.

pub const RNG_ALGORITHM: &str = "philox4x32-10";
/// Bumped whenever the mapping from `(seed, trial, site)` to a uniform changes.
pub const RNG_STREAM_VERSION: u32 = 1;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32 block with ten rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

#[inline]
fn split(x: u64) -> [u32; 2] {
    [x as u32, (x >> 32) as u32]
}

/// Uniform in `[0, 1)` with 53 random bits for `(seed, trial, site)`.
#[inline]
pub fn site_uniform(seed: u64, trial: u64, site: u64) -> f64 {
    let [s0, s1] = split(site);
    let [t0, t1] = split(trial);
    let out = philox4x32_10([s0, s1, t0, t1], split(seed));
    let bits = ((out[0] as u64) << 32 | out[1] as u64) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Child seed for the `index`-th independent sub-experiment of `seed`
/// (sweep grid points, bisection probes).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let [i0, i1] = split(index);
    let out = philox4x32_10([i0, i1, 0xFFFF_FFFF, 0x5EED_5EED], split(seed));
    (out[0] as u64) << 32 | out[1] as u64
}
