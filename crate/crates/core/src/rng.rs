//! Counter-based random streams.
//!
//! Every variate is a pure function of `(seed, tag, step, index)`; the
//! channel position inside a per-point generator fixes the rest. Results are
//! therefore independent of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    tag: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, tag: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream for a named purpose.
    pub fn derive(&self, purpose: &str) -> RngStream {
        let mut h = self.tag ^ 0x9e37_79b9_7f4a_7c15;
        for b in purpose.bytes() {
            h = splitmix(h ^ b as u64);
        }
        RngStream {
            seed: self.seed,
            tag: h,
        }
    }

    /// Sub-stream keyed by an integer, e.g. a scene or epoch number.
    pub fn derive_index(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            tag: splitmix(self.tag ^ splitmix(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Generator for one `(step, index)` cell of the stream.
    pub fn rng(&self, step: u64, index: u64) -> ChaCha8Rng {
        let mut h = splitmix(self.seed);
        h = splitmix(h ^ self.tag);
        h = splitmix(h ^ step.wrapping_mul(0xd1b5_4a32_d192_ed03));
        h = splitmix(h ^ index.wrapping_mul(0xaef1_7502_108e_f2d9));
        ChaCha8Rng::seed_from_u64(h)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
