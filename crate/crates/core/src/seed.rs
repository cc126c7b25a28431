//! Deterministic random streams derived from one master seed.
//!
//! Every consumer gets `ChaCha8Rng::seed_from_u64(master)` with its own
//! stream id, so draws for one purpose never shift the draws of another:
//!
//! | purpose                         | stream id            |
//! |---------------------------------|----------------------|
//! | fixed point of layer `l`        | `1 << 32 \| l`       |
//! | initial phases of layer `l`     | `2 << 32 \| l`       |
//! | batch order of epoch `e`        | `3 << 32 \| e`       |
//! | synthetic probe input `k`       | `4 << 32 \| k`       |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    FixedPoint(u32),
    Phases(u32),
    Shuffle(u32),
    Probe(u32),
}

impl Stream {
    pub fn id(self) -> u64 {
        let (tag, index) = match self {
            Stream::FixedPoint(l) => (1u64, l),
            Stream::Phases(l) => (2, l),
            Stream::Shuffle(e) => (3, e),
            Stream::Probe(k) => (4, k),
        };
        (tag << 32) | u64::from(index)
    }
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}
