//! Counter-based seeding: every `(master, trial, stream)` triple names an
//! independent ChaCha8 keystream, so trials and noise channels can be
//! generated in any order on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream reserved for random initial conditions.
pub const INIT_STREAM: u64 = u64::MAX;

pub fn stream_rng(master: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Independent Gaussian increments for a fixed list of streams; each stream
/// contributes `width` normals per step.
#[derive(Debug, Clone)]
pub struct WienerSource {
    rngs: Vec<ChaCha8Rng>,
    width: usize,
}

impl WienerSource {
    pub fn new(master: u64, trial: u64, streams: &[u64], width: usize) -> WienerSource {
        WienerSource {
            rngs: streams.iter().map(|&s| stream_rng(master, trial, s)).collect(),
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.rngs.len() * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    /// Fill `dw` with `N(0, h)` increments, stream by stream.
    #[inline]
    pub fn fill(&mut self, h: f64, dw: &mut [f64]) {
        let s = h.sqrt();
        let width = self.width;
        for (r, chunk) in self.rngs.iter_mut().zip(dw.chunks_mut(width)) {
            for v in chunk {
                let z: f64 = r.sample(StandardNormal);
                *v = s * z;
            }
        }
    }
}
