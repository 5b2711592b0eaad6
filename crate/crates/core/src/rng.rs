//! Keyed random streams.
//!
//! A stream is identified by `(master_seed, purpose, worker, iteration)`.
//! The key is mixed into a 256-bit ChaCha seed, so any two distinct keys give
//! independent generators and no stream depends on the order in which other
//! streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ProblemSetup = 1,
    Dataset = 2,
    Initialization = 3,
    WorkerGradient = 4,
    ByzantineSelection = 5,
    ToleranceTrial = 6,
    OrderStatistic = 7,
    InstanceJitter = 8,
    Test = 99,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub worker: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub key: StreamKey,
}

impl RngStream {
    pub fn new(master_seed: u64, purpose: Purpose, worker: u64, iteration: u64) -> Self {
        Self { master_seed, key: StreamKey { purpose, worker, iteration } }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.seed_bytes())
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        let words = [self.key.purpose as u64, self.key.worker, self.key.iteration];
        let mut seed = [0u8; 32];
        for (lane, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let mut h = splitmix64(&mut state) ^ (lane as u64).wrapping_mul(0xA076_1D64_78BD_642F);
            for w in words {
                let mut s = h ^ w;
                h = splitmix64(&mut s);
            }
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        seed
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draw(stream: RngStream, n: usize) -> Vec<u64> {
        let mut rng = stream.rng();
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn equal_keys_give_equal_sequences() {
        let s = RngStream::new(42, Purpose::WorkerGradient, 3, 17);
        assert_eq!(draw(s, 64), draw(s, 64));
    }

    #[test]
    fn distinct_keys_diverge() {
        let base = RngStream::new(42, Purpose::WorkerGradient, 3, 17);
        let others = [
            RngStream::new(43, Purpose::WorkerGradient, 3, 17),
            RngStream::new(42, Purpose::ByzantineSelection, 3, 17),
            RngStream::new(42, Purpose::WorkerGradient, 4, 17),
            RngStream::new(42, Purpose::WorkerGradient, 3, 18),
            RngStream::new(42, Purpose::WorkerGradient, 17, 3),
        ];
        let a = draw(base, 8);
        for o in others {
            assert_ne!(a, draw(o, 8));
        }
    }

    #[test]
    fn streams_look_uncorrelated() {
        // correlation of uniform draws across adjacent worker streams
        let n = 20_000;
        let mut a = RngStream::new(7, Purpose::Test, 0, 0).rng();
        let mut b = RngStream::new(7, Purpose::Test, 1, 0).rng();
        let xs: Vec<f64> = (0..n).map(|_| a.random::<f64>() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.random::<f64>() - 0.5).collect();
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // var of uniform(-.5,.5) is 1/12, so corr = 12 cov; 5 sigma of 1/sqrt(n)
        assert!((12.0 * cov).abs() < 5.0 / (n as f64).sqrt());
    }
}
