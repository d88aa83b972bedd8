//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `seed` with the ChaCha stream
//! parameter set from `stream_id`, so streams with distinct ids never overlap.
//! Child streams are derived by mixing the parent id with a child index.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::norm;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream; depends only on `(seed, stream_id, index)`,
    /// never on how many draws the parent has made.
    pub fn fork(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0xA5A5_5A5A)));
        RngStream::new(self.seed, id)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1).
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval (0, 1), safe for logarithms.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform point on the unit sphere `S^{n-1}`.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let mut g = self.normal_vec(n);
            let r = norm(&g);
            if r > 1e-300 {
                g.iter_mut().for_each(|x| *x /= r);
                return g;
            }
        }
    }

    /// Uniform point in the unit ball `B_n`.
    pub fn in_unit_ball(&mut self, n: usize) -> Vec<f64> {
        let mut u = self.unit_vector(n);
        let r = self.uniform().powf(1.0 / n as f64);
        u.iter_mut().for_each(|x| *x *= r);
        u
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
