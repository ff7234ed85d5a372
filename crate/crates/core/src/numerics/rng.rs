use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded random stream.
///
/// Backed by ChaCha8, which is a counter-mode generator: the output is a
/// pure function of (key, word position), identical on every platform.
/// Forking derives a child key from the parent key, the parent's current
/// position and a label, without advancing the parent. Children created
/// from distinct labels (or indices) are independent streams, so work can
/// be handed to threads in any order and still reproduce bit-for-bit.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a, stable across toolchains unlike std's DefaultHasher.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.key
    }

    fn derive(&self, salt: u64) -> Rng {
        let pos = self.inner.get_word_pos() as u64;
        let child = mix64(mix64(self.key ^ mix64(salt)) ^ pos);
        Rng::new(child)
    }

    /// Independent child stream keyed by a label.
    pub fn fork(&self, label: &str) -> Rng {
        self.derive(hash_label(label))
    }

    /// Independent child stream keyed by an integer (particle, member, ...).
    pub fn fork_index(&self, index: u64) -> Rng {
        self.derive(mix64(index ^ 0x5851_f42d_4c95_7f2d))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `n` i.i.d. standard-normal draws.
    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        (m, v)
    }

    #[test]
    fn same_seed_same_draws() {
        let a = Rng::new(7).gaussian(32);
        let b = Rng::new(7).gaussian(32);
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let xs = Rng::new(1).gaussian(100_000);
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 1.0).abs() < 0.03, "var {v}");
    }

    #[test]
    fn forks_are_uncorrelated() {
        let root = Rng::new(3);
        let a = root.fork("a").gaussian(100_000);
        let b = root.fork("b").gaussian(100_000);
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / a.len() as f64;
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.02, "rho {rho}");
    }

    #[test]
    fn fork_does_not_advance_parent() {
        let mut a = Rng::new(11);
        let mut b = Rng::new(11);
        let _ = a.fork("x");
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn fork_depends_on_position() {
        let mut r = Rng::new(5);
        let first = r.fork("p").next_u64();
        r.next_u64();
        let second = r.fork("p").next_u64();
        assert_ne!(first, second);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(2).shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
