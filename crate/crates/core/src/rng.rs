//! Deterministic random number generation.
//!
//! All stochastic pieces of the crate (noise synthesis, power-iteration
//! starts, error-injection directions, test data) draw from [`DetRng`], a
//! SplitMix64 stream with a Box-Muller Gaussian transform. The algorithm is
//! fixed here so that a given seed reproduces the same sequence on every run;
//! outputs involving `ln`/`cos` additionally depend on the platform's libm,
//! so bit-identical reproduction is guaranteed per build.

/// SplitMix64 generator (Steele, Lea, Flood 2014) with a Box-Muller Gaussian
/// transform. Not cryptographic; chosen for its tiny fixed specification.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
    gauss_spare: Option<f64>,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            state: seed,
            gauss_spare: None,
        }
    }

    /// Derive an independent stream from a seed and a stream label.
    pub fn for_stream(seed: u64, label: u64) -> Self {
        // Run the label through one SplitMix64 round so nearby labels decorrelate.
        let mut mix = DetRng::new(seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let s = mix.next_u64();
        DetRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1], safe as a `ln` argument.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; pairs are consumed lazily.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(s) = self.gauss_spare.take() {
            return s;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Vector of i.i.d. uniforms in [-1, 1).
    pub fn signed_vector(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.uniform_in(-1.0, 1.0)).collect()
    }

    /// Unit vector with a direction drawn from the signed-uniform cube.
    /// Transcendental-free, so the output is bit-stable across platforms.
    pub fn unit_vector(&mut self, len: usize) -> Vec<f64> {
        let mut v = self.signed_vector(len);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = DetRng::new(42);
        let mut b = DetRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = DetRng::new(7);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = DetRng::new(123);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let g = rng.gaussian();
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn unit_vector_has_unit_norm() {
        let mut rng = DetRng::new(5);
        let v = rng.unit_vector(17);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
