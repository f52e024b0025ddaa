use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Frozen random Fourier feature map `p ↦ (cos 2πBp, sin 2πBp)`.
///
/// `B` is an `f×2` matrix drawn once from `N(0, σ²)`; it is never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeatureMap {
    freqs: Vec<f64>,
    sigma: f64,
}

impl FourierFeatureMap {
    pub fn sample<R: Rng>(f: usize, sigma: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let freqs = (0..2 * f).map(|_| normal.sample(rng)).collect();
        Self { freqs, sigma }
    }

    /// Rebuilds a map from a stored row-major `f×2` matrix.
    pub fn from_matrix(freqs: Vec<f64>, sigma: f64) -> Option<Self> {
        freqs.len().is_multiple_of(2).then_some(Self { freqs, sigma })
    }

    pub fn num_frequencies(&self) -> usize {
        self.freqs.len() / 2
    }

    /// Length of the feature vector, `2f`.
    pub fn output_dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row-major `f×2` matrix `B`.
    pub fn matrix(&self) -> &[f64] {
        &self.freqs
    }

    /// Features of a single point: `f` cosines followed by `f` sines.
    pub fn features(&self, point: [f64; 2]) -> Vec<f64> {
        let f = self.num_frequencies();
        let mut out = vec![0.0; 2 * f];
        for (j, b) in self.freqs.chunks_exact(2).enumerate() {
            let (s, c) = (2.0 * PI * (b[0] * point[0] + b[1] * point[1])).sin_cos();
            out[j] = c;
            out[f + j] = s;
        }
        out
    }
}
