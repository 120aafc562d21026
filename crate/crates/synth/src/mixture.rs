//! Isotropic Gaussian mixtures with known component labels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::{spec_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stddev: f64,
    pub seed: u64,
}

impl MixtureSpec {
    /// `k` components whose means sit at `separation / sqrt(2)` along the
    /// first `k` axes, so every pair of means is exactly `separation` apart.
    pub fn separated(weights: Vec<f64>, dim: usize, separation: f64, stddev: f64, seed: u64) -> Result<Self> {
        let k = weights.len();
        if dim < k {
            return spec_err(format!("dim {dim} is smaller than k {k}"));
        }
        let scale = separation / std::f64::consts::SQRT_2;
        let means = (0..k)
            .map(|j| {
                let mut m = vec![0.0; dim];
                m[j] = scale;
                m
            })
            .collect();
        let spec = MixtureSpec { dim, weights, means, stddev, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return spec_err("mixture needs at least one component");
        }
        if self.means.len() != self.weights.len() {
            return spec_err("one mean per weight");
        }
        if self.means.iter().any(|m| m.len() != self.dim) || self.dim == 0 {
            return spec_err("mean width must equal dim (> 0)");
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return spec_err("weights must be non-negative with a positive sum");
        }
        if !(self.stddev.is_finite() && self.stddev >= 0.0) {
            return spec_err("stddev must be finite and non-negative");
        }
        Ok(())
    }
}

/// Row-major `f32` points with the component each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub dim: usize,
    pub points: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Mixture {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        self.points
            .chunks_exact(self.dim)
            .map(|r| r.iter().map(|&x| x as f64).collect())
            .collect()
    }
}

pub fn gen_mixture(spec: &MixtureSpec, n: usize) -> Result<Mixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pick = WeightedIndex::new(&spec.weights).map_err(|e| crate::SynthError::Spec(e.to_string()))?;
    let noise = Normal::new(0.0, spec.stddev).map_err(|e| crate::SynthError::Spec(e.to_string()))?;
    let mut points = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let j = pick.sample(&mut rng);
        labels.push(j);
        points.extend(spec.means[j].iter().map(|&m| (m + noise.sample(&mut rng)) as f32));
    }
    Ok(Mixture { dim: spec.dim, points, labels })
}
