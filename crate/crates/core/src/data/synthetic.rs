use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledExample};
use crate::error::{Error, Result};

/// Isotropic class-conditional Gaussians, embedded as `1 x d x 1` images.
///
/// Samples are clamped to `[0, 1]`; keep means well inside the box and the
/// spread small so the clamp is negligible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    /// Per-class standard deviation shared by every coordinate.
    pub stds: Vec<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            means: vec![vec![0.4, 0.4], vec![0.6, 0.6]],
            stds: vec![0.05, 0.05],
        }
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.means.len() < 2 || d == 0 {
            return Err(Error::Config("synthetic spec needs at least two classes of positive dimension".into()));
        }
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::Config("synthetic means differ in dimension".into()));
        }
        if self.stds.len() != self.means.len() {
            return Err(Error::Config("synthetic spec needs one std per class".into()));
        }
        if self.means.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("synthetic means must lie in [0, 1]".into()));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("synthetic stds must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// `per_class` examples per class, interleaved by class.
    ///
    /// `split` selects an independent stream so train and test differ.
    pub fn generate(&self, per_class: usize, seed: u64, split: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5e_0000 + split);
        let normals: Vec<Normal<f64>> = self
            .stds
            .iter()
            .map(|&s| Normal::new(0.0, s).expect("validated std"))
            .collect();
        let mut examples = Vec::with_capacity(per_class * self.means.len());
        for _ in 0..per_class {
            for (label, mean) in self.means.iter().enumerate() {
                let image = mean
                    .iter()
                    .map(|&m| (m + normals[label].sample(&mut rng)).clamp(0.0, 1.0) as f32)
                    .collect();
                examples.push(LabeledExample { image, label });
            }
        }
        Dataset::new(
            format!("synthetic-gaussians-{split}"),
            [1, self.dim(), 1],
            self.means.len(),
            examples,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let s = SyntheticSpec::default();
        let a = s.generate(20, 3, 0).unwrap();
        let b = s.generate(20, 3, 0).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_ne!(a.examples, s.generate(20, 3, 1).unwrap().examples);
        assert_eq!(a.class_counts(), vec![20, 20]);
    }

    #[test]
    fn moments_match_spec() {
        let s = SyntheticSpec {
            means: vec![vec![0.3, 0.5], vec![0.7, 0.5]],
            stds: vec![0.05, 0.08],
        };
        let n = 100_000;
        let ds = s.generate(n, 11, 0).unwrap();
        for (c, mean) in s.means.iter().enumerate() {
            let xs: Vec<&LabeledExample> = ds.examples.iter().filter(|e| e.label == c).collect();
            for (k, &m) in mean.iter().enumerate() {
                let mu = xs.iter().map(|e| f64::from(e.image[k])).sum::<f64>() / n as f64;
                let var = xs.iter().map(|e| (f64::from(e.image[k]) - mu).powi(2)).sum::<f64>() / n as f64;
                let sd = s.stds[c];
                // Five standard errors on the mean, 2% on the standard deviation.
                assert!((mu - m).abs() < 5.0 * sd / (n as f64).sqrt(), "class {c} dim {k}: mean {mu}");
                assert!((var.sqrt() / sd - 1.0).abs() < 0.02, "class {c} dim {k}: sd {}", var.sqrt());
            }
            let cov = xs
                .iter()
                .map(|e| (f64::from(e.image[0]) - mean[0]) * (f64::from(e.image[1]) - mean[1]))
                .sum::<f64>()
                / n as f64;
            assert!(cov.abs() < 5.0 * s.stds[c].powi(2) / (n as f64).sqrt(), "class {c}: cov {cov}");
        }
    }

    #[test]
    fn rejects_ragged_means() {
        let s = SyntheticSpec {
            means: vec![vec![0.3, 0.5], vec![0.7]],
            stds: vec![0.1, 0.1],
        };
        assert!(s.validate().is_err());
    }
}
