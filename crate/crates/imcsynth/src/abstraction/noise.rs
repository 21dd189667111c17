//! Per-axis bounded, symmetric, unimodal disturbances.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum AxisNoise {
    TruncatedGaussian {
        mean: f64,
        variance: f64,
        support: [f64; 2],
    },
    Uniform {
        support: [f64; 2],
    },
}

impl AxisNoise {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            AxisNoise::TruncatedGaussian { support, .. } | AxisNoise::Uniform { support } => {
                (support[0], support[1])
            }
        }
    }

    /// Mode (and centre of symmetry).
    pub fn mode(&self) -> f64 {
        match *self {
            AxisNoise::TruncatedGaussian { mean, .. } => mean,
            AxisNoise::Uniform { support } => 0.5 * (support[0] + support[1]),
        }
    }

    fn normal(mean: f64, variance: f64) -> Normal {
        Normal::new(mean, variance.sqrt()).expect("validated variance")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match *self {
            AxisNoise::TruncatedGaussian { mean, variance, .. } => {
                let n = Self::normal(mean, variance);
                let (a, b) = (n.cdf(lo), n.cdf(hi));
                ((n.cdf(x) - a) / (b - a)).clamp(0.0, 1.0)
            }
            AxisNoise::Uniform { .. } => (x - lo) / (hi - lo),
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let (lo, hi) = self.support();
        match *self {
            AxisNoise::TruncatedGaussian { mean, variance, .. } => {
                let n = Self::normal(mean, variance);
                let (a, b) = (n.cdf(lo), n.cdf(hi));
                n.inverse_cdf(a + u * (b - a)).clamp(lo, hi)
            }
            AxisNoise::Uniform { .. } => lo + u * (hi - lo),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "noise support [{lo}, {hi}] is not a bounded interval"
            )));
        }
        if let AxisNoise::TruncatedGaussian { variance, .. } = *self {
            if !(variance > 0.0) {
                return Err(Error::Config(format!(
                    "noise variance {variance} must be positive"
                )));
            }
        }
        let c = self.mode();
        let half = (hi - lo) / 2.0;
        for k in 0..=32 {
            let t = half * k as f64 / 32.0;
            let d = self.cdf(c + t) - (1.0 - self.cdf(c - t));
            if d.abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "noise is not symmetric about its mode {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseModel {
    pub axes: Vec<AxisNoise>,
}

impl NoiseModel {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn lo(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.support().0).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.support().1).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.axes.iter().map(|a| a.sample(rng)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.axes.iter().try_for_each(AxisNoise::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bistable() -> AxisNoise {
        AxisNoise::TruncatedGaussian {
            mean: -0.3,
            variance: 0.1,
            support: [-0.4, -0.2],
        }
    }

    #[test]
    fn cdf_endpoints_and_symmetry() {
        let w = bistable();
        assert_eq!(w.cdf(-0.4), 0.0);
        assert_eq!(w.cdf(-0.2), 1.0);
        assert!((w.cdf(-0.3) - 0.5).abs() < 1e-12);
        w.validate().unwrap();
        let skew = AxisNoise::TruncatedGaussian {
            mean: -0.35,
            variance: 0.1,
            support: [-0.4, -0.2],
        };
        assert!(skew.validate().is_err());
    }

    #[test]
    fn sampled_mean_matches_mode() {
        let w = bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| w.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| (-0.4..=-0.2).contains(&x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean + 0.3).abs() < 2e-3);
        // empirical cdf at a quarter point
        let q = xs.iter().filter(|&&x| x <= -0.35).count() as f64 / n as f64;
        assert!((q - w.cdf(-0.35)).abs() < 0.015);
    }

    #[test]
    fn uniform_cdf() {
        let w = AxisNoise::Uniform {
            support: [-0.5, 0.5],
        };
        assert_eq!(w.cdf(0.0), 0.5);
        assert_eq!(w.cdf(0.25), 0.75);
        assert_eq!(w.mode(), 0.0);
    }
}
