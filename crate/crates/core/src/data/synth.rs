//! Synthetic imbalanced data with a cheap linearly separable component and
//! a hard nonlinear component.
//!
//! Layout of one instance (before any normalization):
//! * columns `0..cheap_dim` form the cheap view. Positives are standard
//!   normal there. Easy negatives sit far out along the negative diagonal,
//!   separated from positives by a wide margin. Hard negatives overlap
//!   the positives, shifted only slightly along the same diagonal.
//! * the first two remaining columns carry a ring: positives fill the unit
//!   disc, hard negatives lie on an annulus of radii 2 to 3.5. Easy
//!   negatives are unstructured there.
//! * all other columns are standard normal noise.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

const EASY_OFFSET: f64 = 4.5;
const EASY_SPREAD: f64 = 1.5;
const HARD_SHIFT: f64 = 0.5;
const RING_INNER: f64 = 2.0;
const RING_OUTER: f64 = 3.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_total: usize,
    pub positive_fraction: f64,
    pub dim: usize,
    pub cheap_dim: usize,
    pub cheap_separable_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Matches the class balance and width of the smoking-detection data:
    /// 3836 cases, 291 positive, 37 features, 5 cheap features.
    fn default() -> Self {
        SynthConfig {
            n_total: 3836,
            positive_fraction: 0.0758,
            dim: 37,
            cheap_dim: 5,
            cheap_separable_fraction: 0.9,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub const KEYS: [&'static str; 6] = [
        "n_total",
        "positive_fraction",
        "dim",
        "cheap_dim",
        "cheap_separable_fraction",
        "seed",
    ];

    /// Defaults overridden by any of [`SynthConfig::KEYS`] present in `cfg`.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = SynthConfig::default();
        let out = SynthConfig {
            n_total: cfg.get_or("n_total", d.n_total)?,
            positive_fraction: cfg.get_or("positive_fraction", d.positive_fraction)?,
            dim: cfg.get_or("dim", d.dim)?,
            cheap_dim: cfg.get_or("cheap_dim", d.cheap_dim)?,
            cheap_separable_fraction: cfg
                .get_or("cheap_separable_fraction", d.cheap_separable_fraction)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.positive_fraction) {
            return Err(Error::Config(format!(
                "positive_fraction must lie in (0, 1), got {}",
                self.positive_fraction
            )));
        }
        if !open_unit(self.cheap_separable_fraction) {
            return Err(Error::Config(format!(
                "cheap_separable_fraction must lie in (0, 1), got {}",
                self.cheap_separable_fraction
            )));
        }
        if self.cheap_dim == 0 || self.cheap_dim > self.dim {
            return Err(Error::Config(format!(
                "need 1 <= cheap_dim <= dim, got cheap_dim {} and dim {}",
                self.cheap_dim, self.dim
            )));
        }
        if self.n_total < 2 {
            return Err(Error::Config("n_total must be at least 2".into()));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.positive_fraction * self.n_total as f64).round() as usize
    }
}

/// Generate a dataset; a pure function of `cfg`.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Data);
    let n_pos = cfg.positive_count().clamp(1, cfg.n_total - 1);
    let n_neg = cfg.n_total - n_pos;
    let n_easy = (cfg.cheap_separable_fraction * n_neg as f64).round() as usize;

    // ring axes: first two non-cheap columns, falling back to cheap ones
    let ring_axes: Vec<usize> = if cfg.dim > cfg.cheap_dim {
        (cfg.cheap_dim..cfg.dim.min(cfg.cheap_dim + 2)).collect()
    } else {
        (cfg.dim.saturating_sub(2)..cfg.dim).collect()
    };
    let diag = 1.0 / (cfg.cheap_dim as f64).sqrt();

    let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(cfg.n_total);
    for i in 0..cfg.n_total {
        let kind = if i < n_pos {
            Kind::Positive
        } else if i < n_pos + n_easy {
            Kind::Easy
        } else {
            Kind::Hard
        };
        let mut x: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();

        let cheap = &mut x[..cfg.cheap_dim];
        match kind {
            Kind::Positive => {}
            Kind::Easy => {
                let proj: f64 = cheap.iter().sum::<f64>() * diag;
                let z: f64 = rng.sample(StandardNormal);
                let target = -(EASY_OFFSET + EASY_SPREAD * z.abs());
                cheap.iter_mut().for_each(|v| *v += (target - proj) * diag);
            }
            Kind::Hard => cheap.iter_mut().for_each(|v| *v -= HARD_SHIFT * diag),
        }

        let radius = match kind {
            Kind::Positive => Some(rng.random::<f64>().powf(1.0 / ring_axes.len() as f64)),
            Kind::Hard => Some(RING_INNER + (RING_OUTER - RING_INNER) * rng.random::<f64>()),
            Kind::Easy => None,
        };
        if let Some(radius) = radius {
            let norm = ring_axes.iter().map(|&a| x[a] * x[a]).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { radius / norm } else { 0.0 };
            for &a in &ring_axes {
                x[a] *= scale;
            }
        }
        rows.push((x, u8::from(kind == Kind::Positive)));
    }
    rows.shuffle(&mut rng);

    let labels = rows.iter().map(|r| r.1).collect();
    let flat: Vec<T> = rows.iter().flat_map(|r| r.0.iter().map(|&v| T::of(v))).collect();
    let features = Array2::from_shape_vec((cfg.n_total, cfg.dim), flat)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Dataset::new(features, labels, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Positive,
    Easy,
    Hard,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_and_balance() {
        let d: Dataset<f64> = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(d.len(), 3836);
        assert_eq!(d.dim(), 37);
        assert_eq!(d.positive_count(), 291);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig { n_total: 200, seed: 3, ..Default::default() };
        let a: Dataset<f64> = synth_generate(&cfg).unwrap();
        let b: Dataset<f64> = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = synth_generate(&SynthConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_dimensions_still_generate() {
        for (dim, cheap_dim) in [(5, 5), (6, 5), (2, 1), (1, 1)] {
            let cfg = SynthConfig { n_total: 50, dim, cheap_dim, ..Default::default() };
            let d: Dataset<f32> = synth_generate(&cfg).unwrap();
            assert_eq!(d.dim(), dim);
        }
    }

    #[test]
    fn validation() {
        let bad = SynthConfig { positive_fraction: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { cheap_dim: 40, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { cheap_separable_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn from_config_overrides_defaults() {
        let kv = KvConfig::parse("n_total = 100\nseed = 9").unwrap();
        let cfg = SynthConfig::from_config(&kv).unwrap();
        assert_eq!(cfg.n_total, 100);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dim, 37);
    }
}
