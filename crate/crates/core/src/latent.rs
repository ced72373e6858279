//! Latent tensors, their Gaussian parameters and synthetic latent sources.
//!
//! Components are addressed by a flat index in channel-major order: channel
//! outermost, then row, then column. The same order is used by the file
//! formats and by every per-component table in the codec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a latent tensor (channels x rows x columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(channels, height, width));
        }
        Ok(Shape {
            channels,
            height,
            width,
        })
    }

    /// Total number of components.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Channel that owns flat component `index`.
    #[inline]
    pub fn channel_of(&self, index: usize) -> usize {
        index / self.plane()
    }

    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Real-valued latent representation `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        shape.check_len(values.len())?;
        check_finite(&values)?;
        Ok(LatentTensor { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-component Gaussian parameters (mean and standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    shape: Shape,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn new(shape: Shape, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        shape.check_len(mu.len())?;
        shape.check_len(sigma.len())?;
        check_finite(&mu)?;
        check_finite(&sigma)?;
        if let Some(index) = sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::NonPositiveSigma {
                index,
                value: sigma[index],
            });
        }
        Ok(GaussianParams { shape, mu, sigma })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

/// Mean-removed latent `y* = y - mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedLatent {
    shape: Shape,
    values: Vec<f64>,
}

impl UnbiasedLatent {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        shape.check_len(values.len())?;
        check_finite(&values)?;
        Ok(UnbiasedLatent { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds the mean back.
    pub fn uncenter(&self, params: &GaussianParams) -> Result<LatentTensor> {
        if params.shape != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.len(),
                found: params.shape.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&params.mu)
            .map(|(v, m)| v + m)
            .collect();
        LatentTensor::new(self.shape, values)
    }
}

/// Shifts every component by its predicted mean.
pub fn center(latent: &LatentTensor, params: &GaussianParams) -> Result<UnbiasedLatent> {
    if latent.shape != params.shape {
        return Err(Error::ShapeMismatch {
            expected: latent.shape.len(),
            found: params.shape.len(),
        });
    }
    let values = latent
        .values
        .iter()
        .zip(&params.mu)
        .map(|(y, m)| y - m)
        .collect();
    Ok(UnbiasedLatent {
        shape: latent.shape,
        values,
    })
}

/// How the standard deviations of a synthetic source are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Same sigma everywhere.
    Fixed { value: f64 },
    /// Independent log-uniform draw per component.
    LogUniform { lo: f64, hi: f64 },
    /// Channel `c` gets the geometric point `lo * (hi/lo)^(c/(C-1))`; each
    /// component is then perturbed by `exp(jitter * U(-1, 1))` and clamped
    /// back into `[lo, hi]`.
    Channels { lo: f64, hi: f64, jitter: f64 },
}

/// How the means of a synthetic source are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSpec {
    Zero,
    Uniform { lo: f64, hi: f64 },
}

/// Recipe for a seeded Gaussian latent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub shape: Shape,
    pub sigma: SigmaSpec,
    pub mu: MuSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SourceConfig {
    /// Four channels with sigma spread over [0.1, 10] on a 64x64 grid.
    fn default() -> Self {
        SourceConfig {
            shape: Shape {
                channels: 4,
                height: 64,
                width: 64,
            },
            sigma: SigmaSpec::Channels {
                lo: 0.1,
                hi: 10.0,
                jitter: 0.25,
            },
            mu: MuSpec::Uniform { lo: -1.0, hi: 1.0 },
            seed: 0,
        }
    }
}

impl SourceConfig {
    /// Reads a TOML source description and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SourceConfig = toml::from_str(text).map_err(|e| Error::format("source file", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("source descriptions always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        Shape::new(self.shape.channels, self.shape.height, self.shape.width)?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        match self.sigma {
            SigmaSpec::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                return bad("fixed sigma must be positive and finite")
            }
            SigmaSpec::LogUniform { lo, hi } | SigmaSpec::Channels { lo, hi, .. }
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) =>
            {
                return bad("sigma range must satisfy 0 < lo <= hi < inf")
            }
            SigmaSpec::Channels { jitter, .. } if !(jitter >= 0.0 && jitter.is_finite()) => {
                return bad("sigma jitter must be non-negative")
            }
            _ => {}
        }
        if let MuSpec::Uniform { lo, hi } = self.mu {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad("mu range must satisfy lo <= hi");
            }
        }
        Ok(())
    }
}

/// Rounds to the nearest value representable in the 32-bit file formats.
#[inline]
pub(crate) fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws `y ~ N(mu, sigma^2)` per component. All outputs are representable
/// in 32 bits so that they survive a trip through the latent file format.
pub fn sample_source(cfg: &SourceConfig) -> Result<(LatentTensor, GaussianParams)> {
    cfg.validate()?;
    let shape = cfg.shape;
    let n = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let clamp32 = |v: f64, lo: f64, hi: f64| f32_within(v.clamp(lo, hi), lo, hi);

    let sigma: Vec<f64> = match cfg.sigma {
        SigmaSpec::Fixed { value } => vec![f32_exact(value); n],
        SigmaSpec::LogUniform { lo, hi } => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|_| clamp32((a + (b - a) * rng.random::<f64>()).exp(), lo, hi))
                .collect()
        }
        SigmaSpec::Channels { lo, hi, jitter } => {
            let c_max = (shape.channels.max(2) - 1) as f64;
            (0..n)
                .map(|i| {
                    let c = shape.channel_of(i) as f64;
                    let base = lo.ln() + (hi.ln() - lo.ln()) * c / c_max;
                    let u: f64 = rng.random_range(-1.0..1.0);
                    clamp32((base + jitter * u).exp(), lo, hi)
                })
                .collect()
        }
    };
    let mu: Vec<f64> = match cfg.mu {
        MuSpec::Zero => vec![0.0; n],
        MuSpec::Uniform { lo, hi } => (0..n)
            .map(|_| f32_exact(lo + (hi - lo) * rng.random::<f64>()))
            .collect(),
    };
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            f32_exact(mu[i] + sigma[i] * z)
        })
        .collect();

    Ok((LatentTensor::new(shape, y)?, GaussianParams::new(shape, mu, sigma)?))
}

/// Nearest 32-bit value to `v`, nudged by one ulp if rounding left `[lo, hi]`.
fn f32_within(v: f64, lo: f64, hi: f64) -> f64 {
    let f = v as f32;
    if (f as f64) < lo {
        f32::from_bits(f.to_bits().wrapping_add(if f >= 0.0 { 1 } else { u32::MAX })) as f64
    } else if (f as f64) > hi {
        f32::from_bits(f.to_bits().wrapping_add(if f > 0.0 { u32::MAX } else { 1 })) as f64
    } else {
        f as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(c: usize, h: usize, w: usize) -> Shape {
        Shape::new(c, h, w).unwrap()
    }

    #[test]
    fn source_toml_round_trips() {
        let cfg = SourceConfig {
            seed: 17,
            ..SourceConfig::default()
        };
        let text = cfg.to_toml();
        assert_eq!(SourceConfig::parse(&text).unwrap(), cfg);
        let short = "shape = { channels = 2, height = 3, width = 4 }\n\
                     sigma = { kind = \"fixed\", value = 0.5 }\n\
                     mu = { kind = \"zero\" }\n";
        assert_eq!(SourceConfig::parse(short).unwrap().seed, 0);
        assert!(SourceConfig::parse(&short.replace("0.5", "-1.0")).is_err());
    }

    #[test]
    fn center_subtracts_mean() {
        let s = shape(1, 1, 2);
        let y = LatentTensor::new(s, vec![1.5, -2.0]).unwrap();
        let p = GaussianParams::new(s, vec![0.5, -2.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(center(&y, &p).unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_mean_is_bitwise_identity() {
        let s = shape(1, 2, 2);
        let vals = vec![0.1, -3.25e-7, 1e30, -0.0];
        let y = LatentTensor::new(s, vals.clone()).unwrap();
        let p = GaussianParams::new(s, vec![0.0; 4], vec![1.0; 4]).unwrap();
        let c = center(&y, &p).unwrap();
        for (a, b) in c.values().iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn center_rejects_shape_mismatch() {
        let y = LatentTensor::new(shape(1, 1, 2), vec![0.0; 2]).unwrap();
        let p = GaussianParams::new(shape(1, 1, 3), vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(center(&y, &p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(Shape::new(0, 1, 1).is_err());
        let s = shape(1, 1, 2);
        assert!(LatentTensor::new(s, vec![f64::NAN, 0.0]).is_err());
        assert!(LatentTensor::new(s, vec![0.0]).is_err());
        assert!(matches!(
            GaussianParams::new(s, vec![0.0; 2], vec![1.0, 0.0]),
            Err(Error::NonPositiveSigma { index: 1, .. })
        ));
    }

    #[test]
    fn sampled_mean_converges() {
        let cfg = SourceConfig {
            shape: shape(1, 1000, 1000),
            sigma: SigmaSpec::Fixed { value: 1.0 },
            mu: MuSpec::Zero,
            seed: 7,
        };
        let (y, _) = sample_source(&cfg).unwrap();
        let mean = y.values().iter().sum::<f64>() / y.values().len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SourceConfig::default();
        let a = sample_source(&cfg).unwrap();
        let b = sample_source(&cfg).unwrap();
        assert_eq!(a, b);
        let other = sample_source(&SourceConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn sigma_range_is_respected() {
        for sigma in [
            SigmaSpec::LogUniform { lo: 0.1, hi: 10.0 },
            SigmaSpec::Channels {
                lo: 0.1,
                hi: 10.0,
                jitter: 1.0,
            },
        ] {
            let cfg = SourceConfig {
                shape: shape(4, 32, 32),
                sigma,
                mu: MuSpec::Uniform { lo: -1.0, hi: 1.0 },
                seed: 3,
            };
            let (_, p) = sample_source(&cfg).unwrap();
            assert!(p.sigma().iter().all(|&s| (0.1..=10.0).contains(&s)));
        }
    }

    #[test]
    fn sampled_values_are_f32_exact() {
        let (y, p) = sample_source(&SourceConfig::default()).unwrap();
        for v in y.values().iter().chain(p.mu()).chain(p.sigma()) {
            assert_eq!(*v, f32_exact(*v));
        }
    }
}
