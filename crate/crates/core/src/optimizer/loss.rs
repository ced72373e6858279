//! Layered rate-distortion loss `sum_l R_l + lambda_l * D_l`.
//!
//! `R_l` is the number of bits needed to reach layer `l`, per latent
//! component; `D_l` is the mean squared error of the final latent at layer
//! `l` over all components, unselected ones reconstructing to their mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{conditional_prob, interval_mass, P_MIN};
use crate::error::{Error, Result};
use crate::latent::{center, GaussianParams, LatentTensor};
use crate::quant::{dequantize, init_interval, k_for, quantize, refine, IntervalState, DEFAULT_THRESHOLD};
use crate::schedule::StepSchedule;
use crate::selection::{layer_masks, ImportanceMap};

/// How the rate of a layer is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// Run the nested quantizer and sum the ideal code lengths of its
    /// symbols under the conditional interval probabilities.
    #[default]
    Exact,
    /// Replace quantization by additive `U(-0.5, 0.5)` noise in step units
    /// and charge `-log2` of the Gaussian mass of a unit cell around it.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of each layer's distortion.
    pub lambda: Vec<f64>,
    pub model: RateModel,
    /// Boundary adjustment threshold used by the exact model.
    pub threshold: f64,
    /// Seed of the surrogate noise.
    pub seed: u64,
}

impl LossConfig {
    /// `lambda_l = base * 2^(l - L)` with the default base of 0.2.
    pub fn standard(layers: usize) -> Self {
        Self::with_lambda_base(layers, 0.2)
    }

    pub fn with_lambda_base(layers: usize, base: f64) -> Self {
        LossConfig {
            lambda: (1..=layers).map(|l| base * 2f64.powi(l as i32 - layers as i32)).collect(),
            model: RateModel::Exact,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_empty() || self.lambda.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda entries must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        Ok(())
    }
}

/// Per-layer rate and distortion with their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Bits per component needed to reach each layer.
    pub rate: Vec<f64>,
    /// Mean squared error of the final latent at each layer.
    pub distortion: Vec<f64>,
    pub lambda: Vec<f64>,
    pub total: f64,
}

/// A latent with its parameters and importance, ready for loss evaluation.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub latent: LatentTensor,
    pub params: GaussianParams,
    pub importance: ImportanceMap,
    unbiased: Vec<f64>,
    /// Largest `|y - mu|` per channel.
    max_abs: Vec<f64>,
}

impl Corpus {
    pub fn new(latent: LatentTensor, params: GaussianParams) -> Result<Self> {
        let importance = ImportanceMap::from_sigma(&params);
        Self::with_importance(latent, params, importance)
    }

    pub fn with_importance(latent: LatentTensor, params: GaussianParams, importance: ImportanceMap) -> Result<Self> {
        let unbiased = center(&latent, &params)?.values().to_vec();
        if importance.shape() != latent.shape() {
            return Err(Error::ShapeMismatch {
                expected: latent.shape().len(),
                found: importance.shape().len(),
            });
        }
        let plane = latent.shape().plane();
        let max_abs = unbiased
            .chunks(plane)
            .map(|p| p.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        Ok(Corpus {
            latent,
            params,
            importance,
            unbiased,
            max_abs,
        })
    }

    pub fn len(&self) -> usize {
        self.unbiased.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unbiased.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.latent.shape().channels
    }

    /// Root mean square of the centred values of channel `c`.
    pub fn channel_rms(&self, c: usize) -> f64 {
        let plane = self.latent.shape().plane();
        let s = &self.unbiased[c * plane..(c + 1) * plane];
        (s.iter().map(|v| v * v).sum::<f64>() / plane as f64).sqrt()
    }

    pub(crate) fn k_needed(&self, c: usize, delta1: f64) -> Result<u32> {
        k_for(self.max_abs[c], delta1)
    }
}

/// Summed bits and squared errors of one channel, per layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Terms {
    pub bits: Vec<f64>,
    pub sq: Vec<f64>,
}

impl Terms {
    fn zero(layers: usize) -> Self {
        Terms {
            bits: vec![0.0; layers],
            sq: vec![0.0; layers],
        }
    }

    fn add(&mut self, o: &Terms) {
        for (a, b) in self.bits.iter_mut().zip(&o.bits) {
            *a += b;
        }
        for (a, b) in self.sq.iter_mut().zip(&o.sq) {
            *a += b;
        }
    }
}

const CHUNK: usize = 1024;

/// Loss evaluator with precomputed surrogate noise.
pub(crate) struct Evaluator<'a> {
    pub corpus: &'a Corpus,
    pub cfg: &'a LossConfig,
    layers: usize,
    /// Layer-major `U(-0.5, 0.5)` draws; empty for the exact model.
    noise: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &'a LossConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg.lambda.len();
        let n = corpus.len();
        let noise = match cfg.model {
            RateModel::Exact => Vec::new(),
            RateModel::Surrogate => (0..layers)
                .flat_map(|l| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(l as u64);
                    (0..n).map(move |_| rng.random::<f64>() - 0.5)
                })
                .collect(),
        };
        Ok(Evaluator {
            corpus,
            cfg,
            layers,
            noise,
        })
    }

    pub fn masks(&self, schedule: &StepSchedule) -> Vec<Vec<bool>> {
        layer_masks(&self.corpus.importance, schedule)
            .into_iter()
            .map(|m| m.bits)
            .collect()
    }

    /// Global first-layer interval count for `schedule`.
    pub fn k(&self, schedule: &StepSchedule) -> Result<u32> {
        (0..schedule.channels())
            .map(|c| self.corpus.k_needed(c, schedule.delta(1, c)))
            .try_fold(1, |m, k| k.map(|k| m.max(k)))
    }

    /// Terms of channel `c`. Deterministic regardless of thread count.
    pub fn channel(&self, schedule: &StepSchedule, masks: &[Vec<bool>], k: u32, c: usize) -> Result<Terms> {
        let plane = self.corpus.latent.shape().plane();
        let base = c * plane;
        let chunks: Vec<Terms> = (0..plane.div_ceil(CHUNK))
            .into_par_iter()
            .map(|j| {
                let mut t = Terms::zero(self.layers);
                for i in base + j * CHUNK..base + ((j + 1) * CHUNK).min(plane) {
                    match self.cfg.model {
                        RateModel::Exact => self.exact_component(schedule, masks, k, c, i, &mut t)?,
                        RateModel::Surrogate => self.surrogate_component(schedule, masks, c, i, &mut t),
                    }
                }
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let mut t = Terms::zero(self.layers);
        for ch in &chunks {
            t.add(ch);
        }
        Ok(t)
    }

    fn exact_component(
        &self,
        s: &StepSchedule,
        masks: &[Vec<bool>],
        k: u32,
        c: usize,
        i: usize,
        t: &mut Terms,
    ) -> Result<()> {
        let y = self.corpus.unbiased[i];
        let orig = self.corpus.latent.values()[i];
        let mu = self.corpus.params.mu()[i];
        let sigma = self.corpus.params.sigma()[i];
        let mut state: Option<IntervalState> = None;
        let mut recon = 0.0;
        for l in 1..=self.layers {
            if masks[l - 1][i] {
                let parent = match state {
                    Some(p) => p,
                    None => init_interval(s.delta(1, c), k)?,
                };
                let bs = refine(&parent, s.delta(l, c), self.cfg.threshold)?;
                let q = quantize(y, &bs)?;
                if bs.valid_count() > 1 {
                    let p = conditional_prob(bs.bound(q), bs.bound(q + 1), bs.lb, bs.ub, sigma)?;
                    t.bits[l - 1] -= p.max(P_MIN).log2();
                }
                let (r, child) = dequantize(q, &bs)?;
                recon = r;
                state = Some(child);
            }
            let fin = (recon + mu) * (s.delta_inv(l, c) / s.delta(l, c));
            t.sq[l - 1] += (fin - orig) * (fin - orig);
        }
        Ok(())
    }

    fn surrogate_component(&self, s: &StepSchedule, masks: &[Vec<bool>], c: usize, i: usize, t: &mut Terms) {
        let n = self.corpus.len();
        let y = self.corpus.unbiased[i];
        let orig = self.corpus.latent.values()[i];
        let mu = self.corpus.params.mu()[i];
        let sigma = self.corpus.params.sigma()[i];
        for l in 1..=self.layers {
            let d = s.delta(l, c);
            let recon = if masks[l - 1][i] {
                let yt = y / d + self.noise[(l - 1) * n + i];
                let p = interval_mass((yt - 0.5) * d, (yt + 0.5) * d, sigma);
                t.bits[l - 1] -= p.max(P_MIN).log2();
                yt * d
            } else {
                0.0
            };
            let fin = (recon + mu) * (s.delta_inv(l, c) / d);
            t.sq[l - 1] += (fin - orig) * (fin - orig);
        }
    }

    /// Turns summed channel terms into a report.
    pub fn report(&self, total: &Terms) -> LossReport {
        let n = self.corpus.len() as f64;
        let mut rate = Vec::with_capacity(self.layers);
        let mut acc = 0.0;
        for &b in &total.bits {
            acc = match self.cfg.model {
                RateModel::Exact => acc + b,
                RateModel::Surrogate => b,
            };
            rate.push(acc / n);
        }
        let distortion: Vec<f64> = total.sq.iter().map(|s| s / n).collect();
        let total_loss = rate
            .iter()
            .zip(&distortion)
            .zip(&self.cfg.lambda)
            .map(|((r, d), l)| r + l * d)
            .sum();
        LossReport {
            rate,
            distortion,
            lambda: self.cfg.lambda.clone(),
            total: total_loss,
        }
    }

    /// Report from per-channel terms, summed in channel order.
    pub fn combine(&self, channels: &[Terms]) -> LossReport {
        let mut total = Terms::zero(self.layers);
        for t in channels {
            total.add(t);
        }
        self.report(&total)
    }

    /// Per-channel terms of a whole schedule.
    pub fn channels(&self, schedule: &StepSchedule, masks: &[Vec<bool>], k: u32) -> Result<Vec<Terms>> {
        (0..schedule.channels())
            .map(|c| self.channel(schedule, masks, k, c))
            .collect()
    }

    /// Interval count used by the model; the surrogate ignores it.
    pub fn model_k(&self, schedule: &StepSchedule) -> Result<u32> {
        match self.cfg.model {
            RateModel::Exact => self.k(schedule),
            RateModel::Surrogate => Ok(1),
        }
    }

    pub fn evaluate(&self, schedule: &StepSchedule) -> Result<LossReport> {
        self.check(schedule)?;
        let masks = self.masks(schedule);
        let k = self.model_k(schedule)?;
        Ok(self.combine(&self.channels(schedule, &masks, k)?))
    }

    pub fn check(&self, schedule: &StepSchedule) -> Result<()> {
        if schedule.layers() != self.layers {
            return Err(Error::Config(format!(
                "schedule has {} layers, lambda table has {}",
                schedule.layers(),
                self.layers
            )));
        }
        if schedule.channels() != self.corpus.channels() {
            return Err(Error::Config(format!(
                "schedule has {} channels, latent has {}",
                schedule.channels(),
                self.corpus.channels()
            )));
        }
        Ok(())
    }
}

/// Full loss report of `schedule` on `corpus`.
pub fn total_loss(corpus: &Corpus, schedule: &StepSchedule, cfg: &LossConfig) -> Result<LossReport> {
    Evaluator::new(corpus, cfg)?.evaluate(schedule)
}

/// Rate needed to reach layer `l` (1-based), in bits per component.
pub fn rate_term(corpus: &Corpus, schedule: &StepSchedule, l: usize, cfg: &LossConfig) -> Result<f64> {
    let r = total_loss(corpus, schedule, cfg)?;
    r.rate.get(l.wrapping_sub(1)).copied().ok_or(Error::InvalidPoint(l as f64))
}

/// Mean squared error of the final latent at layer `l` (1-based).
pub fn distortion_term(corpus: &Corpus, schedule: &StepSchedule, l: usize, cfg: &LossConfig) -> Result<f64> {
    let r = total_loss(corpus, schedule, cfg)?;
    r.distortion.get(l.wrapping_sub(1)).copied().ok_or(Error::InvalidPoint(l as f64))
}
