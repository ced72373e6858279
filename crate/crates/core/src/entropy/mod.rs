//! Conditional Gaussian interval probabilities and their entropy coding.

mod coder;

pub use coder::{PrefixDecoder, RangeDecoder, RangeEncoder, FREQ_BITS, FREQ_TOTAL};

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::quant::BoundarySet;

/// Standardized arguments are clamped to `[-CDF_CLAMP, CDF_CLAMP]`.
pub const CDF_CLAMP: f64 = 8.0;

/// Smallest probability assigned to a valid sub-interval.
pub const P_MIN: f64 = 1.0 / FREQ_TOTAL as f64;

#[inline]
fn z(x: f64, sigma: f64) -> f64 {
    (x / sigma).clamp(-CDF_CLAMP, CDF_CLAMP)
}

/// Zero-mean Gaussian CDF.
pub fn gaussian_cdf(x: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-z(x, sigma) * FRAC_1_SQRT_2)
}

/// `cdf(b) - cdf(a)` for `a <= b`, evaluated on whichever tail avoids
/// cancellation.
pub fn interval_mass(a: f64, b: f64, sigma: f64) -> f64 {
    let (za, zb) = (z(a, sigma), z(b, sigma));
    if za >= 0.0 {
        0.5 * (libm::erfc(za * FRAC_1_SQRT_2) - libm::erfc(zb * FRAC_1_SQRT_2))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb * FRAC_1_SQRT_2) - libm::erfc(-za * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * (libm::erfc(-za * FRAC_1_SQRT_2) + libm::erfc(zb * FRAC_1_SQRT_2))
    }
}

/// Probability of sub-interval `[lo, hi)` given the parent `[lb, ub]`,
/// without flooring.
pub fn conditional_prob(lo: f64, hi: f64, lb: f64, ub: f64, sigma: f64) -> Result<f64> {
    let denom = interval_mass(lb, ub, sigma);
    if !(denom > 0.0) {
        return Err(Error::DegeneratePmf { lb, ub, sigma });
    }
    Ok(interval_mass(lo, hi, sigma) / denom)
}

/// Distribution over the valid sub-intervals of a [`BoundarySet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubIntervalPMF {
    /// Index of the first valid sub-interval; slot `j` holds `k_lo + j`.
    pub k_lo: i64,
    /// Conditional probabilities before flooring.
    pub raw: Vec<f64>,
    /// Floored probabilities; sum to 1.
    pub probs: Vec<f64>,
    /// Cumulative integer frequencies, `cum[0] = 0`, `cum[n] = FREQ_TOTAL`.
    pub cum: Vec<u32>,
}

impl SubIntervalPMF {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn slot(&self, k: i64) -> Result<usize> {
        let j = k - self.k_lo;
        if j < 0 || j as usize >= self.probs.len() {
            return Err(Error::SymbolOutOfSupport { k });
        }
        Ok(j as usize)
    }

    /// Floored probability of sub-interval `k`.
    pub fn prob(&self, k: i64) -> Result<f64> {
        Ok(self.probs[self.slot(k)?])
    }
}

/// Conditional probabilities of every valid sub-interval of `bs` under a
/// zero-mean Gaussian with deviation `sigma`.
pub fn interval_pmf(bs: &BoundarySet, sigma: f64) -> Result<SubIntervalPMF> {
    let denom = interval_mass(bs.lb, bs.ub, sigma);
    if !(denom > 0.0) {
        return Err(Error::DegeneratePmf {
            lb: bs.lb,
            ub: bs.ub,
            sigma,
        });
    }
    let raw: Vec<f64> = (bs.k_lo..bs.k_hi)
        .map(|k| interval_mass(bs.bound(k), bs.bound(k + 1), sigma) / denom)
        .collect();
    let probs = floor_probs(&raw);
    let cum = quantize_frequencies(&probs);
    Ok(SubIntervalPMF {
        k_lo: bs.k_lo,
        raw,
        probs,
        cum,
    })
}

fn floor_probs(raw: &[f64]) -> Vec<f64> {
    if raw.iter().all(|&p| p >= P_MIN) {
        return raw.to_vec();
    }
    let floored: Vec<f64> = raw.iter().map(|&p| p.max(P_MIN)).collect();
    let s: f64 = floored.iter().sum();
    floored.iter().map(|p| p / s).collect()
}

/// Integer frequencies summing to [`FREQ_TOTAL`], at least one per slot,
/// apportioned by largest remainder (ties to the lower slot). Returns the
/// cumulative table.
pub fn quantize_frequencies(probs: &[f64]) -> Vec<u32> {
    let n = probs.len();
    assert!(n >= 1 && n <= FREQ_TOTAL as usize, "support size {n} out of range");
    let spare = (FREQ_TOTAL as usize - n) as f64;
    let total: f64 = probs.iter().sum();
    let mut freq = Vec::with_capacity(n);
    let mut rem = Vec::with_capacity(n);
    let mut used = 0u64;
    for &p in probs {
        let share = p / total * spare;
        let base = share.floor();
        freq.push(1 + base as u32);
        rem.push(share - base);
        used += 1 + base as u64;
    }
    let left = (FREQ_TOTAL as u64).saturating_sub(used) as usize;
    if left > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rem[b].total_cmp(&rem[a]).then(a.cmp(&b)));
        for &j in order.iter().take(left) {
            freq[j] += 1;
        }
    }
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0u32);
    let mut acc = 0u32;
    for f in freq {
        acc += f;
        cum.push(acc);
    }
    debug_assert_eq!(acc, FREQ_TOTAL);
    cum
}

/// Codes sub-interval `k` against `pmf`.
pub fn encode_symbol(enc: &mut RangeEncoder, k: i64, pmf: &SubIntervalPMF) -> Result<()> {
    let j = pmf.slot(k)?;
    enc.encode(pmf.cum[j], pmf.cum[j + 1]);
    Ok(())
}

/// Decodes one sub-interval index from a complete stream.
pub fn decode_symbol(dec: &mut RangeDecoder<'_>, pmf: &SubIntervalPMF) -> Result<i64> {
    let j = dec
        .decode(&pmf.cum)
        .ok_or_else(|| Error::format("layer segment", "code value outside every symbol interval"))?;
    if dec.overrun() > 0 {
        return Err(Error::StreamExhausted);
    }
    Ok(pmf.k_lo + j as i64)
}

/// Ideal code length in bits, `sum -log2 p`, using floored probabilities.
pub fn ideal_rate<'a>(symbols: impl IntoIterator<Item = (i64, &'a SubIntervalPMF)>) -> Result<f64> {
    let mut bits = 0.0;
    for (k, pmf) in symbols {
        let p = pmf.prob(k)?;
        if !(p > 0.0) {
            return Err(Error::SymbolOutOfSupport { k });
        }
        bits -= p.log2();
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{compute_boundaries, quantize, IntervalState};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn cdf_basics() {
        for s in [0.01, 1.0, 37.0] {
            assert_eq!(gaussian_cdf(0.0, s), 0.5);
        }
        assert!((gaussian_cdf(1.959964 * 2.5, 2.5) - 0.975).abs() < 1e-6);
        for x in [0.1, 1.0, 3.3, 7.9] {
            assert!((gaussian_cdf(-x, 1.0) - (1.0 - gaussian_cdf(x, 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn cdf_matches_reference() {
        // 40-digit reference values of the standard normal CDF
        let pinned = [
            (-8.0, 6.2209605742717841235e-16),
            (-6.0, 9.865876450376981407e-10),
            (-4.0, 3.1671241833119921254e-5),
            (-2.0, 0.0227501319481792072),
            (-1.0, 0.15865525393145705141),
            (-0.5, 0.30853753872598689636),
            (0.3, 0.61791142218895263307),
            (1.0, 0.84134474606854294859),
            (2.5, 0.99379033467422386483),
            (5.0, 0.99999971334842812081),
            (7.5, 0.99999999999996809108),
        ];
        for (x, want) in pinned {
            let got = gaussian_cdf(x, 1.0);
            assert!((got - want).abs() <= 1e-13 * want, "x={x}: {got} vs {want}");
        }
        // statrs drifts by up to 2.5e-11 absolute
        let n = std_normal();
        for i in -800..=800 {
            let x = i as f64 / 100.0;
            assert!((gaussian_cdf(x, 1.0) - n.cdf(x)).abs() < 5e-11, "x={x}");
        }
        assert_eq!(gaussian_cdf(9.0, 1.0), gaussian_cdf(8.0, 1.0));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn worked_conditional_ratio() {
        // (cdf(0.8) - cdf(0.5)) / (cdf(1.5) - cdf(0.5)) to 20 digits
        let expect = 0.39995865293381687729;
        let got = conditional_prob(5.0, 8.0, 5.0, 15.0, 10.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
        let bs = compute_boundaries(&IntervalState { lb: 5.0, ub: 15.0, recon: 10.0 }, 4.0).unwrap();
        let pmf = interval_pmf(&bs, 10.0).unwrap();
        assert!((pmf.raw[0] - expect).abs() < 1e-12);
        let bits = ideal_rate([(bs.k_lo, &pmf)]).unwrap();
        assert!((bits + expect.log2()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_partition_is_symmetric() {
        let bs = compute_boundaries(&IntervalState { lb: -1.5, ub: 1.5, recon: 0.0 }, 1.0).unwrap();
        let pmf = interval_pmf(&bs, 1.0).unwrap();
        assert_eq!(pmf.len(), 3);
        assert!(pmf.probs[1] > pmf.probs[0]);
        assert!((pmf.probs[0] - pmf.probs[2]).abs() < 1e-15);
    }

    #[test]
    fn ideal_rate_basics() {
        let bs = compute_boundaries(&IntervalState { lb: -1.0, ub: 1.0, recon: 0.5 }, 1.0).unwrap();
        let pmf = interval_pmf(&bs, 1.0).unwrap();
        assert_eq!(pmf.len(), 2);
        let syms: Vec<(i64, &SubIntervalPMF)> = (0..10).map(|i| (bs.k_lo + i % 2, &pmf)).collect();
        assert!((ideal_rate(syms).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(ideal_rate(std::iter::empty()).unwrap(), 0.0);
        assert!(matches!(ideal_rate([(99, &pmf)]), Err(Error::SymbolOutOfSupport { k: 99 })));
    }

    #[test]
    fn far_tail_parent_is_degenerate() {
        let bs = compute_boundaries(&IntervalState { lb: 9.0, ub: 10.0, recon: 9.5 }, 0.5).unwrap();
        assert!(matches!(interval_pmf(&bs, 1.0), Err(Error::DegeneratePmf { .. })));
    }

    #[test]
    fn floor_keeps_tails_codable() {
        let bs = compute_boundaries(&IntervalState { lb: -50.5, ub: 50.5, recon: 0.0 }, 1.0).unwrap();
        let pmf = interval_pmf(&bs, 0.5).unwrap();
        assert!(pmf.probs.iter().all(|&p| p >= P_MIN * 0.99));
        assert!((pmf.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pmf.cum.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn frequency_ties_go_to_lower_slot() {
        let cum = quantize_frequencies(&[1.0 / 3.0; 3]);
        let f: Vec<u32> = cum.windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(f.iter().sum::<u32>(), FREQ_TOTAL);
        assert!(f[0] >= f[1] && f[1] >= f[2]);
        assert_eq!(f[0] - f[2], 1);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> (IntervalState, f64, f64) {
        let lb = rng.random_range(-20.0..20.0);
        let w = rng.random_range(0.01..20.0);
        let recon = lb + rng.random_range(0.0..=1.0) * w;
        let delta = w * rng.random_range(0.02..1.5);
        let sigma = rng.random_range(0.1..10.0);
        (IntervalState { lb, ub: lb + w, recon }, delta, sigma)
    }

    #[test]
    fn pmfs_normalize_over_many_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 100_000 {
            let (s, delta, sigma) = random_state(&mut rng);
            let bs = compute_boundaries(&s, delta).unwrap();
            let Ok(pmf) = interval_pmf(&bs, sigma) else { continue };
            let sum: f64 = pmf.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let raw: f64 = pmf.raw.iter().sum();
            assert!((raw - 1.0).abs() < 1e-9 || pmf.raw.iter().any(|&p| p < P_MIN));
            checked += 1;
        }
    }

    #[test]
    fn conditional_chain_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let sigma = rng.random_range(0.3..5.0);
            let y: f64 = rng.random_range(-2.0..2.0) * sigma;
            let mut state = IntervalState { lb: -6.0 * sigma, ub: 6.0 * sigma, recon: 0.0 };
            let (lb1, ub1) = (state.lb, state.ub);
            let mut step = sigma * rng.random_range(0.5..3.0);
            let mut product = 1.0;
            for _ in 0..6 {
                let bs = compute_boundaries(&state, step).unwrap();
                let k = quantize(y, &bs).unwrap();
                let pmf = interval_pmf(&bs, sigma).unwrap();
                product *= pmf.raw[(k - bs.k_lo) as usize];
                state = crate::quant::dequantize(k, &bs).unwrap().1;
                step /= rng.random_range(1.5..4.0);
            }
            let n = Normal::new(0.0, sigma).unwrap();
            let expect = (n.cdf(state.ub) - n.cdf(state.lb)) / (n.cdf(ub1) - n.cdf(lb1));
            assert!((product - expect).abs() < 1e-9, "{product} vs {expect}");
        }
    }

    proptest! {
        #[test]
        fn identical_inputs_give_identical_tables(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, delta, sigma) = random_state(&mut rng);
            let a = compute_boundaries(&s, delta).unwrap();
            let b = compute_boundaries(&s, delta).unwrap();
            if let (Ok(p), Ok(q)) = (interval_pmf(&a, sigma), interval_pmf(&b, sigma)) {
                prop_assert_eq!(p.cum, q.cum);
            }
        }

        #[test]
        fn symbols_round_trip(seed in any::<u64>(), len in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut items = Vec::new();
            while items.len() < len {
                let (s, delta, sigma) = random_state(&mut rng);
                let bs = compute_boundaries(&s, delta).unwrap();
                let Ok(pmf) = interval_pmf(&bs, sigma) else { continue };
                let k = rng.random_range(bs.k_lo..bs.k_hi);
                items.push((k, pmf));
            }
            let mut enc = RangeEncoder::new();
            for (k, pmf) in &items {
                encode_symbol(&mut enc, *k, pmf).unwrap();
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes);
            for (k, pmf) in &items {
                prop_assert_eq!(decode_symbol(&mut dec, pmf).unwrap(), *k);
            }
        }
    }
}
