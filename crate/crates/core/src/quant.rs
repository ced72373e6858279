//! Nested interval quantization.
//!
//! Each component carries an [`IntervalState`]: the interval it is known to
//! lie in and the reconstruction at the previous layer. A layer splits that
//! interval into sub-intervals of the layer's step size, centred so that the
//! previous reconstruction is the middle of sub-interval 0, and clips them to
//! the parent. Sub-interval `k` is `[b(k), b(k+1))`, the topmost one closed.

use crate::error::{Error, Result};
use crate::latent::UnbiasedLatent;
use crate::schedule::StepSchedule;

/// Default edge-width ratio below which boundaries are re-spaced.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Largest number of valid sub-intervals a single split may produce.
pub const MAX_INTERVALS: usize = 1 << 15;

/// Interval a component is known to lie in, with its current reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalState {
    pub lb: f64,
    pub ub: f64,
    pub recon: f64,
}

impl IntervalState {
    pub fn width(&self) -> f64 {
        self.ub - self.lb
    }
}

/// Layer-independent quantizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    /// Number of first-layer sub-intervals (odd).
    pub k: u32,
    /// Boundary adjustment threshold in `[0, 1)`; 0 disables adjustment.
    pub threshold: f64,
}

impl QuantConfig {
    pub fn new(k: u32, threshold: f64) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("interval count K={k} must be odd")));
        }
        if k as usize > MAX_INTERVALS {
            return Err(Error::Config(format!("interval count K={k} exceeds {MAX_INTERVALS}")));
        }
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold {threshold} outside [0, 1)")));
        }
        Ok(QuantConfig { k, threshold })
    }
}

/// First-layer interval `[-delta1*K/2, delta1*K/2]` with reconstruction 0.
pub fn init_interval(delta1: f64, k: u32) -> Result<IntervalState> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("interval count K={k} must be odd")));
    }
    let half = delta1 * (k as f64 / 2.0);
    Ok(IntervalState {
        lb: -half,
        ub: half,
        recon: 0.0,
    })
}

/// Smallest odd `K` with `max_abs <= delta1 * K / 2`.
pub fn k_for(max_abs: f64, delta1: f64) -> Result<u32> {
    let ratio = max_abs / delta1;
    let too_many = || Error::TooManyIntervals {
        lb: -max_abs,
        ub: max_abs,
        step: delta1,
        limit: MAX_INTERVALS,
    };
    if !(ratio <= MAX_INTERVALS as f64 / 2.0) {
        return Err(too_many());
    }
    let mut k = (2.0 * ratio).ceil() as u64;
    k += 1 - k % 2;
    // make sure the rounded range really contains the value
    while max_abs > delta1 * (k as f64 / 2.0) {
        k += 2;
    }
    if k as usize > MAX_INTERVALS {
        return Err(too_many());
    }
    Ok(k as u32)
}

/// Smallest odd `K` whose first-layer range covers every component.
pub fn choose_k_range(unbiased: &UnbiasedLatent, schedule: &StepSchedule) -> Result<u32> {
    let shape = unbiased.shape();
    if schedule.channels() != shape.channels {
        return Err(Error::Config(format!(
            "schedule has {} channels, latent has {}",
            schedule.channels(),
            shape.channels
        )));
    }
    let mut k = 1;
    for (c, plane) in unbiased.values().chunks(shape.plane()).enumerate() {
        let max_abs = plane.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        k = k.max(k_for(max_abs, schedule.delta(1, c))?);
    }
    Ok(k)
}

/// Sub-interval partition of a parent interval.
///
/// Boundaries are generated lazily: `b(k) = clamp((k - 0.5) * step + recon,
/// lb, ub)`. Indices `k_lo..k_hi` are exactly the positive-width intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySet {
    pub lb: f64,
    pub ub: f64,
    pub recon: f64,
    /// Step actually used (expanded if adjustment fired).
    pub step: f64,
    pub k_lo: i64,
    pub k_hi: i64,
    pub adjusted: bool,
}

impl BoundarySet {
    #[inline]
    fn center(&self, k: i64) -> f64 {
        (k as f64 - 0.5) * self.step + self.recon
    }

    /// Boundary `b(k)` for any `k`.
    #[inline]
    pub fn bound(&self, k: i64) -> f64 {
        self.center(k).clamp(self.lb, self.ub)
    }

    /// Number of positive-width sub-intervals.
    #[inline]
    pub fn valid_count(&self) -> usize {
        (self.k_hi - self.k_lo) as usize
    }

    /// Boundaries of the valid intervals, `b(k_lo)..=b(k_hi)`.
    pub fn bounds(&self) -> Vec<f64> {
        (self.k_lo..=self.k_hi).map(|k| self.bound(k)).collect()
    }

    pub fn is_valid(&self, k: i64) -> bool {
        (self.k_lo..self.k_hi).contains(&k)
    }

    fn first_width(&self) -> f64 {
        self.bound(self.k_lo + 1) - self.lb
    }

    fn last_width(&self) -> f64 {
        self.ub - self.bound(self.k_hi - 1)
    }
}

fn split(state: &IntervalState, step: f64, adjusted: bool) -> Result<BoundarySet> {
    let IntervalState { lb, ub, recon } = *state;
    if !(lb < ub && lb <= recon && recon <= ub && lb.is_finite() && ub.is_finite()) {
        return Err(Error::OutOfInterval { value: recon, lb, ub });
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("step {step} must be positive")));
    }
    let too_many = || Error::TooManyIntervals {
        lb,
        ub,
        step,
        limit: MAX_INTERVALS,
    };
    if (ub - lb) / step > MAX_INTERVALS as f64 {
        return Err(too_many());
    }
    // centres must be strictly increasing in k at this magnitude
    let mag = lb.abs().max(ub.abs()).max(recon.abs());
    if step <= 8.0 * f64::EPSILON * mag {
        return Err(too_many());
    }
    let mut bs = BoundarySet {
        lb,
        ub,
        recon,
        step,
        k_lo: 0,
        k_hi: 0,
        adjusted,
    };
    let mut k_lo = ((lb - recon) / step + 0.5).floor() as i64;
    while bs.center(k_lo + 1) <= lb {
        k_lo += 1;
    }
    while bs.center(k_lo) > lb {
        k_lo -= 1;
    }
    let mut k_hi = ((ub - recon) / step + 0.5).ceil() as i64;
    while bs.center(k_hi - 1) >= ub {
        k_hi -= 1;
    }
    while bs.center(k_hi) < ub {
        k_hi += 1;
    }
    bs.k_lo = k_lo;
    bs.k_hi = k_hi;
    if bs.valid_count() > MAX_INTERVALS {
        return Err(too_many());
    }
    Ok(bs)
}

/// Splits `state` into sub-intervals of width `delta`, clipped to the parent.
pub fn compute_boundaries(state: &IntervalState, delta: f64) -> Result<BoundarySet> {
    split(state, delta, false)
}

/// Re-spaces the partition when an edge interval is narrower than
/// `threshold * step`. The expanded step spreads the parent evenly over
/// `valid_count - 2` widths around the reconstruction. Applied at most once.
pub fn adjust_boundaries(bs: &BoundarySet, threshold: f64) -> Result<BoundarySet> {
    let n = bs.valid_count();
    if bs.adjusted || n < 3 {
        return Ok(*bs);
    }
    let r = bs.first_width().min(bs.last_width()) / bs.step;
    if r >= threshold {
        return Ok(*bs);
    }
    let expanded = (bs.ub - bs.lb) / (n - 2) as f64;
    let state = IntervalState {
        lb: bs.lb,
        ub: bs.ub,
        recon: bs.recon,
    };
    split(&state, expanded, true)
}

/// Boundaries for one refinement step: split, then adjust.
pub fn refine(state: &IntervalState, delta: f64, threshold: f64) -> Result<BoundarySet> {
    adjust_boundaries(&compute_boundaries(state, delta)?, threshold)
}

/// Index of the sub-interval containing `y`. Values on a boundary belong to
/// the interval above it; `ub` itself belongs to the topmost interval.
pub fn quantize(y: f64, bs: &BoundarySet) -> Result<i64> {
    if !(y >= bs.lb && y <= bs.ub) {
        return Err(Error::OutOfInterval {
            value: y,
            lb: bs.lb,
            ub: bs.ub,
        });
    }
    let guess = ((y - bs.recon) / bs.step + 0.5).floor();
    let mut k = (guess.max(bs.k_lo as f64).min((bs.k_hi - 1) as f64)) as i64;
    while k > bs.k_lo && y < bs.bound(k) {
        k -= 1;
    }
    while k + 1 < bs.k_hi && y >= bs.bound(k + 1) {
        k += 1;
    }
    Ok(k)
}

/// Midpoint reconstruction of sub-interval `k` and the child state it
/// defines.
pub fn dequantize(k: i64, bs: &BoundarySet) -> Result<(f64, IntervalState)> {
    if !bs.is_valid(k) {
        return Err(Error::InvalidIndex { k });
    }
    let lb = bs.bound(k);
    let ub = bs.bound(k + 1);
    let recon = 0.5 * (lb + ub);
    Ok((recon, IntervalState { lb, ub, recon }))
}

/// Final latent `(recon + mu) * (delta_inv / delta)` with per-channel
/// tables. The scale is formed first so `delta_inv == delta` is exact.
pub fn finalize(
    recon: &[f64],
    mu: &[f64],
    plane: usize,
    delta: &[f64],
    delta_inv: &[f64],
) -> Result<Vec<f64>> {
    if recon.len() != mu.len() || recon.len() != plane * delta.len() || delta.len() != delta_inv.len() {
        return Err(Error::ShapeMismatch {
            expected: plane * delta.len(),
            found: recon.len(),
        });
    }
    let mut out = Vec::with_capacity(recon.len());
    for (c, (&d, &di)) in delta.iter().zip(delta_inv).enumerate() {
        let scale = di / d;
        let range = c * plane..(c + 1) * plane;
        out.extend(recon[range.clone()].iter().zip(&mu[range]).map(|(r, m)| (r + m) * scale));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;
    use proptest::prelude::*;

    fn st(lb: f64, ub: f64, recon: f64) -> IntervalState {
        IntervalState { lb, ub, recon }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn init_interval_examples() {
        assert_eq!(init_interval(1.0, 5).unwrap(), st(-2.5, 2.5, 0.0));
        let s = init_interval(81.0, 5).unwrap();
        assert_eq!((s.lb, s.ub), (-202.5, 202.5));
        assert!(init_interval(1.0, 4).is_err());
    }

    fn k_for(values: Vec<f64>, delta1: f64) -> u32 {
        let n = values.len();
        let u = UnbiasedLatent::new(Shape::new(1, 1, n).unwrap(), values).unwrap();
        let rows = vec![vec![delta1]];
        let s = StepSchedule::new(rows.clone(), rows, vec![1.0]).unwrap();
        choose_k_range(&u, &s).unwrap()
    }

    #[test]
    fn k_range_examples() {
        assert_eq!(k_for(vec![0.5, -2.2, 1.0], 1.0), 5);
        assert_eq!(k_for(vec![0.0, 0.0], 1.0), 1);
        assert_eq!(k_for(vec![0.4, -0.1], 1.0), 1);
        assert_eq!(k_for(vec![0.5], 1.0), 1);
        assert_eq!(k_for(vec![0.51], 1.0), 3);
    }

    #[test]
    fn first_layer_is_unclipped() {
        let bs = compute_boundaries(&st(-2.5, 2.5, 0.0), 1.0).unwrap();
        assert!(close(&bs.bounds(), &[-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]));
        assert_eq!(bs.valid_count(), 5);
    }

    #[test]
    fn nested_split_is_clipped() {
        let bs = compute_boundaries(&st(-0.5, 0.5, 0.0), 0.4).unwrap();
        assert!(close(&bs.bounds(), &[-0.5, -0.2, 0.2, 0.5]));
        assert_eq!(bs.valid_count(), 3);
    }

    #[test]
    fn off_centre_parent_keeps_its_edge() {
        let bs = compute_boundaries(&st(5.0, 15.0, 10.0), 4.0).unwrap();
        assert!(close(&bs.bounds(), &[5.0, 8.0, 12.0, 15.0]));
    }

    #[test]
    fn narrow_edges_trigger_expansion() {
        let bs = compute_boundaries(&st(-0.5, 0.5, 0.0), 0.7).unwrap();
        let b = bs.bounds();
        assert!(close(&[b[1] - b[0], b[2] - b[1], b[3] - b[2]], &[0.15, 0.7, 0.15]));
        let adj = adjust_boundaries(&bs, DEFAULT_THRESHOLD).unwrap();
        assert!(adj.adjusted);
        assert_eq!(adj.step, 1.0);
        assert_eq!(adj.bounds(), vec![-0.5, 0.5]);
        assert_eq!(adj.valid_count(), 1);
    }

    #[test]
    fn wide_edges_are_left_alone() {
        let bs = compute_boundaries(&st(-0.5, 0.5, 0.0), 0.4).unwrap();
        assert_eq!(adjust_boundaries(&bs, DEFAULT_THRESHOLD).unwrap(), bs);
        let narrow = compute_boundaries(&st(-0.5, 0.5, 0.0), 0.7).unwrap();
        assert_eq!(adjust_boundaries(&narrow, 0.0).unwrap(), narrow);
    }

    #[test]
    fn quantize_examples() {
        let l1 = compute_boundaries(&st(-2.5, 2.5, 0.0), 1.0).unwrap();
        assert_eq!(quantize(0.3, &l1).unwrap(), 0);
        assert_eq!(quantize(2.5, &l1).unwrap(), 2);
        assert_eq!(quantize(-2.5, &l1).unwrap(), -2);
        assert_eq!(quantize(0.5, &l1).unwrap(), 1);
        assert!(matches!(quantize(2.6, &l1), Err(Error::OutOfInterval { .. })));

        let l2 = compute_boundaries(&st(-0.5, 0.5, 0.0), 0.4).unwrap();
        let k = quantize(0.3, &l2).unwrap();
        assert_eq!(k, l2.k_hi - 1);
        let (r, child) = dequantize(k, &l2).unwrap();
        assert!((r - 0.35).abs() < 1e-15);
        assert!(close(&[child.lb, child.ub], &[0.2, 0.5]));
    }

    #[test]
    fn dequantize_examples() {
        let l1 = compute_boundaries(&st(-2.5, 2.5, 0.0), 1.0).unwrap();
        let (r, child) = dequantize(0, &l1).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(child, st(-0.5, 0.5, 0.0));
        assert!(matches!(dequantize(3, &l1), Err(Error::InvalidIndex { k: 3 })));
    }

    #[test]
    fn finalize_examples() {
        assert_eq!(finalize(&[0.0], &[2.0], 1, &[2.0], &[3.0]).unwrap(), vec![3.0]);
        let r = [0.1, -0.7, 3.3, 1e-9];
        let m = [0.2, 0.3, -1.1, 5.0];
        let out = finalize(&r, &m, 2, &[0.7, 1.3], &[0.7, 1.3]).unwrap();
        for i in 0..4 {
            assert_eq!(out[i], r[i] + m[i]);
        }
    }

    #[test]
    fn refusing_absurd_splits() {
        assert!(matches!(
            compute_boundaries(&st(-1.0, 1.0, 0.0), 1e-9),
            Err(Error::TooManyIntervals { .. })
        ));
        assert!(compute_boundaries(&st(1e6, 1e6 + 1.0, 1e6), 1e-11).is_err());
    }

    fn state_strategy() -> impl Strategy<Value = (IntervalState, f64)> {
        (-100.0..100.0f64, 1e-3..50.0f64, 0.0..1.0f64, 0.01..2.0f64).prop_map(|(lb, w, t, rel)| {
            let ub = lb + w;
            (st(lb, ub, lb + t * w), rel * w)
        })
    }

    proptest! {
        #[test]
        fn partition_is_well_formed((s, delta) in state_strategy(), t in 0.0..0.99f64) {
            let bs = refine(&s, delta, t).unwrap();
            let b = bs.bounds();
            prop_assert_eq!(b[0], s.lb);
            prop_assert_eq!(*b.last().unwrap(), s.ub);
            prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(bs.valid_count() >= 1);
        }

        #[test]
        fn quantize_then_dequantize_nests(
            (s, delta) in state_strategy(),
            t in 0.0..0.99f64,
            u in 0.0..=1.0f64,
        ) {
            let y = (s.lb + u * s.width()).clamp(s.lb, s.ub);
            let bs = refine(&s, delta, t).unwrap();
            let k = quantize(y, &bs).unwrap();
            prop_assert!(bs.is_valid(k));
            let (r, child) = dequantize(k, &bs).unwrap();
            prop_assert!(child.lb >= s.lb && child.ub <= s.ub);
            prop_assert!(child.lb <= y && y <= child.ub);
            prop_assert!(y < child.ub || child.ub == s.ub);
            let slack = 4.0 * f64::EPSILON * s.lb.abs().max(s.ub.abs());
            prop_assert!((y - r).abs() <= child.width() / 2.0 + slack);
        }

        #[test]
        fn adjustment_spreads_interior_evenly((s, delta) in state_strategy(), t in 0.01..0.99f64) {
            let raw = compute_boundaries(&s, delta).unwrap();
            let adj = adjust_boundaries(&raw, t).unwrap();
            if adj.adjusted {
                let b = adj.bounds();
                let tol = 1e-9 * adj.step.max(1.0);
                let interior_even = b.len() <= 3
                    || b[1..b.len() - 1].windows(2).all(|w| (w[1] - w[0] - adj.step).abs() < tol);
                prop_assert!(adj.valid_count() < raw.valid_count() || interior_even);
                prop_assert_eq!(adjust_boundaries(&adj, t).unwrap(), adj);
            } else {
                prop_assert_eq!(adj, raw);
            }
        }

        #[test]
        fn finalize_matches_formula(
            r in prop::collection::vec(-50.0..50.0f64, 6),
            m in prop::collection::vec(-5.0..5.0f64, 6),
            d in prop::collection::vec(0.01..10.0f64, 3),
            di in prop::collection::vec(0.01..10.0f64, 3),
        ) {
            let out = finalize(&r, &m, 2, &d, &di).unwrap();
            for i in 0..6 {
                let c = i / 2;
                let expect = (r[i] + m[i]) / d[c] * di[c];
                prop_assert!((out[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}
