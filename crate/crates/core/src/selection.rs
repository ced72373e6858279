//! Per-layer component selection.
//!
//! A layer's raw mask keeps the components whose adjusted importance
//! `im^gamma` rounds to 1. Masks are made inclusive by OR-ing with the
//! previous layer, so once selected a component stays selected.

use crate::error::{Error, Result};
use crate::latent::{GaussianParams, Shape};
use crate::schedule::StepSchedule;

/// Per-component importance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    shape: Shape,
    values: Vec<f64>,
}

impl ImportanceMap {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        shape.check_len(values.len())?;
        if let Some(index) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "importance {} at component {index} outside [0, 1]",
                values[index]
            )));
        }
        Ok(ImportanceMap { shape, values })
    }

    /// Rank-normalized sigma: `(rank + 0.5) / N` with ascending ranks and
    /// ties sharing their average rank. Larger sigma means more important.
    pub fn from_sigma(params: &GaussianParams) -> Self {
        let sigma = params.sigma();
        let n = sigma.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]));
        let mut values = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && sigma[order[j]] == sigma[order[i]] {
                j += 1;
            }
            let rank = (i + j - 1) as f64 / 2.0;
            for &idx in &order[i..j] {
                values[idx] = (rank + 0.5) / n as f64;
            }
            i = j;
        }
        ImportanceMap {
            shape: params.shape(),
            values,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Raw mask `round(im^gamma)` with halves rounded up.
pub fn adjust_and_binarize(im: &ImportanceMap, gamma: f64) -> Vec<bool> {
    im.values.iter().map(|&v| v.powf(gamma) >= 0.5).collect()
}

/// Inclusive selection mask of one layer. Layer 0 is the empty mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    pub layer: usize,
    pub bits: Vec<bool>,
}

impl SelectionMask {
    pub fn empty(len: usize) -> Self {
        SelectionMask {
            layer: 0,
            bits: vec![false; len],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// `prev OR raw`, one layer deeper.
pub fn inclusive_mask(prev: &SelectionMask, raw: &[bool]) -> Result<SelectionMask> {
    if prev.bits.len() != raw.len() {
        return Err(Error::ShapeMismatch {
            expected: prev.bits.len(),
            found: raw.len(),
        });
    }
    Ok(SelectionMask {
        layer: prev.layer + 1,
        bits: prev.bits.iter().zip(raw).map(|(&a, &b)| a || b).collect(),
    })
}

/// Inclusive masks for layers `1..=L`.
pub fn layer_masks(im: &ImportanceMap, schedule: &StepSchedule) -> Vec<SelectionMask> {
    let mut prev = SelectionMask::empty(im.values.len());
    let mut out = Vec::with_capacity(schedule.layers());
    for l in 1..=schedule.layers() {
        let raw = adjust_and_binarize(im, schedule.gamma(l));
        prev = inclusive_mask(&prev, &raw).expect("mask lengths agree");
        out.push(prev.clone());
    }
    out
}

/// Selected values in flat component order.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedComponents {
    pub values: Vec<f64>,
    pub mask: SelectionMask,
}

pub fn pack(values: &[f64], mask: &SelectionMask) -> Result<PackedComponents> {
    if values.len() != mask.bits.len() {
        return Err(Error::ShapeMismatch {
            expected: mask.bits.len(),
            found: values.len(),
        });
    }
    Ok(PackedComponents {
        values: values.iter().zip(&mask.bits).filter(|(_, &m)| m).map(|(&v, _)| v).collect(),
        mask: mask.clone(),
    })
}

/// Inverse of [`pack`]; unselected slots are zero.
pub fn scatter(packed: &PackedComponents) -> Result<Vec<f64>> {
    let want = packed.mask.count();
    if packed.values.len() != want {
        return Err(Error::ShapeMismatch {
            expected: want,
            found: packed.values.len(),
        });
    }
    let mut it = packed.values.iter();
    Ok(packed
        .mask
        .bits
        .iter()
        .map(|&m| if m { *it.next().unwrap() } else { 0.0 })
        .collect())
}
