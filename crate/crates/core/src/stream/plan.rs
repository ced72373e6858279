//! Coding order and progress points.

use crate::error::{Error, Result};
use crate::selection::SelectionMask;

/// Per-layer coding order of the selected components.
///
/// Within a layer, components selected in an earlier layer come first, then
/// the newly selected ones; each group is sorted by decreasing sigma with
/// ties broken by increasing component index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderPlan {
    layers: Vec<Vec<u32>>,
}

impl OrderPlan {
    /// Order of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[u32] {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of components coded in each layer.
    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }
}

pub fn plan_order(sigma: &[f64], masks: &[SelectionMask]) -> OrderPlan {
    let mut global: Vec<u32> = (0..sigma.len() as u32).collect();
    global.sort_by(|&a, &b| sigma[b as usize].total_cmp(&sigma[a as usize]).then(a.cmp(&b)));
    let empty = SelectionMask::empty(sigma.len());
    let layers = masks
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            let prev = if j == 0 { &empty } else { &masks[j - 1] };
            let continuing = global.iter().filter(|&&i| prev.bits[i as usize]);
            let fresh = global
                .iter()
                .filter(|&&i| mask.bits[i as usize] && !prev.bits[i as usize]);
            continuing.chain(fresh).copied().collect()
        })
        .collect();
    OrderPlan { layers }
}

/// A decoding position: `layers` complete layers plus the first
/// `components` entries of the next layer's coding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgressPoint {
    pub layers: usize,
    pub components: usize,
}

impl ProgressPoint {
    pub const START: ProgressPoint = ProgressPoint {
        layers: 0,
        components: 0,
    };

    pub fn end(layers: usize) -> Self {
        ProgressPoint {
            layers,
            components: 0,
        }
    }

    /// Real-valued level `layers + components / count(next layer)`.
    pub fn level(&self, counts: &[usize]) -> f64 {
        match counts.get(self.layers) {
            Some(&n) if n > 0 && self.components > 0 => self.layers as f64 + self.components as f64 / n as f64,
            _ => self.layers as f64,
        }
    }

    /// Point for real level `l` in `[0, L]`; the fractional part selects
    /// that share of the next layer's components, rounded down.
    pub fn from_level(l: f64, counts: &[usize]) -> Result<Self> {
        let layers = counts.len();
        if !(l >= 0.0 && l <= layers as f64) {
            return Err(Error::InvalidPoint(l));
        }
        let j = l.floor() as usize;
        if j >= layers {
            return Ok(Self::end(layers));
        }
        let n = counts[j];
        let components = (((l - j as f64) * n as f64) + 1e-9).floor() as usize;
        Ok(Self::normalized(j, components.min(n), counts))
    }

    pub(crate) fn normalized(layers: usize, components: usize, counts: &[usize]) -> Self {
        if layers < counts.len() && components >= counts[layers] && counts[layers] > 0 {
            ProgressPoint {
                layers: layers + 1,
                components: 0,
            }
        } else {
            ProgressPoint { layers, components }
        }
    }
}

impl std::fmt::Display for ProgressPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} layers + {} components", self.layers, self.components)
    }
}
