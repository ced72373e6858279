//! Per-layer, per-channel quantization step schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adjustment exponent that selects every component with positive importance.
pub const SELECT_ALL_GAMMA: f64 = 1e-3;

/// Which table a violation was found in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Delta,
    DeltaInv,
    Gamma,
}

impl std::fmt::Display for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Table::Delta => "delta",
            Table::DeltaInv => "delta_inv",
            Table::Gamma => "gamma",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    /// Entry is zero, negative or not finite.
    NotPositive { table: Table, value: f64 },
    /// Step is coarser than the one in the previous layer.
    Increasing { previous: f64, value: f64 },
}

/// First schedule entry that breaks an invariant. Layers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("{}", describe(self))]
pub struct ScheduleViolation {
    pub layer: usize,
    pub channel: Option<usize>,
    pub kind: ViolationKind,
}

fn describe(v: &ScheduleViolation) -> String {
    let at = match v.channel {
        Some(c) => format!("layer {}, channel {c}", v.layer),
        None => format!("layer {}", v.layer),
    };
    match v.kind {
        ViolationKind::NotPositive { table, value } => {
            format!("{at}: {table} must be positive and finite, got {value}")
        }
        ViolationKind::Increasing { previous, value } => {
            format!("{at}: step {value} is coarser than the previous layer's {previous}")
        }
    }
}

/// Steps `delta[l][c]`, inverse scales `delta_inv[l][c]` and selection
/// exponents `gamma[l]` for `layers` quantization layers.
///
/// Tables are stored layer-major; accessors take 1-based layer numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    layers: usize,
    channels: usize,
    delta: Vec<f64>,
    delta_inv: Vec<f64>,
    gamma: Vec<f64>,
}

impl StepSchedule {
    /// Builds and validates a schedule from row-per-layer tables.
    pub fn new(delta: Vec<Vec<f64>>, delta_inv: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self> {
        let s = Self::from_rows(delta, delta_inv, gamma)?;
        s.validate()?;
        Ok(s)
    }

    /// Like [`StepSchedule::new`] but only checks table dimensions.
    pub fn from_rows(delta: Vec<Vec<f64>>, delta_inv: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self> {
        let layers = delta.len();
        if layers == 0 || layers > 255 {
            return Err(Error::Config(format!("layer count {layers} outside 1..=255")));
        }
        let channels = delta[0].len();
        if channels == 0 {
            return Err(Error::Config("schedule has no channels".into()));
        }
        let rect = |t: &[Vec<f64>]| t.len() == layers && t.iter().all(|r| r.len() == channels);
        if !rect(&delta) || !rect(&delta_inv) || gamma.len() != layers {
            return Err(Error::Config(format!(
                "schedule tables must be {layers}x{channels} (delta, delta_inv) and {layers} (gamma)"
            )));
        }
        Ok(StepSchedule {
            layers,
            channels,
            delta: delta.concat(),
            delta_inv: delta_inv.concat(),
            gamma,
        })
    }

    pub(crate) fn from_flat(
        layers: usize,
        channels: usize,
        delta: Vec<f64>,
        delta_inv: Vec<f64>,
        gamma: Vec<f64>,
    ) -> Result<Self> {
        debug_assert_eq!(delta.len(), layers * channels);
        debug_assert_eq!(delta_inv.len(), layers * channels);
        debug_assert_eq!(gamma.len(), layers);
        let s = StepSchedule {
            layers,
            channels,
            delta,
            delta_inv,
            gamma,
        };
        s.validate()?;
        Ok(s)
    }

    /// Handcrafted ternary hierarchy: every layer divides the step by three,
    /// ending at `finest`, with symmetric inverse scales and full selection.
    pub fn trit(layers: usize, channels: usize, finest: f64) -> Result<Self> {
        let delta: Vec<Vec<f64>> = (1..=layers)
            .map(|l| vec![finest * 3f64.powi((layers - l) as i32); channels])
            .collect();
        Self::new(delta.clone(), delta, vec![SELECT_ALL_GAMMA; layers])
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn delta(&self, layer: usize, channel: usize) -> f64 {
        self.delta[(layer - 1) * self.channels + channel]
    }

    #[inline]
    pub fn delta_inv(&self, layer: usize, channel: usize) -> f64 {
        self.delta_inv[(layer - 1) * self.channels + channel]
    }

    #[inline]
    pub fn gamma(&self, layer: usize) -> f64 {
        self.gamma[layer - 1]
    }

    pub fn delta_row(&self, layer: usize) -> &[f64] {
        &self.delta[(layer - 1) * self.channels..layer * self.channels]
    }

    pub fn delta_inv_row(&self, layer: usize) -> &[f64] {
        &self.delta_inv[(layer - 1) * self.channels..layer * self.channels]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    pub(crate) fn flat_delta(&self) -> &[f64] {
        &self.delta
    }

    pub(crate) fn flat_delta_inv(&self) -> &[f64] {
        &self.delta_inv
    }

    /// Checks positivity of every entry and that steps never grow with the
    /// layer. Reports the first offending entry in layer-major order.
    pub fn validate(&self) -> Result<(), ScheduleViolation> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        for l in 1..=self.layers {
            for c in 0..self.channels {
                let at = |kind| ScheduleViolation {
                    layer: l,
                    channel: Some(c),
                    kind,
                };
                let d = self.delta(l, c);
                if !pos(d) {
                    return Err(at(ViolationKind::NotPositive {
                        table: Table::Delta,
                        value: d,
                    }));
                }
                if l > 1 && d > self.delta(l - 1, c) {
                    return Err(at(ViolationKind::Increasing {
                        previous: self.delta(l - 1, c),
                        value: d,
                    }));
                }
                let di = self.delta_inv(l, c);
                if !pos(di) {
                    return Err(at(ViolationKind::NotPositive {
                        table: Table::DeltaInv,
                        value: di,
                    }));
                }
            }
            let g = self.gamma(l);
            if !pos(g) {
                return Err(ScheduleViolation {
                    layer: l,
                    channel: None,
                    kind: ViolationKind::NotPositive {
                        table: Table::Gamma,
                        value: g,
                    },
                });
            }
        }
        Ok(())
    }

    /// Same schedule with every entry rounded to 32 bits, as stored in a
    /// container.
    pub fn to_f32(&self) -> Result<Self> {
        let r = |v: &Vec<f64>| v.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>();
        Self::from_flat(self.layers, self.channels, r(&self.delta), r(&self.delta_inv), r(&self.gamma))
    }

    /// Step and inverse-scale vectors at a possibly fractional point `l`.
    ///
    /// Between layers the tables are interpolated geometrically,
    /// `D_floor^(1-f) * D_ceil^f`. Integer points return the stored rows
    /// exactly. Below the first layer a virtual layer 0 with
    /// `delta_inv = delta = delta[1]` is used, so that `l = 0` has unit scale.
    pub fn interpolate_delta(&self, l: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(l >= 0.0 && l <= self.layers as f64) {
            return Err(Error::InvalidPoint(l));
        }
        let geo = |a: &[f64], b: &[f64], f: f64| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.powf(1.0 - f) * y.powf(f))
                .collect::<Vec<_>>()
        };
        if l < 1.0 {
            let d1 = self.delta_row(1);
            let inv = if l == 0.0 {
                d1.to_vec()
            } else {
                geo(d1, self.delta_inv_row(1), l)
            };
            return Ok((d1.to_vec(), inv));
        }
        let lo = l.floor() as usize;
        let frac = l - l.floor();
        if frac == 0.0 {
            return Ok((self.delta_row(lo).to_vec(), self.delta_inv_row(lo).to_vec()));
        }
        Ok((
            geo(self.delta_row(lo), self.delta_row(lo + 1), frac),
            geo(self.delta_inv_row(lo), self.delta_inv_row(lo + 1), frac),
        ))
    }
}

/// On-disk TOML form of a schedule, optionally carrying the boundary
/// adjustment threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub delta: Vec<Vec<f64>>,
    pub delta_inv: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

impl ScheduleFile {
    pub fn from_schedule(s: &StepSchedule, threshold: Option<f64>) -> Self {
        let rows = |t: &[f64]| t.chunks(s.channels).map(<[f64]>::to_vec).collect();
        ScheduleFile {
            threshold,
            delta: rows(&s.delta),
            delta_inv: rows(&s.delta_inv),
            gamma: s.gamma.clone(),
        }
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.delta.clone(), self.delta_inv.clone(), self.gamma.clone())
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("schedule file", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule tables always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_channel(delta: &[f64]) -> Result<StepSchedule> {
        let rows: Vec<Vec<f64>> = delta.iter().map(|&d| vec![d]).collect();
        StepSchedule::new(rows.clone(), rows, vec![1.0; delta.len()])
    }

    #[test]
    fn trit_schedule_is_valid() {
        let s = StepSchedule::trit(5, 1, 1.0).unwrap();
        let d: Vec<f64> = (1..=5).map(|l| s.delta(l, 0)).collect();
        assert_eq!(d, [81.0, 27.0, 9.0, 3.0, 1.0]);
        assert!(one_channel(&[81.0, 27.0, 9.0, 3.0, 1.0]).is_ok());
    }

    #[test]
    fn increasing_step_is_rejected_at_its_coordinate() {
        let err = one_channel(&[3.0, 4.0]).unwrap_err();
        match err {
            Error::Schedule(v) => {
                assert_eq!((v.layer, v.channel), (2, Some(0)));
                assert!(matches!(v.kind, ViolationKind::Increasing { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_step_is_rejected() {
        assert!(matches!(one_channel(&[3.0, 0.0]), Err(Error::Schedule(_))));
        let bad_gamma = StepSchedule::new(vec![vec![1.0]], vec![vec![1.0]], vec![0.0]);
        assert!(matches!(bad_gamma, Err(Error::Schedule(ScheduleViolation { channel: None, .. }))));
    }

    #[test]
    fn ragged_tables_are_rejected() {
        let r = StepSchedule::new(vec![vec![1.0, 1.0], vec![1.0]], vec![vec![1.0, 1.0]; 2], vec![1.0; 2]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn interpolation_is_geometric() {
        let s = StepSchedule::trit(5, 2, 1.0).unwrap();
        let (d, di) = s.interpolate_delta(3.5).unwrap();
        assert!((d[0] - 27f64.sqrt()).abs() < 1e-12);
        assert_eq!(d, di);
        let (d, _) = s.interpolate_delta(4.0).unwrap();
        assert_eq!(d, vec![3.0, 3.0]);
        let (d, _) = s.interpolate_delta(0.4).unwrap();
        assert_eq!(d, vec![81.0, 81.0]);
        let skew = StepSchedule::new(vec![vec![2.0]], vec![vec![3.0]], vec![1.0]).unwrap();
        assert_eq!(skew.interpolate_delta(0.0).unwrap(), (vec![2.0], vec![2.0]));
        assert_eq!(skew.interpolate_delta(1.0).unwrap(), (vec![2.0], vec![3.0]));
        assert!(s.interpolate_delta(5.01).is_err());
        assert!(s.interpolate_delta(f64::NAN).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = StepSchedule::trit(3, 2, 0.5).unwrap();
        let text = ScheduleFile::from_schedule(&s, Some(0.3)).to_toml();
        let back = ScheduleFile::parse(&text).unwrap();
        assert_eq!(back.threshold, Some(0.3));
        assert_eq!(back.schedule().unwrap(), s);
    }
}
