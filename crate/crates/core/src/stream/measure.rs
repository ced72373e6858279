//! Rate-distortion measurement of a container.

use super::codec::{decode, selected_by, truncate, Target};
use super::container::ContainerView;
use crate::error::{Error, Result};
use crate::latent::LatentTensor;

/// One rate-distortion sample. Rates are bits per latent component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdRow {
    /// Level actually reached.
    pub point: f64,
    /// Payload bits (segment framing included) per component.
    pub bpp: f64,
    /// Mean squared error of the final latent.
    pub msqe: f64,
    /// Share of components coded at least once.
    pub selection_ratio: f64,
    pub header_bytes: usize,
    pub payload_bytes: usize,
}

pub const CSV_HEADER: &str = "point,bpp,msqe,selection_ratio,header_bytes,payload_bytes";

/// Formats with nine significant digits, shortest form.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

impl RdRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            sig9(self.point),
            sig9(self.bpp),
            sig9(self.msqe),
            sig9(self.selection_ratio),
            self.header_bytes,
            self.payload_bytes
        )
    }

    pub fn from_csv(line: &str) -> Result<RdRow> {
        let bad = |m: String| Error::format("rate-distortion row", m);
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        Ok(RdRow {
            point: num(f[0])?,
            bpp: num(f[1])?,
            msqe: num(f[2])?,
            selection_ratio: num(f[3])?,
            header_bytes: int(f[4])?,
            payload_bytes: int(f[5])?,
        })
    }
}

pub fn to_csv(rows: &[RdRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn from_csv(text: &str) -> Result<Vec<RdRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::format("rate-distortion table", "missing header row")),
    }
    lines.filter(|l| !l.trim().is_empty()).map(RdRow::from_csv).collect()
}

/// Measures rate and distortion at each requested level, using the
/// shortest prefix that reaches it.
pub fn measure(bytes: &[u8], latent: &LatentTensor, levels: &[f64]) -> Result<Vec<RdRow>> {
    let view = ContainerView::parse(bytes)?;
    let header = &view.header;
    if latent.shape() != header.shape {
        return Err(Error::ShapeMismatch {
            expected: header.shape.len(),
            found: latent.shape().len(),
        });
    }
    let n = header.shape.len() as f64;
    levels
        .iter()
        .map(|&l| {
            let t = truncate(bytes, Target::Level(l))?;
            let d = decode(&t.bytes, Target::Full)?;
            let msqe = d
                .latent
                .values()
                .iter()
                .zip(latent.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n;
            let payload = t.bytes.len() - view.header_len;
            Ok(RdRow {
                point: d.level,
                bpp: 8.0 * payload as f64 / n,
                msqe,
                selection_ratio: selected_by(header, d.point) as f64 / n,
                header_bytes: view.header_len,
                payload_bytes: payload,
            })
        })
        .collect()
}

/// Integer levels `0..=L` plus `steps - 1` evenly spaced points inside each
/// layer.
pub fn level_grid(layers: usize, steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    let mut out = vec![0.0];
    for j in 0..layers {
        for s in 1..=steps {
            out.push(j as f64 + s as f64 / steps as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{sample_source, Shape, SourceConfig};
    use crate::schedule::StepSchedule;
    use crate::stream::codec::{encode, EncodeConfig};

    #[test]
    fn sig9_examples() {
        assert_eq!(sig9(0.125), "0.125");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789012.0), "123456789000");
        assert_eq!(sig9(0.0), "0");
    }

    #[test]
    fn curve_is_monotone_and_round_trips() {
        let (y, p) = sample_source(&SourceConfig {
            shape: Shape::new(2, 50, 50).unwrap(),
            seed: 11,
            ..SourceConfig::default()
        })
        .unwrap();
        let s = StepSchedule::trit(5, 2, 0.1).unwrap();
        let c = encode(&y, &p, &s, &EncodeConfig::default()).unwrap();
        let bytes = c.to_bytes().unwrap();
        let rows = measure(&bytes, &y, &level_grid(5, 2)).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].bpp > w[0].bpp);
            assert!(w[1].selection_ratio >= w[0].selection_ratio);
        }
        let ints: Vec<&RdRow> = rows.iter().filter(|r| r.point.fract() == 0.0).collect();
        assert_eq!(ints.len(), 6);
        for w in ints.windows(2) {
            assert!(w[1].msqe <= w[0].msqe);
        }
        assert_eq!(rows.last().unwrap().payload_bytes, bytes.len() - c.header_len());
        let text = to_csv(&rows);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(to_csv(&from_csv(&text).unwrap()), text);
    }

    #[test]
    fn grid_has_integer_endpoints() {
        assert_eq!(level_grid(2, 2), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(level_grid(3, 1), vec![0.0, 1.0, 2.0, 3.0]);
    }
}
