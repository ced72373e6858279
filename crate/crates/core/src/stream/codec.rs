//! Layered encoding, prefix decoding and truncation.

use rayon::prelude::*;

use super::container::{Container, ContainerView, Header};
use super::plan::{plan_order, OrderPlan, ProgressPoint};
use crate::entropy::{decode_symbol, encode_symbol, interval_pmf, ideal_rate, PrefixDecoder, RangeDecoder, RangeEncoder, SubIntervalPMF};
use crate::error::{Error, Result};
use crate::latent::{center, f32_exact, GaussianParams, LatentTensor};
use crate::quant::{choose_k_range, dequantize, finalize, init_interval, quantize, refine, BoundarySet, IntervalState, QuantConfig, DEFAULT_THRESHOLD};
use crate::schedule::StepSchedule;
use crate::selection::{layer_masks, ImportanceMap, SelectionMask};

/// Encoder settings beyond the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeConfig {
    /// Boundary adjustment threshold.
    pub threshold: f64,
    /// Importance map driving selection; rank-normalized sigma if absent.
    /// A supplied map is stored in the container.
    pub importance: Option<ImportanceMap>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            threshold: DEFAULT_THRESHOLD,
            importance: None,
        }
    }
}

/// How far to decode or truncate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Everything available.
    Full,
    /// Real-valued level in `[0, L]`.
    Level(f64),
    /// Exact component position.
    Point(ProgressPoint),
    /// Byte budget counted after the header, including segment framing.
    PayloadBytes(u64),
}

/// What happened to one component in one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentStep {
    pub index: u32,
    pub k: i64,
    /// Number of valid sub-intervals; 1 means nothing was coded.
    pub support: usize,
    pub adjusted: bool,
    /// Parent interval before the step.
    pub parent: IntervalState,
    /// Child interval and midpoint after the step.
    pub child: IntervalState,
}

/// Per-layer record of every processed component in coding order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CodingTrace {
    pub layers: Vec<Vec<ComponentStep>>,
    /// Ideal code length of each layer in bits.
    pub ideal_bits: Vec<f64>,
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Final latent after inverse scaling.
    pub latent: LatentTensor,
    /// Reconstruction of the mean-removed latent.
    pub unbiased: Vec<f64>,
    pub point: ProgressPoint,
    /// Real-valued level of `point`.
    pub level: f64,
}

/// Result of [`truncate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub bytes: Vec<u8>,
    pub point: ProgressPoint,
    pub level: f64,
    /// True if the target lay beyond what the input provides.
    pub clamped: bool,
}

/// Quantities shared by encoder and decoder, derived from the header.
struct Layout<'h> {
    header: &'h Header,
    masks: Vec<SelectionMask>,
    plan: OrderPlan,
    counts: Vec<usize>,
}

impl<'h> Layout<'h> {
    fn new(header: &'h Header) -> Self {
        let im = match &header.importance {
            Some(im) => im.clone(),
            None => ImportanceMap::from_sigma(&header.params),
        };
        let masks = layer_masks(&im, &header.schedule);
        let plan = plan_order(header.params.sigma(), &masks);
        let counts = plan.counts();
        Layout {
            header,
            masks,
            plan,
            counts,
        }
    }

    fn bounds(&self, state: Option<IntervalState>, i: usize, l: usize) -> Result<(IntervalState, BoundarySet)> {
        let h = self.header;
        let c = h.shape.channel_of(i);
        let parent = match state {
            Some(s) => s,
            None => init_interval(h.schedule.delta(1, c), h.quant.k)?,
        };
        Ok((parent, refine(&parent, h.schedule.delta(l, c), h.quant.threshold)?))
    }

    /// Boundaries and PMFs for the first `limit` components of layer `l`.
    fn prepare(
        &self,
        states: &[Option<IntervalState>],
        l: usize,
        limit: usize,
    ) -> Result<Vec<(IntervalState, BoundarySet, Option<SubIntervalPMF>)>> {
        let sigma = self.header.params.sigma();
        self.plan.layer(l)[..limit]
            .par_iter()
            .map(|&i| {
                let i = i as usize;
                let (parent, bs) = self.bounds(states[i], i, l)?;
                let pmf = if bs.valid_count() > 1 {
                    Some(interval_pmf(&bs, sigma[i])?)
                } else {
                    None
                };
                Ok((parent, bs, pmf))
            })
            .collect()
    }

    fn finalize(&self, recon: &[f64], level: f64) -> Result<LatentTensor> {
        let h = self.header;
        let (d, di) = h.schedule.interpolate_delta(level)?;
        let out = finalize(recon, h.params.mu(), h.shape.plane(), &d, &di)?;
        LatentTensor::new(h.shape, out)
    }
}

/// Encodes a latent into a complete container.
pub fn encode(
    latent: &LatentTensor,
    params: &GaussianParams,
    schedule: &StepSchedule,
    cfg: &EncodeConfig,
) -> Result<Container> {
    encode_traced(latent, params, schedule, cfg).map(|(c, _)| c)
}

/// Like [`encode`], also returning the per-component coding trace.
pub fn encode_traced(
    latent: &LatentTensor,
    params: &GaussianParams,
    schedule: &StepSchedule,
    cfg: &EncodeConfig,
) -> Result<(Container, CodingTrace)> {
    let shape = latent.shape();
    if params.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape.len(),
            found: params.shape().len(),
        });
    }
    if schedule.channels() != shape.channels {
        return Err(Error::Config(format!(
            "schedule has {} channels, latent has {}",
            schedule.channels(),
            shape.channels
        )));
    }
    // everything the decoder sees goes through 32-bit storage first
    let schedule = schedule.to_f32()?;
    let round = |v: &[f64]| v.iter().map(|&x| f32_exact(x)).collect::<Vec<_>>();
    let params = GaussianParams::new(shape, round(params.mu()), round(params.sigma()))?;
    let importance = match &cfg.importance {
        Some(im) => Some(ImportanceMap::new(shape, round(im.values()))?),
        None => None,
    };
    let unbiased = center(latent, &params)?;
    let k = choose_k_range(&unbiased, &schedule)?;
    let header = Header {
        shape,
        quant: QuantConfig::new(k, f32_exact(cfg.threshold))?,
        schedule,
        params,
        importance,
    };
    let layout = Layout::new(&header);
    let y = unbiased.values();

    let mut states: Vec<Option<IntervalState>> = vec![None; shape.len()];
    let mut segments = Vec::with_capacity(header.layers());
    let mut trace = CodingTrace::default();
    for l in 1..=header.layers() {
        let order = layout.plan.layer(l);
        let prepared = layout.prepare(&states, l, order.len())?;
        let mut enc = RangeEncoder::new();
        let mut steps = Vec::with_capacity(order.len());
        let mut coded = Vec::new();
        for (&i, (parent, bs, pmf)) in order.iter().zip(&prepared) {
            let i = i as usize;
            let k = quantize(y[i], bs)?;
            if let Some(pmf) = pmf {
                encode_symbol(&mut enc, k, pmf)?;
                coded.push((k, pmf));
            }
            let (_, child) = dequantize(k, bs)?;
            states[i] = Some(child);
            steps.push(ComponentStep {
                index: i as u32,
                k,
                support: bs.valid_count(),
                adjusted: bs.adjusted,
                parent: *parent,
                child,
            });
        }
        trace.ideal_bits.push(ideal_rate(coded)?);
        trace.layers.push(steps);
        segments.push(enc.finish());
    }
    Ok((Container { header, segments }, trace))
}

/// Decoder state after running up to some point.
struct Run {
    recon: Vec<f64>,
    point: ProgressPoint,
    trace: CodingTrace,
    /// For a stop inside a layer: the cumulative tables of the coded
    /// components processed there, in order.
    partial: Option<(usize, Vec<Vec<u32>>)>,
    view_end: usize,
}

fn run(view: &ContainerView<'_>, layout: &Layout<'_>, stop: ProgressPoint) -> Result<Run> {
    let header = &view.header;
    let n = header.shape.len();
    let mut recon = vec![0.0; n];
    let mut states: Vec<Option<IntervalState>> = vec![None; n];
    let mut trace = CodingTrace::default();
    let mut point = ProgressPoint::START;
    let mut partial = None;
    let mut view_end = view.header_len;

    for l in 1..=header.layers() {
        let count = layout.counts[l - 1];
        let limit = if l <= stop.layers {
            count
        } else if l == stop.layers + 1 && stop.components > 0 {
            stop.components.min(count)
        } else {
            break;
        };
        let Some(seg) = view.segments.get(l - 1) else { break };
        let order = layout.plan.layer(l);
        let prepared = layout.prepare(&states, l, limit)?;
        let mut steps = Vec::with_capacity(limit);
        let mut tables = Vec::new();
        let mut coded = Vec::new();

        enum Source<'a> {
            Full(RangeDecoder<'a>),
            Prefix(PrefixDecoder<'a>),
        }
        let mut src = if seg.is_complete() {
            Source::Full(RangeDecoder::new(seg.payload))
        } else {
            Source::Prefix(PrefixDecoder::new(seg.payload))
        };
        for (&i, (parent, bs, pmf)) in order.iter().zip(&prepared) {
            let i = i as usize;
            let k = match pmf {
                None => bs.k_lo,
                Some(pmf) => {
                    let k = match &mut src {
                        Source::Full(d) => decode_symbol(d, pmf)?,
                        Source::Prefix(d) => match d.decode(&pmf.cum) {
                            Some(j) => pmf.k_lo + j as i64,
                            None => break,
                        },
                    };
                    tables.push(pmf.cum.clone());
                    coded.push((k, pmf));
                    k
                }
            };
            let (r, child) = dequantize(k, bs)?;
            recon[i] = r;
            states[i] = Some(child);
            steps.push(ComponentStep {
                index: i as u32,
                k,
                support: bs.valid_count(),
                adjusted: bs.adjusted,
                parent: *parent,
                child,
            });
        }
        let done = steps.len();
        trace.ideal_bits.push(ideal_rate(coded)?);
        trace.layers.push(steps);
        view_end = seg.end();
        if done == count {
            point = ProgressPoint::end(l);
            if !seg.is_complete() {
                break;
            }
        } else {
            point = ProgressPoint::normalized(l - 1, done, &layout.counts);
            partial = Some((l, tables));
            break;
        }
    }
    Ok(Run {
        recon,
        point,
        trace,
        partial,
        view_end,
    })
}

fn resolve(view: &ContainerView<'_>, bytes: &[u8], layout: &Layout<'_>, target: Target) -> Result<ProgressPoint> {
    let layers = view.header.layers();
    Ok(match target {
        Target::Full => ProgressPoint::end(layers),
        Target::Level(l) => ProgressPoint::from_level(l, &layout.counts)?,
        Target::Point(p) => {
            let valid = p.layers < layers && p.components < layout.counts[p.layers]
                || p.layers == layers && p.components == 0;
            if !valid {
                return Err(Error::Config(format!("point {p} outside the container")));
            }
            p
        }
        Target::PayloadBytes(b) => {
            let cut = (view.header_len as u64).saturating_add(b).min(bytes.len() as u64) as usize;
            let sub = ContainerView::parse(&bytes[..cut])?;
            run(&sub, layout, ProgressPoint::end(layers))?.point
        }
    })
}

/// Decodes a container or any prefix of one that holds the full header.
pub fn decode(bytes: &[u8], target: Target) -> Result<Decoded> {
    decode_traced(bytes, target).map(|(d, _)| d)
}

/// Like [`decode`], also returning the coding trace.
pub fn decode_traced(bytes: &[u8], target: Target) -> Result<(Decoded, CodingTrace)> {
    let view = ContainerView::parse(bytes)?;
    let layout = Layout::new(&view.header);
    let stop = resolve(&view, bytes, &layout, target)?;
    let r = run(&view, &layout, stop)?;
    let level = r.point.level(&layout.counts);
    let latent = layout.finalize(&r.recon, level)?;
    Ok((
        Decoded {
            latent,
            unbiased: r.recon,
            point: r.point,
            level,
        },
        r.trace,
    ))
}

/// Shortest prefix of `bytes` that decodes to the target point.
///
/// Integer levels end at a segment boundary. Other points end at the first
/// byte from which every component up to the point is determined. The cut
/// never re-encodes anything.
pub fn truncate(bytes: &[u8], target: Target) -> Result<Truncation> {
    let view = ContainerView::parse(bytes)?;
    let layout = Layout::new(&view.header);
    let want = resolve(&view, bytes, &layout, target)?;
    let r = run(&view, &layout, want)?;
    let clamped = r.point < want;
    let p = r.point;

    let len = match &r.partial {
        None => {
            if p.layers == 0 {
                view.header_len
            } else {
                view.segments[p.layers - 1].end()
            }
        }
        Some((l, tables)) => {
            let seg = view.segments[l - 1];
            let need = tables.len();
            let determined = |m: usize| {
                let mut d = PrefixDecoder::new(&seg.payload[..m]);
                tables.iter().take_while(|cum| d.decode(cum).is_some()).count()
            };
            let (mut lo, mut hi) = (0usize, seg.payload.len());
            if need == 0 {
                hi = 0;
            }
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if determined(mid) >= need {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            seg.offset + 8 + lo
        }
    };
    debug_assert!(len <= r.view_end.max(view.header_len));
    let out = bytes[..len].to_vec();
    let check = ContainerView::parse(&out)?;
    let achieved = run(&check, &Layout::new(&check.header), ProgressPoint::end(check.header.layers()))?.point;
    Ok(Truncation {
        level: achieved.level(&layout.counts),
        point: achieved,
        bytes: out,
        clamped,
    })
}

/// Per-layer number of coded components for a header.
pub fn layer_counts(header: &Header) -> Vec<usize> {
    Layout::new(header).counts
}

/// Number of components coded at least once by `point`.
pub fn selected_by(header: &Header, point: ProgressPoint) -> usize {
    let layout = Layout::new(header);
    let mut n = if point.layers == 0 {
        0
    } else {
        layout.masks[point.layers - 1].count()
    };
    if point.components > 0 {
        let prev = point.layers.checked_sub(1).map(|j| &layout.masks[j]);
        n += layout.plan.layer(point.layers + 1)[..point.components]
            .iter()
            .filter(|&&i| prev.is_none_or(|m| !m.bits[i as usize]))
            .count();
    }
    n
}
