//! Derivative-free coordinate descent over log-domain schedule parameters.
//!
//! Each channel is described by `a = ln delta[1]`, per-layer decrements
//! `d_l = ln(delta[l-1] / delta[l]) >= 0` and inverse-scale log ratios
//! `r_l = ln(delta_inv[l] / delta[l])`; each layer has `g_l = ln gamma[l]`.
//! Non-negative decrements keep every candidate monotone.

use super::loss::{Corpus, Evaluator, LossConfig, LossReport, Terms};
use crate::error::{Error, Result};
use crate::schedule::{StepSchedule, SELECT_ALL_GAMMA};

/// Finest steps tried for the ternary baseline: `10^(-3 + j/4)`, `j = 0..=20`.
pub const TRIT_GRID: [f64; 21] = {
    let mut g = [0.0; 21];
    let mut j = 0;
    while j < 21 {
        g[j] = j as f64 / 4.0 - 3.0;
        j += 1;
    }
    g
};

const MAX_DECREMENT: f64 = 2.0794415416798357; // ln 8
const MAX_TOTAL_DECREMENT: f64 = 8.317766166719343; // ln 4096
const INVERSE_BOUND: (f64, f64) = (0.75, 1.25);
const GAMMA_BOUND: (f64, f64) = (SELECT_ALL_GAMMA, 50.0);
const STEP_BOUND: (f64, f64) = (0.01, 20.0);

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub loss: LossConfig,
    pub optimize_inverse: bool,
    pub optimize_gamma: bool,
    /// Full passes over all coordinates.
    pub sweeps: usize,
    /// Evenly spaced probes across a coordinate's range before refining.
    pub scan_points: usize,
    /// Golden-section iterations around the best probe.
    pub golden_iters: usize,
    /// Loss evaluations allowed, baseline included.
    pub max_evals: usize,
    /// Starting schedule; a step size adapted to each channel's spread when
    /// absent.
    pub init: Option<StepSchedule>,
}

impl OptimizerConfig {
    pub fn new(loss: LossConfig) -> Self {
        OptimizerConfig {
            loss,
            optimize_inverse: true,
            optimize_gamma: true,
            sweeps: 4,
            scan_points: 9,
            golden_iters: 14,
            max_evals: 100_000,
            init: None,
        }
    }

    pub fn layers(&self) -> usize {
        self.loss.lambda.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub schedule: StepSchedule,
    pub report: LossReport,
    /// Loss of the starting schedule.
    pub initial_loss: f64,
    /// Loss of the best ternary schedule.
    pub trit_loss: f64,
    pub trit_schedule: StepSchedule,
    /// Loss after the start and after every accepted move.
    pub history: Vec<f64>,
    pub evals: usize,
    /// The evaluation budget ran out before the sweeps finished.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    Step(usize),
    Decrement(usize, usize),
    Inverse(usize, usize),
    Gamma(usize),
}

impl Coord {
    fn channel(self) -> Option<usize> {
        match self {
            Coord::Step(c) | Coord::Decrement(_, c) | Coord::Inverse(_, c) => Some(c),
            Coord::Gamma(_) => None,
        }
    }
}

/// Parameter layout: per channel `a, d_2..d_L, r_1..r_L`, then `g_1..g_L`.
struct Space {
    layers: usize,
    channels: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Per-channel cap on the summed decrements.
    cap: Vec<f64>,
}

impl Space {
    fn per_channel(&self) -> usize {
        2 * self.layers
    }

    fn dim(&self) -> usize {
        (self.channels * 2 + 1) * self.layers
    }

    fn index(&self, coord: Coord) -> usize {
        let pc = self.per_channel();
        match coord {
            Coord::Step(c) => c * pc,
            Coord::Decrement(l, c) => c * pc + l - 1,
            Coord::Inverse(l, c) => c * pc + self.layers + l - 1,
            Coord::Gamma(l) => self.channels * pc + l - 1,
        }
    }

    fn params_of(&self, s: &StepSchedule) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for c in 0..self.channels {
            x[self.index(Coord::Step(c))] = s.delta(1, c).ln();
            for l in 2..=self.layers {
                x[self.index(Coord::Decrement(l, c))] = (s.delta(l - 1, c) / s.delta(l, c)).ln();
            }
            for l in 1..=self.layers {
                x[self.index(Coord::Inverse(l, c))] = (s.delta_inv(l, c) / s.delta(l, c)).ln();
            }
        }
        for l in 1..=self.layers {
            x[self.index(Coord::Gamma(l))] = s.gamma(l).ln();
        }
        x
    }

    fn schedule_of(&self, x: &[f64]) -> Result<StepSchedule> {
        let (ll, cc) = (self.layers, self.channels);
        let mut delta = vec![0.0; ll * cc];
        let mut delta_inv = vec![0.0; ll * cc];
        for c in 0..cc {
            let mut log = x[self.index(Coord::Step(c))];
            for l in 1..=ll {
                if l > 1 {
                    log -= x[self.index(Coord::Decrement(l, c))];
                }
                delta[(l - 1) * cc + c] = log.exp();
                delta_inv[(l - 1) * cc + c] = (log + x[self.index(Coord::Inverse(l, c))]).exp();
            }
        }
        let gamma = (1..=ll).map(|l| x[self.index(Coord::Gamma(l))].exp()).collect();
        StepSchedule::from_flat(ll, cc, delta, delta_inv, gamma)?.to_f32()
    }

    /// Search range of `coord` given the other coordinates of `x`.
    fn range(&self, x: &[f64], coord: Coord) -> (f64, f64) {
        let i = self.index(coord);
        match coord {
            Coord::Decrement(l, c) => {
                let others: f64 = (2..=self.layers)
                    .filter(|&j| j != l)
                    .map(|j| x[self.index(Coord::Decrement(j, c))])
                    .sum();
                (self.lo[i], self.hi[i].min(self.cap[c] - others).max(self.lo[i]))
            }
            _ => (self.lo[i], self.hi[i]),
        }
    }
}

/// Current point with cached per-channel terms.
#[derive(Clone)]
struct State {
    x: Vec<f64>,
    schedule: StepSchedule,
    k: Vec<u32>,
    masks: Vec<Vec<bool>>,
    terms: Vec<Terms>,
    report: LossReport,
}

struct Search<'a> {
    ev: Evaluator<'a>,
    space: Space,
    evals: usize,
    max_evals: usize,
}

impl Search<'_> {
    fn budget_left(&self) -> bool {
        self.evals < self.max_evals
    }

    fn channel_k(&self, s: &StepSchedule, c: usize) -> Result<u32> {
        match self.ev.cfg.model {
            super::RateModel::Exact => self.ev.corpus.k_needed(c, s.delta(1, c)),
            super::RateModel::Surrogate => Ok(1),
        }
    }

    fn full(&mut self, x: Vec<f64>) -> Result<State> {
        let schedule = self.space.schedule_of(&x)?;
        let k = (0..schedule.channels())
            .map(|c| self.channel_k(&schedule, c))
            .collect::<Result<Vec<_>>>()?;
        let kmax = k.iter().copied().max().unwrap_or(1);
        let masks = self.ev.masks(&schedule);
        let terms = self.ev.channels(&schedule, &masks, kmax)?;
        let report = self.ev.combine(&terms);
        Ok(State {
            x,
            schedule,
            k,
            masks,
            terms,
            report,
        })
    }

    /// `cur` with one coordinate moved, recomputing only what depends on it.
    fn moved(&mut self, cur: &State, coord: Coord, v: f64) -> Result<State> {
        let mut x = cur.x.clone();
        x[self.space.index(coord)] = v;
        let Some(c) = coord.channel() else {
            return self.full(x);
        };
        let schedule = self.space.schedule_of(&x)?;
        let mut k = cur.k.clone();
        k[c] = self.channel_k(&schedule, c)?;
        let kmax = k.iter().copied().max().unwrap_or(1);
        if kmax != cur.k.iter().copied().max().unwrap_or(1) {
            return self.full(x);
        }
        let mut terms = cur.terms.clone();
        terms[c] = self.ev.channel(&schedule, &cur.masks, kmax, c)?;
        let report = self.ev.combine(&terms);
        Ok(State {
            x,
            schedule,
            k,
            masks: cur.masks.clone(),
            terms,
            report,
        })
    }

    fn loss_at(&mut self, cur: &State, coord: Coord, v: f64, best: &mut Option<State>) -> f64 {
        self.evals += 1;
        let Ok(st) = self.moved(cur, coord, v) else {
            return f64::INFINITY;
        };
        let loss = st.report.total;
        if best.as_ref().is_none_or(|b| loss < b.report.total) && loss.is_finite() {
            *best = Some(st);
        }
        loss
    }

    /// Coarse scan then golden-section refinement of one coordinate.
    /// Returns the best state found if it strictly beats `cur`.
    fn line_search(&mut self, cur: &State, coord: Coord, scan: usize, iters: usize) -> Option<State> {
        let (lo, hi) = self.space.range(&cur.x, coord);
        if !(hi > lo) {
            return None;
        }
        let mut best: Option<State> = None;
        let n = scan.max(3);
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let mut fs = Vec::with_capacity(n);
        for &x in &xs {
            if !self.budget_left() {
                break;
            }
            fs.push(self.loss_at(cur, coord, x, &mut best));
        }
        if fs.len() == n {
            let i = (0..n).fold(0, |b, i| if fs[i] < fs[b] { i } else { b });
            let (mut a, mut b) = (xs[i.saturating_sub(1)], xs[(i + 1).min(n - 1)]);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            let mut c = b - r * (b - a);
            let mut d = a + r * (b - a);
            let (mut fc, mut fd) = (f64::NAN, f64::NAN);
            for _ in 0..iters {
                if !self.budget_left() {
                    break;
                }
                if fc.is_nan() {
                    fc = self.loss_at(cur, coord, c, &mut best);
                    continue;
                }
                if fd.is_nan() {
                    fd = self.loss_at(cur, coord, d, &mut best);
                    continue;
                }
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - r * (b - a);
                    fc = self.loss_at(cur, coord, c, &mut best);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + r * (b - a);
                    fd = self.loss_at(cur, coord, d, &mut best);
                }
            }
        }
        best.filter(|b| b.report.total < cur.report.total)
    }
}

/// Best ternary schedule over [`TRIT_GRID`] and its loss report.
pub fn trit_baseline(corpus: &Corpus, cfg: &LossConfig) -> Result<(StepSchedule, LossReport)> {
    let ev = Evaluator::new(corpus, cfg)?;
    let layers = cfg.lambda.len();
    let mut best: Option<(StepSchedule, LossReport)> = None;
    for e in TRIT_GRID {
        let s = StepSchedule::trit(layers, corpus.channels(), 10f64.powf(e))?.to_f32()?;
        if let Ok(r) = ev.evaluate(&s) {
            if best.as_ref().is_none_or(|(_, b)| r.total < b.total) {
                best = Some((s, r));
            }
        }
    }
    best.ok_or_else(|| Error::Config("no ternary schedule is codable for this latent".into()))
}

fn default_init(corpus: &Corpus, layers: usize) -> Result<StepSchedule> {
    let delta: Vec<Vec<f64>> = (1..=layers)
        .map(|l| {
            (0..corpus.channels())
                .map(|c| {
                    let s = corpus.channel_rms(c);
                    let s = if s > 0.0 { s } else { 1.0 };
                    2.0 * s / 2f64.powi(l as i32 - 1)
                })
                .collect()
        })
        .collect();
    StepSchedule::new(delta.clone(), delta, vec![SELECT_ALL_GAMMA; layers])?.to_f32()
}

/// Fits a schedule minimizing the layered loss on `corpus`.
///
/// The search starts from the better of the initial schedule and the best
/// ternary schedule and only ever accepts strict improvements, so the result
/// is never worse than either.
pub fn optimize_schedule(corpus: &Corpus, cfg: &OptimizerConfig) -> Result<FitResult> {
    let layers = cfg.layers();
    if corpus.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let ev = Evaluator::new(corpus, &cfg.loss)?;
    let channels = corpus.channels();
    let init = match &cfg.init {
        Some(s) => s.to_f32()?,
        None => default_init(corpus, layers)?,
    };
    ev.check(&init)?;
    let initial_loss = ev.evaluate(&init).map(|r| r.total).unwrap_or(f64::INFINITY);
    let (trit_schedule, trit_report) = trit_baseline(corpus, &cfg.loss)?;
    let trit_loss = trit_report.total;
    let mut evals = 1 + TRIT_GRID.len();
    let start = if initial_loss <= trit_loss { init } else { trit_schedule.clone() };

    let mut space = Space {
        layers,
        channels,
        lo: Vec::new(),
        hi: Vec::new(),
        cap: vec![MAX_TOTAL_DECREMENT; channels],
    };
    space.lo = vec![0.0; space.dim()];
    space.hi = vec![0.0; space.dim()];
    let mut coords = Vec::with_capacity(space.dim());
    let mut bound = |space: &mut Space, co: Coord, lo: f64, hi: f64| {
        let i = space.index(co);
        space.lo[i] = lo;
        space.hi[i] = hi;
        coords.push(co);
    };
    for c in 0..channels {
        let s = corpus.channel_rms(c);
        let s = if s > 0.0 { s } else { 1.0 };
        bound(&mut space, Coord::Step(c), (STEP_BOUND.0 * s).ln(), (STEP_BOUND.1 * s).ln());
        for l in 2..=layers {
            bound(&mut space, Coord::Decrement(l, c), 0.0, MAX_DECREMENT);
        }
        for l in 1..=layers {
            bound(&mut space, Coord::Inverse(l, c), INVERSE_BOUND.0.ln(), INVERSE_BOUND.1.ln());
        }
    }
    for l in 1..=layers {
        bound(&mut space, Coord::Gamma(l), GAMMA_BOUND.0.ln(), GAMMA_BOUND.1.ln());
    }

    // widen the box so that the starting point lies inside it
    let x0 = space.params_of(&start);
    for &co in &coords {
        let i = space.index(co);
        space.lo[i] = space.lo[i].min(x0[i]);
        space.hi[i] = space.hi[i].max(x0[i]);
    }
    for c in 0..channels {
        let total: f64 = (2..=layers).map(|l| x0[space.index(Coord::Decrement(l, c))]).sum();
        space.cap[c] = space.cap[c].max(total);
    }

    let active: Vec<Coord> = coords
        .iter()
        .copied()
        .filter(|co| match co {
            Coord::Inverse(..) => cfg.optimize_inverse,
            Coord::Gamma(_) => cfg.optimize_gamma,
            _ => true,
        })
        .collect();

    let mut search = Search {
        ev,
        space,
        evals: evals + 1,
        max_evals: cfg.max_evals,
    };
    let start_report = search.ev.evaluate(&start)?;
    let mut cur = search.full(x0)?;
    let mut history = vec![cur.report.total];
    let mut exhausted = false;
    'sweeps: for _ in 0..cfg.sweeps {
        let before = cur.report.total;
        for &co in &active {
            if !search.budget_left() {
                exhausted = true;
                break 'sweeps;
            }
            if let Some(next) = search.line_search(&cur, co, cfg.scan_points, cfg.golden_iters) {
                cur = next;
                history.push(cur.report.total);
            }
        }
        if !(cur.report.total < before) {
            break;
        }
    }
    if !search.budget_left() {
        exhausted = true;
    }
    evals = search.evals;

    let (schedule, report) = if start_report.total < cur.report.total {
        (start, start_report)
    } else {
        (cur.schedule, cur.report)
    };
    Ok(FitResult {
        schedule,
        report,
        initial_loss,
        trit_loss,
        trit_schedule,
        history,
        evals,
        exhausted,
    })
}
