//! Current traces: synthesis from a scenario, CSV import/export,
//! left-Riemann integration and threshold segmentation.
//!
//! Uniformly sampled traces are stored run-length encoded, so an hour at
//! 100 kHz costs a few thousand runs rather than hundreds of millions of
//! samples.

use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{PhaseLabel, PhaseSpec};
use crate::scenario::ScenarioProfile;
use crate::units::ChargeMilliampSecond;

pub const CSV_HEADER: &str = "time_s,current_mA";
pub const MIN_SYNTH_RATE_HZ: f64 = 1000.0;
/// Relative deviation from a uniform grid tolerated when importing.
const UNIFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOrigin {
    Synthesized,
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    start: usize,
    len: usize,
    current: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Uniform { t0: f64, rate: f64, runs: Vec<Run> },
    Explicit { times: Vec<f64>, currents: Vec<f64> },
}

/// A sampled current-vs-time series.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrace {
    storage: Storage,
    origin: TraceOrigin,
    clamped_negative: usize,
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn push_run(runs: &mut Vec<Run>, start: usize, len: usize, current: f64) {
    if len == 0 {
        return;
    }
    if let Some(last) = runs.last_mut() {
        if last.current == current && last.start + last.len == start {
            last.len += len;
            return;
        }
    }
    runs.push(Run { start, len, current });
}

impl CurrentTrace {
    /// Uniformly sampled trace from explicit current values.
    pub fn from_uniform(t0: f64, rate_hz: f64, currents: &[f64], origin: TraceOrigin) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidScenario(format!("invalid sample rate {rate_hz}")));
        }
        if currents.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut runs = Vec::new();
        for (i, &c) in currents.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidQuantity { quantity: "current", value: c });
            }
            push_run(&mut runs, i, 1, c);
        }
        Ok(Self {
            storage: Storage::Uniform { t0, rate: rate_hz, runs },
            origin,
            clamped_negative: 0,
        })
    }

    /// Trace from explicit (time, current) samples; times must strictly
    /// increase.
    pub fn from_samples(samples: &[(f64, f64)], origin: TraceOrigin) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut times = Vec::with_capacity(samples.len());
        let mut currents = Vec::with_capacity(samples.len());
        for (i, &(t, c)) in samples.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidQuantity { quantity: "current", value: c });
            }
            if !t.is_finite() || times.last().is_some_and(|&p| t <= p) {
                return Err(Error::NonMonotonicTime { line: i + 1 });
            }
            times.push(t);
            currents.push(c);
        }
        Ok(Self {
            storage: Storage::Explicit { times, currents },
            origin,
            clamped_negative: 0,
        })
    }

    pub fn origin(&self) -> TraceOrigin {
        self.origin
    }

    /// Negative samples clamped to zero on import.
    pub fn clamped_negative(&self) -> usize {
        self.clamped_negative
    }

    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Uniform { runs, .. } => runs.last().map_or(0, |r| r.start + r.len),
            Storage::Explicit { times, .. } => times.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample rate for uniform traces; mean rate otherwise.
    pub fn sample_rate(&self) -> Option<f64> {
        match &self.storage {
            Storage::Uniform { rate, .. } => Some(*rate),
            Storage::Explicit { times, .. } if times.len() > 1 => {
                Some((times.len() - 1) as f64 / (times[times.len() - 1] - times[0]))
            }
            Storage::Explicit { .. } => None,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.storage, Storage::Uniform { .. })
    }

    /// Number of constant-current runs (uniform) or samples (explicit).
    pub fn stored_len(&self) -> usize {
        match &self.storage {
            Storage::Uniform { runs, .. } => runs.len(),
            Storage::Explicit { times, .. } => times.len(),
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        match &self.storage {
            Storage::Uniform { t0, rate, .. } => t0 + i as f64 / rate,
            Storage::Explicit { times, .. } => times[i],
        }
    }

    pub fn current(&self, i: usize) -> f64 {
        match &self.storage {
            Storage::Uniform { runs, .. } => {
                let k = runs.partition_point(|r| r.start + r.len <= i);
                runs[k].current
            }
            Storage::Explicit { currents, .. } => currents[i],
        }
    }

    pub fn start_time(&self) -> f64 {
        self.time(0)
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// End of the hold interval of sample `i` (the last sample holds for 0 s).
    fn hold_end(&self, i: usize) -> f64 {
        let n = self.len();
        if i + 1 < n {
            self.time(i + 1)
        } else {
            self.time(n - 1)
        }
    }

    /// Constant-current blocks `(first sample, sample count, current)`.
    fn blocks(&self) -> Box<dyn Iterator<Item = (usize, usize, f64)> + '_> {
        match &self.storage {
            Storage::Uniform { runs, .. } => Box::new(runs.iter().map(|r| (r.start, r.len, r.current))),
            Storage::Explicit { currents, .. } => Box::new(currents.iter().enumerate().map(|(i, &c)| (i, 1, c))),
        }
    }

    /// Iterates over every `(time, current)` sample.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.blocks()
            .flat_map(move |(s, n, c)| (s..s + n).map(move |i| (self.time(i), c)))
    }

    fn block_charge(&self, first: usize, len: usize, current: f64) -> f64 {
        let span = self.hold_end(first + len - 1) - self.time(first);
        current * span
    }

    /// Appends `other` so that it starts where this trace ends; this
    /// trace's last sample (which holds for zero time) is replaced by
    /// `other`'s first sample. Integrals add exactly.
    pub fn concat(&self, other: &CurrentTrace) -> Result<CurrentTrace> {
        let origin = if self.origin == TraceOrigin::Synthesized && other.origin == TraceOrigin::Synthesized {
            TraceOrigin::Synthesized
        } else {
            TraceOrigin::Imported
        };
        let offset = self.end_time() - other.start_time();
        if let (
            Storage::Uniform { t0, rate, runs },
            Storage::Uniform {
                rate: r2, runs: runs2, ..
            },
        ) = (&self.storage, &other.storage)
        {
            if rate == r2 {
                let mut out: Vec<Run> = Vec::with_capacity(runs.len() + runs2.len());
                let keep = self.len() - 1;
                for r in runs {
                    let len = r.len.min(keep.saturating_sub(r.start));
                    push_run(&mut out, r.start, len, r.current);
                }
                for r in runs2 {
                    push_run(&mut out, keep + r.start, r.len, r.current);
                }
                return Ok(CurrentTrace {
                    storage: Storage::Uniform {
                        t0: *t0,
                        rate: *rate,
                        runs: out,
                    },
                    origin,
                    clamped_negative: self.clamped_negative + other.clamped_negative,
                });
            }
        }
        let mut s: Vec<(f64, f64)> = self.samples().collect();
        s.pop();
        s.extend(other.samples().map(|(t, c)| (t + offset, c)));
        let mut out = CurrentTrace::from_samples(&s, origin)?;
        out.clamped_negative = self.clamped_negative + other.clamped_negative;
        Ok(out)
    }

    /// Multiplies every sample by `1 + u`, `u` uniform in `[-amplitude,
    /// amplitude]`, from a seeded generator.
    pub fn with_uniform_noise(&self, amplitude: f64, seed: u64) -> Result<CurrentTrace> {
        if !(amplitude.is_finite() && (0.0..1.0).contains(&amplitude)) {
            return Err(Error::InvalidScenario(format!("noise amplitude {amplitude} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let currents: Vec<f64> = self
            .samples()
            .map(|(_, c)| c * (1.0 + rng.random_range(-amplitude..=amplitude)))
            .collect();
        let storage = match &self.storage {
            Storage::Uniform { t0, rate, .. } => {
                let mut runs = Vec::new();
                for (i, &c) in currents.iter().enumerate() {
                    push_run(&mut runs, i, 1, c);
                }
                Storage::Uniform {
                    t0: *t0,
                    rate: *rate,
                    runs,
                }
            }
            Storage::Explicit { times, .. } => Storage::Explicit {
                times: times.clone(),
                currents,
            },
        };
        Ok(CurrentTrace {
            storage,
            origin: self.origin,
            clamped_negative: self.clamped_negative,
        })
    }
}

/// Smallest sample index whose time `i / rate` is at or after `t`.
fn index_at_or_after(t: f64, rate: f64) -> usize {
    let mut k = (t * rate).ceil().max(0.0) as usize;
    while k > 0 && (k - 1) as f64 / rate >= t {
        k -= 1;
    }
    while (k as f64) / rate < t {
        k += 1;
    }
    k
}

/// Point-samples the scenario's piecewise-constant current profile at
/// `rate_hz`. The phase timeline is walked directly (init phases, then the
/// cycle repeated until the operating time runs out), independently of the
/// closed-form cycle accounting.
pub fn synthesize_trace(scenario: &ScenarioProfile, rate_hz: f64) -> Result<CurrentTrace> {
    if !(rate_hz.is_finite() && rate_hz >= MIN_SYNTH_RATE_HZ) {
        return Err(Error::InvalidScenario(format!(
            "sample rate must be at least {MIN_SYNTH_RATE_HZ} Hz, got {rate_hz}"
        )));
    }
    let total = scenario.total_time.value();
    let n = (total * rate_hz).round() as usize + 1;
    let cycle_len: f64 = scenario.cycle_phases().iter().map(|p| p.duration.value()).sum();
    let mut runs = Vec::new();
    let mut t = 0.0;
    let mut last_current = scenario
        .init_phases()
        .iter()
        .chain(scenario.cycle_phases())
        .next()
        .map_or(0.0, |p| p.current.value());
    let mut emit = |p: &PhaseSpec, t: &mut f64, runs: &mut Vec<Run>| -> bool {
        let d = p.duration.value();
        if d <= 0.0 {
            return *t >= total;
        }
        let end = (*t + d).min(total);
        let a = index_at_or_after(*t, rate_hz).min(n);
        let b = index_at_or_after(end, rate_hz).min(n);
        push_run(runs, a, b - a, p.current.value());
        last_current = p.current.value();
        *t = end;
        *t >= total
    };
    let mut done = false;
    for p in scenario.init_phases() {
        if emit(p, &mut t, &mut runs) {
            done = true;
            break;
        }
    }
    if !done && t < total {
        if cycle_len <= 0.0 {
            return Err(Error::EmptyCycle { remaining: total - t });
        }
        'outer: loop {
            for p in scenario.cycle_phases() {
                if emit(p, &mut t, &mut runs) {
                    break 'outer;
                }
            }
        }
    }
    // samples at or after the end hold the final phase's current
    let covered = runs.last().map_or(0, |r| r.start + r.len);
    push_run(&mut runs, covered, n - covered, last_current);
    Ok(CurrentTrace {
        storage: Storage::Uniform {
            t0: 0.0,
            rate: rate_hz,
            runs,
        },
        origin: TraceOrigin::Synthesized,
        clamped_negative: 0,
    })
}

/// Left-Riemann (sample-and-hold) integral using the actual sample gaps.
pub fn integrate_trace(trace: &CurrentTrace) -> Result<ChargeMilliampSecond> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut acc = Kahan::default();
    for (s, n, c) in trace.blocks() {
        acc.add(trace.block_charge(s, n, c));
    }
    ChargeMilliampSecond::new(acc.value().max(0.0))
}

// ---------------------------------------------------------------------------
// CSV

fn fmt_sig(v: f64, sig: i32, out: &mut String) {
    if v == 0.0 {
        out.push('0');
        return;
    }
    let mag = v.abs().log10().floor() as i32;
    let prec = (sig - 1 - mag).max(0) as usize;
    let start = out.len();
    let _ = write!(out, "{v:.prec$}");
    if out[start..].contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
}

/// Serializes to CSV (`time_s,current_mA`, LF). Times get 12 significant
/// digits; currents are written in shortest round-trip form.
pub fn write_trace_csv<W: std::io::Write>(trace: &CurrentTrace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    let mut line = String::with_capacity(40);
    for (t, c) in trace.samples() {
        line.clear();
        fmt_sig(t, 12, &mut line);
        let _ = write!(line, ",{c}");
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn trace_to_csv_string(trace: &CurrentTrace) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

/// Accumulates samples, keeping run-length uniform storage while the
/// timestamps stay on a uniform grid.
struct TraceBuilder {
    t0: f64,
    dt: f64,
    runs: Vec<Run>,
    explicit: Option<(Vec<f64>, Vec<f64>)>,
    n: usize,
    last_t: f64,
}

impl TraceBuilder {
    fn new() -> Self {
        Self {
            t0: 0.0,
            dt: 0.0,
            runs: Vec::new(),
            explicit: None,
            n: 0,
            last_t: f64::NEG_INFINITY,
        }
    }

    fn materialize(&mut self) {
        let rate = 1.0 / self.dt;
        let mut times = Vec::with_capacity(self.n + 1);
        let mut currents = Vec::with_capacity(self.n + 1);
        for r in &self.runs {
            for i in r.start..r.start + r.len {
                times.push(if i == 0 { self.t0 } else { self.t0 + i as f64 / rate });
                currents.push(r.current);
            }
        }
        self.runs.clear();
        self.explicit = Some((times, currents));
    }

    fn push(&mut self, t: f64, c: f64) {
        if let Some((times, currents)) = &mut self.explicit {
            times.push(t);
            currents.push(c);
        } else {
            match self.n {
                0 => self.t0 = t,
                1 => self.dt = t - self.t0,
                _ => {
                    let expect = self.t0 + self.n as f64 * self.dt;
                    if (t - expect).abs() > UNIFORM_TOL * self.dt {
                        self.materialize();
                        let (times, currents) = self.explicit.as_mut().expect("just set");
                        times.push(t);
                        currents.push(c);
                        self.n += 1;
                        self.last_t = t;
                        return;
                    }
                }
            }
            push_run(&mut self.runs, self.n, 1, c);
        }
        self.n += 1;
        self.last_t = t;
    }

    fn finish(self, clamped: usize) -> CurrentTrace {
        let storage = match self.explicit {
            Some((times, currents)) => Storage::Explicit { times, currents },
            None if self.n == 1 => Storage::Explicit {
                times: vec![self.t0],
                currents: vec![self.runs[0].current],
            },
            None => Storage::Uniform {
                t0: self.t0,
                rate: 1.0 / self.dt,
                runs: self.runs,
            },
        };
        CurrentTrace {
            storage,
            origin: TraceOrigin::Imported,
            clamped_negative: clamped,
        }
    }
}

/// Parses a `time_s,current_mA` CSV export. Negative currents are clamped
/// to zero and counted.
pub fn parse_trace_csv(bytes: &[u8]) -> Result<CurrentTrace> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::MalformedRow {
            line,
            reason: "invalid UTF-8".into(),
        }
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut builder = TraceBuilder::new();
    let mut clamped = 0;
    let mut header_seen = false;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() == 2 && cols[0] == "time_s" && cols[1].eq_ignore_ascii_case("current_mA") {
                header_seen = true;
                continue;
            }
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected header `{CSV_HEADER}`"),
            });
        }
        let mut fields = line.split(',');
        let (Some(ts), Some(cs), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: "expected two comma-separated fields".into(),
            });
        };
        let parse = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| Error::MalformedRow {
                line: line_no,
                reason: format!("{what} `{}` is not a number", s.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    line: line_no,
                    reason: format!("{what} is not finite"),
                });
            }
            Ok(v)
        };
        let t = parse(ts, "time")?;
        let mut c = parse(cs, "current")?;
        if t <= builder.last_t {
            return Err(Error::NonMonotonicTime { line: line_no });
        }
        if c < 0.0 {
            c = 0.0;
            clamped += 1;
        }
        builder.push(t, c + 0.0);
    }
    if builder.n == 0 {
        return Err(Error::EmptyFile);
    }
    Ok(builder.finish(clamped))
}

// ---------------------------------------------------------------------------
// segmentation

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    /// Band half-width as a fraction of the trace's dynamic range.
    pub hysteresis_frac: f64,
    /// Absolute band half-width in mA; overrides `hysteresis_frac`.
    pub band_ma: Option<f64>,
    /// Optional fixed current levels (mA) separating phases. When given,
    /// samples are classified by level with the band as hysteresis.
    pub thresholds: Option<Vec<f64>>,
    pub min_segment_duration_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            hysteresis_frac: 0.05,
            band_ma: None,
            thresholds: None,
            min_segment_duration_s: 0.010,
        }
    }
}

impl SegmentConfig {
    fn validate(&self) -> Result<()> {
        if !(self.min_segment_duration_s.is_finite() && self.min_segment_duration_s > 0.0) {
            return Err(Error::InvalidSegmentConfig("min segment duration must be positive".into()));
        }
        if !(self.hysteresis_frac.is_finite() && self.hysteresis_frac >= 0.0) {
            return Err(Error::InvalidSegmentConfig("hysteresis must be non-negative".into()));
        }
        if let Some(b) = self.band_ma {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidSegmentConfig("band must be non-negative".into()));
            }
        }
        if let Some(th) = &self.thresholds {
            if th.iter().any(|t| !t.is_finite()) || th.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSegmentConfig("thresholds must be finite and strictly increasing".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSegment {
    /// `None` when unlabeled.
    pub label: Option<PhaseLabel>,
    pub start: f64,
    pub end: f64,
    pub mean_current: f64,
    pub charge: f64,
    pub first_sample: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy)]
struct Acc {
    first: usize,
    n: usize,
    weight_sum: f64,
    charge: Kahan,
    min: f64,
    max: f64,
}

impl Acc {
    fn new(first: usize, n: usize, c: f64, charge: f64) -> Self {
        let mut k = Kahan::default();
        k.add(charge);
        Self {
            first,
            n,
            weight_sum: c * n as f64,
            charge: k,
            min: c,
            max: c,
        }
    }
    fn level(&self) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            self.weight_sum / self.n as f64
        }
    }
    fn absorb(&mut self, o: &Acc) {
        self.n += o.n;
        self.weight_sum += o.weight_sum;
        self.charge.add(o.charge.value());
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }
}

fn bin_of(th: &[f64], c: f64) -> usize {
    th.partition_point(|&t| t <= c)
}

/// Repeatedly merges the shortest segment under `min_dur` into the
/// neighbour whose level is closer (ties go left), until none is left.
fn absorb_short(segs: Vec<(Acc, usize)>, min_dur: f64, dur: impl Fn(&Acc) -> f64) -> Vec<(Acc, usize)> {
    #[derive(PartialEq)]
    struct Entry(f64, usize, u32);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Entry {
        // reversed: BinaryHeap is a max-heap
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
        }
    }

    let n = segs.len();
    let mut nodes: Vec<Option<(Acc, usize)>> = segs.into_iter().map(Some).collect();
    let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
    let mut next: Vec<Option<usize>> = (0..n).map(|i| (i + 1 < n).then_some(i + 1)).collect();
    let mut version = vec![0u32; n];
    let mut alive = n;
    let mut heap: BinaryHeap<Entry> = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|(a, _)| Entry(dur(a), i, 0)))
        .filter(|e| e.0 < min_dur)
        .collect();
    while alive >= 2 {
        let Some(Entry(_, i, v)) = heap.pop() else { break };
        if version[i] != v || nodes[i].is_none() {
            continue;
        }
        let (src, _) = nodes[i].take().expect("live node");
        let lvl = src.level();
        let level_of = |j: usize, nodes: &[Option<(Acc, usize)>]| nodes[j].as_ref().expect("live").0.level();
        let into = match (prev[i], next[i]) {
            (Some(p), Some(q)) => {
                if (level_of(p, &nodes) - lvl).abs() <= (level_of(q, &nodes) - lvl).abs() {
                    p
                } else {
                    q
                }
            }
            (Some(p), None) => p,
            (None, Some(q)) => q,
            (None, None) => unreachable!("at least two live segments"),
        };
        let tgt = &mut nodes[into].as_mut().expect("live").0;
        if into < i {
            tgt.absorb(&src);
        } else {
            let mut t = src;
            t.absorb(tgt);
            t.first = src.first;
            *tgt = t;
        }
        if let Some(p) = prev[i] {
            next[p] = next[i];
        }
        if let Some(q) = next[i] {
            prev[q] = prev[i];
        }
        alive -= 1;
        version[into] += 1;
        let d = dur(tgt);
        if d < min_dur {
            heap.push(Entry(d, into, version[into]));
        }
    }
    nodes.into_iter().flatten().collect()
}

/// Splits a trace into maximal runs of roughly constant current.
pub fn segment_trace(trace: &CurrentTrace, config: &SegmentConfig) -> Result<Vec<PhaseSegment>> {
    config.validate()?;
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let (lo, hi) = trace
        .blocks()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, c)| (lo.min(c), hi.max(c)));
    let band = config.band_ma.unwrap_or(config.hysteresis_frac * (hi - lo));
    let th = config.thresholds.as_deref();
    let same = |a: f64, b: f64, bin: usize| -> bool {
        match th {
            None => (a - b).abs() <= band,
            Some(th) => {
                let lower = if bin == 0 { f64::NEG_INFINITY } else { th[bin - 1] - band };
                let upper = if bin == th.len() { f64::INFINITY } else { th[bin] + band };
                (lower..upper).contains(&b) || bin_of(th, b) == bin
            }
        }
    };

    let mut segs: Vec<(Acc, usize)> = Vec::new();
    for (s, n, c) in trace.blocks() {
        let q = trace.block_charge(s, n, c);
        if let Some((cur, bin)) = segs.last_mut() {
            if same(cur.level(), c, *bin) {
                cur.absorb(&Acc::new(s, n, c, q));
                continue;
            }
        }
        let bin = th.map_or(0, |t| bin_of(t, c));
        segs.push((Acc::new(s, n, c, q), bin));
    }

    let seg_dur = |a: &Acc| trace.hold_end(a.first + a.n - 1) - trace.time(a.first);
    let segs = absorb_short(segs, config.min_segment_duration_s, seg_dur);

    // neighbours that ended up on the same level become one segment
    let mut merged: Vec<(Acc, usize)> = Vec::with_capacity(segs.len());
    for seg in segs {
        merged.push(seg);
        while merged.len() >= 2 {
            let k = merged.len();
            let (a, bin) = &merged[k - 2];
            let b = &merged[k - 1].0;
            let same_level = match th {
                None => (a.level() - b.level()).abs() <= band,
                Some(t) => *bin == bin_of(t, b.level()),
            };
            if !same_level {
                break;
            }
            let (b, _) = merged.pop().expect("two segments");
            merged[k - 2].0.absorb(&b);
        }
    }
    let segs = merged;

    let n_total = trace.len();
    Ok(segs
        .iter()
        .map(|(a, _)| {
            let start = trace.time(a.first);
            let last = a.first + a.n;
            let end = if last < n_total { trace.time(last) } else { trace.time(n_total - 1) };
            let charge = a.charge.value();
            let mean = if a.min == a.max {
                a.min
            } else if end > start {
                charge / (end - start)
            } else {
                a.level()
            };
            PhaseSegment {
                label: None,
                start,
                end,
                mean_current: mean,
                charge,
                first_sample: a.first,
                n_samples: a.n,
            }
        })
        .collect())
}

/// Labels each segment with the phase whose current is nearest its mean.
pub fn label_segments(segments: &mut [PhaseSegment], phases: &[PhaseSpec]) {
    for s in segments {
        s.label = phases
            .iter()
            .filter(|p| p.duration.value() > 0.0)
            .min_by(|a, b| {
                let da = (a.current.value() - s.mean_current).abs();
                let db = (b.current.value() - s.mean_current).abs();
                da.total_cmp(&db)
            })
            .map(|p| p.label);
    }
}

/// Piecewise-constant trace on `like`'s sample times with each segment's
/// samples set to the segment mean.
pub fn reconstruct_from_segments(segments: &[PhaseSegment], like: &CurrentTrace) -> Result<CurrentTrace> {
    if segments.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let covered: usize = segments.iter().map(|s| s.n_samples).sum();
    if covered != like.len() {
        return Err(Error::InvalidSegmentConfig("segments do not cover the trace".into()));
    }
    match &like.storage {
        Storage::Uniform { t0, rate, .. } => {
            let mut runs = Vec::new();
            for s in segments {
                push_run(&mut runs, s.first_sample, s.n_samples, s.mean_current);
            }
            Ok(CurrentTrace {
                storage: Storage::Uniform {
                    t0: *t0,
                    rate: *rate,
                    runs,
                },
                origin: like.origin,
                clamped_negative: 0,
            })
        }
        Storage::Explicit { times, .. } => {
            let mut currents = Vec::with_capacity(times.len());
            for s in segments {
                currents.extend(std::iter::repeat_n(s.mean_current, s.n_samples));
            }
            Ok(CurrentTrace {
                storage: Storage::Explicit {
                    times: times.clone(),
                    currents,
                },
                origin: like.origin,
                clamped_negative: 0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64, seconds: f64, rate: f64) -> CurrentTrace {
        let n = (seconds * rate).round() as usize + 1;
        CurrentTrace::from_uniform(0.0, rate, &vec![c; n], TraceOrigin::Synthesized).unwrap()
    }

    #[test]
    fn constant_rectangle() {
        let t = constant(5.0, 10.0, 1000.0);
        assert!((integrate_trace(&t).unwrap().value() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_integrates_to_zero() {
        let t = CurrentTrace::from_samples(&[(0.0, 5.0)], TraceOrigin::Imported).unwrap();
        assert_eq!(integrate_trace(&t).unwrap().value(), 0.0);
    }

    #[test]
    fn parse_minimal() {
        let t = parse_trace_csv(b"time_s,current_mA\n0.0,5.0\n0.001,5.0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.origin(), TraceOrigin::Imported);
        assert!((integrate_trace(&t).unwrap().value() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_trace_csv(b""), Err(Error::EmptyFile));
        assert_eq!(parse_trace_csv(b"time_s,current_mA\n# nothing\n"), Err(Error::EmptyFile));
        assert_eq!(
            parse_trace_csv(b"time_s,current_mA\n0.0,1\n0.002,1\n0.001,1\n"),
            Err(Error::NonMonotonicTime { line: 4 })
        );
        assert!(matches!(
            parse_trace_csv(b"time_s,current_mA\n0.0,1\n0.1,abc\n"),
            Err(Error::MalformedRow { line: 3, .. })
        ));
        assert!(matches!(
            parse_trace_csv(b"time_s,current_mA\n0.0,1,2\n"),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(parse_trace_csv(b"t,i\n0,1\n"), Err(Error::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn parse_crlf_comments_and_negatives() {
        let t = parse_trace_csv(b"# exported\r\ntime_s,current_mA\r\n0,1.0\r\n# mid\r\n0.5,-0.2\r\n1.0,2.0\r\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.clamped_negative(), 1);
        assert_eq!(t.current(1), 0.0);
        assert!((integrate_trace(&t).unwrap().value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jittered_import_falls_back_to_explicit_gaps() {
        let t = parse_trace_csv(b"time_s,current_mA\n0,1\n1,1\n2,2\n3.5,3\n4,0\n").unwrap();
        assert!(!t.is_uniform());
        let want = 1.0 + 1.0 + 2.0 * 1.5 + 3.0 * 0.5;
        assert!((integrate_trace(&t).unwrap().value() - want).abs() < 1e-12);
    }

    #[test]
    fn significant_digit_formatting() {
        let mut s = String::new();
        fmt_sig(3599.9999, 9, &mut s);
        assert_eq!(s, "3599.9999");
        s.clear();
        fmt_sig(6.3363265306122449, 9, &mut s);
        assert_eq!(s, "6.33632653");
        s.clear();
        fmt_sig(0.005, 9, &mut s);
        assert_eq!(s, "0.005");
        s.clear();
        fmt_sig(1.0, 9, &mut s);
        assert_eq!(s, "1");
    }

    #[test]
    fn flat_trace_is_one_segment() {
        let t = constant(3.0, 2.0, 1000.0);
        let segs = segment_trace(&t, &SegmentConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].mean_current, 3.0);
        assert_eq!(segs[0].n_samples, t.len());
    }

    #[test]
    fn segment_config_rejected() {
        let t = constant(3.0, 2.0, 1000.0);
        let cfg = SegmentConfig {
            min_segment_duration_s: 0.0,
            ..Default::default()
        };
        assert!(matches!(segment_trace(&t, &cfg), Err(Error::InvalidSegmentConfig(_))));
    }

    #[test]
    fn threshold_mode_splits_on_levels() {
        let mut c = vec![1.0; 100];
        c.extend(vec![5.0; 100]);
        c.extend(vec![1.1; 100]);
        let t = CurrentTrace::from_uniform(0.0, 1000.0, &c, TraceOrigin::Imported).unwrap();
        let cfg = SegmentConfig {
            thresholds: Some(vec![3.0]),
            band_ma: Some(0.1),
            ..Default::default()
        };
        let segs = segment_trace(&t, &cfg).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].first_sample, 100);
        assert_eq!(segs[2].first_sample, 200);
    }

    #[test]
    fn short_blip_absorbed() {
        let mut c = vec![1.0; 100];
        c[50] = 9.0;
        c.extend(vec![5.0; 100]);
        let t = CurrentTrace::from_uniform(0.0, 1000.0, &c, TraceOrigin::Imported).unwrap();
        let segs = segment_trace(&t, &SegmentConfig::default()).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].first_sample, 100);
    }

    #[test]
    fn noise_is_reproducible() {
        let t = constant(2.0, 1.0, 1000.0);
        let a = t.with_uniform_noise(0.02, 7).unwrap();
        let b = t.with_uniform_noise(0.02, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().all(|(_, c)| (c / 2.0 - 1.0).abs() <= 0.02 + 1e-15));
        assert_ne!(a, t.with_uniform_noise(0.02, 8).unwrap());
    }

    #[test]
    fn concat_adds_integrals() {
        let a = constant(2.0, 1.0, 1000.0);
        let b = constant(3.0, 2.0, 1000.0);
        let ab = a.concat(&b).unwrap();
        let lhs = integrate_trace(&ab).unwrap().value();
        let rhs = integrate_trace(&a).unwrap().value() + integrate_trace(&b).unwrap().value();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        assert_eq!(ab.len(), a.len() + b.len() - 1);
    }
}
