//! Intensity time traces with per-bin mean photon delay, and everything
//! derived from them: occurrence histograms, threshold post-selection,
//! on/off durations, decay histograms and FLID maps.

use crate::stream::{PhotonRecord, PhotonStream};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("bin duration {bin_ps} ps is shorter than the sync period {period_ps} ps")]
    BinTooSmall { bin_ps: u64, period_ps: u64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("stream is empty")]
    EmptyStream,
    #[error("trace does not belong to this stream")]
    MismatchedTrace,
    #[error("need at least {0} bins")]
    TooFewBins(usize),
    #[error("no bin carries lifetime information")]
    NoLifetimeData,
    #[error("distribution has zero spread along one axis")]
    DegenerateDistribution,
}

/// Which detector(s) contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChannelSelect {
    #[default]
    All,
    Only(u8),
}

impl ChannelSelect {
    #[inline]
    pub fn accepts(&self, r: &PhotonRecord) -> bool {
        match self {
            ChannelSelect::All => true,
            ChannelSelect::Only(c) => r.channel == *c,
        }
    }
}

/// Counts per fixed-length bin starting at absolute time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub bin_ps: u64,
    pub sync_period_ps: u64,
    pub resolution_ps: u64,
    pub channel: ChannelSelect,
    pub counts: Vec<u64>,
    /// Sum of micro delays (ps) of each bin's photons.
    pub delay_sum_ps: Vec<u64>,
}

impl TimeTrace {
    pub fn bin_duration_s(&self) -> f64 {
        self.bin_ps as f64 * 1e-12
    }

    /// Mean micro delay of the bin's photons; `None` for an empty bin.
    pub fn mean_delay_ps(&self, bin: usize) -> Option<f64> {
        (self.counts[bin] > 0).then(|| self.delay_sum_ps[bin] as f64 / self.counts[bin] as f64)
    }

    pub fn mean_delays_ps(&self) -> Vec<Option<f64>> {
        (0..self.counts.len())
            .map(|i| self.mean_delay_ps(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn bin_of(&self, r: &PhotonRecord) -> usize {
        let t = r.pulse_index * self.sync_period_ps + r.micro_time as u64 * self.resolution_ps;
        (t / self.bin_ps) as usize
    }
}

/// Bins the selected photons by absolute arrival time.
pub fn bin_trace(
    stream: &PhotonStream,
    bin_ps: u64,
    channel: ChannelSelect,
) -> Result<TimeTrace, TraceError> {
    let h = &stream.header;
    if bin_ps < h.sync_period_ps {
        return Err(TraceError::BinTooSmall {
            bin_ps,
            period_ps: h.sync_period_ps,
        });
    }
    let mut trace = TimeTrace {
        bin_ps,
        sync_period_ps: h.sync_period_ps,
        resolution_ps: h.resolution_ps,
        channel,
        counts: Vec::new(),
        delay_sum_ps: Vec::new(),
    };
    let n = stream
        .records
        .last()
        .map(|r| trace.bin_of(r) + 1)
        .unwrap_or(0);
    trace.counts = vec![0; n];
    trace.delay_sum_ps = vec![0; n];
    for r in stream.records.iter().filter(|r| channel.accepts(r)) {
        let b = trace.bin_of(r);
        trace.counts[b] += 1;
        trace.delay_sum_ps[b] += r.micro_time as u64 * h.resolution_ps;
    }
    Ok(trace)
}

/// Occurrences of each intensity value; only occupied intensity bins appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub width: u64,
    /// Lower edge of each occupied intensity bin.
    pub intensity_bins: Vec<u64>,
    pub occurrences: Vec<u64>,
}

impl FrequencyHistogram {
    pub fn bin_of(&self, count: u64) -> Option<usize> {
        self.intensity_bins
            .binary_search(&(count / self.width * self.width))
            .ok()
    }
}

/// Histogram of trace counts with unit-width intensity bins.
pub fn frequency_histogram(trace: &TimeTrace) -> Result<FrequencyHistogram, TraceError> {
    frequency_histogram_with_width(trace, 1)
}

pub fn frequency_histogram_with_width(
    trace: &TimeTrace,
    width: u64,
) -> Result<FrequencyHistogram, TraceError> {
    if trace.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let width = width.max(1);
    let mut map: BTreeMap<u64, u64> = BTreeMap::new();
    for &c in &trace.counts {
        *map.entry(c / width * width).or_default() += 1;
    }
    Ok(FrequencyHistogram {
        width,
        intensity_bins: map.keys().copied().collect(),
        occurrences: map.values().copied().collect(),
    })
}

fn check_trace(stream: &PhotonStream, trace: &TimeTrace) -> Result<(), TraceError> {
    let h = &stream.header;
    if h.sync_period_ps != trace.sync_period_ps || h.resolution_ps != trace.resolution_ps {
        return Err(TraceError::MismatchedTrace);
    }
    if let Some(last) = stream.records.last() {
        if trace.bin_of(last) >= trace.len() {
            return Err(TraceError::MismatchedTrace);
        }
    }
    let selected = stream
        .records
        .iter()
        .filter(|r| trace.channel.accepts(r))
        .count() as u64;
    if selected != trace.counts.iter().sum::<u64>() {
        return Err(TraceError::MismatchedTrace);
    }
    Ok(())
}

/// Photons in bins with `count ≥ threshold` ("on") and the rest, both in
/// stream order. Every channel is split by the trace bin it falls in.
pub fn threshold_split(
    stream: &PhotonStream,
    trace: &TimeTrace,
    threshold: u64,
) -> Result<(PhotonStream, PhotonStream), TraceError> {
    check_trace(stream, trace)?;
    let (on, off): (Vec<PhotonRecord>, Vec<PhotonRecord>) = stream
        .records
        .iter()
        .partition(|r| trace.counts[trace.bin_of(r)] >= threshold);
    Ok((stream.with_records(on), stream.with_records(off)))
}

/// Photons falling in bins whose count reaches `threshold`.
pub fn threshold_select(
    stream: &PhotonStream,
    trace: &TimeTrace,
    threshold: u64,
) -> Result<PhotonStream, TraceError> {
    threshold_split(stream, trace, threshold).map(|(on, _)| on)
}

/// Lengths of maximal on (≥ threshold) and off runs, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSet {
    pub on_durations: Vec<f64>,
    pub off_durations: Vec<f64>,
    pub threshold: u64,
}

pub fn on_off_durations(trace: &TimeTrace, threshold: u64) -> Result<DurationSet, TraceError> {
    if trace.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let dt = trace.bin_duration_s();
    let mut set = DurationSet {
        on_durations: Vec::new(),
        off_durations: Vec::new(),
        threshold,
    };
    let mut state = trace.counts[0] >= threshold;
    let mut run = 0u64;
    for &c in &trace.counts {
        let on = c >= threshold;
        if on != state {
            let list = if state {
                &mut set.on_durations
            } else {
                &mut set.off_durations
            };
            list.push(run as f64 * dt);
            state = on;
            run = 0;
        }
        run += 1;
    }
    let list = if state {
        &mut set.on_durations
    } else {
        &mut set.off_durations
    };
    list.push(run as f64 * dt);
    Ok(set)
}

/// Micro-time histogram over one sync period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayHistogram {
    pub bin_width_ps: f64,
    pub counts: Vec<u64>,
}

impl DecayHistogram {
    pub fn bin_centres_ps(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| (i as f64 + 0.5) * self.bin_width_ps)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn decay_bin(r: &PhotonRecord, period: u64, res: u64, n: usize) -> usize {
    ((r.micro_time as u64 * res * n as u64 / period) as usize).min(n - 1)
}

pub fn decay_histogram(
    stream: &PhotonStream,
    n_bins: usize,
    channel: ChannelSelect,
) -> Result<DecayHistogram, TraceError> {
    if n_bins < 2 {
        return Err(TraceError::TooFewBins(2));
    }
    if stream.is_empty() {
        return Err(TraceError::EmptyStream);
    }
    let (p, res) = (stream.header.sync_period_ps, stream.header.resolution_ps);
    let mut counts = vec![0u64; n_bins];
    for r in stream.records.iter().filter(|r| channel.accepts(r)) {
        counts[decay_bin(r, p, res, n_bins)] += 1;
    }
    Ok(DecayHistogram {
        bin_width_ps: p as f64 / n_bins as f64,
        counts,
    })
}

/// Occurrences over (bin intensity, bin mean delay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlidMatrix {
    /// `intensity_bins + 1` edges in counts.
    pub intensity_edges: Vec<f64>,
    /// `lifetime_bins + 1` edges in picoseconds.
    pub lifetime_edges: Vec<f64>,
    /// `occurrences[i][l]`: intensity bin i, lifetime bin l.
    pub occurrences: Vec<Vec<u64>>,
}

fn centres(edges: &[f64]) -> Vec<f64> {
    edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect()
}

fn locate(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    let f = (v - edges[0]) / (edges[n] - edges[0]) * n as f64;
    (f.floor().max(0.0) as usize).min(n - 1)
}

impl FlidMatrix {
    pub fn intensity_centres(&self) -> Vec<f64> {
        centres(&self.intensity_edges)
    }

    pub fn lifetime_centres(&self) -> Vec<f64> {
        centres(&self.lifetime_edges)
    }

    pub fn intensity_marginal(&self) -> Vec<u64> {
        self.occurrences
            .iter()
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn lifetime_marginal(&self) -> Vec<u64> {
        let n = self.lifetime_edges.len() - 1;
        (0..n)
            .map(|l| self.occurrences.iter().map(|row| row[l]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.intensity_marginal().iter().sum()
    }
}

/// Uniform grid spanning the observed ranges; empty trace bins are skipped.
pub fn flid(
    trace: &TimeTrace,
    intensity_bins: usize,
    lifetime_bins: usize,
) -> Result<FlidMatrix, TraceError> {
    let points: Vec<(f64, f64)> = (0..trace.len())
        .filter_map(|i| trace.mean_delay_ps(i).map(|d| (trace.counts[i] as f64, d)))
        .collect();
    if points.is_empty() {
        return Err(TraceError::NoLifetimeData);
    }
    let (ni, nl) = (intensity_bins.max(1), lifetime_bins.max(1));
    let range = |f: fn(&(f64, f64)) -> f64| {
        points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            })
    };
    let (ilo, ihi) = range(|p| p.0);
    let (llo, lhi) = range(|p| p.1);
    let intensity_edges = edges(ilo, ihi, ni);
    let lifetime_edges = edges(llo, lhi, nl);
    let mut occ = vec![vec![0u64; nl]; ni];
    for (c, d) in points {
        occ[locate(&intensity_edges, c)][locate(&lifetime_edges, d)] += 1;
    }
    Ok(FlidMatrix {
        intensity_edges,
        lifetime_edges,
        occurrences: occ,
    })
}

/// Occurrence-weighted Pearson correlation between intensity and lifetime
/// bin centres.
pub fn flid_correlation(m: &FlidMatrix) -> Result<f64, TraceError> {
    let (ic, lc) = (m.intensity_centres(), m.lifetime_centres());
    let (mut w, mut si, mut sl) = (0.0, 0.0, 0.0);
    for (i, row) in m.occurrences.iter().enumerate() {
        for (l, &n) in row.iter().enumerate() {
            let n = n as f64;
            w += n;
            si += n * ic[i];
            sl += n * lc[l];
        }
    }
    if w == 0.0 {
        return Err(TraceError::NoLifetimeData);
    }
    let (mi, ml) = (si / w, sl / w);
    let (mut cov, mut vi, mut vl) = (0.0, 0.0, 0.0);
    for (i, row) in m.occurrences.iter().enumerate() {
        for (l, &n) in row.iter().enumerate() {
            let n = n as f64;
            let (di, dl) = (ic[i] - mi, lc[l] - ml);
            cov += n * di * dl;
            vi += n * di * di;
            vl += n * dl * dl;
        }
    }
    let scale = |m: f64| 1e-12 * (m * m).max(1e-300) * w;
    if vi <= scale(mi) || vl <= scale(ml) {
        return Err(TraceError::DegenerateDistribution);
    }
    Ok((cov / (vi * vl).sqrt()).clamp(-1.0, 1.0))
}

/// One row of the lifetime-by-intensity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityDecay {
    pub intensity_lo: u64,
    pub decay: DecayHistogram,
}

/// Decay histogram of the photons in trace bins belonging to each occupied
/// intensity bin of `freq`.
pub fn lifetime_by_intensity(
    stream: &PhotonStream,
    trace: &TimeTrace,
    freq: &FrequencyHistogram,
    n_decay_bins: usize,
) -> Result<Vec<IntensityDecay>, TraceError> {
    check_trace(stream, trace)?;
    if n_decay_bins < 2 {
        return Err(TraceError::TooFewBins(2));
    }
    let (p, res) = (stream.header.sync_period_ps, stream.header.resolution_ps);
    let mut rows: Vec<IntensityDecay> = freq
        .intensity_bins
        .iter()
        .map(|&lo| IntensityDecay {
            intensity_lo: lo,
            decay: DecayHistogram {
                bin_width_ps: p as f64 / n_decay_bins as f64,
                counts: vec![0; n_decay_bins],
            },
        })
        .collect();
    for r in stream.records.iter().filter(|r| trace.channel.accepts(r)) {
        let c = trace.counts[trace.bin_of(r)];
        let row = freq.bin_of(c).ok_or(TraceError::MismatchedTrace)?;
        rows[row].decay.counts[decay_bin(r, p, res, n_decay_bins)] += 1;
    }
    Ok(rows)
}
