//! Start–stop coincidence histograms between the two detectors of an HBT
//! setup, and the cleaning chain that turns them into a normalised g²(τ).
//!
//! Channel 0 starts, channel 1 stops, and both signs of `Δt = t₁ − t₀` are
//! kept. Bin `j` covers `[(j−½)w, (j+½)w)` with `w = P/B`; its index is
//! computed in exact integer arithmetic as `⌊(2ΔtB + P)/(2P)⌋`.

use crate::stream::{PhotonRecord, PhotonStream, StreamHeader};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelateError {
    #[error("correlation needs two detector channels")]
    SingleChannelStream,
    #[error("window of {window} pulses exceeds the stream span of {span} pulses")]
    WindowExceedsStream { window: u64, span: u64 },
    #[error("invalid correlation settings: {0}")]
    InvalidConfig(String),
    #[error("delay line already compensated")]
    AlreadyCompensated,
    #[error("no dead-time gap found")]
    GapNotFound,
    #[error("no lateral peak inside the far window")]
    EmptyFarWindow,
    #[error("no between-peak bins to estimate the background")]
    NoBetweenPeakBins,
    #[error("histogram is not normalised")]
    NotNormalized,
    #[error("operation not valid in state {0:?}")]
    WrongState(G2State),
    #[error("horizon {horizon_ps} ps is outside [one period, stream span]")]
    HorizonExceedsStream { horizon_ps: u64 },
}

/// Histogram settings. Times in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Config {
    /// Odd, so each peak centre falls in the middle of a bin.
    pub bins_per_pulse: u32,
    /// Half-width of the histogram in laser periods.
    pub max_delay_pulses: u64,
    /// Extra cable delay on the stop channel.
    pub delay_line_ps: u64,
    /// Router dead time; coincidences closer than this are never recorded.
    pub dead_time_ps: u64,
}

impl Default for G2Config {
    fn default() -> Self {
        G2Config {
            bins_per_pulse: 11,
            max_delay_pulses: 20,
            delay_line_ps: 0,
            dead_time_ps: 0,
        }
    }
}

impl G2Config {
    pub fn validate(&self) -> Result<(), CorrelateError> {
        if self.bins_per_pulse < 3 || self.bins_per_pulse.is_multiple_of(2) {
            return Err(CorrelateError::InvalidConfig(format!(
                "bins per pulse must be odd and at least 3, got {}",
                self.bins_per_pulse
            )));
        }
        if self.max_delay_pulses == 0 {
            return Err(CorrelateError::InvalidConfig(
                "window must span at least one pulse".into(),
            ));
        }
        if self.dead_time_ps > 0 && self.delay_line_ps <= self.dead_time_ps {
            return Err(CorrelateError::InvalidConfig(format!(
                "delay line {} ps must exceed the dead time {} ps",
                self.delay_line_ps, self.dead_time_ps
            )));
        }
        Ok(())
    }

    fn half_bins(&self) -> i64 {
        (self.max_delay_pulses * self.bins_per_pulse as u64) as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G2State {
    Raw,
    Recentered,
    GapRemoved,
    BackgroundSubtracted,
    Normalized,
}

/// Coincidence histogram together with the raw integer counts it came from,
/// so statistical errors stay available after every cleaning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub sync_period_ps: u64,
    pub bins_per_pulse: u32,
    pub bin_width_ps: f64,
    pub dead_time_ps: u64,
    /// Shift applied by delay-line compensation.
    pub offset_ps: f64,
    /// Bin index on the recorded (uncompensated) axis.
    pub bin_index: Vec<i64>,
    /// Bin centres after any compensation.
    pub delays_ps: Vec<f64>,
    pub counts: Vec<f64>,
    pub raw: Vec<u64>,
    pub state: G2State,
    /// Background level per bin, once subtracted.
    pub background: Option<f64>,
    /// Bins where the background formula went negative and were set to 0.
    pub clamped_bins: usize,
    /// Divisor applied by normalisation.
    pub scale: Option<f64>,
    pub far_window_ps: Option<(f64, f64)>,
}

/// Recorded-axis bin of a delay, or `None` outside `|j| ≤ half`.
#[inline]
fn bin_of(dt: i64, bins: i64, period: i64, half: i64) -> Option<i64> {
    let j = (2 * dt * bins + period).div_euclid(2 * period);
    (j.abs() <= half).then_some(j)
}

/// Largest |Δt| that can still land inside the window.
fn reach_ps(period: u64, bins: u64, half: u64) -> u64 {
    (period * (2 * half + 1)).div_ceil(2 * bins)
}

fn count_range(
    records: &[PhotonRecord],
    header: &StreamHeader,
    cfg: &G2Config,
    lo: usize,
    hi: usize,
) -> Vec<u64> {
    let half = cfg.half_bins();
    let bins = cfg.bins_per_pulse as i64;
    let period = header.sync_period_ps as i64;
    let reach = reach_ps(
        header.sync_period_ps,
        cfg.bins_per_pulse as u64,
        half as u64,
    );
    let mut hist = vec![0u64; (2 * half + 1) as usize];
    let mut starts: VecDeque<u64> = VecDeque::new();
    let mut stops: VecDeque<u64> = VecDeque::new();

    if lo < hi {
        // preload everything within reach before the chunk
        let t_lo = records[lo].time_ps(header);
        let mut back = lo;
        while back > 0 && t_lo - records[back - 1].time_ps(header) <= reach {
            back -= 1;
        }
        for r in &records[back..lo] {
            match r.channel {
                0 => starts.push_back(r.time_ps(header)),
                1 => stops.push_back(r.time_ps(header)),
                _ => {}
            }
        }
    }

    for r in &records[lo..hi] {
        let t = r.time_ps(header);
        let (own, other) = match r.channel {
            0 => (&mut starts, &mut stops),
            1 => (&mut stops, &mut starts),
            _ => continue,
        };
        while other.front().is_some_and(|&f| t - f > reach) {
            other.pop_front();
        }
        while own.front().is_some_and(|&f| t - f > reach) {
            own.pop_front();
        }
        for &u in other.iter() {
            let dt = if r.channel == 1 {
                t as i64 - u as i64
            } else {
                u as i64 - t as i64
            };
            if let Some(j) = bin_of(dt, bins, period, half) {
                hist[(j + half) as usize] += 1;
            }
        }
        own.push_back(t);
    }
    hist
}

fn check_inputs(stream: &PhotonStream, cfg: &G2Config) -> Result<(), CorrelateError> {
    cfg.validate()?;
    if stream.header.n_channels < 2 {
        return Err(CorrelateError::SingleChannelStream);
    }
    let span = stream.pulse_span();
    if span > 0 && cfg.max_delay_pulses > span {
        return Err(CorrelateError::WindowExceedsStream {
            window: cfg.max_delay_pulses,
            span,
        });
    }
    Ok(())
}

fn assemble(stream: &PhotonStream, cfg: &G2Config, raw: Vec<u64>) -> G2Histogram {
    let half = cfg.half_bins();
    let w = stream.header.sync_period_ps as f64 / cfg.bins_per_pulse as f64;
    let bin_index: Vec<i64> = (-half..=half).collect();
    G2Histogram {
        sync_period_ps: stream.header.sync_period_ps,
        bins_per_pulse: cfg.bins_per_pulse,
        bin_width_ps: w,
        dead_time_ps: cfg.dead_time_ps,
        offset_ps: 0.0,
        delays_ps: bin_index.iter().map(|&j| j as f64 * w).collect(),
        bin_index,
        counts: raw.iter().map(|&c| c as f64).collect(),
        raw,
        state: G2State::Raw,
        background: None,
        clamped_bins: 0,
        scale: None,
        far_window_ps: None,
    }
}

/// Raw start–stop histogram in a single sequential pass.
pub fn cross_correlate(
    stream: &PhotonStream,
    cfg: &G2Config,
) -> Result<G2Histogram, CorrelateError> {
    check_inputs(stream, cfg)?;
    let raw = count_range(
        &stream.records,
        &stream.header,
        cfg,
        0,
        stream.records.len(),
    );
    Ok(assemble(stream, cfg, raw))
}

/// Same histogram as [`cross_correlate`], counted over `chunks` record ranges
/// in parallel. Each chunk looks back across its start so no pair is lost,
/// and per-chunk counts are summed.
pub fn cross_correlate_parallel(
    stream: &PhotonStream,
    cfg: &G2Config,
    chunks: usize,
) -> Result<G2Histogram, CorrelateError> {
    check_inputs(stream, cfg)?;
    let n = stream.records.len();
    let chunks = chunks.clamp(1, n.max(1));
    let size = n.div_ceil(chunks).max(1);
    let bounds: Vec<(usize, usize)> = (0..chunks)
        .map(|c| (c * size, ((c + 1) * size).min(n)))
        .filter(|(a, b)| a < b)
        .collect();
    let len = (2 * cfg.half_bins() + 1) as usize;
    let raw = bounds
        .par_iter()
        .map(|&(lo, hi)| count_range(&stream.records, &stream.header, cfg, lo, hi))
        .reduce(
            || vec![0u64; len],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(assemble(stream, cfg, raw))
}

/// Shifts the delay axis by `−delay_line` so physical zero delay sits at 0.
pub fn compensate_delay_line(
    hist: &G2Histogram,
    delay_line_ps: u64,
) -> Result<G2Histogram, CorrelateError> {
    if hist.state != G2State::Raw {
        return Err(CorrelateError::AlreadyCompensated);
    }
    let mut out = hist.clone();
    let shift = delay_line_ps as f64;
    for d in &mut out.delays_ps {
        *d -= shift;
    }
    out.offset_ps = shift;
    out.state = G2State::Recentered;
    Ok(out)
}

/// Removes the one-period block of bins around recorded Δt = 0, where the
/// shared dead time suppresses every coincidence.
///
/// The block is accepted as a gap when each bin whose centre lies within the
/// dead time holds less than 5% of the mean bin content of the two flanking
/// periods. Surviving bins keep their delays.
pub fn remove_dead_time_gap(hist: &G2Histogram) -> Result<G2Histogram, CorrelateError> {
    if !matches!(hist.state, G2State::Recentered | G2State::GapRemoved) {
        return Err(CorrelateError::WrongState(hist.state));
    }
    if hist.dead_time_ps == 0 {
        return Err(CorrelateError::GapNotFound);
    }
    let b = hist.bins_per_pulse as i64;
    let h = (b - 1) / 2;
    let w = hist.bin_width_ps;
    let mut inner = Vec::new();
    let mut flank = Vec::new();
    for (i, &j) in hist.bin_index.iter().enumerate() {
        if j.abs() <= h {
            if (j.abs() as f64) * w <= hist.dead_time_ps as f64 {
                inner.push(hist.counts[i]);
            }
        } else if j.abs() <= h + b {
            flank.push(hist.counts[i]);
        }
    }
    if inner.is_empty() || flank.is_empty() {
        return Err(CorrelateError::GapNotFound);
    }
    let flank_mean = flank.iter().sum::<f64>() / flank.len() as f64;
    if flank_mean <= 0.0 || inner.iter().any(|&c| c >= 0.05 * flank_mean) {
        return Err(CorrelateError::GapNotFound);
    }
    let keep: Vec<usize> = (0..hist.bin_index.len())
        .filter(|&i| hist.bin_index[i].abs() > h)
        .collect();
    let mut out = hist.clone();
    out.bin_index = keep.iter().map(|&i| hist.bin_index[i]).collect();
    out.delays_ps = keep.iter().map(|&i| hist.delays_ps[i]).collect();
    out.counts = keep.iter().map(|&i| hist.counts[i]).collect();
    out.raw = keep.iter().map(|&i| hist.raw[i]).collect();
    out.state = G2State::GapRemoved;
    Ok(out)
}

/// A laser-period peak as a set of bin positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakRegion {
    pub order: i64,
    pub centre_delay_ps: f64,
    /// Bin holding the peak centre, if it survived cleaning.
    pub centre: Option<usize>,
    pub bins: Vec<usize>,
}

impl G2Histogram {
    fn period(&self) -> f64 {
        self.sync_period_ps as f64
    }

    /// Groups bins by nearest multiple of the laser period.
    pub fn peak_regions(&self) -> Vec<PeakRegion> {
        let p = self.period();
        let mut regions: Vec<PeakRegion> = Vec::new();
        for (i, &d) in self.delays_ps.iter().enumerate() {
            let k = (d / p).round() as i64;
            if regions.last().map(|r| r.order) != Some(k) {
                regions.push(PeakRegion {
                    order: k,
                    centre_delay_ps: k as f64 * p,
                    centre: None,
                    bins: Vec::new(),
                });
            }
            let reg = regions.last_mut().unwrap();
            reg.bins.push(i);
            if (d - reg.centre_delay_ps).abs() < 0.5 * self.bin_width_ps {
                reg.centre = Some(i);
            }
        }
        regions
    }

    fn complete(&self, r: &PeakRegion) -> bool {
        r.bins.len() == self.bins_per_pulse as usize
    }

    /// Per-period centre-bin values with Poisson errors from the raw counts.
    pub fn peak_heights(&self) -> Vec<PeakHeight> {
        let scale = self.scale.unwrap_or(1.0);
        self.peak_regions()
            .into_iter()
            .filter_map(|r| {
                let c = r.centre?;
                Some(PeakHeight {
                    order: r.order,
                    delay_ps: r.centre_delay_ps,
                    height: self.counts[c],
                    sigma: (self.raw[c] as f64).max(1.0).sqrt() / scale,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakHeight {
    pub order: i64,
    pub delay_ps: f64,
    pub height: f64,
    pub sigma: f64,
}

/// Divides every bin by the mean lateral-peak height found in `far_window`
/// (physical delays, either sign), so far peaks sit at 1.
pub fn normalize(
    hist: &G2Histogram,
    far_window_ps: (f64, f64),
) -> Result<G2Histogram, CorrelateError> {
    if matches!(hist.state, G2State::Raw | G2State::Normalized) {
        return Err(CorrelateError::WrongState(hist.state));
    }
    let (lo, hi) = (
        far_window_ps.0.min(far_window_ps.1),
        far_window_ps.0.max(far_window_ps.1),
    );
    let heights: Vec<f64> = hist
        .peak_regions()
        .iter()
        .filter(|r| r.order != 0 && (lo..=hi).contains(&r.centre_delay_ps.abs()))
        .filter_map(|r| r.centre.map(|c| hist.counts[c]))
        .collect();
    if heights.is_empty() {
        return Err(CorrelateError::EmptyFarWindow);
    }
    let mean = heights.iter().sum::<f64>() / heights.len() as f64;
    if mean <= 0.0 {
        return Err(CorrelateError::EmptyFarWindow);
    }
    let mut out = hist.clone();
    for c in &mut out.counts {
        *c /= mean;
    }
    out.scale = Some(mean);
    out.far_window_ps = Some((lo, hi));
    out.state = G2State::Normalized;
    Ok(out)
}

/// Default between-peak offsets: the outermost bin on either side of a peak.
pub fn default_between_offsets(hist: &G2Histogram) -> Vec<f64> {
    let h = ((hist.bins_per_pulse - 1) / 2) as f64 * hist.bin_width_ps;
    vec![-h, h]
}

/// Background-corrected count `(√M − √M_b)²`, or `None` when `M < M_b`.
pub fn corrected_count(m: f64, m_b: f64) -> Option<f64> {
    if m < m_b {
        return None;
    }
    let d = m.sqrt() - m_b.sqrt();
    Some(d * d)
}

/// How the between-peak level is taken out of each bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMethod {
    /// `M − M_b`. Background uniform in time makes the background×background
    /// and signal×background coincidences equally flat, so the level
    /// measured between peaks is the whole floor.
    #[default]
    Floor,
    /// `(√M − √M_b)²`, which models every coincidence as coming from one
    /// amplitude `s + b` per delay. Exact only when the signal×background
    /// terms follow the peak shape; over-subtracts a flat floor.
    SquareRoot,
}

/// Mean count of the bins at `offsets` from each peak centre.
fn between_peak_level(hist: &G2Histogram, offsets_ps: &[f64]) -> Result<f64, CorrelateError> {
    if !matches!(hist.state, G2State::Recentered | G2State::GapRemoved) {
        return Err(CorrelateError::WrongState(hist.state));
    }
    let w = hist.bin_width_ps;
    let mut samples = Vec::new();
    for r in hist.peak_regions() {
        for &off in offsets_ps {
            let target = r.centre_delay_ps + off;
            if let Some(&i) = r
                .bins
                .iter()
                .find(|&&i| (hist.delays_ps[i] - target).abs() < 0.5 * w)
            {
                samples.push(hist.counts[i]);
            }
        }
    }
    if samples.is_empty() {
        return Err(CorrelateError::NoBetweenPeakBins);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Estimates the background from the bins at `offsets` (relative to each
/// peak centre) and replaces every bin by `M + M_b − 2√(M·M_b)`. Bins with
/// `M < M_b` are set to zero and counted in `clamped_bins`.
pub fn subtract_background(
    hist: &G2Histogram,
    offsets_ps: &[f64],
) -> Result<G2Histogram, CorrelateError> {
    let m_b = between_peak_level(hist, offsets_ps)?;
    let mut out = hist.clone();
    let mut clamped = 0;
    for c in &mut out.counts {
        *c = corrected_count(*c, m_b).unwrap_or_else(|| {
            clamped += 1;
            0.0
        });
    }
    out.background = Some(m_b);
    out.clamped_bins = clamped;
    out.state = G2State::BackgroundSubtracted;
    Ok(out)
}

/// Subtracts the between-peak level from every bin. Bins may go slightly
/// negative; clipping them would bias the peak areas upwards.
pub fn subtract_floor(
    hist: &G2Histogram,
    offsets_ps: &[f64],
) -> Result<G2Histogram, CorrelateError> {
    let m_b = between_peak_level(hist, offsets_ps)?;
    let mut out = hist.clone();
    for c in &mut out.counts {
        *c -= m_b;
    }
    out.background = Some(m_b);
    out.clamped_bins = 0;
    out.state = G2State::BackgroundSubtracted;
    Ok(out)
}

/// Zero-delay figure of merit with its statistical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Zero {
    /// Central peak area over the mean reference lateral-peak area.
    pub value: f64,
    pub sigma: f64,
    /// Central centre-bin height over the mean reference height.
    pub height_ratio: f64,
    pub reference_peaks: usize,
}

impl G2Zero {
    pub fn is_single_photon(&self) -> bool {
        self.value < 0.5
    }
}

/// Area ratio of the central peak to the lateral peaks. Reference peaks are
/// the complete peaks inside the far window when there are any, otherwise all
/// complete lateral peaks.
pub fn g2_zero(hist: &G2Histogram) -> Result<G2Zero, CorrelateError> {
    if hist.state != G2State::Normalized {
        return Err(CorrelateError::NotNormalized);
    }
    let regions = hist.peak_regions();
    let central = regions
        .iter()
        .find(|r| r.order == 0 && hist.complete(r))
        .ok_or(CorrelateError::EmptyFarWindow)?;
    let lateral: Vec<&PeakRegion> = regions
        .iter()
        .filter(|r| r.order != 0 && hist.complete(r))
        .collect();
    let in_far: Vec<&PeakRegion> = match hist.far_window_ps {
        Some((lo, hi)) => lateral
            .iter()
            .copied()
            .filter(|r| (lo..=hi).contains(&r.centre_delay_ps.abs()))
            .collect(),
        None => Vec::new(),
    };
    let reference = if in_far.is_empty() { lateral } else { in_far };
    if reference.is_empty() {
        return Err(CorrelateError::EmptyFarWindow);
    }
    let area = |r: &PeakRegion| r.bins.iter().map(|&i| hist.counts[i]).sum::<f64>();
    let raw_area = |r: &PeakRegion| r.bins.iter().map(|&i| hist.raw[i] as f64).sum::<f64>();
    let n = reference.len() as f64;
    let ref_area = reference.iter().map(|r| area(r)).sum::<f64>() / n;
    let ref_raw = reference.iter().map(|r| raw_area(r)).sum::<f64>() / n;
    let value = area(central) / ref_area;
    let a0 = raw_area(central);
    let sigma = (a0.max(1.0) / (ref_raw * ref_raw) + value * value / (n * ref_raw)).sqrt();
    let centre_height = |r: &PeakRegion| r.centre.map(|c| hist.counts[c]).unwrap_or(0.0);
    let ref_height = reference.iter().map(|r| centre_height(r)).sum::<f64>() / n;
    Ok(G2Zero {
        value,
        sigma,
        height_ratio: centre_height(central) / ref_height,
        reference_peaks: reference.len(),
    })
}

/// Normalised peak heights at long delays, used as the blinking fit target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarG2Series {
    pub peak_delays_ps: Vec<f64>,
    pub peak_heights: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Centre-bin coincidences for every laser period out to `horizon_ps`,
/// combining ±k, normalised by the mean over the outermost fifth of the
/// horizon. Only one counter per period is kept.
///
/// The signed period that contains recorded Δt ≈ 0 (the dead-time gap) is
/// left out of its ±k pair.
pub fn far_peaks(
    stream: &PhotonStream,
    cfg: &G2Config,
    horizon_ps: u64,
) -> Result<FarG2Series, CorrelateError> {
    cfg.validate()?;
    if stream.header.n_channels < 2 {
        return Err(CorrelateError::SingleChannelStream);
    }
    let header = &stream.header;
    let p = header.sync_period_ps;
    let span_ps = stream.pulse_span() * p;
    if horizon_ps < p || horizon_ps > span_ps {
        return Err(CorrelateError::HorizonExceedsStream { horizon_ps });
    }
    let kmax = (horizon_ps / p) as i64;
    let w = p as f64 / cfg.bins_per_pulse as f64;
    let td = cfg.delay_line_ps as i64;
    let pi = p as i64;
    let reach = horizon_ps + cfg.delay_line_ps + p;
    let mut pos = vec![0u64; kmax as usize + 1];
    let mut neg = vec![0u64; kmax as usize + 1];
    let mut starts: VecDeque<u64> = VecDeque::new();
    let mut stops: VecDeque<u64> = VecDeque::new();
    for r in &stream.records {
        let t = r.time_ps(header);
        let (own, other) = match r.channel {
            0 => (&mut starts, &mut stops),
            1 => (&mut stops, &mut starts),
            _ => continue,
        };
        while other.front().is_some_and(|&f| t - f > reach) {
            other.pop_front();
        }
        while own.front().is_some_and(|&f| t - f > reach) {
            own.pop_front();
        }
        for &u in other.iter() {
            let recorded = if r.channel == 1 {
                t as i64 - u as i64
            } else {
                u as i64 - t as i64
            };
            let tau = recorded - td;
            let k = (2 * tau + pi).div_euclid(2 * pi);
            if k == 0 || k.abs() > kmax {
                continue;
            }
            if ((tau - k * pi).abs() as f64) < 0.5 * w {
                if k > 0 {
                    pos[k as usize] += 1;
                } else {
                    neg[(-k) as usize] += 1;
                }
            }
        }
        own.push_back(t);
    }
    // signed period holding the recorded gap
    let gap_k = if cfg.dead_time_ps > 0 {
        Some((-2 * td + pi).div_euclid(2 * pi))
    } else {
        None
    };
    let mut heights = Vec::with_capacity(kmax as usize);
    let mut raw_counts = Vec::with_capacity(kmax as usize);
    for k in 1..=kmax {
        let mut sum = 0u64;
        let mut sides = 0u64;
        if gap_k != Some(k) {
            sum += pos[k as usize];
            sides += 1;
        }
        if gap_k != Some(-k) {
            sum += neg[k as usize];
            sides += 1;
        }
        heights.push(sum as f64 / sides as f64);
        raw_counts.push((sum, sides));
    }
    let tail = (kmax as usize).div_ceil(5).max(1);
    let norm = heights[heights.len() - tail..].iter().sum::<f64>() / tail as f64;
    if norm <= 0.0 {
        return Err(CorrelateError::EmptyFarWindow);
    }
    Ok(FarG2Series {
        peak_delays_ps: (1..=kmax).map(|k| (k * pi) as f64).collect(),
        peak_heights: heights.iter().map(|h| h / norm).collect(),
        sigma: raw_counts
            .iter()
            .map(|&(s, n)| (s as f64).max(1.0).sqrt() / n as f64 / norm)
            .collect(),
    })
}

/// The usual chain: raw → recentred → gap removed (when there is a dead
/// time) → optional background subtraction → normalised.
pub fn clean(
    raw: &G2Histogram,
    cfg: &G2Config,
    far_window_ps: (f64, f64),
    background: Option<BackgroundMethod>,
) -> Result<G2Histogram, CorrelateError> {
    let mut h = compensate_delay_line(raw, cfg.delay_line_ps)?;
    if cfg.dead_time_ps > 0 {
        h = remove_dead_time_gap(&h)?;
    }
    if let Some(method) = background {
        let offsets = default_between_offsets(&h);
        h = match method {
            BackgroundMethod::Floor => subtract_floor(&h, &offsets)?,
            BackgroundMethod::SquareRoot => subtract_background(&h, &offsets)?,
        };
    }
    normalize(&h, far_window_ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::StreamHeader;

    fn stream(recs: Vec<PhotonRecord>, period: u64) -> PhotonStream {
        PhotonStream::new(StreamHeader::new(period, 1, 2), recs).unwrap()
    }

    fn cfg(bins: u32, window: u64) -> G2Config {
        G2Config {
            bins_per_pulse: bins,
            max_delay_pulses: window,
            ..Default::default()
        }
    }

    #[test]
    fn single_pair_lands_at_its_delay() {
        let s = stream(
            vec![PhotonRecord::new(1, 1000, 0), PhotonRecord::new(1, 3000, 1)],
            11_000,
        );
        let h = cross_correlate(&s, &cfg(11, 1)).unwrap();
        let i = h.counts.iter().position(|&c| c == 1.0).unwrap();
        assert_eq!(h.delays_ps[i], 2000.0);
        assert_eq!(h.raw.iter().sum::<u64>(), 1);
    }

    #[test]
    fn negative_delays_and_bin_edges() {
        // w = 1000 ps, so bin 0 is [−500, 500)
        let s = stream(
            vec![PhotonRecord::new(0, 500, 1), PhotonRecord::new(0, 1000, 0)],
            11_000,
        );
        let h = cross_correlate(&s, &cfg(11, 1)).unwrap();
        let i = h.raw.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.bin_index[i], 0);
        let s = stream(
            vec![PhotonRecord::new(0, 499, 1), PhotonRecord::new(0, 1000, 0)],
            11_000,
        );
        let h = cross_correlate(&s, &cfg(11, 1)).unwrap();
        let i = h.raw.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.bin_index[i], -1);
    }

    #[test]
    fn empty_stream_gives_zero_histogram() {
        let s = stream(vec![], 10_000);
        let h = cross_correlate(&s, &cfg(5, 3)).unwrap();
        assert_eq!(h.raw.len(), 31);
        assert!(h.raw.iter().all(|&c| c == 0));
    }

    #[test]
    fn config_checks() {
        assert!(cfg(4, 1).validate().is_err());
        assert!(cfg(1, 1).validate().is_err());
        let c = G2Config {
            delay_line_ps: 10,
            dead_time_ps: 20,
            ..cfg(11, 2)
        };
        assert!(c.validate().is_err());
        let one = PhotonStream::new(StreamHeader::new(1000, 1, 1), vec![]).unwrap();
        assert_eq!(
            cross_correlate(&one, &cfg(3, 1)),
            Err(CorrelateError::SingleChannelStream)
        );
        let s = stream(
            vec![PhotonRecord::new(0, 0, 0), PhotonRecord::new(3, 0, 1)],
            1000,
        );
        assert!(matches!(
            cross_correlate(&s, &cfg(3, 9)),
            Err(CorrelateError::WindowExceedsStream { .. })
        ));
    }

    #[test]
    fn compensation_shifts_axis_only() {
        let s = stream(
            vec![
                PhotonRecord::new(0, 0, 0),
                PhotonRecord::new(3, 0, 1),
                PhotonRecord::new(5, 0, 0),
            ],
            1000,
        );
        let raw = cross_correlate(&s, &cfg(5, 4)).unwrap();
        let same = compensate_delay_line(&raw, 0).unwrap();
        assert_eq!(same.delays_ps, raw.delays_ps);
        let c = compensate_delay_line(&raw, 3000).unwrap();
        assert_eq!(c.raw.iter().sum::<u64>(), raw.raw.iter().sum::<u64>());
        let i = c.raw.iter().position(|&v| v == 1).unwrap();
        assert!(c
            .delays_ps
            .iter()
            .zip(&raw.delays_ps)
            .all(|(a, b)| (b - a - 3000.0).abs() < 1e-9));
        assert_eq!(raw.delays_ps[i] - 3000.0, c.delays_ps[i]);
        assert_eq!(
            compensate_delay_line(&c, 0),
            Err(CorrelateError::AlreadyCompensated)
        );
    }

    #[test]
    fn background_formula() {
        assert_eq!(corrected_count(9.0, 4.0), Some(1.0));
        assert_eq!(corrected_count(9.0, 0.0), Some(9.0));
        assert_eq!(corrected_count(3.0, 4.0), None);
    }

    /// Peaks of height 100 (centre `centre_height`) on a floor of 1, with
    /// the bins `|j| ≤ dead_bins` emptied.
    fn synthetic(
        period: u64,
        bins: u32,
        peaks: i64,
        dead_bins: i64,
        centre_height: f64,
    ) -> G2Histogram {
        let half = peaks * bins as i64;
        let w = period as f64 / bins as f64;
        let raw: Vec<u64> = (-half..=half)
            .map(|j| {
                if j.abs() <= dead_bins {
                    return 0;
                }
                let k = (j as f64 / bins as f64).round() as i64;
                let off = j - k * bins as i64;
                let base = if k == 0 { centre_height } else { 100.0 };
                (base * (-(off.abs() as f64)).exp() + 1.0).round() as u64
            })
            .collect();
        G2Histogram {
            sync_period_ps: period,
            bins_per_pulse: bins,
            bin_width_ps: w,
            dead_time_ps: (dead_bins as f64 * w) as u64 + 1,
            offset_ps: 0.0,
            bin_index: (-half..=half).collect(),
            delays_ps: (-half..=half).map(|j| j as f64 * w).collect(),
            counts: raw.iter().map(|&c| c as f64).collect(),
            raw,
            state: G2State::Raw,
            background: None,
            clamped_bins: 0,
            scale: None,
            far_window_ps: None,
        }
    }

    #[test]
    fn gap_is_excised_once() {
        let raw = synthetic(11_000, 11, 6, 2, 100.0);
        let rec = compensate_delay_line(&raw, 33_000).unwrap();
        let g = remove_dead_time_gap(&rec).unwrap();
        assert_eq!(g.counts.len(), rec.counts.len() - 11);
        assert!(g.bin_index.iter().all(|j| j.abs() > 5));
        // survivors untouched
        for (i, &j) in g.bin_index.iter().enumerate() {
            let k = rec.bin_index.iter().position(|&x| x == j).unwrap();
            assert_eq!(g.counts[i], rec.counts[k]);
            assert_eq!(g.delays_ps[i], rec.delays_ps[k]);
        }
        assert_eq!(remove_dead_time_gap(&g), Err(CorrelateError::GapNotFound));
    }

    #[test]
    fn undepleted_centre_is_not_a_gap() {
        let raw = synthetic(11_000, 11, 6, -1, 100.0);
        let mut rec = compensate_delay_line(&raw, 33_000).unwrap();
        rec.dead_time_ps = 2000;
        assert_eq!(remove_dead_time_gap(&rec), Err(CorrelateError::GapNotFound));
    }

    #[test]
    fn normalisation_puts_far_peaks_at_one_and_is_scale_free() {
        let raw = synthetic(11_000, 11, 8, 0, 20.0);
        let rec = compensate_delay_line(&raw, 0).unwrap();
        let n = normalize(&rec, (50_000.0, 90_000.0)).unwrap();
        for p in n.peak_heights().iter().filter(|p| p.order.abs() >= 5) {
            assert!((p.height - 1.0).abs() < 1e-12);
        }
        let mut scaled = rec.clone();
        for c in &mut scaled.counts {
            *c *= 7.0;
        }
        let n2 = normalize(&scaled, (50_000.0, 90_000.0)).unwrap();
        for (a, b) in n.counts.iter().zip(&n2.counts) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            normalize(&rec, (500_000.0, 900_000.0)),
            Err(CorrelateError::EmptyFarWindow)
        );
    }

    #[test]
    fn g2_zero_of_synthetic_peaks() {
        let raw = synthetic(11_000, 11, 8, -1, 20.0);
        let rec = compensate_delay_line(&raw, 0).unwrap();
        assert_eq!(g2_zero(&rec), Err(CorrelateError::NotNormalized));
        let n = normalize(&rec, (50_000.0, 90_000.0)).unwrap();
        let z = g2_zero(&n).unwrap();
        let area = |c: f64| {
            (-5i64..=5)
                .map(|o| (c * (-(o.abs() as f64)).exp() + 1.0).round())
                .sum::<f64>()
        };
        assert!((z.value - area(20.0) / area(100.0)).abs() < 1e-12);
        assert!(z.is_single_photon());
        assert!((z.height_ratio - 21.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn background_subtraction_removes_floor() {
        let raw = synthetic(11_000, 11, 4, 0, 100.0);
        let rec = compensate_delay_line(&raw, 0).unwrap();
        let b = subtract_background(&rec, &default_between_offsets(&rec)).unwrap();
        let level = b.background.unwrap();
        // outermost bins hold round(100·e⁻⁵ + 1) = 2
        assert_eq!(level, 2.0);
        // only the emptied zero-delay bin falls below the floor
        assert_eq!(b.clamped_bins, 1);
        assert!(b.counts.iter().all(|&c| c >= 0.0));
        assert_eq!(
            subtract_background(&rec, &[]),
            Err(CorrelateError::NoBetweenPeakBins)
        );
    }

    #[test]
    fn floor_subtraction_keeps_peak_ratios() {
        // a flat floor added to every bin comes off exactly, so the central
        // to lateral area ratio is unchanged; the square-root form lowers it
        let clean = compensate_delay_line(&synthetic(11_000, 11, 4, -1, 40.0), 0).unwrap();
        let mut lifted = clean.clone();
        for c in &mut lifted.counts {
            *c += 30.0;
        }
        let offs = default_between_offsets(&clean);
        let area = |h: &G2Histogram| {
            let regions = h.peak_regions();
            let sum = |k: usize| regions[k].bins.iter().map(|&i| h.counts[i]).sum::<f64>();
            let centre = regions
                .iter()
                .position(|r| r.centre_delay_ps == 0.0)
                .unwrap();
            sum(centre) / sum(centre + 1)
        };
        let a = area(&subtract_floor(&clean, &offs).unwrap());
        let b = area(&subtract_floor(&lifted, &offs).unwrap());
        assert!((a - b).abs() < 1e-12, "{a} {b}");
        let c = area(&subtract_background(&lifted, &offs).unwrap());
        assert!(c < a - 0.01);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut recs = Vec::new();
        let mut x: u64 = 12345;
        for pulse in 0..3000u64 {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            if x >> 60 < 6 {
                let micro = ((x >> 20) % 990) as u32;
                recs.push(PhotonRecord::new(pulse, micro, ((x >> 40) & 1) as u8));
            }
        }
        recs.sort();
        let s = stream(recs, 1000);
        let c = cfg(7, 25);
        let a = cross_correlate(&s, &c).unwrap();
        for chunks in [1, 2, 7, 64] {
            assert_eq!(cross_correlate_parallel(&s, &c, chunks).unwrap(), a);
        }
    }

    #[test]
    fn far_peaks_horizon_limits() {
        let s = stream(
            vec![PhotonRecord::new(0, 0, 0), PhotonRecord::new(100, 0, 1)],
            1000,
        );
        let c = cfg(5, 2);
        assert!(matches!(
            far_peaks(&s, &c, 500),
            Err(CorrelateError::HorizonExceedsStream { .. })
        ));
        assert!(matches!(
            far_peaks(&s, &c, 1_000_000),
            Err(CorrelateError::HorizonExceedsStream { .. })
        ));
    }
}
