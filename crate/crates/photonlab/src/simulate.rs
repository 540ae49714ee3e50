//! Seeded Monte-Carlo photon streams: a switching emitter behind a
//! beamsplitter, two detectors with dead time, a delay line and background.
//!
//! Everything is drawn from one ChaCha8 generator seeded from the apparatus
//! seed, in a fixed order, so the same models and seed give a bit-identical
//! stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlate::FarG2Series;
use crate::models::{eval_blinking_g2, telegraph_g2, truncated_norm, BlinkingG2Params, ModelError};
use crate::numeric::integrate;
use crate::stream::{PhotonRecord, PhotonStream, StreamHeader};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("power-law exponent {mu} outside (1, 2)")]
    MuOutOfRange { mu: f64 },
}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::MuOutOfRange { mu } => SimError::MuOutOfRange { mu },
            other => SimError::ConfigInvalid(other.to_string()),
        }
    }
}

/// One emitting state of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterState {
    /// Chance that a pulse creates an exciton.
    pub emission_probability: f64,
    pub lifetime_ns: f64,
    /// Chance that an excited pulse also yields a biexciton photon, emitted
    /// first in the cascade.
    #[serde(default)]
    pub biexciton_probability: f64,
    #[serde(default = "default_bx_lifetime")]
    pub biexciton_lifetime_ns: f64,
}

fn default_bx_lifetime() -> f64 {
    0.5
}

impl EmitterState {
    pub fn new(emission_probability: f64, lifetime_ns: f64) -> Self {
        EmitterState {
            emission_probability,
            lifetime_ns,
            biexciton_probability: 0.0,
            biexciton_lifetime_ns: 0.5,
        }
    }
}

/// Dwell-time distribution of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DurationLaw {
    Exponential {
        mean_s: f64,
    },
    /// Density ∝ τ^(−μ)·exp(−τ/τc) on τ ≥ τmin; `tau_c_s = None` drops the
    /// cutoff (needs μ > 1).
    PowerLaw {
        mu: f64,
        tau_min_s: f64,
        tau_c_s: Option<f64>,
    },
}

impl DurationLaw {
    fn validate(&self) -> Result<(), SimError> {
        match *self {
            DurationLaw::Exponential { mean_s } if mean_s > 0.0 => Ok(()),
            DurationLaw::PowerLaw {
                mu,
                tau_min_s,
                tau_c_s,
            } if mu > 0.0 && tau_min_s > 0.0 && tau_c_s.is_none_or(|c| c > 0.0) => {
                if tau_c_s.is_none() && mu <= 1.0 {
                    Err(SimError::ConfigInvalid(format!(
                        "untruncated power law needs μ > 1, got {mu}"
                    )))
                } else {
                    Ok(())
                }
            }
            other => Err(SimError::ConfigInvalid(format!(
                "bad duration law {other:?}"
            ))),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            DurationLaw::Exponential { mean_s } => Exp::new(1.0 / mean_s).unwrap().sample(rng),
            DurationLaw::PowerLaw {
                mu,
                tau_min_s,
                tau_c_s,
            } => {
                if mu > 1.0 {
                    // Pareto by inverse CDF, thinned by the cutoff factor
                    loop {
                        let u: f64 = 1.0 - rng.random::<f64>();
                        let t = tau_min_s * u.powf(-1.0 / (mu - 1.0));
                        match tau_c_s {
                            None => return t,
                            Some(c) => {
                                if rng.random::<f64>() < (-(t - tau_min_s) / c).exp() {
                                    return t;
                                }
                            }
                        }
                    }
                } else {
                    // shifted exponential proposal, thinned by (τmin/τ)^μ
                    let c = tau_c_s.expect("validated");
                    let exp = Exp::new(1.0 / c).unwrap();
                    loop {
                        let t = tau_min_s + exp.sample(rng);
                        if rng.random::<f64>() < (tau_min_s / t).powf(mu) {
                            return t;
                        }
                    }
                }
            }
        }
    }

    /// P(duration > t).
    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            DurationLaw::Exponential { mean_s } => (-t.max(0.0) / mean_s).exp(),
            DurationLaw::PowerLaw {
                mu,
                tau_min_s,
                tau_c_s,
            } => {
                if t <= tau_min_s {
                    return 1.0;
                }
                match tau_c_s {
                    None => (t / tau_min_s).powf(1.0 - mu),
                    Some(c) => {
                        let ratio = c / tau_min_s;
                        let f = |u: f64| ((1.0 - mu) * u - u.exp() / ratio).exp();
                        let start = (t / tau_min_s).ln();
                        let upper = (60.0 * ratio).ln().max(start) + mu.abs() + 1.0;
                        let tail =
                            integrate(f, start, upper, 0.0, 1e-10).unwrap_or_else(|e| match e {
                                crate::numeric::QuadError::NotConverged { estimate, .. } => {
                                    estimate
                                }
                                crate::numeric::QuadError::NonFinite(v) => v,
                            });
                        (tail / truncated_norm(mu, ratio)).clamp(0.0, 1.0)
                    }
                }
            }
        }
    }

    /// Mean duration; infinite for an untruncated law with μ ≤ 2.
    pub fn mean(&self) -> f64 {
        match *self {
            DurationLaw::Exponential { mean_s } => mean_s,
            DurationLaw::PowerLaw {
                mu,
                tau_min_s,
                tau_c_s,
            } => match tau_c_s {
                None if mu <= 2.0 => f64::INFINITY,
                None => tau_min_s * (mu - 1.0) / (mu - 2.0),
                Some(c) => {
                    let ratio = c / tau_min_s;
                    tau_min_s * truncated_norm(mu - 1.0, ratio) / truncated_norm(mu, ratio)
                }
            },
        }
    }

    fn exponent(&self) -> Option<f64> {
        match *self {
            DurationLaw::PowerLaw { mu, .. } => Some(mu),
            DurationLaw::Exponential { .. } => None,
        }
    }
}

/// The bright state dwells by `on`, every other state by `off`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Switching {
    pub on: DurationLaw,
    pub off: DurationLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeCoupling {
    /// Each state decays with its own lifetime.
    TypeA,
    /// All states share the first state's lifetime.
    TypeB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel {
    /// State 0 is the bright state; switching cycles through the list.
    pub states: Vec<EmitterState>,
    #[serde(default)]
    pub switching: Option<Switching>,
    #[serde(default = "default_coupling")]
    pub coupling: LifetimeCoupling,
}

fn default_coupling() -> LifetimeCoupling {
    LifetimeCoupling::TypeA
}

impl EmitterModel {
    /// A single always-on state.
    pub fn steady(emission_probability: f64, lifetime_ns: f64) -> Self {
        EmitterModel {
            states: vec![EmitterState::new(emission_probability, lifetime_ns)],
            switching: None,
            coupling: LifetimeCoupling::TypeA,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.states.is_empty() {
            return Err(SimError::ConfigInvalid(
                "emitter needs at least one state".into(),
            ));
        }
        for (i, s) in self.states.iter().enumerate() {
            let p_ok = |p: f64| (0.0..=1.0).contains(&p);
            if !p_ok(s.emission_probability) || !p_ok(s.biexciton_probability) {
                return Err(SimError::ConfigInvalid(format!(
                    "state {i}: probabilities must lie in [0, 1]"
                )));
            }
            if !(s.lifetime_ns > 0.0 && s.biexciton_lifetime_ns > 0.0) {
                return Err(SimError::ConfigInvalid(format!(
                    "state {i}: lifetimes must be positive"
                )));
            }
        }
        if let Some(sw) = &self.switching {
            sw.on.validate()?;
            sw.off.validate()?;
            if self.states.len() < 2 {
                return Err(SimError::ConfigInvalid(
                    "switching needs at least two states".into(),
                ));
            }
        }
        Ok(())
    }

    fn lifetime_ns(&self, state: usize) -> f64 {
        match self.coupling {
            LifetimeCoupling::TypeA => self.states[state].lifetime_ns,
            LifetimeCoupling::TypeB => self.states[0].lifetime_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApparatusModel {
    pub sync_period_ps: u64,
    pub resolution_ps: u64,
    /// Fraction of photons sent to channel 0.
    #[serde(default = "half")]
    pub split: f64,
    #[serde(default)]
    pub dead_time_ps: u64,
    /// One dead time for both detectors (a routed single timer) rather than
    /// one per detector.
    #[serde(default = "yes")]
    pub shared_dead_time: bool,
    /// Extra cable delay on channel 1.
    #[serde(default)]
    pub delay_line_ps: u64,
    /// Uniform dark/background counts per second, per channel.
    #[serde(default)]
    pub background_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default = "one")]
    pub detection_efficiency: f64,
    /// Gaussian timing jitter (standard deviation); off at zero.
    #[serde(default)]
    pub jitter_ps: f64,
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ApparatusModel {
    pub fn new(sync_period_ps: u64, resolution_ps: u64, duration_s: f64, seed: u64) -> Self {
        ApparatusModel {
            sync_period_ps,
            resolution_ps,
            split: 0.5,
            dead_time_ps: 0,
            shared_dead_time: true,
            delay_line_ps: 0,
            background_rate_hz: 0.0,
            duration_s,
            detection_efficiency: 1.0,
            jitter_ps: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.header()
            .validate()
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.split) || !(0.0..=1.0).contains(&self.detection_efficiency) {
            return Err(SimError::ConfigInvalid(
                "split and detection efficiency must lie in [0, 1]".into(),
            ));
        }
        if !(self.background_rate_hz >= 0.0 && self.jitter_ps >= 0.0) {
            return Err(SimError::ConfigInvalid(
                "background and jitter must be non-negative".into(),
            ));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::ConfigInvalid(
                "duration must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(self.sync_period_ps, self.resolution_ps, 2)
    }

    pub fn n_pulses(&self) -> u64 {
        (self.duration_s * 1e12 / self.sync_period_ps as f64).floor() as u64
    }
}

/// Emitter and apparatus together, as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub emitter: EmitterModel,
    pub apparatus: ApparatusModel,
}

/// Detected arrival (ps, channel) before dead time.
type Arrival = (u64, u8);

struct Detector<'a> {
    app: &'a ApparatusModel,
    jitter: Option<Normal<f64>>,
    out: Vec<Arrival>,
}

impl<'a> Detector<'a> {
    fn new(app: &'a ApparatusModel) -> Self {
        let jitter = (app.jitter_ps > 0.0).then(|| Normal::new(0.0, app.jitter_ps).unwrap());
        Detector {
            app,
            jitter,
            out: Vec::new(),
        }
    }

    /// Routes one photon that reached the beamsplitter at `t_ps`.
    fn photon<R: Rng>(&mut self, rng: &mut R, t_ps: f64) {
        if rng.random::<f64>() >= self.app.detection_efficiency {
            return;
        }
        let ch = if rng.random::<f64>() < self.app.split {
            0u8
        } else {
            1u8
        };
        let mut t = t_ps;
        if ch == 1 {
            t += self.app.delay_line_ps as f64;
        }
        if let Some(j) = &self.jitter {
            t += j.sample(rng);
        }
        self.out.push((t.max(0.0) as u64, ch));
    }

    fn background<R: Rng>(&mut self, rng: &mut R, span_ps: u64) {
        if self.app.background_rate_hz <= 0.0 || span_ps == 0 {
            return;
        }
        let gap = Exp::new(self.app.background_rate_hz * 1e-12).unwrap();
        for ch in 0..2u8 {
            let mut t = 0.0;
            loop {
                t += gap.sample(rng);
                if t >= span_ps as f64 {
                    break;
                }
                self.out.push((t as u64, ch));
            }
        }
    }

    /// Quantises, sorts, applies dead time and builds the stream.
    fn finish(self) -> PhotonStream {
        let app = self.app;
        let header = app.header();
        let (p, res) = (app.sync_period_ps, app.resolution_ps);
        let mut events: Vec<(u64, u64, u8)> = self
            .out
            .into_iter()
            .map(|(t, ch)| {
                let pulse = t / p;
                let micro = (t % p) / res;
                (pulse, micro, ch)
            })
            .collect();
        events.sort_unstable();
        let mut last: [Option<u64>; 2] = [None, None];
        let mut records = Vec::with_capacity(events.len());
        for (pulse, micro, ch) in events {
            let t = pulse * p + micro * res;
            let slot = if app.shared_dead_time { 0 } else { ch as usize };
            if let Some(prev) = last[slot] {
                if t - prev < app.dead_time_ps {
                    continue;
                }
            }
            last[slot] = Some(t);
            records.push(PhotonRecord::new(pulse, micro as u32, ch));
        }
        PhotonStream::new(header, records).expect("simulator records are valid by construction")
    }
}

/// Pulsed emission from a (possibly blinking) emitter.
pub fn simulate_stream(
    emitter: &EmitterModel,
    app: &ApparatusModel,
) -> Result<PhotonStream, SimError> {
    emitter.validate()?;
    app.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(app.seed);
    let n_pulses = app.n_pulses();
    let period_s = app.sync_period_ps as f64 * 1e-12;
    let decays: Vec<Exp<f64>> = (0..emitter.states.len())
        .map(|i| Exp::new(1e-3 / emitter.lifetime_ns(i)).unwrap())
        .collect();
    let bx_decays: Vec<Exp<f64>> = emitter
        .states
        .iter()
        .map(|s| Exp::new(1e-3 / s.biexciton_lifetime_ns).unwrap())
        .collect();

    let mut det = Detector::new(app);
    let mut state = 0usize;
    let mut next_switch = match &emitter.switching {
        Some(sw) => sw.on.sample(&mut rng),
        None => f64::INFINITY,
    };
    for k in 0..n_pulses {
        let t_pulse = k as f64 * period_s;
        while t_pulse >= next_switch {
            state = (state + 1) % emitter.states.len();
            let sw = emitter.switching.as_ref().unwrap();
            let law = if state == 0 { &sw.on } else { &sw.off };
            next_switch += law.sample(&mut rng);
        }
        let s = &emitter.states[state];
        if s.emission_probability == 0.0 || rng.random::<f64>() >= s.emission_probability {
            continue;
        }
        let base = (k * app.sync_period_ps) as f64;
        if s.biexciton_probability > 0.0 && rng.random::<f64>() < s.biexciton_probability {
            let t_bx = bx_decays[state].sample(&mut rng);
            det.photon(&mut rng, base + t_bx);
            let t_x = t_bx + decays[state].sample(&mut rng);
            det.photon(&mut rng, base + t_x);
        } else {
            let t_x = decays[state].sample(&mut rng);
            det.photon(&mut rng, base + t_x);
        }
    }
    det.background(&mut rng, n_pulses * app.sync_period_ps);
    Ok(det.finish())
}

/// Continuous-wave Poisson light at `rate_hz` photons per second reaching
/// the beamsplitter, over the apparatus duration.
pub fn poisson_stream(rate_hz: f64, app: &ApparatusModel) -> Result<PhotonStream, SimError> {
    if !(rate_hz >= 0.0 && rate_hz.is_finite()) {
        return Err(SimError::ConfigInvalid(format!(
            "rate must be non-negative, got {rate_hz}"
        )));
    }
    app.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(app.seed);
    let span = app.n_pulses() * app.sync_period_ps;
    let mut det = Detector::new(app);
    if rate_hz > 0.0 {
        let gap = Exp::new(rate_hz * 1e-12).unwrap();
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= span as f64 {
                break;
            }
            det.photon(&mut rng, t);
        }
    }
    det.background(&mut rng, span);
    Ok(det.finish())
}

/// Expected statistics of a blinking emitter, for comparison with measured
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BlinkingReference {
    /// Expected far-delay peak heights; `sigma` is zero.
    pub far: FarG2Series,
    /// Envelope parameters, present when a power-law exponent drives it.
    pub envelope: Option<BlinkingG2Params>,
    pub on: Option<DurationLaw>,
    pub off: Option<DurationLaw>,
}

impl BlinkingReference {
    pub fn on_survival(&self, t: f64) -> f64 {
        self.on.map_or(1.0, |l| l.survival(t))
    }

    pub fn off_survival(&self, t: f64) -> f64 {
        self.off.map_or(1.0, |l| l.survival(t))
    }
}

/// Reference far-peak curve at `delays_ps`. Without switching it is flat at
/// one. Exponential on and off periods give the exact two-state telegraph
/// correlation. A power-law exponent gives the `B·(1 − A·τ^{1−μ})` envelope
/// with `A = τmin^μ/(⟨τ_on⟩·Γ(2−μ))`, `μ` the larger exponent and `B` the
/// short-delay telegraph value; this branch needs 1 < μ < 2.
pub fn blinking_reference_curves(
    emitter: &EmitterModel,
    app: &ApparatusModel,
    delays_ps: &[f64],
) -> Result<BlinkingReference, SimError> {
    emitter.validate()?;
    app.validate()?;
    let Some(sw) = emitter.switching else {
        return Ok(BlinkingReference {
            far: FarG2Series {
                peak_delays_ps: delays_ps.to_vec(),
                peak_heights: vec![1.0; delays_ps.len()],
                sigma: vec![0.0; delays_ps.len()],
            },
            envelope: None,
            on: None,
            off: None,
        });
    };
    // detected rate of a state, photons per pulse
    let rate = |s: &EmitterState| {
        s.emission_probability * (1.0 + s.biexciton_probability) * app.detection_efficiency
    };
    let i_on = rate(&emitter.states[0]);
    // the dark side: time-weighted mean of the remaining states
    let others = &emitter.states[1..];
    let i_off = others.iter().map(rate).sum::<f64>() / others.len() as f64;
    let t_on = sw.on.mean();
    let t_off = sw.off.mean() * others.len() as f64;

    let mu = match (sw.on.exponent(), sw.off.exponent()) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(f64::MIN).max(b.unwrap_or(f64::MIN))),
    };
    let (heights, envelope) = match mu {
        None => {
            let h = delays_ps
                .iter()
                .map(|&d| telegraph_g2(i_on, i_off, t_on, t_off, d * 1e-12))
                .collect();
            (h, None)
        }
        Some(mu) => {
            if !(mu > 1.0 && mu < 2.0) {
                return Err(SimError::MuOutOfRange { mu });
            }
            let tau_min = match (sw.on, sw.off) {
                (
                    _,
                    DurationLaw::PowerLaw {
                        mu: m, tau_min_s, ..
                    },
                ) if m == mu => tau_min_s,
                (DurationLaw::PowerLaw { tau_min_s, .. }, _) => tau_min_s,
                _ => unreachable!("μ comes from a power law"),
            };
            if !(t_on.is_finite() && t_off.is_finite()) {
                return Err(SimError::ConfigInvalid(
                    "reference needs finite mean dwell times (set a cutoff)".into(),
                ));
            }
            let coefficient = tau_min.powf(mu) / (t_on * statrs::function::gamma::gamma(2.0 - mu));
            let bunching = telegraph_g2(i_on, i_off, t_on, t_off, 0.0);
            let p = BlinkingG2Params {
                bunching,
                coefficient,
                mu,
                mean_on_s: Some(t_on),
            };
            (
                delays_ps
                    .iter()
                    .map(|&d| eval_blinking_g2(&p, d * 1e-12))
                    .collect(),
                Some(p),
            )
        }
    };
    Ok(BlinkingReference {
        far: FarG2Series {
            peak_delays_ps: delays_ps.to_vec(),
            peak_heights: heights,
            sigma: vec![0.0; delays_ps.len()],
        },
        envelope,
        on: Some(sw.on),
        off: Some(sw.off),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::{cross_correlate, G2Config};

    fn app(duration_s: f64, seed: u64) -> ApparatusModel {
        ApparatusModel::new(100_000, 16, duration_s, seed)
    }

    #[test]
    fn nothing_in_nothing_out() {
        let s = simulate_stream(&EmitterModel::steady(0.0, 5.0), &app(1e-3, 1)).unwrap();
        assert!(s.is_empty());
        assert!(poisson_stream(0.0, &app(1e-3, 1)).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut a = app(2e-3, 42);
        a.dead_time_ps = 25_000;
        a.delay_line_ps = 250_000;
        a.background_rate_hz = 1e4;
        let e = EmitterModel::steady(0.3, 10.0);
        let s1 = crate::stream::encode(&simulate_stream(&e, &a).unwrap());
        let s2 = crate::stream::encode(&simulate_stream(&e, &a).unwrap());
        assert_eq!(s1, s2);
        a.seed = 43;
        assert_ne!(s1, crate::stream::encode(&simulate_stream(&e, &a).unwrap()));
    }

    #[test]
    fn dead_time_respected() {
        for shared in [true, false] {
            let mut a = app(5e-3, 7);
            a.dead_time_ps = 40_000;
            a.shared_dead_time = shared;
            a.delay_line_ps = 130_000;
            let s = poisson_stream(2e7, &a).unwrap();
            let h = s.header;
            for ch in 0..2 {
                let times: Vec<u64> = s
                    .records
                    .iter()
                    .filter(|r| r.channel == ch)
                    .map(|r| r.time_ps(&h))
                    .collect();
                assert!(times.windows(2).all(|w| w[1] - w[0] >= a.dead_time_ps));
            }
            if shared {
                let all: Vec<u64> = s.records.iter().map(|r| r.time_ps(&h)).collect();
                assert!(all.windows(2).all(|w| w[1] - w[0] >= a.dead_time_ps));
            }
        }
    }

    #[test]
    fn delay_line_carries_into_later_pulses() {
        let mut a = app(1e-3, 3);
        a.split = 0.0;
        a.delay_line_ps = 250_000;
        let s = simulate_stream(&EmitterModel::steady(1.0, 1.0), &a).unwrap();
        // every photon lands two or three periods after its pulse, 50 ns in
        let first = s.records[0];
        assert!(first.pulse_index >= 2);
        let micro_ps = first.micro_time as u64 * a.resolution_ps;
        assert!((50_000..60_000).contains(&micro_ps));
    }

    #[test]
    fn split_fraction_follows_x() {
        let mut a = app(0.02, 9);
        a.split = 0.3;
        let s = poisson_stream(1e6, &a).unwrap();
        let x = s.count_channel(0) as f64 / s.len() as f64;
        let sd = (0.3 * 0.7 / s.len() as f64).sqrt();
        assert!((x - 0.3).abs() < 4.0 * sd, "{x}");
    }

    #[test]
    fn single_photons_antibunch() {
        let mut a = app(0.05, 11);
        a.detection_efficiency = 0.05;
        a.delay_line_ps = 300_000;
        let s = simulate_stream(&EmitterModel::steady(1.0, 5.0), &a).unwrap();
        let h = cross_correlate(
            &s,
            &G2Config {
                bins_per_pulse: 11,
                max_delay_pulses: 6,
                delay_line_ps: 300_000,
                dead_time_ps: 0,
            },
        )
        .unwrap();
        // with the delay line the empty zero-delay peak sits at +3 periods
        let at = |d: f64| {
            h.delays_ps
                .iter()
                .zip(&h.raw)
                .filter(|(x, _)| (**x - d).abs() < 5_000.0)
                .map(|(_, c)| *c)
                .sum::<u64>()
        };
        assert_eq!(at(300_000.0), 0);
        assert!(at(200_000.0) > 20 && at(400_000.0) > 20);
    }

    #[test]
    fn power_law_durations_follow_survival() {
        let law = DurationLaw::PowerLaw {
            mu: 1.6,
            tau_min_s: 1e-3,
            tau_c_s: Some(1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let samples: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        for t in [2e-3, 1e-2, 1e-1, 0.5] {
            let emp = samples.iter().filter(|&&s| s > t).count() as f64 / n as f64;
            let exp = law.survival(t);
            assert!(
                (emp - exp).abs() < 4.0 * (exp * (1.0 - exp) / n as f64).sqrt() + 1e-4,
                "{t} {emp} {exp}"
            );
        }
        let heavy = DurationLaw::PowerLaw {
            mu: 0.6,
            tau_min_s: 1e-3,
            tau_c_s: Some(0.05),
        };
        let s: Vec<f64> = (0..n).map(|_| heavy.sample(&mut rng)).collect();
        let mean = s.iter().sum::<f64>() / n as f64;
        assert!(
            (mean / heavy.mean() - 1.0).abs() < 0.03,
            "{mean} {}",
            heavy.mean()
        );
    }

    #[test]
    fn reference_curves() {
        let a = app(1.0, 1);
        let flat =
            blinking_reference_curves(&EmitterModel::steady(0.5, 5.0), &a, &[1e6, 1e8]).unwrap();
        assert_eq!(flat.far.peak_heights, vec![1.0, 1.0]);
        let mut e = EmitterModel {
            states: vec![EmitterState::new(0.2, 10.0), EmitterState::new(0.02, 3.0)],
            switching: Some(Switching {
                on: DurationLaw::Exponential { mean_s: 0.01 },
                off: DurationLaw::PowerLaw {
                    mu: 1.5,
                    tau_min_s: 1e-3,
                    tau_c_s: Some(1.0),
                },
            }),
            coupling: LifetimeCoupling::TypeA,
        };
        let r = blinking_reference_curves(&e, &a, &[1e9, 1e10]).unwrap();
        let p = r.envelope.unwrap();
        assert_eq!(r.far.peak_heights[1], eval_blinking_g2(&p, 1e-2));
        if let Some(sw) = e.switching.as_mut() {
            sw.off = DurationLaw::PowerLaw {
                mu: 2.5,
                tau_min_s: 1e-3,
                tau_c_s: Some(1.0),
            };
        }
        assert!(matches!(
            blinking_reference_curves(&e, &a, &[1e9]),
            Err(SimError::MuOutOfRange { .. })
        ));
    }
}
