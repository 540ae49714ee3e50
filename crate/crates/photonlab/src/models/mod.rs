//! Model functions and fits: multi-exponential decays, saturation curves,
//! (truncated) power-law dwell times and the blinking g² envelope.

pub mod lm;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::correlate::FarG2Series;
use crate::numeric::{integrate, nelder_mead, solve_linear};
use crate::trace::DecayHistogram;
use lm::{minimize, LmOptions, LmResult, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("fit did not converge after {iterations} iterations (gradient cosine {gradient:.3e})")]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("excitation range {lo}..{hi} does not span 0.2–2 × I_sat = {i_sat}")]
    RangeTooNarrow { lo: f64, hi: f64, i_sat: f64 },
    #[error("exponent {mu} outside (1, 2); mean on-time undefined")]
    MuOutOfRange { mu: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Largest residual/Jacobian-column cosine accepted as converged.
pub const GRADIENT_TOL: f64 = 1e-6;
/// Lifetimes closer than this ratio are reported as indistinguishable.
pub const DEGENERATE_RATIO: f64 = 1.2;

fn lm_options() -> LmOptions {
    LmOptions {
        max_iter: 1000,
        gtol: GRADIENT_TOL,
        ftol: 1e-15,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// Two fitted lifetimes within [`DEGENERATE_RATIO`] of each other.
    DegenerateLifetimes {
        first: usize,
        second: usize,
        ratio: f64,
    },
    /// μ outside (1, 2): the mean on-time cannot be derived.
    MeanOnUndefined { mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<P> {
    pub params: P,
    /// Weighted residual norm for least-squares fits, mean negative
    /// log-likelihood per sample for the power-law fit.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<FitWarning>,
}

fn finish<P>(
    res: &LmResult,
    params: P,
    warnings: Vec<FitWarning>,
) -> Result<FitReport<P>, ModelError> {
    if !res.converged {
        return Err(ModelError::NonConvergence {
            iterations: res.iterations,
            gradient: res.grad_norm,
        });
    }
    Ok(FitReport {
        params,
        residual_norm: res.residual_norm,
        iterations: res.iterations,
        converged: true,
        warnings,
    })
}

// ---------------------------------------------------------------- multi-exp

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpParams {
    pub amplitudes: Vec<f64>,
    pub lifetimes_ns: Vec<f64>,
    pub t0_ns: f64,
    pub background: f64,
}

impl MultiExpParams {
    pub fn single(amplitude: f64, lifetime_ns: f64) -> Self {
        MultiExpParams {
            amplitudes: vec![amplitude],
            lifetimes_ns: vec![lifetime_ns],
            t0_ns: 0.0,
            background: 0.0,
        }
    }
}

/// `Σ A_i·exp(−(t−t0)/τ_i) + B`. Before `t0` only the background remains.
pub fn eval_multi_exp(p: &MultiExpParams, t_ns: f64) -> f64 {
    let s = t_ns - p.t0_ns;
    if s < 0.0 {
        return p.background;
    }
    p.amplitudes
        .iter()
        .zip(&p.lifetimes_ns)
        .map(|(a, tau)| a * (-s / tau).exp())
        .sum::<f64>()
        + p.background
}

/// Partial derivatives with respect to `(A_1..A_n, τ_1..τ_n, B)`.
pub fn multi_exp_gradient(p: &MultiExpParams, t_ns: f64) -> Vec<f64> {
    let n = p.amplitudes.len();
    let s = (t_ns - p.t0_ns).max(0.0);
    let mut g = vec![0.0; 2 * n + 1];
    for i in 0..n {
        let tau = p.lifetimes_ns[i];
        let e = (-s / tau).exp();
        g[i] = e;
        g[n + i] = p.amplitudes[i] * e * s / (tau * tau);
    }
    g[2 * n] = 1.0;
    g
}

struct MultiExpProblem {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    n: usize,
    t0: f64,
}

impl MultiExpProblem {
    fn params(&self, x: &[f64]) -> MultiExpParams {
        MultiExpParams {
            amplitudes: x[..self.n].to_vec(),
            lifetimes_ns: x[self.n..2 * self.n].to_vec(),
            t0_ns: self.t0,
            background: x[2 * self.n],
        }
    }
}

impl Problem for MultiExpProblem {
    fn n_params(&self) -> usize {
        2 * self.n + 1
    }
    fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = self.params(x);
        let mut r = Vec::with_capacity(self.t.len());
        let mut jac = Vec::with_capacity(self.t.len());
        for ((&t, &y), &w) in self.t.iter().zip(&self.y).zip(&self.w) {
            r.push(w * (eval_multi_exp(&p, t) - y));
            jac.push(
                multi_exp_gradient(&p, t)
                    .into_iter()
                    .map(|g| w * g)
                    .collect(),
            );
        }
        (r, jac)
    }
    fn valid(&self, x: &[f64]) -> bool {
        x[self.n..2 * self.n].iter().all(|&t| t > 0.0)
    }
    fn lower_bounds(&self) -> Vec<Option<f64>> {
        let mut lb = vec![Some(0.0); self.n];
        lb.extend(vec![None; self.n]);
        lb.push(Some(0.0));
        lb
    }
}

/// Slope-based lifetime estimate from `ln(y − B)` over `[lo, hi)`.
fn log_linear_lifetime(t: &[f64], y: &[f64], background: f64, lo: usize, hi: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (lo..hi)
        .filter(|&i| y[i] - background > 1.0)
        .map(|i| (t[i], (y[i] - background).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -1.0 / slope)
}

/// Weighted linear least squares for amplitudes and background at fixed
/// lifetimes; negative amplitudes are clipped to a small positive seed.
fn linear_amplitudes(pr: &MultiExpProblem, taus: &[f64]) -> Vec<f64> {
    let m = taus.len() + 1;
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for ((&t, &y), &w) in pr.t.iter().zip(&pr.y).zip(&pr.w) {
        let s = t - pr.t0;
        let mut row: Vec<f64> = taus.iter().map(|tau| w * (-s / tau).exp()).collect();
        row.push(w);
        for a in 0..m {
            atb[a] += row[a] * w * y;
            for b in 0..m {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    let peak = pr.y.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-3 * peak.max(1.0);
    match solve_linear(ata, atb) {
        Some(mut v) => {
            for a in v.iter_mut().take(taus.len()) {
                *a = a.max(floor);
            }
            v[taus.len()] = v[taus.len()].max(0.0);
            v
        }
        None => {
            let mut v = vec![peak / taus.len() as f64; taus.len()];
            v.push(0.0);
            v
        }
    }
}

/// Fits `n_components` exponentials plus a flat background to the decay
/// from its maximum onward. The time origin is pinned to the peak bin.
pub fn fit_multi_exp(
    hist: &DecayHistogram,
    n_components: usize,
) -> Result<FitReport<MultiExpParams>, ModelError> {
    if !(1..=3).contains(&n_components) {
        return Err(ModelError::InvalidInput(format!(
            "{n_components} components; 1 to 3 supported"
        )));
    }
    let need = 10 * (2 * n_components + 2);
    let peak_bin = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| ModelError::InsufficientData("empty histogram".into()))?;
    let tail: Vec<u64> = hist.counts[peak_bin..].to_vec();
    let nonempty = tail.iter().filter(|&&c| c > 0).count();
    if nonempty < need {
        return Err(ModelError::InsufficientData(format!(
            "{nonempty} nonempty bins after the peak, need {need}"
        )));
    }
    let fifth = tail.len().div_ceil(5);
    let floor = tail[tail.len() - fifth..].iter().sum::<u64>() as f64 / fifth as f64;
    let peak = tail[0] as f64;
    if peak - floor < 5.0 * (floor + 1.0).sqrt() {
        return Err(ModelError::InsufficientData(
            "no decay above the background".into(),
        ));
    }
    let width_ns = hist.bin_width_ps * 1e-3;
    let t: Vec<f64> = (peak_bin..hist.counts.len())
        .map(|i| (i as f64 + 0.5) * width_ns)
        .collect();
    let y: Vec<f64> = tail.iter().map(|&c| c as f64).collect();
    let w: Vec<f64> = y.iter().map(|&v| 1.0 / v.max(1.0).sqrt()).collect();
    let pr = MultiExpProblem {
        t0: t[0],
        t,
        y,
        w,
        n: n_components,
    };

    // lifetime seeds from log-linear slopes over consecutive segments
    let len = pr.t.len();
    let seg = |k: usize, parts: usize| (k * len / parts, (k + 1) * len / parts);
    let span = pr.t[len - 1] - pr.t[0];
    let mut taus = Vec::with_capacity(n_components);
    for k in 0..n_components {
        let parts = if n_components == 1 { 1 } else { 3 };
        let idx = match (n_components, k) {
            (2, 1) => 2,
            _ => k,
        };
        let (lo, hi) = seg(idx, parts);
        let fallback = span / 10.0 * 3f64.powi(k as i32);
        let tau = log_linear_lifetime(&pr.t, &pr.y, floor, lo, hi).unwrap_or(fallback);
        taus.push(tau.clamp(width_ns, 10.0 * span));
    }
    // keep seeds apart so the components do not start degenerate
    taus.sort_by(f64::total_cmp);
    for i in 1..taus.len() {
        if taus[i] < 2.0 * taus[i - 1] {
            taus[i] = 2.0 * taus[i - 1];
        }
    }
    let lin = linear_amplitudes(&pr, &taus);
    let mut start = lin[..n_components].to_vec();
    start.extend_from_slice(&taus);
    start.push(lin[n_components]);

    let res = minimize(&pr, &start, lm_options());
    let mut params = pr.params(&res.params);
    // order components by lifetime
    let mut order: Vec<usize> = (0..n_components).collect();
    order.sort_by(|&a, &b| params.lifetimes_ns[a].total_cmp(&params.lifetimes_ns[b]));
    params.amplitudes = order.iter().map(|&i| params.amplitudes[i]).collect();
    params.lifetimes_ns = order.iter().map(|&i| params.lifetimes_ns[i]).collect();
    let mut warnings = Vec::new();
    for i in 0..n_components {
        for j in i + 1..n_components {
            let ratio = params.lifetimes_ns[j] / params.lifetimes_ns[i];
            if ratio <= DEGENERATE_RATIO {
                warnings.push(FitWarning::DegenerateLifetimes {
                    first: i,
                    second: j,
                    ratio,
                });
            }
        }
    }
    finish(&res, params, warnings)
}

// --------------------------------------------------------------- saturation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    pub p_sat: f64,
    pub i_sat: f64,
    /// Linear coefficient, emitted units per excitation unit.
    pub linear: f64,
}

/// `P_sat·(1 − exp(−I/I_sat)) + B·I`.
pub fn eval_saturation(p: &SaturationParams, intensity: f64) -> f64 {
    p.p_sat * (1.0 - (-intensity / p.i_sat).exp()) + p.linear * intensity
}

/// Partial derivatives with respect to `(P_sat, I_sat, B)`.
pub fn saturation_gradient(p: &SaturationParams, intensity: f64) -> [f64; 3] {
    let e = (-intensity / p.i_sat).exp();
    [
        1.0 - e,
        -p.p_sat * e * intensity / (p.i_sat * p.i_sat),
        intensity,
    ]
}

struct SaturationProblem<'a> {
    points: &'a [(f64, f64)],
    scale: f64,
}

impl SaturationProblem<'_> {
    fn weight(&self, y: f64) -> f64 {
        1.0 / y.abs().max(1e-9 * self.scale)
    }
}

impl Problem for SaturationProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = SaturationParams {
            p_sat: x[0],
            i_sat: x[1],
            linear: x[2],
        };
        let mut r = Vec::with_capacity(self.points.len());
        let mut jac = Vec::with_capacity(self.points.len());
        for &(i, y) in self.points {
            let w = self.weight(y);
            r.push(w * (eval_saturation(&p, i) - y));
            jac.push(saturation_gradient(&p, i).iter().map(|g| w * g).collect());
        }
        (r, jac)
    }
    fn valid(&self, x: &[f64]) -> bool {
        x[0] > 0.0 && x[1] > 0.0
    }
    fn lower_bounds(&self) -> Vec<Option<f64>> {
        vec![None, None, Some(0.0)]
    }
}

/// Fits the saturation curve with relative (constant-percentage) weights.
pub fn fit_saturation(points: &[(f64, f64)]) -> Result<FitReport<SaturationParams>, ModelError> {
    if points.len() < 6 {
        return Err(ModelError::InsufficientData(format!(
            "{} points, need 6",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(i, y)| !(i.is_finite() && y.is_finite()) || i <= 0.0)
    {
        return Err(ModelError::InvalidInput(
            "intensities must be positive and finite".into(),
        ));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let pr = SaturationProblem { points, scale };

    // seed: scan I_sat on a log grid, solve P_sat and B linearly
    let mut best = (f64::INFINITY, [scale, hi, 0.0]);
    for k in 0..=80 {
        let i_sat = (lo / 10.0) * (100.0 * hi / lo).powf(k as f64 / 80.0);
        let mut ata = [[0.0; 2]; 2];
        let mut atb = [0.0; 2];
        for &(i, y) in points {
            let w = pr.weight(y);
            let row = [w * (1.0 - (-i / i_sat).exp()), w * i];
            for a in 0..2 {
                atb[a] += row[a] * w * y;
                for b in 0..2 {
                    ata[a][b] += row[a] * row[b];
                }
            }
        }
        let Some(v) = solve_linear(ata.iter().map(|r| r.to_vec()).collect(), atb.to_vec()) else {
            continue;
        };
        let cand = [v[0].max(1e-6 * scale), i_sat, v[1].max(0.0)];
        let (r, _) = pr.eval(&cand);
        let sse: f64 = r.iter().map(|v| v * v).sum();
        if sse < best.0 {
            best = (sse, cand);
        }
    }
    let res = minimize(&pr, &best.1, lm_options());
    let params = SaturationParams {
        p_sat: res.params[0],
        i_sat: res.params[1],
        linear: res.params[2],
    };
    if lo > 0.2 * params.i_sat || hi < 2.0 * params.i_sat {
        return Err(ModelError::RangeTooNarrow {
            lo,
            hi,
            i_sat: params.i_sat,
        });
    }
    finish(&res, params, Vec::new())
}

// ---------------------------------------------------------------- power law

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub mu: f64,
    /// Exponential cutoff; infinite for a pure power law.
    pub tau_c_s: f64,
    pub tau_min_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerLawRegime {
    /// μ < 1: neither mean nor variance converge without a cutoff.
    Heavy,
    /// 1 < μ < 2: finite normalisation, divergent mean.
    DivergentMean,
    /// μ > 2: mean converges.
    ConvergentMean,
}

impl PowerLawParams {
    pub fn regime(&self) -> PowerLawRegime {
        if self.mu < 1.0 {
            PowerLawRegime::Heavy
        } else if self.mu <= 2.0 {
            PowerLawRegime::DivergentMean
        } else {
            PowerLawRegime::ConvergentMean
        }
    }
}

/// `∫_{τmin}^∞ τ^{−μ} e^{−τ/τc} dτ / τmin^{1−μ}`, integrated in `u = ln(τ/τmin)`.
pub(crate) fn truncated_norm(mu: f64, ratio: f64) -> f64 {
    // integrand e^{(1−μ)u − ratio⁻¹·e^u}; beyond e^u = 60·ratio it is negligible
    let upper = (60.0 * ratio).ln().max(1.0) + (mu.abs() + 1.0);
    let f = |u: f64| ((1.0 - mu) * u - u.exp() / ratio).exp();
    integrate(f, 0.0, upper, 0.0, 1e-12).unwrap_or_else(|e| match e {
        crate::numeric::QuadError::NotConverged { estimate, .. } => estimate,
        crate::numeric::QuadError::NonFinite(v) => v,
    })
}

/// Probability density of the (truncated) power law with support `τ ≥ τmin`.
pub fn power_law_pdf(p: &PowerLawParams, tau_s: f64) -> f64 {
    if tau_s < p.tau_min_s {
        return 0.0;
    }
    let x = tau_s / p.tau_min_s;
    if p.tau_c_s.is_infinite() {
        return (p.mu - 1.0) / p.tau_min_s * x.powf(-p.mu);
    }
    let ratio = p.tau_c_s / p.tau_min_s;
    x.powf(-p.mu) * (-tau_s / p.tau_c_s).exp() / (p.tau_min_s * truncated_norm(p.mu, ratio))
}

/// Maximum-likelihood exponent, and cutoff when `truncated`, for dwell times
/// `τ ≥ τmin` where τmin is the smallest sample.
pub fn fit_power_law(
    durations_s: &[f64],
    truncated: bool,
) -> Result<FitReport<PowerLawParams>, ModelError> {
    if durations_s.len() < 100 {
        return Err(ModelError::InsufficientData(format!(
            "{} durations, need 100",
            durations_s.len()
        )));
    }
    if durations_s.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(ModelError::InvalidInput(
            "durations must be positive and finite".into(),
        ));
    }
    let tau_min = durations_s.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = durations_s.len() as f64;
    let logs: Vec<f64> = durations_s.iter().map(|d| (d / tau_min).ln()).collect();
    let sum_log: f64 = logs.iter().sum();
    if sum_log <= 0.0 {
        return Err(ModelError::InsufficientData(
            "all durations are equal".into(),
        ));
    }
    let mu_free = 1.0 + n / sum_log;
    if !truncated {
        let params = PowerLawParams {
            mu: mu_free,
            tau_c_s: f64::INFINITY,
            tau_min_s: tau_min,
        };
        let nll = -((mu_free - 1.0).ln()) + mu_free * sum_log / n;
        return Ok(FitReport {
            params,
            residual_norm: nll,
            iterations: 1,
            converged: true,
            warnings: Vec::new(),
        });
    }
    // durations in units of τmin
    let mean_x: f64 = durations_s.iter().map(|d| d / tau_min).sum::<f64>() / n;
    let mean_log = sum_log / n;
    let nll = |v: &[f64]| -> f64 {
        let (mu, log_ratio) = (v[0], v[1]);
        if mu <= 0.0 || !(0.0..700.0).contains(&log_ratio) {
            return f64::INFINITY;
        }
        let ratio = log_ratio.exp();
        let z = truncated_norm(mu, ratio);
        mu * mean_log + mean_x / ratio + z.ln()
    };
    let max_log = logs.iter().cloned().fold(0.0, f64::max);
    let start = [mu_free.max(0.2), max_log.max(1.0)];
    let (best, value, iterations) = nelder_mead(nll, &start, &[0.2, 1.0], 1e-12, 4000);
    let params = PowerLawParams {
        mu: best[0],
        tau_c_s: tau_min * best[1].exp(),
        tau_min_s: tau_min,
    };
    Ok(FitReport {
        params,
        residual_norm: value,
        iterations,
        converged: iterations < 4000,
        warnings: Vec::new(),
    })
}

// ------------------------------------------------------------- blinking g²

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlinkingG2Params {
    pub bunching: f64,
    /// Coefficient of `τ^{1−μ}`, in s^(μ−1).
    pub coefficient: f64,
    pub mu: f64,
    /// Mean bright-period duration, when 1 < μ < 2.
    pub mean_on_s: Option<f64>,
}

/// `B·(1 − A·τ^{1−μ})`.
pub fn eval_blinking_g2(p: &BlinkingG2Params, tau_s: f64) -> f64 {
    p.bunching * (1.0 - p.coefficient * tau_s.powf(1.0 - p.mu))
}

/// Partial derivatives with respect to `(B, A, μ)`.
pub fn blinking_g2_gradient(p: &BlinkingG2Params, tau_s: f64) -> [f64; 3] {
    let pw = tau_s.powf(1.0 - p.mu);
    [
        1.0 - p.coefficient * pw,
        -p.bunching * pw,
        p.bunching * p.coefficient * pw * tau_s.ln(),
    ]
}

/// `⟨τ_b⟩ = τmin^μ / (A·Γ(2−μ))`, defined for 1 < μ < 2.
pub fn mean_on_time(mu: f64, coefficient: f64, tau_min_s: f64) -> Result<f64, ModelError> {
    if !(mu > 1.0 && mu < 2.0 - 1e-9) {
        return Err(ModelError::MuOutOfRange { mu });
    }
    Ok(tau_min_s.powf(mu) / (coefficient * gamma(2.0 - mu)))
}

struct BlinkProblem {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Problem for BlinkProblem {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = BlinkingG2Params {
            bunching: x[0],
            coefficient: x[1],
            mu: x[2],
            mean_on_s: None,
        };
        let mut r = Vec::with_capacity(self.t.len());
        let mut jac = Vec::with_capacity(self.t.len());
        for ((&t, &y), &w) in self.t.iter().zip(&self.y).zip(&self.w) {
            r.push(w * (eval_blinking_g2(&p, t) - y));
            jac.push(blinking_g2_gradient(&p, t).iter().map(|g| w * g).collect());
        }
        (r, jac)
    }
    fn valid(&self, x: &[f64]) -> bool {
        x[2] > 0.0 && x[2] < 10.0
    }
}

/// Fits the blinking envelope to far-delay peak heights. The series should
/// already be restricted to delays below the exponential cutoff.
pub fn fit_blinking_g2(
    series: &FarG2Series,
    tau_min_s: f64,
) -> Result<FitReport<BlinkingG2Params>, ModelError> {
    let n = series.peak_heights.len();
    if n < 4 || series.peak_delays_ps.len() != n || series.sigma.len() != n {
        return Err(ModelError::InsufficientData(format!("{n} peaks, need 4")));
    }
    let t: Vec<f64> = series.peak_delays_ps.iter().map(|d| d * 1e-12).collect();
    if t.iter().any(|&v| v <= 0.0) {
        return Err(ModelError::InvalidInput("delays must be positive".into()));
    }
    let w: Vec<f64> = series
        .sigma
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { 1.0 })
        .collect();
    let pr = BlinkProblem {
        t,
        y: series.peak_heights.clone(),
        w,
    };

    // seed: grid over μ with B and B·A solved linearly
    let mut best = (f64::INFINITY, [1.0, 0.0, 1.5]);
    for k in 1..60 {
        let mu = 0.05 * k as f64;
        if (mu - 1.0).abs() < 1e-9 {
            continue;
        }
        let mut ata = [[0.0; 2]; 2];
        let mut atb = [0.0; 2];
        for ((&t, &y), &w) in pr.t.iter().zip(&pr.y).zip(&pr.w) {
            let row = [w, -w * t.powf(1.0 - mu)];
            for a in 0..2 {
                atb[a] += row[a] * w * y;
                for b in 0..2 {
                    ata[a][b] += row[a] * row[b];
                }
            }
        }
        let Some(v) = solve_linear(ata.iter().map(|r| r.to_vec()).collect(), atb.to_vec()) else {
            continue;
        };
        if v[0] == 0.0 {
            continue;
        }
        let cand = [v[0], v[1] / v[0], mu];
        let (r, _) = pr.eval(&cand);
        let sse: f64 = r.iter().map(|v| v * v).sum();
        if sse < best.0 {
            best = (sse, cand);
        }
    }
    let res = minimize(&pr, &best.1, lm_options());
    let (b, a, mu) = (res.params[0], res.params[1], res.params[2]);
    let mut warnings = Vec::new();
    let mean_on_s = match mean_on_time(mu, a, tau_min_s) {
        Ok(v) => Some(v),
        Err(_) => {
            warnings.push(FitWarning::MeanOnUndefined { mu });
            None
        }
    };
    finish(
        &res,
        BlinkingG2Params {
            bunching: b,
            coefficient: a,
            mu,
            mean_on_s,
        },
        warnings,
    )
}

/// Two-state telegraph reference: g² for a source switching between
/// intensities `i_a`, `i_b` with exponential dwell times `t_a`, `t_b`.
pub fn telegraph_g2(i_a: f64, i_b: f64, t_a: f64, t_b: f64, tau: f64) -> f64 {
    let fa = t_a / (t_a + t_b);
    let fb = 1.0 - fa;
    let mean = fa * i_a + fb * i_b;
    1.0 + fa * fb * (i_a - i_b).powi(2) / (mean * mean)
        * (-tau.abs() * (1.0 / t_a + 1.0 / t_b)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_from(p: &MultiExpParams, width_ps: f64, bins: usize, lead: usize) -> DecayHistogram {
        // noiseless counts, rounded to the nearest integer
        let counts = (0..bins)
            .map(|i| {
                if i < lead {
                    return 0;
                }
                let t = ((i - lead) as f64 + 0.5) * width_ps * 1e-3 + p.t0_ns;
                eval_multi_exp(p, t).round() as u64
            })
            .collect();
        DecayHistogram {
            bin_width_ps: width_ps,
            counts,
        }
    }

    #[test]
    fn eval_trivial_points() {
        let p = MultiExpParams {
            background: 0.25,
            ..MultiExpParams::single(1.0, 1.0)
        };
        assert_eq!(eval_multi_exp(&p, 0.0), 1.25);
        let p = MultiExpParams::single(2.0, 3.0);
        assert!((eval_multi_exp(&p, 3.0) - 2.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn multi_exp_is_additive() {
        let p = MultiExpParams {
            amplitudes: vec![3.0, 2.0, 1.0],
            lifetimes_ns: vec![1.4, 6.1, 14.7],
            t0_ns: 0.5,
            background: 0.0,
        };
        for &t in &[0.5, 1.0, 7.3, 40.0] {
            let parts: f64 = (0..3)
                .map(|i| {
                    let q = MultiExpParams {
                        t0_ns: 0.5,
                        ..MultiExpParams::single(p.amplitudes[i], p.lifetimes_ns[i])
                    };
                    eval_multi_exp(&q, t)
                })
                .sum();
            assert!((eval_multi_exp(&p, t) - parts).abs() < 1e-13);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = MultiExpParams {
            amplitudes: vec![3.0, 2.0],
            lifetimes_ns: vec![1.4, 6.1],
            t0_ns: 0.0,
            background: 0.3,
        };
        let t = 2.7;
        let g = multi_exp_gradient(&p, t);
        let mut flat: Vec<f64> = [
            p.amplitudes.clone(),
            p.lifetimes_ns.clone(),
            vec![p.background],
        ]
        .concat();
        for k in 0..flat.len() {
            let h = 1e-6 * flat[k].abs().max(1.0);
            flat[k] += h;
            let up = eval_multi_exp(&unflat(&flat, 2), t);
            flat[k] -= 2.0 * h;
            let dn = eval_multi_exp(&unflat(&flat, 2), t);
            flat[k] += h;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3),
                "k={k} {fd} {}",
                g[k]
            );
        }
        let s = SaturationParams {
            p_sat: 2.0,
            i_sat: 0.7,
            linear: 0.1,
        };
        let g = saturation_gradient(&s, 1.3);
        let h = 1e-6;
        let fd_isat = (eval_saturation(
            &SaturationParams {
                i_sat: 0.7 + h,
                ..s
            },
            1.3,
        ) - eval_saturation(
            &SaturationParams {
                i_sat: 0.7 - h,
                ..s
            },
            1.3,
        )) / (2.0 * h);
        assert!((fd_isat - g[1]).abs() < 1e-6 * g[1].abs());
        let b = BlinkingG2Params {
            bunching: 1.8,
            coefficient: 1e-3,
            mu: 1.5,
            mean_on_s: None,
        };
        let g = blinking_g2_gradient(&b, 1e-5);
        let fd_mu = (eval_blinking_g2(&BlinkingG2Params { mu: 1.5 + h, ..b }, 1e-5)
            - eval_blinking_g2(&BlinkingG2Params { mu: 1.5 - h, ..b }, 1e-5))
            / (2.0 * h);
        assert!((fd_mu - g[2]).abs() < 1e-6 * g[2].abs());
    }

    fn unflat(x: &[f64], n: usize) -> MultiExpParams {
        MultiExpParams {
            amplitudes: x[..n].to_vec(),
            lifetimes_ns: x[n..2 * n].to_vec(),
            t0_ns: 0.0,
            background: x[2 * n],
        }
    }

    #[test]
    fn noiseless_single_exponential() {
        let truth = MultiExpParams {
            background: 0.0,
            ..MultiExpParams::single(1e6, 5.0)
        };
        let hist = hist_from(&truth, 100.0, 1000, 5);
        let fit = fit_multi_exp(&hist, 1).unwrap();
        assert!((fit.params.lifetimes_ns[0] / 5.0 - 1.0).abs() < 1e-3);
        assert!(fit.converged);
    }

    #[test]
    fn flat_histogram_is_rejected() {
        let hist = DecayHistogram {
            bin_width_ps: 100.0,
            counts: vec![50; 500],
        };
        assert!(matches!(
            fit_multi_exp(&hist, 1),
            Err(ModelError::InsufficientData(_))
        ));
        let sparse = DecayHistogram {
            bin_width_ps: 100.0,
            counts: vec![1000, 3, 0, 0, 0],
        };
        assert!(matches!(
            fit_multi_exp(&sparse, 1),
            Err(ModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn saturation_exact_recovery() {
        let truth = SaturationParams {
            p_sat: 1.0,
            i_sat: 1.0,
            linear: 0.2,
        };
        let pts: Vec<(f64, f64)> = (1..=20)
            .map(|k| k as f64 * 0.15)
            .map(|i| (i, eval_saturation(&truth, i)))
            .collect();
        let fit = fit_saturation(&pts).unwrap();
        assert!((fit.params.p_sat - 1.0).abs() < 1e-3);
        assert!((fit.params.i_sat - 1.0).abs() < 1e-3);
        assert!((fit.params.linear - 0.2).abs() < 1e-3);
    }

    #[test]
    fn saturation_without_linear_term() {
        let truth = SaturationParams {
            p_sat: 5.0,
            i_sat: 2.0,
            linear: 0.0,
        };
        let pts: Vec<(f64, f64)> = (1..=15)
            .map(|k| k as f64 * 0.3)
            .map(|i| (i, eval_saturation(&truth, i)))
            .collect();
        let fit = fit_saturation(&pts).unwrap();
        assert!(fit.params.linear * 4.5 < 0.01 * 5.0);
    }

    #[test]
    fn saturation_range_checks() {
        let truth = SaturationParams {
            p_sat: 1.0,
            i_sat: 1.0,
            linear: 0.0,
        };
        let narrow: Vec<(f64, f64)> = (1..=8)
            .map(|k| 0.5 + k as f64 * 0.05)
            .map(|i| (i, eval_saturation(&truth, i)))
            .collect();
        assert!(matches!(
            fit_saturation(&narrow),
            Err(ModelError::RangeTooNarrow { .. })
        ));
        assert!(matches!(
            fit_saturation(&narrow[..4]),
            Err(ModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn power_law_guards() {
        assert!(matches!(
            fit_power_law(&[1.0; 50], false),
            Err(ModelError::InsufficientData(_))
        ));
        assert!(matches!(
            fit_power_law(&[1.0; 200], false),
            Err(ModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn power_law_pdf_normalised() {
        for p in [
            PowerLawParams {
                mu: 1.5,
                tau_c_s: f64::INFINITY,
                tau_min_s: 1e-3,
            },
            PowerLawParams {
                mu: 0.7,
                tau_c_s: 0.5,
                tau_min_s: 1e-3,
            },
            PowerLawParams {
                mu: 2.3,
                tau_c_s: 2.0,
                tau_min_s: 1e-2,
            },
        ] {
            // ∫ pdf dτ in log variable
            let total = integrate(
                |u: f64| {
                    let tau = p.tau_min_s * u.exp();
                    power_law_pdf(&p, tau) * tau
                },
                0.0,
                60.0,
                0.0,
                1e-10,
            )
            .unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{p:?} {total}");
        }
    }

    #[test]
    fn regimes() {
        let p = |mu| PowerLawParams {
            mu,
            tau_c_s: f64::INFINITY,
            tau_min_s: 1.0,
        };
        assert_eq!(p(0.5).regime(), PowerLawRegime::Heavy);
        assert_eq!(p(1.5).regime(), PowerLawRegime::DivergentMean);
        assert_eq!(p(2.5).regime(), PowerLawRegime::ConvergentMean);
    }

    fn series(p: &BlinkingG2Params, delays_s: &[f64]) -> FarG2Series {
        FarG2Series {
            peak_delays_ps: delays_s.iter().map(|t| t * 1e12).collect(),
            peak_heights: delays_s.iter().map(|&t| eval_blinking_g2(p, t)).collect(),
            sigma: vec![0.01; delays_s.len()],
        }
    }

    #[test]
    fn blinking_forward_backward() {
        let truth = BlinkingG2Params {
            bunching: 1.8,
            coefficient: 1e-4,
            mu: 1.5,
            mean_on_s: None,
        };
        let delays: Vec<f64> = (0..60)
            .map(|k| 1e-6 * 10f64.powf(k as f64 / 20.0))
            .collect();
        let fit = fit_blinking_g2(&series(&truth, &delays), 1e-6).unwrap();
        assert!((fit.params.bunching / 1.8 - 1.0).abs() < 1e-6);
        assert!((fit.params.coefficient / 1e-4 - 1.0).abs() < 1e-6);
        assert!((fit.params.mu - 1.5).abs() < 1e-6);
        let on = fit.params.mean_on_s.unwrap();
        // Γ(1/2) = √π
        let want = 1e-6f64.powf(1.5) / (1e-4 * std::f64::consts::PI.sqrt());
        assert!((on / want - 1.0).abs() < 1e-5);
    }

    #[test]
    fn flat_series_means_no_blinking() {
        let flat = BlinkingG2Params {
            bunching: 1.0,
            coefficient: 0.0,
            mu: 1.5,
            mean_on_s: None,
        };
        let delays: Vec<f64> = (1..40).map(|k| k as f64 * 1e-6).collect();
        let fit = fit_blinking_g2(&series(&flat, &delays), 1e-6).unwrap();
        assert!((fit.params.bunching - 1.0).abs() < 1e-9);
        let amp = fit.params.coefficient * delays[0].powf(1.0 - fit.params.mu);
        assert!(amp.abs() < 1e-9);
    }

    #[test]
    fn mu_near_two_has_no_mean_on_time() {
        assert!(matches!(
            mean_on_time(2.0, 1e-3, 1e-6),
            Err(ModelError::MuOutOfRange { .. })
        ));
        assert!(matches!(
            mean_on_time(0.9, 1e-3, 1e-6),
            Err(ModelError::MuOutOfRange { .. })
        ));
        let truth = BlinkingG2Params {
            bunching: 1.5,
            coefficient: 2e-6,
            mu: 2.0,
            mean_on_s: None,
        };
        let delays: Vec<f64> = (0..40)
            .map(|k| 1e-6 * 10f64.powf(k as f64 / 15.0))
            .collect();
        let fit = fit_blinking_g2(&series(&truth, &delays), 1e-6).unwrap();
        assert!(fit.params.mean_on_s.is_none());
        assert!(fit
            .warnings
            .iter()
            .any(|w| matches!(w, FitWarning::MeanOnUndefined { .. })));
    }

    #[test]
    fn telegraph_limits() {
        assert!((telegraph_g2(1.0, 0.0, 1.0, 1.0, 0.0) - 2.0).abs() < 1e-15);
        assert!((telegraph_g2(1.0, 1.0, 1.0, 3.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((telegraph_g2(1.0, 0.0, 1.0, 1.0, 100.0) - 1.0).abs() < 1e-15);
    }
}
