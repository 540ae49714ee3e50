//! Rotating-waveplate polarimetry: harmonic analysis of the transmitted
//! intensity, Stokes recovery, two-detector blinking correction and
//! Poincaré-sphere coordinates.
//!
//! The analyzer defines the frame (α = 0). With the waveplate fast axis at
//! `b = β − β0`, retardance δ, the transmitted intensity is
//!
//! ```text
//! I(β) = ½[S0 + ½S1(1 + cosδ)] − ½S3·sinδ·sin2b + ¼(S1·cos4b + S2·sin4b)(1 − cosδ)
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StokesError {
    #[error("transmitted plus reflected intensity is not positive at sample {index}")]
    ZeroTotalIntensity { index: usize },
    #[error("sweep has no reflected channel")]
    MissingReflected,
    #[error("angles are not a uniform grid over π or 2π")]
    NonUniformGrid,
    #[error("{n} samples, need at least {min}")]
    TooFewSamples { n: usize, min: usize },
    #[error("sample count {0} is odd")]
    OddSampleCount(usize),
    #[error("channel lengths differ")]
    LengthMismatch,
    #[error("calibration ill-conditioned: sinδ = {sin_delta:.3e}, 1 − cosδ = {one_minus_cos:.3e}")]
    IllConditionedCal { sin_delta: f64, one_minus_cos: f64 },
    #[error("S0 must be positive")]
    NonPositiveIntensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateCal {
    pub delta_rad: f64,
    pub beta0_rad: f64,
}

impl WaveplateCal {
    pub fn quarter_wave(beta0_rad: f64) -> Self {
        WaveplateCal {
            delta_rad: PI / 2.0,
            beta0_rad,
        }
    }

    fn check(&self) -> Result<(), StokesError> {
        let sin_delta = self.delta_rad.sin();
        let one_minus_cos = 1.0 - self.delta_rad.cos();
        if sin_delta.abs() < 1e-6 || one_minus_cos < 1e-6 {
            return Err(StokesError::IllConditionedCal {
                sin_delta,
                one_minus_cos,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarimetrySweep {
    pub beta_rad: Vec<f64>,
    pub transmitted: Vec<f64>,
    pub reflected: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        StokesVector { s0, s1, s2, s3 }
    }

    /// `(s1, s2, s3) = (S1, S2, S3)/S0`.
    pub fn normalized(&self) -> [f64; 3] {
        [self.s1 / self.s0, self.s2 / self.s0, self.s3 / self.s0]
    }

    pub fn polarized_norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    /// S0 > 0 and a degree of polarization no larger than one.
    pub fn is_physical(&self) -> bool {
        self.s0 > 0.0 && self.polarized_norm() <= self.s0 * (1.0 + 1e-9)
    }

    pub fn max_abs_diff(&self, other: &StokesVector) -> f64 {
        [
            self.s0 - other.s0,
            self.s1 - other.s1,
            self.s2 - other.s2,
            self.s3 - other.s3,
        ]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Harmonics of the transmitted intensity in the sweep angle β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierCoeffs {
    pub c0: f64,
    pub c2: f64,
    pub c4: f64,
    pub s2: f64,
    pub s4: f64,
}

impl FourierCoeffs {
    pub fn eval(&self, beta: f64) -> f64 {
        self.c0
            + self.c2 * (2.0 * beta).cos()
            + self.c4 * (4.0 * beta).cos()
            + self.s2 * (2.0 * beta).sin()
            + self.s4 * (4.0 * beta).sin()
    }
}

/// Transmitted intensity at sweep angle `beta`.
pub fn synthesize_intensity(s: &StokesVector, cal: &WaveplateCal, beta: f64) -> f64 {
    let b = beta - cal.beta0_rad;
    let (sd, cd) = cal.delta_rad.sin_cos();
    0.5 * (s.s0 + 0.5 * s.s1 * (1.0 + cd)) - 0.5 * s.s3 * sd * (2.0 * b).sin()
        + 0.25 * (s.s1 * (4.0 * b).cos() + s.s2 * (4.0 * b).sin()) * (1.0 - cd)
}

/// A uniform sweep over `[start, start + span)` with `n` points.
pub fn sweep_angles(n: usize, span: f64, start: f64) -> Vec<f64> {
    (0..n).map(|i| start + span * i as f64 / n as f64).collect()
}

/// Divides the transmitted channel by the total at every angle, removing
/// intensity fluctuations common to both detectors.
pub fn normalize_two_channel(sweep: &PolarimetrySweep) -> Result<PolarimetrySweep, StokesError> {
    let refl = sweep
        .reflected
        .as_ref()
        .ok_or(StokesError::MissingReflected)?;
    if refl.len() != sweep.transmitted.len() || sweep.beta_rad.len() != refl.len() {
        return Err(StokesError::LengthMismatch);
    }
    let transmitted = sweep
        .transmitted
        .iter()
        .zip(refl)
        .enumerate()
        .map(|(index, (&t, &r))| {
            let total = t + r;
            if total > 0.0 {
                Ok(t / total)
            } else {
                Err(StokesError::ZeroTotalIntensity { index })
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(PolarimetrySweep {
        beta_rad: sweep.beta_rad.clone(),
        transmitted,
        reflected: None,
    })
}

/// Detects the sweep period: π or 2π, with uniform spacing `period/N`.
fn sweep_period(beta: &[f64]) -> Result<f64, StokesError> {
    let n = beta.len();
    if n < 2 {
        return Err(StokesError::TooFewSamples { n, min: 4 });
    }
    let step = (beta[n - 1] - beta[0]) / (n - 1) as f64;
    let tol = 1e-9 * step.abs().max(1e-300);
    if beta
        .windows(2)
        .any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step.abs())
        || step <= 0.0
    {
        return Err(StokesError::NonUniformGrid);
    }
    let span = step * n as f64;
    for period in [PI, 2.0 * PI] {
        if (span - period).abs() <= 1e-6 * period + tol {
            return Ok(period);
        }
    }
    Err(StokesError::NonUniformGrid)
}

/// Discrete harmonics with the `1/(1 + δ_{n0} + δ_{nL})` weighting for
/// `N = 2L` samples. Sweeps over π are analysed in `β′ = 2β`.
pub fn fourier_coefficients(sweep: &PolarimetrySweep) -> Result<FourierCoeffs, StokesError> {
    let n = sweep.transmitted.len();
    if sweep.beta_rad.len() != n {
        return Err(StokesError::LengthMismatch);
    }
    let period = sweep_period(&sweep.beta_rad)?;
    let half_period = period < 1.5 * PI;
    let min = if half_period { 4 } else { 8 };
    if n < min {
        return Err(StokesError::TooFewSamples { n, min });
    }
    if n % 2 == 1 {
        return Err(StokesError::OddSampleCount(n));
    }
    let l = n / 2;
    // harmonic index in the sweep variable for the 2β and 4β terms
    let (h2, h4) = if half_period { (1, 2) } else { (2, 4) };
    let coeff = |h: usize| -> (f64, f64) {
        let w = 2.0 / n as f64 / (1.0 + (h == 0) as u8 as f64 + (h == l) as u8 as f64);
        let (mut c, mut s) = (0.0, 0.0);
        for (&beta, &i) in sweep.beta_rad.iter().zip(&sweep.transmitted) {
            let x = 2.0 * PI * beta / period * h as f64;
            c += i * x.cos();
            s += i * x.sin();
        }
        (w * c, w * s)
    };
    let (c0, _) = coeff(0);
    let (c2, s2) = coeff(h2);
    let (c4, s4) = coeff(h4);
    Ok(FourierCoeffs { c0, c2, c4, s2, s4 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesRecovery {
    pub stokes: StokesVector,
    /// Disagreement between the two expressions for S3, in S3 units. Zero
    /// for a noiseless sweep and a correct β0.
    pub s3_consistency: f64,
    /// `|S3|` from the quadrature magnitude of the 2β harmonic.
    pub s3_magnitude: f64,
    /// Degree of polarization above one beyond rounding.
    pub unphysical: bool,
}

pub fn recover_stokes(
    c: &FourierCoeffs,
    cal: &WaveplateCal,
) -> Result<StokesRecovery, StokesError> {
    cal.check()?;
    let (sd, cd) = cal.delta_rad.sin_cos();
    let (s4b, c4b) = (4.0 * cal.beta0_rad).sin_cos();
    let (s2b, c2b) = (2.0 * cal.beta0_rad).sin_cos();
    let lin = c.c4 * c4b + c.s4 * s4b;
    let s1 = 4.0 / (1.0 - cd) * lin;
    let s2 = 4.0 / (1.0 - cd) * (c.s4 * c4b - c.c4 * s4b);
    let s0 = 2.0 * c.c0 - 2.0 * (1.0 + cd) / (1.0 - cd) * lin;
    let s3 = 2.0 * (c.c2 * s2b - c.s2 * c2b) / sd;
    let stokes = StokesVector { s0, s1, s2, s3 };
    Ok(StokesRecovery {
        stokes,
        s3_consistency: 2.0 * (c.c2 * c2b + c.s2 * s2b).abs() / sd.abs(),
        s3_magnitude: 2.0 * (c.c2 * c.c2 + c.s2 * c.s2).sqrt() / sd.abs(),
        unphysical: !stokes.is_physical(),
    })
}

/// Full chain for a sweep: two-channel normalisation when a reflected
/// channel is present, harmonics, recovery.
pub fn analyze_sweep(
    sweep: &PolarimetrySweep,
    cal: &WaveplateCal,
) -> Result<StokesRecovery, StokesError> {
    let normalized;
    let s = if sweep.reflected.is_some() {
        normalized = normalize_two_channel(sweep)?;
        &normalized
    } else {
        sweep
    };
    recover_stokes(&fourier_coefficients(s)?, cal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationDegrees {
    pub dop: f64,
    pub dolp: f64,
}

pub fn polarization_degrees(s: &StokesVector) -> Result<PolarizationDegrees, StokesError> {
    if s.s0 <= 0.0 {
        return Err(StokesError::NonPositiveIntensity);
    }
    Ok(PolarizationDegrees {
        dop: s.polarized_norm() / s.s0,
        dolp: s.s1.hypot(s.s2) / s.s0,
    })
}

/// Point on the Poincaré sphere: intensity, degree of polarization, and the
/// doubled azimuth and ellipticity angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareCoords {
    pub intensity: f64,
    pub degree: f64,
    pub two_psi: f64,
    pub two_chi: f64,
    /// False when S1 = S2 = 0, where the azimuth is undefined and set to 0.
    pub azimuth_defined: bool,
}

pub fn poincare_coords(s: &StokesVector) -> Result<PoincareCoords, StokesError> {
    if s.s0 <= 0.0 {
        return Err(StokesError::NonPositiveIntensity);
    }
    let norm = s.polarized_norm();
    let azimuth_defined = s.s1 != 0.0 || s.s2 != 0.0;
    Ok(PoincareCoords {
        intensity: s.s0,
        degree: norm / s.s0,
        two_psi: if azimuth_defined {
            s.s2.atan2(s.s1)
        } else {
            0.0
        },
        two_chi: if norm > 0.0 {
            (s.s3 / norm).clamp(-1.0, 1.0).asin()
        } else {
            0.0
        },
        azimuth_defined,
    })
}

pub fn stokes_from_poincare(p: &PoincareCoords) -> StokesVector {
    let r = p.intensity * p.degree;
    StokesVector {
        s0: p.intensity,
        s1: r * p.two_chi.cos() * p.two_psi.cos(),
        s2: r * p.two_chi.cos() * p.two_psi.sin(),
        s3: r * p.two_chi.sin(),
    }
}

/// Stokes vector of a fully polarized field with component amplitudes
/// `e0x`, `e0y` and relative phase `phase`.
pub fn stokes_from_field(e0x: f64, e0y: f64, phase: f64) -> StokesVector {
    StokesVector {
        s0: e0x * e0x + e0y * e0y,
        s1: e0x * e0x - e0y * e0y,
        s2: 2.0 * e0x * e0y * phase.cos(),
        s3: 2.0 * e0x * e0y * phase.sin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_of(s: &StokesVector, cal: &WaveplateCal, n: usize, span: f64) -> PolarimetrySweep {
        let beta = sweep_angles(n, span, 0.0);
        let transmitted = beta
            .iter()
            .map(|&b| synthesize_intensity(s, cal, b))
            .collect();
        PolarimetrySweep {
            beta_rad: beta,
            transmitted,
            reflected: None,
        }
    }

    #[test]
    fn constant_intensity_is_pure_c0() {
        let sw = PolarimetrySweep {
            beta_rad: sweep_angles(16, 2.0 * PI, 0.0),
            transmitted: vec![3.0; 16],
            reflected: None,
        };
        let c = fourier_coefficients(&sw).unwrap();
        assert!((c.c0 - 3.0).abs() < 1e-15);
        for v in [c.c2, c.c4, c.s2, c.s4] {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn nyquist_cosine_with_endpoint_weight() {
        let beta = sweep_angles(8, 2.0 * PI, 0.0);
        let sw = PolarimetrySweep {
            transmitted: beta.iter().map(|b| (4.0 * b).cos()).collect(),
            beta_rad: beta,
            reflected: None,
        };
        let c = fourier_coefficients(&sw).unwrap();
        assert!((c.c4 - 1.0).abs() < 1e-14);
        for v in [c.c0, c.c2, c.s2, c.s4] {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn coefficients_match_closed_form() {
        let s = StokesVector::new(2.0, 0.3, -0.7, 0.5);
        let cal = WaveplateCal {
            delta_rad: 80f64.to_radians(),
            beta0_rad: 0.3,
        };
        let c = fourier_coefficients(&sweep_of(&s, &cal, 24, 2.0 * PI)).unwrap();
        let (sd, cd) = cal.delta_rad.sin_cos();
        let b4 = 4.0 * cal.beta0_rad;
        let b2 = 2.0 * cal.beta0_rad;
        let want = FourierCoeffs {
            c0: 0.5 * s.s0 + 0.25 * s.s1 * (1.0 + cd),
            c2: 0.5 * s.s3 * sd * b2.sin(),
            s2: -0.5 * s.s3 * sd * b2.cos(),
            c4: 0.25 * (1.0 - cd) * (s.s1 * b4.cos() - s.s2 * b4.sin()),
            s4: 0.25 * (1.0 - cd) * (s.s1 * b4.sin() + s.s2 * b4.cos()),
        };
        for (a, b) in [
            (c.c0, want.c0),
            (c.c2, want.c2),
            (c.s2, want.s2),
            (c.c4, want.c4),
            (c.s4, want.s4),
        ] {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..50 {
            let beta = k as f64 * 0.13;
            assert!((c.eval(beta) - synthesize_intensity(&s, &cal, beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn half_period_sweep_uses_doubled_angle() {
        let s = StokesVector::new(1.0, -0.2, 0.4, 0.6);
        let cal = WaveplateCal {
            delta_rad: 1.4,
            beta0_rad: -0.2,
        };
        let r = recover_stokes(
            &fourier_coefficients(&sweep_of(&s, &cal, 10, PI)).unwrap(),
            &cal,
        )
        .unwrap();
        assert!(r.stokes.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn simple_states() {
        let cal = WaveplateCal::quarter_wave(0.0);
        let unpol = StokesVector::new(1.0, 0.0, 0.0, 0.0);
        let r = recover_stokes(
            &fourier_coefficients(&sweep_of(&unpol, &cal, 16, 2.0 * PI)).unwrap(),
            &cal,
        )
        .unwrap();
        assert!(r.stokes.s1.abs() < 1e-9 && r.stokes.s2.abs() < 1e-9 && r.stokes.s3.abs() < 1e-9);
        let h = StokesVector::new(1.0, 1.0, 0.0, 0.0);
        let r = recover_stokes(
            &fourier_coefficients(&sweep_of(&h, &cal, 16, 2.0 * PI)).unwrap(),
            &cal,
        )
        .unwrap();
        assert!(r.stokes.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn forward_model_limits() {
        let s = StokesVector::new(1.0, 0.3, 0.2, 0.0);
        let no_plate = WaveplateCal {
            delta_rad: 0.0,
            beta0_rad: 0.4,
        };
        for k in 0..10 {
            assert!((synthesize_intensity(&s, &no_plate, k as f64 * 0.3) - 0.65).abs() < 1e-15);
        }
        let circ = StokesVector::new(0.0, 0.0, 0.0, 1.0);
        let cal = WaveplateCal {
            delta_rad: 1.0,
            beta0_rad: 0.0,
        };
        for k in 0..10 {
            let b = k as f64 * 0.3;
            let want = 0.5 * 1f64.sin() * (-2.0 * b).sin();
            assert!((synthesize_intensity(&circ, &cal, b) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn guards() {
        let cal = WaveplateCal {
            delta_rad: 0.0,
            beta0_rad: 0.0,
        };
        let c = FourierCoeffs {
            c0: 1.0,
            c2: 0.0,
            c4: 0.0,
            s2: 0.0,
            s4: 0.0,
        };
        assert!(matches!(
            recover_stokes(&c, &cal),
            Err(StokesError::IllConditionedCal { .. })
        ));
        let mut sw = PolarimetrySweep {
            beta_rad: sweep_angles(8, 2.0 * PI, 0.0),
            transmitted: vec![1.0; 8],
            reflected: None,
        };
        sw.beta_rad[3] += 0.01;
        assert_eq!(fourier_coefficients(&sw), Err(StokesError::NonUniformGrid));
        let short = PolarimetrySweep {
            beta_rad: sweep_angles(6, 2.0 * PI, 0.0),
            transmitted: vec![1.0; 6],
            reflected: None,
        };
        assert_eq!(
            fourier_coefficients(&short),
            Err(StokesError::TooFewSamples { n: 6, min: 8 })
        );
        let odd = PolarimetrySweep {
            beta_rad: sweep_angles(9, 2.0 * PI, 0.0),
            transmitted: vec![1.0; 9],
            reflected: None,
        };
        assert_eq!(
            fourier_coefficients(&odd),
            Err(StokesError::OddSampleCount(9))
        );
        assert_eq!(
            normalize_two_channel(&short),
            Err(StokesError::MissingReflected)
        );
        let dead = PolarimetrySweep {
            reflected: Some(vec![0.0; 6]),
            transmitted: vec![0.0; 6],
            ..short
        };
        assert_eq!(
            normalize_two_channel(&dead),
            Err(StokesError::ZeroTotalIntensity { index: 0 })
        );
    }

    #[test]
    fn two_channel_constant_total_keeps_shape() {
        let t = vec![1.0, 3.0, 2.0, 4.0];
        let sw = PolarimetrySweep {
            beta_rad: sweep_angles(4, PI, 0.0),
            reflected: Some(t.iter().map(|v| 5.0 - v).collect()),
            transmitted: t.clone(),
        };
        let n = normalize_two_channel(&sw).unwrap();
        for (a, b) in n.transmitted.iter().zip(&t) {
            assert!((a * 5.0 - b).abs() < 1e-15);
        }
        assert!(n.reflected.is_none());
    }

    #[test]
    fn degrees_and_sphere() {
        let d = polarization_degrees(&StokesVector::new(1.0, 0.6, 0.8, 0.0)).unwrap();
        assert!((d.dop - 1.0).abs() < 1e-15 && (d.dolp - 1.0).abs() < 1e-15);
        let d = polarization_degrees(&StokesVector::new(2.0, 0.0, 0.0, -2.0)).unwrap();
        assert!((d.dop - 1.0).abs() < 1e-15 && d.dolp == 0.0);
        let p = poincare_coords(&StokesVector::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!((p.degree, p.two_psi, p.two_chi), (1.0, 0.0, 0.0));
        let p = poincare_coords(&StokesVector::new(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((p.two_chi - PI / 2.0).abs() < 1e-15 && !p.azimuth_defined);
        let s = StokesVector::new(1.3, -0.4, 0.25, 0.6);
        let back = stokes_from_poincare(&poincare_coords(&s).unwrap());
        assert!(back.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn field_components() {
        assert_eq!(
            stokes_from_field(2.0, 0.0, 0.3),
            StokesVector::new(4.0, 4.0, 0.0, 0.0)
        );
        let s = stokes_from_field(1.0, 1.0, PI / 2.0);
        assert!(s.s1.abs() < 1e-15 && s.s2.abs() < 1e-15 && (s.s3 - 2.0).abs() < 1e-15);
        let s = stokes_from_field(0.7, 1.9, 2.2);
        assert!((s.s0 * s.s0 - s.polarized_norm().powi(2)).abs() < 1e-12);
    }
}
