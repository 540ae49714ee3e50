//! Guided modes: the planar mirror guide, LP modes of a weakly guiding
//! step-index fiber, and exact HE/EH/TE/TM modes for arbitrary index
//! contrast (nanofibers in air).
//!
//! Roots are searched in the angle θ with `X = V·cosθ`, `Y = V·sinθ`, so both
//! transverse parameters keep full precision near cutoff where one of them
//! is tiny.

pub mod bessel;
pub mod field;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::bisect;
use bessel::{bessel_j, bessel_k_log_derivative, bessel_k_scaled};

pub use field::{
    he11_field, power_fractions, surface_intensity_curve, He11Mode, Polarization, PowerFractions,
    SurfacePoint, SurfaceScan,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("invalid fiber: {0}")]
    InvalidSpec(String),
    #[error("mode order {m} outside 1..={max}")]
    ModeOrderOutOfRange { m: u32, max: u32 },
    #[error("field expressions need the HE11 solution, got {0}")]
    NotFundamentalMode(String),
    #[error("power integral failed to converge")]
    QuadratureFailure,
    #[error("no guided HE11 mode at radius {radius_m} m")]
    NoGuidedMode { radius_m: f64 },
}

// ------------------------------------------------------------------ planar

/// Two parallel mirrors `spacing` apart, filled with a medium in which the
/// light has wavelength `wavelength`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarGuide {
    pub spacing_m: f64,
    pub wavelength_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarModes {
    pub count: u32,
    /// `(m, sinθ_m)` for every guided order.
    pub modes: Vec<(u32, f64)>,
}

pub fn planar_modes(g: &PlanarGuide) -> PlanarModes {
    let ratio = 2.0 * g.spacing_m / g.wavelength_m;
    // tolerate rounding at the exact cutoff d = mλ/2
    let count = (ratio * (1.0 + 1e-12)).floor() as u32;
    let modes = (1..=count)
        .map(|m| {
            (
                m,
                (m as f64 * g.wavelength_m / (2.0 * g.spacing_m)).min(1.0),
            )
        })
        .collect();
    PlanarModes { count, modes }
}

/// Normalised transverse profile of order `m` at height `y` (origin at the
/// guide centre).
pub fn planar_mode_profile(g: &PlanarGuide, m: u32, y: f64) -> Result<f64, FiberError> {
    let max = planar_modes(g).count;
    if m == 0 || m > max {
        return Err(FiberError::ModeOrderOutOfRange { m, max });
    }
    let d = g.spacing_m;
    let arg = m as f64 * PI * y / d;
    let amp = (2.0 / d).sqrt();
    Ok(if m % 2 == 1 {
        amp * arg.cos()
    } else {
        amp * arg.sin()
    })
}

// ------------------------------------------------------------------- fiber

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    pub n_core: f64,
    pub n_clad: f64,
    pub radius_m: f64,
    pub wavelength_m: f64,
}

impl FiberSpec {
    pub fn new(
        n_core: f64,
        n_clad: f64,
        radius_m: f64,
        wavelength_m: f64,
    ) -> Result<Self, FiberError> {
        let s = FiberSpec {
            n_core,
            n_clad,
            radius_m,
            wavelength_m,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FiberError> {
        if !(self.n_core > self.n_clad && self.n_clad >= 1.0) {
            return Err(FiberError::InvalidSpec(format!(
                "need n1 > n2 ≥ 1, got {} and {}",
                self.n_core, self.n_clad
            )));
        }
        if !(self.radius_m > 0.0 && self.wavelength_m > 0.0) {
            return Err(FiberError::InvalidSpec(
                "radius and wavelength must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn numerical_aperture(&self) -> f64 {
        (self.n_core * self.n_core - self.n_clad * self.n_clad).sqrt()
    }

    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }

    pub fn v_number(&self) -> f64 {
        self.k0() * self.radius_m * self.numerical_aperture()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeFamily {
    LP,
    HE,
    EH,
    TE,
    TM,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    pub family: ModeFamily,
    pub azimuthal: u32,
    pub radial: u32,
    /// Core transverse parameter `k_T·a`.
    pub x: f64,
    /// Cladding decay parameter `γ·a`.
    pub y: f64,
    pub beta: f64,
    pub n_eff: f64,
}

impl ModeSolution {
    pub fn label(&self) -> String {
        format!("{:?}{}{}", self.family, self.azimuthal, self.radial)
    }

    fn from_angle(
        spec: &FiberSpec,
        family: ModeFamily,
        azimuthal: u32,
        radial: u32,
        theta: f64,
    ) -> Self {
        let v = spec.v_number();
        let (x, y) = (v * theta.cos(), v * theta.sin());
        let k0 = spec.k0();
        // n_eff² = n2² + (Y/k0a)² keeps precision when Y is small
        let n_eff = (spec.n_clad * spec.n_clad + (y / (k0 * spec.radius_m)).powi(2)).sqrt();
        ModeSolution {
            family,
            azimuthal,
            radial,
            x,
            y,
            beta: n_eff * k0,
            n_eff,
        }
    }
}

/// Angle grid covering θ ∈ (0, π/2), returned in order of increasing X: a
/// uniform X grid with step V/2000, refined by log-spaced points as Y falls
/// to `y_floor·V`.
fn angle_grid(v: f64, y_floor: f64) -> Vec<f64> {
    let mut thetas: Vec<f64> = Vec::with_capacity(2400);
    for i in 1..2000 {
        let x = v * i as f64 / 2000.0;
        thetas.push((x / v).acos());
    }
    let last = *thetas.last().unwrap();
    let top = last.sin().ln();
    let bottom = y_floor.ln();
    for i in 1..=400 {
        let s = (top + (bottom - top) * i as f64 / 400.0).exp();
        thetas.push(s.asin());
    }
    thetas
}

/// Signed-crossing roots of `f(θ)` scanned along `grid`, stopping after
/// `limit` roots.
fn scan_roots_limited<F, I>(f: F, grid: I, rising_only: bool, limit: usize) -> Vec<f64>
where
    F: Fn(f64) -> f64,
    I: IntoIterator<Item = f64>,
{
    let mut roots = Vec::new();
    let mut grid = grid.into_iter();
    let Some(first) = grid.next() else {
        return roots;
    };
    let mut prev = (first, f(first));
    for t in grid {
        if roots.len() >= limit {
            break;
        }
        let ft = f(t);
        let crosses = if rising_only {
            prev.1 < 0.0 && ft >= 0.0
        } else {
            (prev.1 < 0.0 && ft >= 0.0) || (prev.1 > 0.0 && ft <= 0.0)
        };
        if crosses && prev.1.is_finite() && ft.is_finite() {
            roots.push(bisect(&f, prev.0.min(t), prev.0.max(t)));
        }
        prev = (t, ft);
    }
    roots
}

fn scan_roots<F: Fn(f64) -> f64>(f: F, grid: &[f64], rising_only: bool) -> Vec<f64> {
    scan_roots_limited(f, grid.iter().copied(), rising_only, usize::MAX)
}

/// `X·J_{l+1}(X)/J_l(X) − Y·K_{l+1}(Y)/K_l(Y)`.
pub fn lp_characteristic(l: u32, x: f64, y: f64) -> f64 {
    let l = l as i32;
    x * bessel_j(l + 1, x) / bessel_j(l, x) - y * bessel_k_scaled(l + 1, y) / bessel_k_scaled(l, y)
}

/// All LP_lm modes. Roots are the rising sign changes of the characteristic
/// function; the falling ones are the poles at zeros of J_l.
pub fn solve_lp_modes(spec: &FiberSpec) -> Vec<ModeSolution> {
    let v = spec.v_number();
    let grid = angle_grid(v, 1e-12);
    let mut out = Vec::new();
    for l in 0u32.. {
        let f = |th: f64| lp_characteristic(l, v * th.cos(), v * th.sin());
        let roots = scan_roots(f, &grid, true);
        if roots.is_empty() {
            break;
        }
        for (m, th) in roots.into_iter().enumerate() {
            out.push(ModeSolution::from_angle(
                spec,
                ModeFamily::LP,
                l,
                m as u32 + 1,
                th,
            ));
        }
    }
    out
}

/// The exact hybrid-mode equation multiplied through by `X·J_v(X)`, which
/// removes its poles. `sign` = −1 selects HE, +1 selects EH.
fn hybrid_function(spec: &FiberSpec, v: u32, sign: f64, x: f64, y: f64) -> f64 {
    let vv = v as i32;
    let vf = v as f64;
    let nn = (spec.n_clad / spec.n_core).powi(2);
    let kt = bessel_k_log_derivative(vv, y) / y;
    let vnum = spec.v_number();
    let n_eff = (spec.n_clad.powi(2) + (y / (spec.k0() * spec.radius_m)).powi(2)).sqrt();
    let r = (vf * n_eff / spec.n_core).powi(2) * (vnum / (x * y)).powi(4);
    let half = 0.5 * (1.0 - nn) * kt;
    let rhs = -0.5 * (1.0 + nn) * kt + vf / (x * x) + sign * (half * half + r).sqrt();
    bessel_j(vv - 1, x) - x * bessel_j(vv, x) * rhs
}

fn te_function(x: f64, y: f64) -> f64 {
    bessel_j(1, x) * y * bessel_k_scaled(0, y) + x * bessel_j(0, x) * bessel_k_scaled(1, y)
}

fn tm_function(spec: &FiberSpec, x: f64, y: f64) -> f64 {
    let (n1, n2) = (spec.n_core * spec.n_core, spec.n_clad * spec.n_clad);
    n1 * bessel_j(1, x) * y * bessel_k_scaled(0, y)
        + n2 * x * bessel_j(0, x) * bessel_k_scaled(1, y)
}

/// Exact modes up to azimuthal order `v_max` for the requested families.
/// Each family's radial index counts up from the largest effective index.
pub fn solve_exact_modes(
    spec: &FiberSpec,
    v_max: u32,
    families: &[ModeFamily],
) -> Vec<ModeSolution> {
    let vnum = spec.v_number();
    // the hybrid equation loses all precision to cancellation once Y is
    // within ~1e-8 of zero
    let grid = angle_grid(vnum, 1e-6);
    let mut out = Vec::new();
    let mut push = |family, az, roots: Vec<f64>| {
        // grid runs in increasing X, so the first root has the largest n_eff
        for (m, th) in roots.into_iter().enumerate() {
            out.push(ModeSolution::from_angle(spec, family, az, m as u32 + 1, th));
        }
    };
    if families.contains(&ModeFamily::TE) {
        push(
            ModeFamily::TE,
            0,
            scan_roots(
                |t| te_function(vnum * t.cos(), vnum * t.sin()),
                &grid,
                false,
            ),
        );
    }
    if families.contains(&ModeFamily::TM) {
        push(
            ModeFamily::TM,
            0,
            scan_roots(
                |t| tm_function(spec, vnum * t.cos(), vnum * t.sin()),
                &grid,
                false,
            ),
        );
    }
    for v in 1..=v_max {
        for (family, sign) in [(ModeFamily::HE, -1.0), (ModeFamily::EH, 1.0)] {
            if families.contains(&family) {
                let roots = scan_roots(
                    |t| hybrid_function(spec, v, sign, vnum * t.cos(), vnum * t.sin()),
                    &grid,
                    false,
                );
                push(family, v, roots);
            }
        }
    }
    out.sort_by(|a, b| b.n_eff.total_cmp(&a.n_eff));
    out
}

/// The first `count` HE_{1m} modes, found by scanning X upward with step
/// `min(V/400, 0.05)`; HE1m roots are about π apart, so this is safe and
/// much cheaper than a full solve when V is large.
pub fn lowest_he1_modes(spec: &FiberSpec, count: usize) -> Vec<ModeSolution> {
    let vnum = spec.v_number();
    let step = (vnum / 400.0).min(0.05);
    let n = (vnum / step).floor() as usize;
    let coarse = (1..n).map(move |i| (i as f64 * step / vnum).min(1.0).acos());
    let last = ((n - 1).max(1) as f64 * step / vnum).min(1.0).acos();
    let top = last.sin().max(1e-6).ln();
    let bottom = (1e-6f64).ln();
    let tail = (1..=400).map(move |i| (top + (bottom - top) * i as f64 / 400.0).exp().asin());
    let roots = scan_roots_limited(
        |t| hybrid_function(spec, 1, -1.0, vnum * t.cos(), vnum * t.sin()),
        coarse.chain(tail),
        false,
        count,
    );
    roots
        .into_iter()
        .enumerate()
        .map(|(m, th)| ModeSolution::from_angle(spec, ModeFamily::HE, 1, m as u32 + 1, th))
        .collect()
}

/// Residual of a solved mode under an independent re-evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub absolute: f64,
    /// Absolute residual over the magnitude of the terms that cancel.
    pub relative: f64,
}

/// Re-evaluates the characteristic equation of `sol` in its textbook form
/// (LP ratio form, hybrid product form, TE/TM ratio forms).
pub fn characteristic_residual(spec: &FiberSpec, sol: &ModeSolution) -> Residual {
    let (x, y) = (sol.x, sol.y);
    let v = sol.azimuthal as i32;
    let j = |n: i32| bessel_j(n, x);
    let ks = |n: i32| bessel_k_scaled(n, y);
    let (lhs, rhs) = match sol.family {
        ModeFamily::LP => (x * j(v + 1) / j(v), y * ks(v + 1) / ks(v)),
        ModeFamily::TE => (j(1) / (x * j(0)), -ks(1) / (y * ks(0))),
        ModeFamily::TM => (
            spec.n_core.powi(2) * j(1) / (x * j(0)),
            -spec.n_clad.powi(2) * ks(1) / (y * ks(0)),
        ),
        ModeFamily::HE | ModeFamily::EH => {
            let nn = (spec.n_clad / spec.n_core).powi(2);
            let a = 0.5 * (j(v - 1) - j(v + 1)) / (x * j(v));
            let b = bessel_k_log_derivative(v, y) / y;
            let vnum = spec.v_number();
            let r = (v as f64 * sol.n_eff / spec.n_core).powi(2) * (vnum / (x * y)).powi(4);
            ((a + b) * (a + nn * b), r)
        }
    };
    let absolute = (lhs - rhs).abs();
    Residual {
        absolute,
        relative: absolute / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate;

    fn nanofiber(radius_nm: f64) -> FiberSpec {
        FiberSpec::new(1.46, 1.0, radius_nm * 1e-9, 500e-9).unwrap()
    }

    #[test]
    fn planar_counts() {
        let g = |d: f64| PlanarGuide {
            spacing_m: d,
            wavelength_m: 1.0,
        };
        assert_eq!(planar_modes(&g(0.5)).count, 1);
        assert_eq!(planar_modes(&g(2.0)).count, 4);
        assert_eq!(planar_modes(&g(0.4)).count, 0);
        let m = planar_modes(&g(2.0));
        assert!((m.modes[2].1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn planar_profiles() {
        let g = PlanarGuide {
            spacing_m: 3.0,
            wavelength_m: 1.0,
        };
        assert!((planar_mode_profile(&g, 1, 0.0).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(planar_mode_profile(&g, 2, 0.0).unwrap(), 0.0);
        assert!(matches!(
            planar_mode_profile(&g, 7, 0.0),
            Err(FiberError::ModeOrderOutOfRange { .. })
        ));
        for m in 1..=6 {
            let norm = integrate(
                |y| planar_mode_profile(&g, m, y).unwrap().powi(2),
                -1.5,
                1.5,
                1e-14,
                1e-12,
            )
            .unwrap();
            assert!((norm - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(FiberSpec::new(1.0, 1.46, 1e-7, 5e-7).is_err());
        assert!(FiberSpec::new(1.46, 0.9, 1e-7, 5e-7).is_err());
        assert!(FiberSpec::new(1.46, 1.0, 0.0, 5e-7).is_err());
    }

    fn spec_for_v(v: f64) -> FiberSpec {
        let n1: f64 = 1.45;
        let n2: f64 = 1.444;
        let na = (n1 * n1 - n2 * n2).sqrt();
        let lambda = 1.0e-6;
        FiberSpec::new(n1, n2, v * lambda / (2.0 * PI * na), lambda).unwrap()
    }

    #[test]
    fn lp_mode_counts() {
        assert_eq!(solve_lp_modes(&spec_for_v(2.0)).len(), 1);
        assert_eq!(solve_lp_modes(&spec_for_v(2.40)).len(), 1);
        let two = solve_lp_modes(&spec_for_v(2.41));
        assert_eq!(two.len(), 2);
        assert_eq!((two[1].azimuthal, two[1].radial), (1, 1));
        // LP21 and LP02 both appear just above 3.8317
        assert_eq!(solve_lp_modes(&spec_for_v(3.85)).len(), 4);
    }

    #[test]
    fn lp_roots_have_small_residual_and_bounded_index() {
        for &v in &[0.6, 1.5, 2.9, 5.5, 9.0] {
            let spec = spec_for_v(v);
            for sol in solve_lp_modes(&spec) {
                let res = characteristic_residual(&spec, &sol);
                assert!(res.absolute < 1e-9, "{} at V={v}: {res:?}", sol.label());
                assert!(sol.n_eff > spec.n_clad && sol.n_eff < spec.n_core);
                assert!((sol.x * sol.x + sol.y * sol.y - v * v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nanofiber_is_single_mode() {
        let spec = nanofiber(125.0);
        assert!((spec.v_number() - 1.6710).abs() < 1e-3);
        let modes = solve_exact_modes(
            &spec,
            3,
            &[
                ModeFamily::HE,
                ModeFamily::EH,
                ModeFamily::TE,
                ModeFamily::TM,
            ],
        );
        assert_eq!(modes.len(), 1);
        let he11 = modes[0];
        assert_eq!(he11.label(), "HE11");
        let res = characteristic_residual(&spec, &he11);
        assert!(res.relative < 1e-9 && res.absolute < 1e-9, "{res:?}");
    }

    #[test]
    fn thick_fiber_family_order() {
        let spec = nanofiber(400.0);
        let modes = solve_exact_modes(
            &spec,
            3,
            &[
                ModeFamily::HE,
                ModeFamily::EH,
                ModeFamily::TE,
                ModeFamily::TM,
            ],
        );
        let labels: Vec<String> = modes.iter().map(|m| m.label()).collect();
        assert_eq!(&labels[..4], &["HE11", "TE01", "HE21", "TM01"]);
        for m in &modes {
            let r = characteristic_residual(&spec, m);
            assert!(r.relative < 1e-8, "{} {r:?}", m.label());
        }
    }

    #[test]
    fn lowest_modes_agree_with_full_solve() {
        let spec = nanofiber(700.0);
        let full: Vec<ModeSolution> = solve_exact_modes(&spec, 1, &[ModeFamily::HE]);
        let low = lowest_he1_modes(&spec, 2);
        assert_eq!(low.len(), 2);
        for (a, b) in low.iter().zip(&full) {
            assert_eq!(a.label(), b.label());
            assert!((a.n_eff - b.n_eff).abs() < 1e-12);
        }
        // thick glass rod in air: HE11 approaches the first zero of J0
        let rod = FiberSpec::new(1.46, 1.0, 62.5e-6, 1.55e-6).unwrap();
        let m = lowest_he1_modes(&rod, 2);
        assert!((m[0].x - 2.4048).abs() < 0.01, "{:?}", m[0]);
        assert!(m[1].x > 5.0 && m[1].x < 5.53);
    }

    #[test]
    fn te_cutoff_matches_bessel_zero() {
        // TE01 appears at V = j_{0,1}
        let at = |v: f64| {
            let lambda = 500e-9;
            let a = v * lambda / (2.0 * PI * (1.46f64 * 1.46 - 1.0).sqrt());
            solve_exact_modes(
                &FiberSpec::new(1.46, 1.0, a, lambda).unwrap(),
                0,
                &[ModeFamily::TE],
            )
            .len()
        };
        assert_eq!(at(2.4048), 0);
        assert_eq!(at(2.4049), 1);
    }
}
