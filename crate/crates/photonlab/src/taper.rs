//! Flame-pulled tapers: fixed-flame exponential profiles, the volume
//! conservation ODE, multi-step pulling trajectories (design and forward
//! simulation) and the adiabaticity check against the delineation angle.
//!
//! Geometry is one-sided: `z = 0` is the last unprocessed point of the
//! fiber, radius decreases along `z` through the transition and ends in a
//! flat waist.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fibermode::{lowest_he1_modes, FiberSpec};

/// Default smallest waist radius accepted by the designer.
pub const FABRICATION_FLOOR_M: f64 = 100e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaperError {
    #[error("hot zone length must be positive, got {length_m} m at pull {pull_m} m")]
    NonPositiveHotZone { length_m: f64, pull_m: f64 },
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),
    #[error("mode solve failed at z = {z_m} m (radius {radius_m} m)")]
    ModeSolveFailure { z_m: f64, radius_m: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Radius against axial position. Between grid points the radius is
/// linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaperProfile {
    pub z_m: Vec<f64>,
    pub r_m: Vec<f64>,
}

impl TaperProfile {
    pub fn new(z_m: Vec<f64>, r_m: Vec<f64>) -> Result<Self, TaperError> {
        if z_m.is_empty() || z_m.len() != r_m.len() {
            return Err(TaperError::InvalidInput(
                "z and r must be non-empty and of equal length".into(),
            ));
        }
        if z_m.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TaperError::InvalidInput(
                "z grid must be strictly increasing".into(),
            ));
        }
        if r_m.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(TaperError::InvalidInput("radii must be positive".into()));
        }
        Ok(TaperProfile { z_m, r_m })
    }

    pub fn len(&self) -> usize {
        self.z_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_m.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.r_m.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn waist_radius(&self) -> f64 {
        self.r_m.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation, clamped to the end radii outside the grid.
    pub fn radius_at(&self, z: f64) -> f64 {
        let n = self.z_m.len();
        if z <= self.z_m[0] {
            return self.r_m[0];
        }
        if z >= self.z_m[n - 1] {
            return self.r_m[n - 1];
        }
        let i = self.z_m.partition_point(|&x| x <= z) - 1;
        let t = (z - self.z_m[i]) / (self.z_m[i + 1] - self.z_m[i]);
        self.r_m[i] + t * (self.r_m[i + 1] - self.r_m[i])
    }

    /// Glass volume π∫r² dz of the piecewise-linear profile (exact per
    /// frustum).
    pub fn volume(&self) -> f64 {
        self.z_m
            .windows(2)
            .zip(self.r_m.windows(2))
            .map(|(z, r)| PI * (z[1] - z[0]) * (r[0] * r[0] + r[0] * r[1] + r[1] * r[1]) / 3.0)
            .sum()
    }
}

pub fn waist_radius(r0: f64, hot_zone: f64, elongation: f64) -> f64 {
    r0 * (-elongation / (2.0 * hot_zone)).exp()
}

/// Profile left by pulling a cylinder of radius `r0` through a flame of
/// constant hot-zone length `hot_zone` until the fiber has stretched by
/// `elongation`: an exponential transition of length `elongation` followed
/// by a waist of length `hot_zone`.
pub fn fixed_flame_profile(
    r0: f64,
    hot_zone: f64,
    elongation: f64,
) -> Result<TaperProfile, TaperError> {
    if !(r0 > 0.0) {
        return Err(TaperError::InvalidInput("r0 must be positive".into()));
    }
    if !(hot_zone > 0.0) {
        return Err(TaperError::NonPositiveHotZone {
            length_m: hot_zone,
            pull_m: 0.0,
        });
    }
    if !(elongation >= 0.0) {
        return Err(TaperError::InvalidInput(
            "elongation must be non-negative".into(),
        ));
    }
    const N: usize = 2000;
    let mut z = Vec::with_capacity(N + 2);
    let mut r = Vec::with_capacity(N + 2);
    if elongation > 0.0 {
        for i in 0..=N {
            let zi = elongation * i as f64 / N as f64;
            z.push(zi);
            r.push(waist_radius(r0, hot_zone, zi));
        }
    } else {
        z.push(0.0);
        r.push(r0);
    }
    z.push(elongation + hot_zone);
    r.push(waist_radius(r0, hot_zone, elongation));
    TaperProfile::new(z, r)
}

// --------------------------------------------------------------- ODE

fn check_hot_zone(l: f64, x: f64) -> Result<f64, TaperError> {
    if l > 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(TaperError::NonPositiveHotZone {
            length_m: l,
            pull_m: x,
        })
    }
}

/// Waist radius after pulling by `total_pull` with hot-zone schedule
/// `hot_zone(pull)`, integrating `dr/dx = −r/(2L(x))` by adaptive
/// Dormand–Prince 5(4).
pub fn integrate_volume_ode<F: Fn(f64) -> f64>(
    hot_zone: F,
    r0: f64,
    total_pull: f64,
) -> Result<f64, TaperError> {
    integrate_volume_ode_tol(hot_zone, r0, total_pull, 1e-11)
}

pub fn integrate_volume_ode_tol<F: Fn(f64) -> f64>(
    hot_zone: F,
    r0: f64,
    total_pull: f64,
    rtol: f64,
) -> Result<f64, TaperError> {
    if !(total_pull >= 0.0) {
        return Err(TaperError::InvalidInput(
            "total pull must be non-negative".into(),
        ));
    }
    if total_pull == 0.0 {
        return Ok(r0);
    }
    let rhs = |x: f64, r: f64| -> Result<f64, TaperError> {
        Ok(-r / (2.0 * check_hot_zone(hot_zone(x), x)?))
    };

    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut x = 0.0;
    let mut r = r0;
    let mut h = total_pull / 100.0;
    let mut steps = 0usize;
    while x < total_pull {
        steps += 1;
        if steps > 1_000_000 {
            return Err(TaperError::InvalidInput("ODE step size collapsed".into()));
        }
        h = h.min(total_pull - x);
        let mut k = [0.0; 7];
        for s in 0..7 {
            let rs = r + h * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
            k[s] = rhs(x + C[s] * h, rs)?;
        }
        let r5 = r + h * (0..7).map(|s| B5[s] * k[s]).sum::<f64>();
        let r4 = r + h * (0..7).map(|s| B4[s] * k[s]).sum::<f64>();
        let err = (r5 - r4).abs() / (rtol * r.abs().max(r5.abs()));
        if !err.is_finite() {
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            x += h;
            r = r5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok(r)
}

/// Same ODE with `n` fixed classical Runge–Kutta steps; used to check the
/// convergence order.
pub fn integrate_volume_ode_rk4<F: Fn(f64) -> f64>(
    hot_zone: F,
    r0: f64,
    total_pull: f64,
    n: usize,
) -> Result<f64, TaperError> {
    if n == 0 {
        return Err(TaperError::InvalidInput("need at least one step".into()));
    }
    let rhs = |x: f64, r: f64| -> Result<f64, TaperError> {
        Ok(-r / (2.0 * check_hot_zone(hot_zone(x), x)?))
    };
    let h = total_pull / n as f64;
    let mut r = r0;
    for i in 0..n {
        let x = i as f64 * h;
        let k1 = rhs(x, r)?;
        let k2 = rhs(x + h / 2.0, r + h / 2.0 * k1)?;
        let k3 = rhs(x + h / 2.0, r + h / 2.0 * k2)?;
        let k4 = rhs(x + h, r + h * k3)?;
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(r)
}

// ------------------------------------------------------- trajectories

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullStep {
    pub hot_zone_m: f64,
    pub elongation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullTrajectory {
    pub r0_m: f64,
    pub steps: Vec<PullStep>,
}

impl PullTrajectory {
    pub fn validate(&self) -> Result<(), TaperError> {
        if !(self.r0_m > 0.0) {
            return Err(TaperError::InvalidInput("r0 must be positive".into()));
        }
        let mut pull = 0.0;
        for s in &self.steps {
            check_hot_zone(s.hot_zone_m, pull)?;
            if !(s.elongation_m > 0.0 && s.elongation_m.is_finite()) {
                return Err(TaperError::InvalidInput(format!(
                    "elongation must be positive, got {}",
                    s.elongation_m
                )));
            }
            pull += s.elongation_m;
        }
        Ok(())
    }

    pub fn total_elongation(&self) -> f64 {
        self.steps.iter().map(|s| s.elongation_m).sum()
    }

    /// Two-stage motion listing: the flame sweeps the hot zone while the
    /// pulling stage adds the elongation. Consecutive equal hot zones are
    /// merged into one line.
    pub fn stage_instructions(&self) -> String {
        let mut out = String::from("# stage   sweep_mm   pull_mm   steps\n");
        let mut i = 0;
        let mut line = 0;
        while i < self.steps.len() {
            let l = self.steps[i].hot_zone_m;
            let mut pull = 0.0;
            let mut j = i;
            while j < self.steps.len() && (self.steps[j].hot_zone_m - l).abs() <= 1e-12 * l {
                pull += self.steps[j].elongation_m;
                j += 1;
            }
            line += 1;
            out.push_str(&format!(
                "{line:7}  {:9.4}  {:8.4}  {:6}\n",
                l * 1e3,
                pull * 1e3,
                j - i
            ));
            i = j;
        }
        out
    }
}

/// Profile plus the length of original fiber the pull consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct PullOutcome {
    pub profile: TaperProfile,
    pub processed_length_m: f64,
}

impl PullOutcome {
    pub fn initial_volume(&self, r0: f64) -> f64 {
        PI * r0 * r0 * self.processed_length_m
    }
}

/// Forward pulling model. At each step the hot segment (uniform radius,
/// length `L`) stretches by `δ`; its radius becomes `r·√(L/(L+δ))` and a
/// piece of length `δ` at that radius leaves the flame and freezes. When the
/// hot zone shrinks, the part left behind freezes at the current radius;
/// when it grows, it remelts frozen glass (or unprocessed fiber) and mixes
/// it in by volume.
pub fn simulate_pull(traj: &PullTrajectory) -> Result<TaperProfile, TaperError> {
    Ok(simulate_pull_detailed(traj)?.profile)
}

pub fn simulate_pull_detailed(traj: &PullTrajectory) -> Result<PullOutcome, TaperError> {
    traj.validate()?;
    let r0 = traj.r0_m;
    let Some(first) = traj.steps.first() else {
        let profile = TaperProfile::new(vec![0.0], vec![r0])?;
        return Ok(PullOutcome {
            profile,
            processed_length_m: 0.0,
        });
    };
    // frozen pieces as (length, radius), ordered from z = 0
    let mut frozen: Vec<(f64, f64)> = Vec::new();
    let mut hot_len = first.hot_zone_m;
    let mut hot_r = r0;
    let mut processed = first.hot_zone_m;
    for s in &traj.steps {
        let l = s.hot_zone_m;
        if l < hot_len {
            freeze(&mut frozen, hot_len - l, hot_r);
        } else if l > hot_len {
            let mut need = l - hot_len;
            let mut vol = hot_r * hot_r * hot_len;
            while need > 0.0 {
                match frozen.last_mut() {
                    Some(piece) if piece.0 > need => {
                        piece.0 -= need;
                        vol += piece.1 * piece.1 * need;
                        need = 0.0;
                    }
                    Some(_) => {
                        let (len, r) = frozen.pop().unwrap();
                        vol += r * r * len;
                        need -= len;
                    }
                    None => {
                        vol += r0 * r0 * need;
                        processed += need;
                        need = 0.0;
                    }
                }
            }
            hot_r = (vol / l).sqrt();
        }
        hot_len = l;
        hot_r *= (l / (l + s.elongation_m)).sqrt();
        freeze(&mut frozen, s.elongation_m, hot_r);
    }

    // one sample per piece centre; the glass at z = 0 already belongs to
    // the first piece
    let mut z = vec![0.0];
    let mut r = vec![frozen.first().map_or(hot_r, |p| p.1)];
    let mut front = 0.0;
    for &(len, rad) in &frozen {
        if len <= 0.0 {
            continue;
        }
        z.push(front + len / 2.0);
        r.push(rad);
        front += len;
    }
    z.push(front);
    r.push(hot_r);
    z.push(front + hot_len);
    r.push(hot_r);
    // drop coincident grid points that a zero-length remelt can leave
    let mut pz = Vec::with_capacity(z.len());
    let mut pr = Vec::with_capacity(r.len());
    for (zi, ri) in z.into_iter().zip(r) {
        if pz.last().is_some_and(|&last: &f64| zi <= last) {
            continue;
        }
        pz.push(zi);
        pr.push(ri);
    }
    Ok(PullOutcome {
        profile: TaperProfile::new(pz, pr)?,
        processed_length_m: processed,
    })
}

/// Appends a frozen piece, extending the last one when the radius is the
/// same. A shrinking flame leaves glass at the radius of the piece just
/// frozen, and sampling the two as separate centres would misplace the next
/// radius step.
fn freeze(frozen: &mut Vec<(f64, f64)>, len: f64, radius: f64) {
    match frozen.last_mut() {
        Some(last) if last.1 == radius => last.0 += len,
        _ => frozen.push((len, radius)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConstraints {
    pub max_transition_m: f64,
    pub min_hot_zone_m: f64,
    /// Elongation per step.
    pub step_m: f64,
    pub floor_m: f64,
}

impl Default for DesignConstraints {
    fn default() -> Self {
        DesignConstraints {
            max_transition_m: 1.0,
            min_hot_zone_m: 1e-3,
            step_m: 50e-6,
            floor_m: FABRICATION_FLOOR_M,
        }
    }
}

/// Position in the transition `[0, end]` where the target first falls to
/// `radius`, by linear interpolation between grid points.
fn position_of_radius(z: &[f64], r: &[f64], end: usize, radius: f64) -> f64 {
    let i = r[..=end].partition_point(|&x| x > radius);
    if i == 0 {
        return z[0];
    }
    if i > end {
        return z[end];
    }
    let (r1, r2) = (r[i - 1], r[i]);
    let t = if r1 > r2 {
        (r1 - radius) / (r1 - r2)
    } else {
        0.0
    };
    z[i - 1] + t * (z[i] - z[i - 1])
}

/// Inverse of [`simulate_pull`] on a grid of equal elongation steps.
///
/// The schedule is built backwards from the waist, where both the final
/// hot zone (the waist length) and the radius are known. Undoing one step
/// widens the hot segment by `√((L+δ)/L)`; the target says where a piece of
/// that radius must sit, and the front of the frozen glass then fixes the
/// previous hot zone. Marching forward instead amplifies any error by
/// `(r0/r_waist)²`. The first step is shortened to start exactly at `r0`.
/// The target must end in a flat waist, and the schedule may not grow, since
/// a growing flame would remelt glass that has already been shaped.
pub fn design_trajectory(
    target: &TaperProfile,
    c: &DesignConstraints,
) -> Result<PullTrajectory, TaperError> {
    if !(c.step_m > 0.0 && c.min_hot_zone_m > 0.0 && c.max_transition_m > 0.0 && c.floor_m >= 0.0) {
        return Err(TaperError::InvalidInput(
            "constraints must be positive".into(),
        ));
    }
    let z = &target.z_m;
    let r = &target.r_m;
    if let Some(i) = (1..r.len()).find(|&i| r[i] > r[i - 1] * (1.0 + 1e-12)) {
        return Err(TaperError::InfeasibleTarget(format!(
            "radius increases at z = {} m; pulling only thins",
            z[i]
        )));
    }
    let r0 = r[0];
    let waist_r = r[r.len() - 1];
    if waist_r < c.floor_m {
        return Err(TaperError::InfeasibleTarget(format!(
            "waist radius {waist_r} m is below the fabrication floor {} m",
            c.floor_m
        )));
    }
    let z0 = z[0];
    let wi = r.iter().position(|&x| x <= waist_r * (1.0 + 1e-9)).unwrap();
    let waist_z = z[wi] - z0;
    let waist_len = z[z.len() - 1] - z[wi];
    if waist_z == 0.0 {
        return Ok(PullTrajectory {
            r0_m: r0,
            steps: vec![],
        });
    }
    if waist_len <= 0.0 {
        return Err(TaperError::InfeasibleTarget(
            "target must end in a flat waist of positive length".into(),
        ));
    }
    if waist_z > c.max_transition_m {
        return Err(TaperError::InfeasibleTarget(format!(
            "transition of {waist_z} m exceeds the {} m limit",
            c.max_transition_m
        )));
    }
    let d = c.step_m;
    let zs: Vec<f64> = z.iter().map(|&v| v - z0).collect();

    // state after a step: front of the frozen glass, hot radius, hot zone.
    // Output samples sit at piece centres, so the last piece centre is put
    // on the start of the waist.
    let mut front = waist_z + 0.5 * d;
    let mut radius = waist_r;
    let mut hot = waist_len - 0.5 * d;
    if hot < c.min_hot_zone_m {
        return Err(TaperError::InfeasibleTarget(format!(
            "waist of {waist_len} m is shorter than the minimum hot zone {} m",
            c.min_hot_zone_m
        )));
    }
    let mut rev: Vec<(f64, f64)> = Vec::new();
    loop {
        let before = radius * ((hot + d) / hot).sqrt();
        if before >= r0 {
            // first step: shortened so it starts from the untouched fiber
            let first_d = hot * ((r0 / radius).powi(2) - 1.0);
            if first_d > 0.0 {
                rev.push((hot, first_d));
            }
            break;
        }
        rev.push((hot, d));
        let prev_front = position_of_radius(&zs, r, wi, before) + 0.5 * d;
        let prev_hot = hot + (front - d) - prev_front;
        if prev_hot < c.min_hot_zone_m {
            return Err(TaperError::InfeasibleTarget(format!(
                "hot zone would have to shrink below {} m; the target is too steep",
                c.min_hot_zone_m
            )));
        }
        if prev_hot > c.max_transition_m {
            return Err(TaperError::InfeasibleTarget(format!(
                "hot zone would exceed the {} m limit",
                c.max_transition_m
            )));
        }
        front = prev_front;
        radius = before;
        hot = prev_hot;
        if rev.len() > 50_000_000 {
            return Err(TaperError::InfeasibleTarget(
                "schedule needs too many steps".into(),
            ));
        }
    }
    // the first piece may start up to a step away from z = 0; the shift is
    // below the step's own radius change
    let steps: Vec<PullStep> = rev
        .iter()
        .rev()
        .map(|&(l, e)| PullStep {
            hot_zone_m: l,
            elongation_m: e,
        })
        .collect();
    log::debug!(
        "designed {} steps, first hot zone {:e} m",
        steps.len(),
        steps.first().map_or(0.0, |s| s.hot_zone_m)
    );

    let mut low = f64::INFINITY;
    for (k, s) in steps.iter().enumerate() {
        if s.hot_zone_m > low * 1.01 {
            return Err(TaperError::InfeasibleTarget(format!(
                "hot zone would have to grow from {low} m to {} m after step {k}",
                s.hot_zone_m
            )));
        }
        low = low.min(s.hot_zone_m);
    }
    let transition = steps.iter().map(|s| s.elongation_m).sum::<f64>() + steps[0].hot_zone_m
        - steps[steps.len() - 1].hot_zone_m;
    if transition > c.max_transition_m {
        return Err(TaperError::InfeasibleTarget(format!(
            "designed transition of {transition} m exceeds the {} m limit",
            c.max_transition_m
        )));
    }
    Ok(PullTrajectory { r0_m: r0, steps })
}

// ------------------------------------------------------- adiabaticity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticityReport {
    pub z_m: Vec<f64>,
    pub r_m: Vec<f64>,
    /// Local taper angle |dr/dz|.
    pub taper_angle: Vec<f64>,
    /// Delineation angle (r/2π)(β1 − β2).
    pub delineation: Vec<f64>,
    pub factor: Vec<f64>,
    /// True where β2 is the HE12 mode, false where the cladding light line
    /// n2·k0 stands in because no second mode of that symmetry is guided.
    pub second_mode_guided: Vec<bool>,
    pub threshold: f64,
    pub max_factor: f64,
    pub worst_index: usize,
    pub worst_z_m: f64,
    pub pass: bool,
}

/// Taper angle of every grid point by central differences (one-sided at
/// the ends).
pub fn taper_angles(p: &TaperProfile) -> Vec<f64> {
    let n = p.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            ((p.r_m[b] - p.r_m[a]) / (p.z_m[b] - p.z_m[a])).abs()
        })
        .collect()
}

/// Local delineation angle and whether a second HE1m mode was available.
pub fn delineation_angle(base: &FiberSpec, radius: f64) -> Option<(f64, bool)> {
    let spec = FiberSpec {
        radius_m: radius,
        ..*base
    };
    let modes = lowest_he1_modes(&spec, 2);
    let beta1 = modes.first()?.beta;
    let (beta2, guided) = match modes.get(1) {
        Some(m) => (m.beta, true),
        None => (spec.n_clad * spec.k0(), false),
    };
    Some((radius / (2.0 * PI) * (beta1 - beta2), guided))
}

/// Compares the taper angle with `threshold` times the delineation angle
/// along the whole profile. `base` supplies indices and wavelength; its
/// radius is ignored.
pub fn adiabaticity_check(
    profile: &TaperProfile,
    base: &FiberSpec,
    threshold: f64,
) -> Result<AdiabaticityReport, TaperError> {
    let probe = FiberSpec {
        radius_m: 1.0,
        ..*base
    };
    probe
        .validate()
        .map_err(|e| TaperError::InvalidInput(e.to_string()))?;
    if !(threshold > 0.0) {
        return Err(TaperError::InvalidInput(
            "threshold must be positive".into(),
        ));
    }
    let theta = taper_angles(profile);
    let solved: Vec<Result<(f64, bool), TaperError>> = profile
        .z_m
        .par_iter()
        .zip(profile.r_m.par_iter())
        .map(|(&z, &r)| {
            delineation_angle(base, r).ok_or(TaperError::ModeSolveFailure {
                z_m: z,
                radius_m: r,
            })
        })
        .collect();
    let mut omega = Vec::with_capacity(solved.len());
    let mut guided = Vec::with_capacity(solved.len());
    for s in solved {
        let (o, g) = s?;
        omega.push(o);
        guided.push(g);
    }
    let factor: Vec<f64> = theta
        .iter()
        .zip(&omega)
        .map(|(t, o)| if *t == 0.0 { 0.0 } else { t / o })
        .collect();
    let (worst_index, max_factor) =
        factor
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, f)| if f > acc.1 { (i, f) } else { acc },
            );
    Ok(AdiabaticityReport {
        z_m: profile.z_m.clone(),
        r_m: profile.r_m.clone(),
        taper_angle: theta,
        delineation: omega,
        second_mode_guided: guided,
        threshold,
        worst_z_m: profile.z_m[worst_index],
        pass: max_factor < threshold,
        max_factor,
        worst_index,
        factor,
    })
}
