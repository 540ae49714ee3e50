//! Rotating wave-plate polarimetry: synthesise a sweep for an elliptical
//! field, recover the Stokes vector and express it on the Poincaré sphere.

use photonlab::stokes::{self, PolarimetrySweep, WaveplateCal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = stokes::stokes_from_field(1.0, 0.6, 0.7);
    // a slightly detuned quarter-wave plate, mounted 12° off
    let cal = WaveplateCal {
        delta_rad: 84f64.to_radians(),
        beta0_rad: 12f64.to_radians(),
    };

    let beta = stokes::sweep_angles(24, 2.0 * std::f64::consts::PI, 0.0);
    let transmitted: Vec<f64> = beta
        .iter()
        .map(|&b| stokes::synthesize_intensity(&truth, &cal, b))
        .collect();
    // the reflected port sees the rest, which lets blinking cancel out
    let reflected = transmitted.iter().map(|t| truth.s0 - t).collect();
    let sweep = PolarimetrySweep {
        beta_rad: beta,
        transmitted,
        reflected: Some(reflected),
    };

    let rec = stokes::analyze_sweep(&sweep, &cal)?;
    let s = rec.stokes;
    // the two-port normalisation divides out S0
    let n = truth.s0;
    println!(
        "true      {:.4} {:.4} {:.4} {:.4}",
        1.0,
        truth.s1 / n,
        truth.s2 / n,
        truth.s3 / n
    );
    println!("recovered {:.4} {:.4} {:.4} {:.4}", s.s0, s.s1, s.s2, s.s3);

    let deg = stokes::polarization_degrees(&s)?;
    let sphere = stokes::poincare_coords(&s)?;
    println!(
        "degree of polarisation {:.3}, linear {:.3}",
        deg.dop, deg.dolp
    );
    println!(
        "2ψ = {:.1}°, 2χ = {:.1}°",
        sphere.two_psi.to_degrees(),
        sphere.two_chi.to_degrees()
    );
    Ok(())
}
