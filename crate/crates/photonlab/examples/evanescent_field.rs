//! Surface intensity of the fundamental mode against fibre radius, and the
//! field components at the surface of the best radius.

use photonlab::fibermode::{self, FiberSpec, He11Mode, Polarization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wavelength = 852e-9;
    let radii: Vec<f64> = (0..=60).map(|k| 80e-9 + 5e-9 * k as f64).collect();
    let scan = fibermode::surface_intensity_curve(1.45, 1.0, wavelength, &radii)?;
    for p in scan.points.iter().step_by(10) {
        println!(
            "a = {:.0} nm: surface {:.3} of max, {:.1}% of power outside",
            p.radius_m * 1e9,
            p.normalized,
            100.0 * p.outside_fraction
        );
    }
    println!(
        "brightest surface at a = {:.1} nm",
        scan.best_radius_m * 1e9
    );

    let mode = He11Mode::solve(&FiberSpec::new(1.45, 1.0, scan.best_radius_m, wavelength)?)?;
    let a = scan.best_radius_m;
    for (name, pol) in [
        ("circular", Polarization::QuasiCircular { p: 1 }),
        ("linear", Polarization::QuasiLinear { phi0: 0.0 }),
    ] {
        let f = mode.field(1.0001 * a, 0.0, pol, 1);
        println!(
            "{name}: |E_r|² {:.3e}, |E_φ|² {:.3e}, |E_z|² {:.3e}",
            f.e_r.norm_sqr(),
            f.e_phi.norm_sqr(),
            f.e_z.norm_sqr()
        );
    }
    Ok(())
}
