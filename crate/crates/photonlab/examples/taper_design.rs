//! Design a pull for an exponential taper down to a 250 nm waist, simulate
//! it and check that the transition stays adiabatic.

use photonlab::fibermode::FiberSpec;
use photonlab::taper::{self, DesignConstraints};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r0 = 62.5e-6;
    // a 5 cm flame keeps the transition gentle enough for the fundamental mode
    let hot = 0.05;
    let elongation = 2.0 * hot * (r0 / 250e-9f64).ln();
    let target = taper::fixed_flame_profile(r0, hot, elongation)?;

    let traj = taper::design_trajectory(&target, &DesignConstraints::default())?;
    let pulled = taper::simulate_pull(&traj)?;
    println!(
        "{} steps, total pull {:.2} mm, waist {:.1} nm (target {:.1} nm)",
        traj.steps.len(),
        traj.total_elongation() * 1e3,
        pulled.waist_radius() * 1e9,
        target.waist_radius() * 1e9
    );
    for line in traj.stage_instructions().lines().take(5) {
        println!("  {line}");
    }

    let base = FiberSpec::new(1.46, 1.0, r0, 852e-9)?;
    let report = taper::adiabaticity_check(&pulled, &base, 0.4)?;
    println!(
        "largest taper-angle/delineation ratio {:.3} at z = {:.2} mm: {}",
        report.max_factor,
        report.worst_z_m * 1e3,
        if report.pass {
            "adiabatic"
        } else {
            "too steep"
        }
    );
    Ok(())
}
