//! Guided modes of a silica fibre in air as it is thinned down to a
//! nanofibre.

use photonlab::fibermode::{self, FiberSpec, ModeFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let families = [
        ModeFamily::HE,
        ModeFamily::EH,
        ModeFamily::TE,
        ModeFamily::TM,
    ];
    for radius_nm in [600.0, 400.0, 250.0, 125.0] {
        let spec = FiberSpec::new(1.46, 1.0, radius_nm * 1e-9, 780e-9)?;
        let lp = fibermode::solve_lp_modes(&spec);
        let exact = fibermode::solve_exact_modes(&spec, 4, &families);
        let labels: Vec<String> = exact
            .iter()
            .map(|m| format!("{} {:.4}", m.label(), m.n_eff))
            .collect();
        println!(
            "a = {radius_nm} nm, V = {:.3}: {} LP mode(s); {}",
            spec.v_number(),
            lp.len(),
            labels.join(", ")
        );
    }
    Ok(())
}
