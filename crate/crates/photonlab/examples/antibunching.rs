//! Pulsed antibunching from a scenario file: simulate, cross-correlate the
//! two detectors and reduce the histogram to g2(0).

use photonlab::correlate::{self, BackgroundMethod, G2Config};
use photonlab::simulate::{simulate_stream, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/scenarios/antibunching.json"
    );
    let scenario: Scenario = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let app = &scenario.apparatus;
    let run = simulate_stream(&scenario.emitter, app)?;
    println!("{} photons in {} s", run.len(), app.duration_s);

    let cfg = G2Config {
        bins_per_pulse: 11,
        max_delay_pulses: 20,
        delay_line_ps: app.delay_line_ps,
        dead_time_ps: app.dead_time_ps,
    };
    let raw = correlate::cross_correlate_parallel(&run, &cfg, 8)?;
    let period = app.sync_period_ps as f64;
    let g2 = correlate::clean(
        &raw,
        &cfg,
        (10.0 * period, 20.0 * period),
        Some(BackgroundMethod::Floor),
    )?;

    for peak in g2.peak_heights().iter().filter(|p| p.order.abs() <= 3) {
        println!(
            "peak {:+}: {:.3} ± {:.3}",
            peak.order, peak.height, peak.sigma
        );
    }
    let zero = correlate::g2_zero(&g2)?;
    println!(
        "g2(0) = {:.4} ± {:.4} ({})",
        zero.value,
        zero.sigma,
        if zero.is_single_photon() {
            "single photon"
        } else {
            "not single photon"
        }
    );
    Ok(())
}
