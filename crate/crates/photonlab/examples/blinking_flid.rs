//! A blinking emitter whose dim state is also short-lived. The
//! fluorescence-lifetime-intensity distribution shows the two states on a
//! diagonal, and the bright-bin photons give back the bright lifetime.

use photonlab::models;
use photonlab::simulate::{simulate_stream, Scenario};
use photonlab::trace::{self, ChannelSelect};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/scenarios/blinking.json"
    );
    let scenario: Scenario = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let run = simulate_stream(&scenario.emitter, &scenario.apparatus)?;

    let tr = trace::bin_trace(&run, 10_000_000_000, ChannelSelect::All)?;
    let hist = trace::frequency_histogram(&tr)?;
    let busiest = hist
        .occurrences
        .iter()
        .enumerate()
        .max_by_key(|(_, n)| **n)
        .map(|(i, _)| i)
        .unwrap_or(0);
    println!(
        "{} bins of 10 ms, most common intensity ≈ {} counts",
        tr.len(),
        hist.intensity_bins[busiest]
    );

    let m = trace::flid(&tr, 20, 20)?;
    println!(
        "intensity/lifetime correlation {:.3}",
        trace::flid_correlation(&m)?
    );

    let max = tr.counts.iter().copied().max().unwrap_or(0);
    let threshold = max / 2;
    let durations = trace::on_off_durations(&tr, threshold)?;
    println!(
        "threshold {threshold}: {} on periods, {} off periods",
        durations.on_durations.len(),
        durations.off_durations.len()
    );

    let bright = trace::threshold_select(&run, &tr, threshold)?;
    let decay = trace::decay_histogram(&bright, 1000, ChannelSelect::All)?;
    let fit = models::fit_multi_exp(&decay, 1)?;
    println!("bright-state lifetime {:.2} ns", fit.params.lifetimes_ns[0]);
    Ok(())
}
