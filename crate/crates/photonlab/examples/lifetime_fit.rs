//! Decay histogram of a two-lifetime emitter, fitted with one and with two
//! exponentials.

use photonlab::models;
use photonlab::simulate::{
    simulate_stream, ApparatusModel, DurationLaw, EmitterModel, EmitterState, LifetimeCoupling,
    Switching,
};
use photonlab::trace::{self, ChannelSelect};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // fast switching between a 2 ns and a 12 ns state mixes the decays
    let emitter = EmitterModel {
        states: vec![EmitterState::new(0.6, 12.0), EmitterState::new(0.6, 2.0)],
        switching: Some(Switching {
            on: DurationLaw::Exponential { mean_s: 1e-3 },
            off: DurationLaw::Exponential { mean_s: 1e-3 },
        }),
        coupling: LifetimeCoupling::TypeA,
    };
    let mut app = ApparatusModel::new(100_000, 16, 0.5, 11);
    app.detection_efficiency = 0.1;
    app.jitter_ps = 50.0;
    let run = simulate_stream(&emitter, &app)?;
    let decay = trace::decay_histogram(&run, 1000, ChannelSelect::All)?;
    println!("{} photons in the decay histogram", decay.total());

    for n in 1..=2 {
        let fit = models::fit_multi_exp(&decay, n)?;
        let p = &fit.params;
        println!(
            "{n} component(s): τ = {:.2?} ns, amplitudes {:.0?}, residual {:.3e} after {} iterations",
            p.lifetimes_ns, p.amplitudes, fit.residual_norm, fit.iterations
        );
        for w in &fit.warnings {
            println!("  warning: {w:?}");
        }
    }
    Ok(())
}
