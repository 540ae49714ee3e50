//! On-period lengths drawn from a truncated power law, fitted with and
//! without the exponential cut-off.

use photonlab::models;
use photonlab::simulate::DurationLaw;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let law = DurationLaw::PowerLaw {
        mu: 1.6,
        tau_min_s: 1e-3,
        tau_c_s: Some(2.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let durations: Vec<f64> = (0..50_000).map(|_| law.sample(&mut rng)).collect();
    println!(
        "{} durations, mean {:.4} s",
        durations.len(),
        durations.iter().sum::<f64>() / durations.len() as f64
    );

    for truncated in [false, true] {
        let fit = models::fit_power_law(&durations, truncated)?;
        let p = &fit.params;
        println!(
            "truncated {truncated}: μ = {:.3}, τ_c = {:.3e} s, regime {:?}",
            p.mu,
            p.tau_c_s,
            p.regime()
        );
    }
    Ok(())
}
