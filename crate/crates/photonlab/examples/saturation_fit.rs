//! Emitted power against excitation intensity with a linear background
//! term, then the fitted saturation intensity and power.

use photonlab::models::{self, SaturationParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = SaturationParams {
        p_sat: 1.2e5,
        i_sat: 2.5,
        linear: 4.0e3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(1.0, 0.02)?;

    // intensity set by a rotating half-wave plate before a polariser
    let points: Vec<(f64, f64)> = (1..=60)
        .map(|k| {
            let i = 8.0
                * truth.i_sat
                * (std::f64::consts::FRAC_PI_2 * k as f64 / 60.0)
                    .sin()
                    .powi(2);
            (
                i,
                models::eval_saturation(&truth, i) * noise.sample(&mut rng),
            )
        })
        .collect();

    let fit = models::fit_saturation(&points)?;
    let p = fit.params;
    println!("P_sat {:.3e} (true {:.3e})", p.p_sat, truth.p_sat);
    println!("I_sat {:.3} (true {:.3})", p.i_sat, truth.i_sat);
    println!("linear {:.3e} (true {:.3e})", p.linear, truth.linear);
    Ok(())
}
