//! Simulate a short run, write it as a `.pts` file, read it back and look
//! at the detector balance.

use photonlab::simulate::{simulate_stream, ApparatusModel, EmitterModel};
use photonlab::stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut app = ApparatusModel::new(100_000, 16, 0.01, 7);
    app.split = 0.45;
    let run = simulate_stream(&EmitterModel::steady(0.8, 5.0), &app)?;

    let path = std::env::temp_dir().join("photonlab-roundtrip.pts");
    let written = stream::write_stream(&run, std::fs::File::create(&path)?)?;
    let back = stream::read_stream(std::io::BufReader::new(std::fs::File::open(&path)?))?;
    assert_eq!(back, run);

    println!(
        "{} records, {written} bytes at {}",
        back.len(),
        path.display()
    );
    println!("header: {:?}", back.header);
    let balance = stream::channel_balance(&back)?;
    println!(
        "channel fractions {:?}, coincidence efficiency vs a 50/50 split {:.3}",
        balance.fraction_per_channel, balance.relative_efficiency
    );
    std::fs::remove_file(path)?;
    Ok(())
}
