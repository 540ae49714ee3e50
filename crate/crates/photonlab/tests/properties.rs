use std::f64::consts::PI;

use photonlab::correlate::{self, G2Config};
use photonlab::models::{self, MultiExpParams, SaturationParams};
use photonlab::simulate::{poisson_stream, simulate_stream, ApparatusModel, EmitterModel};
use photonlab::stokes::{self, PolarimetrySweep, StokesVector, WaveplateCal};
use photonlab::stream::{self, PhotonRecord, PhotonStream, StreamHeader};
use photonlab::taper::{self, PullStep, PullTrajectory};
use proptest::prelude::*;

fn records() -> impl Strategy<Value = (StreamHeader, Vec<PhotonRecord>)> {
    (1u64..5000, 1u64..64, 1u8..5).prop_flat_map(|(slots, res, channels)| {
        let header = StreamHeader::new(slots * res, res, channels);
        let rec = (0u64..1 << 40, 0..slots as u32, 0..channels)
            .prop_map(|(p, m, c)| PhotonRecord::new(p, m, c));
        (Just(header), prop::collection::vec(rec, 0..300))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stream_round_trips((header, mut recs) in records()) {
        recs.sort();
        let s = PhotonStream::new(header, recs).unwrap();
        let bytes = stream::encode(&s);
        prop_assert_eq!(bytes.len(), stream::HEADER_LEN + stream::RECORD_LEN * s.len());
        let back = stream::read_stream(&bytes[..]).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(stream::encode(&back), bytes);
    }

    #[test]
    fn any_truncation_is_reported((header, mut recs) in records(), cut in 1usize..64) {
        recs.sort();
        let s = PhotonStream::new(header, recs).unwrap();
        let bytes = stream::encode(&s);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(stream::read_stream(&bytes[..keep]).is_err());
    }

    #[test]
    fn simulator_respects_dead_time(
        dead in 0u64..60_000,
        extra in 1u64..200_000,
        shared in any::<bool>(),
        rate in 1e5f64..3e7,
        seed in any::<u64>(),
    ) {
        let mut a = ApparatusModel::new(100_000, 8, 2e-4, seed);
        a.dead_time_ps = dead;
        a.delay_line_ps = dead + extra;
        a.shared_dead_time = shared;
        let s = poisson_stream(rate, &a).unwrap();
        let h = s.header;
        for ch in 0..2 {
            let t: Vec<u64> = s.records.iter().filter(|r| r.channel == ch).map(|r| r.time_ps(&h)).collect();
            prop_assert!(t.windows(2).all(|w| w[1] - w[0] >= dead));
        }
        if shared {
            let t: Vec<u64> = s.records.iter().map(|r| r.time_ps(&h)).collect();
            prop_assert!(t.windows(2).all(|w| w[1] - w[0] >= dead));
        }
    }

    #[test]
    fn simulation_is_deterministic(p in 0.0f64..1.0, tau in 0.1f64..30.0, seed in any::<u64>()) {
        let a = ApparatusModel::new(50_000, 16, 2e-4, seed);
        let e = EmitterModel::steady(p, tau);
        prop_assert_eq!(simulate_stream(&e, &a).unwrap(), simulate_stream(&e, &a).unwrap());
    }

    #[test]
    fn parallel_histogram_matches(seed in any::<u64>(), chunks in 1usize..17, bins in 1u32..30) {
        let a = ApparatusModel::new(20_000, 4, 5e-4, seed);
        let s = poisson_stream(2e6, &a).unwrap();
        let cfg = G2Config { bins_per_pulse: 2 * bins + 1, max_delay_pulses: 3, ..Default::default() };
        let one = correlate::cross_correlate(&s, &cfg).unwrap();
        let many = correlate::cross_correlate_parallel(&s, &cfg, chunks).unwrap();
        prop_assert_eq!(one.raw, many.raw);
    }

    #[test]
    fn stokes_round_trip(
        s0 in 0.1f64..100.0,
        dop in 0.0f64..1.0,
        z in -1.0f64..1.0,
        phi in 0.0f64..2.0 * PI,
        delta_deg in 20.0f64..160.0,
        beta0 in -PI..PI,
        half in 5usize..20,
    ) {
        let rho = (1.0 - z * z).sqrt();
        let s = StokesVector::new(s0, s0 * dop * rho * phi.cos(), s0 * dop * rho * phi.sin(), s0 * dop * z);
        let cal = WaveplateCal { delta_rad: delta_deg.to_radians(), beta0_rad: beta0 };
        let beta = stokes::sweep_angles(2 * half, 2.0 * PI, 0.0);
        let sweep = PolarimetrySweep {
            transmitted: beta.iter().map(|&b| stokes::synthesize_intensity(&s, &cal, b)).collect(),
            beta_rad: beta,
            reflected: None,
        };
        let got = stokes::analyze_sweep(&sweep, &cal).unwrap().stokes;
        prop_assert!(got.max_abs_diff(&s) < 1e-9 * s0);
    }

    #[test]
    fn pulling_conserves_volume(
        r0 in 10e-6f64..100e-6,
        start in 2e-3f64..20e-3,
        walk in prop::collection::vec(-1.0f64..1.0, 50..400),
        pull_frac in 0.002f64..0.02,
    ) {
        // the flame wanders by up to 2 % per step, shrinking and regrowing
        let mut l = start;
        let mut steps = Vec::new();
        for w in walk {
            l = (l * (1.0 + 0.02 * w)).clamp(1e-3, 30e-3);
            steps.push(PullStep { hot_zone_m: l, elongation_m: pull_frac * l });
        }
        let traj = PullTrajectory { r0_m: r0, steps };
        let out = taper::simulate_pull_detailed(&traj).unwrap();
        let v = out.profile.volume();
        let v0 = out.initial_volume(r0);
        prop_assert!((v / v0 - 1.0).abs() < 1e-3, "{}", v / v0);
    }

    #[test]
    fn saturation_increases(p_sat in 1.0f64..1e6, i_sat in 0.01f64..100.0, lin in 0.0f64..10.0, a in 0.0f64..500.0, b in 0.0f64..500.0) {
        let p = SaturationParams { p_sat, i_sat, linear: lin };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi > lo * (1.0 + 1e-9) + 1e-12);
        prop_assert!(models::eval_saturation(&p, hi) > models::eval_saturation(&p, lo));
    }

    #[test]
    fn multi_exp_is_additive(a in prop::collection::vec(0.0f64..1e4, 3), tau in prop::collection::vec(0.1f64..50.0, 3), t in 0.0f64..100.0) {
        let all = MultiExpParams { amplitudes: a.clone(), lifetimes_ns: tau.clone(), t0_ns: 0.0, background: 0.0 };
        let sum: f64 = (0..3).map(|i| models::eval_multi_exp(&MultiExpParams::single(a[i], tau[i]), t)).sum();
        let whole = models::eval_multi_exp(&all, t);
        prop_assert!((whole - sum).abs() <= 1e-12 * sum.abs().max(1.0));
    }
}
