use serde::Serialize;
use serde_json::json;

use super::output::{num, Columns, Session, Table};
use super::*;
use crate::correlate::{self, BackgroundMethod, FarG2Series, G2Config, G2State};
use crate::fibermode::field::{surface_intensity_curve, He11Mode, Polarization};
use crate::fibermode::{self, FiberSpec, ModeFamily};
use crate::models;
use crate::simulate::{simulate_stream, Scenario};
use crate::stokes::{self, PolarimetrySweep, WaveplateCal};
use crate::stream::{self, PhotonStream};
use crate::taper::{self, DesignConstraints, PullStep, PullTrajectory, TaperProfile};
use crate::trace::{self, ChannelSelect, DecayHistogram};

pub(super) fn dispatch(cmd: &Command, argv: Vec<String>) -> Result<(), CliError> {
    match cmd {
        Command::Info(a) => info(a, argv),
        Command::Validate(a) => validate(a, argv),
        Command::Simulate(a) => simulate(a, argv),
        Command::Correlate(a) => correlate(a, argv),
        Command::Trace(a) => trace_cmd(a, argv),
        Command::Flid(a) => flid(a, argv),
        Command::Decay(a) => decay(a, argv),
        Command::Fit(a) => fit(a, argv),
        Command::Stokes(a) => stokes_cmd(a, argv),
        Command::Fiber(FiberCommand::Modes(a)) => fiber_modes(a, argv),
        Command::Fiber(FiberCommand::Field(a)) => fiber_field(a, argv),
        Command::Fiber(FiberCommand::Scan(a)) => fiber_scan(a, argv),
        Command::Taper(TaperCommand::Design(a)) => taper_design(a, argv),
        Command::Taper(TaperCommand::Simulate(a)) => taper_simulate(a, argv),
        Command::Taper(TaperCommand::Check(a)) => taper_check(a, argv),
    }
}

fn session(
    name: &str,
    argv: Vec<String>,
    out: &OutArgs,
    exts: &[&str],
) -> Result<Session, CliError> {
    let mut s = Session::new(name, argv, out.out.as_deref(), out.force);
    s.claim(exts)?;
    Ok(s)
}

fn load_stream(s: &mut Session, path: &str) -> Result<PhotonStream, CliError> {
    let bytes = s.read_input(path)?;
    let stream = stream::read_stream(&bytes[..])?;
    log::info!("{path}: {} records", stream.len());
    Ok(stream)
}

fn channel(c: ChannelArg) -> ChannelSelect {
    match c {
        ChannelArg::All => ChannelSelect::All,
        ChannelArg::Start => ChannelSelect::Only(0),
        ChannelArg::Stop => ChannelSelect::Only(1),
    }
}

fn bin_ps(bin_s: f64) -> Result<u64, CliError> {
    let ps = (bin_s * 1e12).round();
    if !(ps >= 1.0 && ps.is_finite()) {
        return Err(CliError::Usage(format!(
            "bin length {bin_s} s is not positive"
        )));
    }
    Ok(ps as u64)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

// ------------------------------------------------------------ streams

fn info(a: &InputArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("info", argv, &a.out, &["json"])?;
    let st = load_stream(&mut s, &a.input)?;
    let h = st.header;
    let counts: Vec<usize> = (0..h.n_channels).map(|c| st.count_channel(c)).collect();
    let balance = stream::channel_balance(&st).ok();
    s.emit_json(
        &json!({
            "version": h.version,
            "sync_period_ps": h.sync_period_ps,
            "resolution_ps": h.resolution_ps,
            "n_channels": h.n_channels,
            "n_records": h.n_records,
            "pulses_spanned": st.pulse_span(),
            "duration_s": st.pulse_span() as f64 * h.sync_period_ps as f64 * 1e-12,
            "counts_per_channel": counts,
            "channel_balance": balance,
        }),
        true,
    )?;
    s.finish()
}

fn validate(a: &InputArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("validate", argv, &a.out, &["json"])?;
    let st = load_stream(&mut s, &a.input)?;
    s.emit_json(&json!({ "valid": true, "n_records": st.len() }), true)?;
    s.finish()
}

fn simulate(a: &SimulateArgs, argv: Vec<String>) -> Result<(), CliError> {
    if a.out.out.is_none() {
        return Err(usage("simulate needs --out PREFIX (or - for stdout)"));
    }
    let mut s = session("simulate", argv, &a.out, &["pts", "json"])?;
    let text = s.read_input(&a.scenario)?;
    let mut sc: Scenario = serde_json::from_slice(&text)
        .map_err(|e| CliError::Input(format!("scenario {}: {e}", a.scenario)))?;
    if let Some(seed) = a.seed {
        sc.apparatus.seed = seed;
    }
    if let Some(d) = a.duration_s {
        sc.apparatus.duration_s = d;
    }
    log::info!("simulating {} pulses", sc.apparatus.n_pulses());
    let st = simulate_stream(&sc.emitter, &sc.apparatus)?;
    s.emit("pts", &stream::encode(&st), true)?;
    s.emit_json(
        &json!({
            "n_records": st.len(),
            "n_pulses": sc.apparatus.n_pulses(),
            "counts_per_channel": [st.count_channel(0), st.count_channel(1)],
            "seed": sc.apparatus.seed,
            "scenario": sc,
        }),
        false,
    )?;
    s.finish()
}

// ------------------------------------------------------------ correlate

fn correlate(a: &CorrelateArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut exts = vec!["csv", "json"];
    if a.far_horizon_s.is_some() {
        exts.push("far.csv");
    }
    let mut s = session("correlate", argv, &a.out, &exts)?;
    let st = load_stream(&mut s, &a.input)?;
    let cfg = G2Config {
        bins_per_pulse: a.bins_per_pulse,
        max_delay_pulses: a.max_delay_pulses,
        delay_line_ps: a.delay_line_ps,
        dead_time_ps: a.dead_time_ps,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let period = st.header.sync_period_ps as f64;
    let window = match &a.far_window_ps {
        Some(w) => (w[0], w[1]),
        None => {
            let m = a.max_delay_pulses as f64;
            ((0.8 * m).floor() * period, m * period)
        }
    };
    let raw = correlate::cross_correlate_parallel(&st, &cfg, rayon::current_num_threads() * 4)?;
    log::info!("{} coincidences", raw.raw.iter().sum::<u64>());
    let hist = if a.raw {
        let mut h = correlate::compensate_delay_line(&raw, cfg.delay_line_ps)?;
        if cfg.dead_time_ps > 0 {
            h = correlate::remove_dead_time_gap(&h)?;
        }
        h
    } else {
        let method = match a.background_method {
            BackgroundArg::Floor => BackgroundMethod::Floor,
            BackgroundArg::SquareRoot => BackgroundMethod::SquareRoot,
        };
        correlate::clean(&raw, &cfg, window, a.background.then_some(method))?
    };
    let g2_zero = if hist.state == G2State::Normalized {
        Some(correlate::g2_zero(&hist)?)
    } else {
        None
    };

    let mut t = Table::new(&["delay_s", "g2", "raw_counts"])?;
    for i in 0..hist.counts.len() {
        t.row([
            num(hist.delays_ps[i] * 1e-12),
            num(hist.counts[i]),
            hist.raw[i].to_string(),
        ])?;
    }
    s.emit_csv("csv", t, true)?;

    if let Some(h) = a.far_horizon_s {
        let far = correlate::far_peaks(&st, &cfg, bin_ps(h)?)?;
        s.emit_csv("far.csv", far_table(&far)?, false)?;
    }
    s.emit_json(
        &json!({
            "config": cfg,
            "state": format!("{:?}", hist.state),
            "g2_zero": g2_zero,
            "single_photon": g2_zero.map(|g| g.is_single_photon()),
            "far_window_ps": hist.far_window_ps,
            "background_per_bin": hist.background,
            "clamped_bins": hist.clamped_bins,
            "coincidences": raw.raw.iter().sum::<u64>(),
        }),
        false,
    )?;
    s.finish()
}

fn far_table(far: &FarG2Series) -> Result<Table, CliError> {
    let mut t = Table::new(&["delay_s", "height", "sigma"])?;
    for i in 0..far.peak_heights.len() {
        t.row([
            num(far.peak_delays_ps[i] * 1e-12),
            num(far.peak_heights[i]),
            num(far.sigma[i]),
        ])?;
    }
    Ok(t)
}

// ------------------------------------------------------------ traces

fn trace_cmd(a: &TraceArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut exts = vec!["csv", "json"];
    if a.threshold.is_some() {
        exts.push("durations.csv");
    }
    let mut s = session("trace", argv, &a.out, &exts)?;
    let st = load_stream(&mut s, &a.input)?;
    let tr = trace::bin_trace(&st, bin_ps(a.bin_s)?, channel(a.channel))?;
    let mut t = Table::new(&["time_s", "counts", "mean_delay_s"])?;
    let dt = tr.bin_duration_s();
    for (i, d) in tr.mean_delays_ps().into_iter().enumerate() {
        t.row([
            num(i as f64 * dt),
            tr.counts[i].to_string(),
            d.map_or(String::new(), |d| num(d * 1e-12)),
        ])?;
    }
    s.emit_csv("csv", t, true)?;
    let freq = trace::frequency_histogram(&tr)?;
    let total: u64 = tr.counts.iter().sum();
    let mut summary = json!({
        "bins": tr.len(),
        "bin_s": dt,
        "total_counts": total,
        "mean_counts_per_bin": total as f64 / tr.len().max(1) as f64,
        "frequency_histogram": freq,
    });
    if let Some(th) = a.threshold {
        let d = trace::on_off_durations(&tr, th)?;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        summary["threshold"] = json!(th);
        summary["on_periods"] = json!(d.on_durations.len());
        summary["off_periods"] = json!(d.off_durations.len());
        summary["mean_on_s"] = json!(mean(&d.on_durations));
        summary["mean_off_s"] = json!(mean(&d.off_durations));
        let mut t = Table::new(&["state", "duration_s"])?;
        for v in &d.on_durations {
            t.row(["on".to_string(), num(*v)])?;
        }
        for v in &d.off_durations {
            t.row(["off".to_string(), num(*v)])?;
        }
        s.emit_csv("durations.csv", t, false)?;
    }
    s.emit_json(&summary, false)?;
    s.finish()
}

fn flid(a: &FlidArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("flid", argv, &a.out, &["csv", "json"])?;
    let st = load_stream(&mut s, &a.input)?;
    let tr = trace::bin_trace(&st, bin_ps(a.bin_s)?, channel(a.channel))?;
    let m = trace::flid(&tr, a.intensity_bins, a.lifetime_bins)?;
    let (ic, lc) = (m.intensity_centres(), m.lifetime_centres());
    let mut t = Table::new(&["intensity_counts", "mean_delay_s", "occurrences"])?;
    for (i, row) in m.occurrences.iter().enumerate() {
        for (l, &n) in row.iter().enumerate() {
            t.row([num(ic[i]), num(lc[l] * 1e-12), n.to_string()])?;
        }
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({
            "correlation": trace::flid_correlation(&m).ok(),
            "bins_used": m.total(),
            "intensity_edges": m.intensity_edges,
            "lifetime_edges_s": m.lifetime_edges.iter().map(|e| e * 1e-12).collect::<Vec<_>>(),
        }),
        false,
    )?;
    s.finish()
}

fn decay(a: &DecayArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("decay", argv, &a.out, &["csv", "json"])?;
    let mut st = load_stream(&mut s, &a.input)?;
    if let Some(th) = a.threshold {
        let tr = trace::bin_trace(&st, bin_ps(a.bin_s)?, ChannelSelect::All)?;
        st = trace::threshold_select(&st, &tr, th)?;
        log::info!("{} photons in bins with at least {th} counts", st.len());
    }
    let h = trace::decay_histogram(&st, a.bins, channel(a.channel))?;
    s.emit_csv("csv", decay_table(&h, None)?, true)?;
    s.emit_json(&json!({ "photons": h.total(), "bin_width_s": h.bin_width_ps * 1e-12, "threshold": a.threshold }), false)?;
    s.finish()
}

fn decay_table(
    h: &DecayHistogram,
    model: Option<&models::MultiExpParams>,
) -> Result<Table, CliError> {
    let mut cols = vec!["time_s", "counts"];
    if model.is_some() {
        cols.push("model");
    }
    let mut t = Table::new(&cols)?;
    for (c, &n) in h.bin_centres_ps().iter().zip(&h.counts) {
        let mut row = vec![num(c * 1e-12), n.to_string()];
        if let Some(p) = model {
            row.push(num(models::eval_multi_exp(p, c * 1e-3)));
        }
        t.row(row)?;
    }
    Ok(t)
}

// ------------------------------------------------------------ fits

fn fit(a: &FitArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("fit", argv, &a.out, &["csv", "json"])?;
    let table = Columns::parse(&s.read_input(&a.input)?)?;
    match a.model {
        FitModel::Multiexp => {
            let t = table.floats(table.index("time_s", 0)?)?;
            let counts = table.floats(table.index("counts", 1)?)?;
            if t.len() < 2 {
                return Err(CliError::Input(
                    "decay table needs at least two rows".into(),
                ));
            }
            let h = DecayHistogram {
                bin_width_ps: (t[1] - t[0]) * 1e12,
                counts: counts.iter().map(|&c| c.max(0.0).round() as u64).collect(),
            };
            let report = models::fit_multi_exp(&h, a.components)?;
            s.emit_csv("csv", decay_table(&h, Some(&report.params))?, true)?;
            s.emit_json(&report, false)?;
        }
        FitModel::Saturation => {
            let x = table.floats(table.index("intensity", 0)?)?;
            let y = table.floats(table.index("rate", 1)?)?;
            let pts: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
            let report = models::fit_saturation(&pts)?;
            let mut t = Table::new(&["intensity", "rate", "model"])?;
            for &(i, r) in &pts {
                t.row([
                    num(i),
                    num(r),
                    num(models::eval_saturation(&report.params, i)),
                ])?;
            }
            s.emit_csv("csv", t, true)?;
            s.emit_json(&report, false)?;
        }
        FitModel::Powerlaw => {
            let mut d =
                table.floats(table.index("duration_s", if table.has("state") { 1 } else { 0 })?)?;
            if let Some(want) = a.state {
                let col = table
                    .index("state", usize::MAX)
                    .map_err(|_| usage("--state needs a state column"))?;
                let tag = if want == StateArg::On { "on" } else { "off" };
                d = d
                    .into_iter()
                    .zip(table.strings(col))
                    .filter(|(_, st)| st == tag)
                    .map(|(v, _)| v)
                    .collect();
            }
            let report = models::fit_power_law(&d, a.truncated)?;
            s.emit_csv("csv", power_law_table(&d, &report.params)?, true)?;
            s.emit_json(
                &json!({ "fit": report, "regime": format!("{:?}", report.params.regime()) }),
                false,
            )?;
        }
        FitModel::G2blink => {
            let tau_min = a
                .tau_min_s
                .ok_or_else(|| usage("g2blink needs --tau-min-s"))?;
            let series = FarG2Series {
                peak_delays_ps: table
                    .floats(table.index("delay_s", 0)?)?
                    .iter()
                    .map(|d| d * 1e12)
                    .collect(),
                peak_heights: table.floats(table.index("height", 1)?)?,
                sigma: table.floats(table.index("sigma", 2)?)?,
            };
            let report = models::fit_blinking_g2(&series, positive("tau-min-s", tau_min)?)?;
            let mut t = Table::new(&["delay_s", "height", "model"])?;
            for (d, h) in series.peak_delays_ps.iter().zip(&series.peak_heights) {
                t.row([
                    num(d * 1e-12),
                    num(*h),
                    num(models::eval_blinking_g2(&report.params, d * 1e-12)),
                ])?;
            }
            s.emit_csv("csv", t, true)?;
            s.emit_json(&report, false)?;
        }
    }
    s.finish()
}

/// Log-binned empirical density against the fitted one.
fn power_law_table(d: &[f64], p: &models::PowerLawParams) -> Result<Table, CliError> {
    let mut t = Table::new(&["duration_s", "empirical_pdf", "model_pdf"])?;
    let lo = p
        .tau_min_s
        .max(d.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = d.iter().copied().fold(0.0, f64::max);
    if !(hi > lo) {
        return Ok(t);
    }
    let n_bins = 30;
    let ratio = (hi / lo).powf(1.0 / n_bins as f64);
    let mut counts = vec![0usize; n_bins];
    for &v in d.iter().filter(|&&v| v >= lo) {
        let k = ((v / lo).ln() / ratio.ln()) as usize;
        counts[k.min(n_bins - 1)] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let (a, b) = (lo * ratio.powi(k as i32), lo * ratio.powi(k as i32 + 1));
        let centre = (a * b).sqrt();
        t.row([
            num(centre),
            num(c as f64 / (d.len() as f64 * (b - a))),
            num(models::power_law_pdf(p, centre)),
        ])?;
    }
    Ok(t)
}

fn stokes_cmd(a: &StokesArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("stokes", argv, &a.out, &["csv", "json"])?;
    let table = Columns::parse(&s.read_input(&a.input)?)?;
    let sweep = PolarimetrySweep {
        beta_rad: table.floats(table.index("beta_rad", 0)?)?,
        transmitted: table.floats(table.index("transmitted", 1)?)?,
        reflected: if table.has("reflected") || table.headers.len() > 2 {
            Some(table.floats(table.index("reflected", 2)?)?)
        } else {
            None
        },
    };
    let cal = WaveplateCal {
        delta_rad: a.delta_deg.to_radians(),
        beta0_rad: a.beta0_deg.to_radians(),
    };
    let used = if sweep.reflected.is_some() {
        stokes::normalize_two_channel(&sweep)?
    } else {
        sweep
    };
    let coeffs = stokes::fourier_coefficients(&used)?;
    let rec = stokes::recover_stokes(&coeffs, &cal)?;
    let mut t = Table::new(&["beta_rad", "transmitted", "model"])?;
    for (b, y) in used.beta_rad.iter().zip(&used.transmitted) {
        t.row([num(*b), num(*y), num(coeffs.eval(*b))])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({
            "recovery": rec,
            "coefficients": coeffs,
            "degrees": stokes::polarization_degrees(&rec.stokes).ok(),
            "poincare": stokes::poincare_coords(&rec.stokes).ok(),
        }),
        false,
    )?;
    s.finish()
}

// ------------------------------------------------------------ fibers

fn spec(i: &IndexArgs, radius_m: f64) -> Result<FiberSpec, CliError> {
    FiberSpec::new(i.n_core, i.n_clad, radius_m, i.wavelength_m).map_err(|e| usage(e.to_string()))
}

#[derive(Serialize)]
struct ModeRow {
    label: String,
    n_eff: f64,
}

fn fiber_modes(a: &ModesArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("fiber modes", argv, &a.out, &["csv", "json"])?;
    let sp = spec(&a.index, a.radius_m)?;
    let lp = fibermode::solve_lp_modes(&sp);
    let modes = if a.exact {
        let v_max = sp.v_number().ceil() as u32 + 1;
        fibermode::solve_exact_modes(
            &sp,
            v_max,
            &[
                ModeFamily::HE,
                ModeFamily::EH,
                ModeFamily::TE,
                ModeFamily::TM,
            ],
        )
    } else {
        lp.clone()
    };
    let mut t = Table::new(&[
        "label",
        "family",
        "azimuthal",
        "radial",
        "x",
        "y",
        "beta_per_m",
        "n_eff",
    ])?;
    for m in &modes {
        t.row([
            m.label(),
            format!("{:?}", m.family),
            m.azimuthal.to_string(),
            m.radial.to_string(),
            num(m.x),
            num(m.y),
            num(m.beta),
            num(m.n_eff),
        ])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({
            "v_number": sp.v_number(),
            "numerical_aperture": sp.numerical_aperture(),
            "single_mode": lp.len() == 1,
            "modes": modes.iter().map(|m| ModeRow { label: m.label(), n_eff: m.n_eff }).collect::<Vec<_>>(),
        }),
        false,
    )?;
    s.finish()
}

fn fiber_field(a: &FieldArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("fiber field", argv, &a.out, &["csv", "json"])?;
    let sp = spec(&a.index, a.radius_m)?;
    let mode = He11Mode::solve(&sp)?;
    let pol = match a.polarization {
        PolarizationArg::Circular => Polarization::QuasiCircular { p: 1 },
        PolarizationArg::Linear => Polarization::QuasiLinear { phi0: a.phi0_rad },
    };
    let r_max = positive("r-max-m", a.r_max_m.unwrap_or(3.0 * a.radius_m))?;
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let cols = [
        "r_m",
        "e_r_re",
        "e_r_im",
        "e_phi_re",
        "e_phi_im",
        "e_z_re",
        "e_z_im",
        "intensity",
    ];
    let mut t = Table::new(&cols)?;
    for k in 0..a.points {
        let r = r_max * k as f64 / (a.points - 1) as f64;
        let f = mode.field(r, a.phi_rad, pol, 1);
        t.row([
            num(r),
            num(f.e_r.re),
            num(f.e_r.im),
            num(f.e_phi.re),
            num(f.e_phi.im),
            num(f.e_z.re),
            num(f.e_z.im),
            num(f.intensity()),
        ])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({
            "mode": mode.solution,
            "hybrid_parameter": mode.s,
            "power_fractions": mode.power_fractions(),
            "surface_intensity": mode.surface_intensity(),
            "boundary_mismatch": mode.boundary_report(),
        }),
        false,
    )?;
    s.finish()
}

fn fiber_scan(a: &ScanArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("fiber scan", argv, &a.out, &["csv", "json"])?;
    let (lo, hi) = (
        positive("r-min-m", a.r_min_m)?,
        positive("r-max-m", a.r_max_m)?,
    );
    if hi <= lo || a.points < 2 {
        return Err(usage("need r-min-m < r-max-m and at least 2 points"));
    }
    spec(&a.index, lo)?;
    let radii: Vec<f64> = (0..a.points)
        .map(|k| lo + (hi - lo) * k as f64 / (a.points - 1) as f64)
        .collect();
    log::info!("solving {} radii", radii.len());
    let scan =
        surface_intensity_curve(a.index.n_core, a.index.n_clad, a.index.wavelength_m, &radii)?;
    let mut t = Table::new(&[
        "radius_m",
        "surface_intensity",
        "normalized",
        "inside_fraction",
        "outside_fraction",
    ])?;
    for p in &scan.points {
        t.row([
            num(p.radius_m),
            num(p.intensity),
            num(p.normalized),
            num(p.inside_fraction),
            num(p.outside_fraction),
        ])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({ "best_radius_m": scan.best_radius_m, "points": scan.points.len() }),
        false,
    )?;
    s.finish()
}

// ------------------------------------------------------------ tapers

fn read_profile(s: &mut Session, path: &str) -> Result<TaperProfile, CliError> {
    let t = Columns::parse(&s.read_input(path)?)?;
    Ok(TaperProfile::new(
        t.floats(t.index("z_m", 0)?)?,
        t.floats(t.index("r_m", 1)?)?,
    )?)
}

fn profile_table(p: &TaperProfile) -> Result<Table, CliError> {
    let mut t = Table::new(&["z_m", "r_m"])?;
    for (z, r) in p.z_m.iter().zip(&p.r_m) {
        t.row([num(*z), num(*r)])?;
    }
    Ok(t)
}

fn taper_design(a: &DesignArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session(
        "taper design",
        argv,
        &a.out,
        &["csv", "json", "profile.csv", "stages.txt"],
    )?;
    let target = match (&a.target, a.r0_m, a.hot_zone_m, a.elongation_m) {
        (Some(path), ..) => read_profile(&mut s, path)?,
        (None, Some(r0), Some(l), Some(x)) => taper::fixed_flame_profile(r0, l, x)?,
        _ => {
            return Err(usage(
                "give --target, or all of --r0-m, --hot-zone-m and --elongation-m",
            ))
        }
    };
    let c = DesignConstraints {
        max_transition_m: a.max_transition_m,
        min_hot_zone_m: a.min_hot_zone_m,
        step_m: a.step_m,
        floor_m: a.floor_m,
    };
    log::info!("designing a schedule for {} target points", target.len());
    let traj = taper::design_trajectory(&target, &c)?;
    let drawn = taper::simulate_pull(&traj)?;
    let worst = drawn
        .z_m
        .iter()
        .zip(&drawn.r_m)
        .map(|(&z, &r)| (r / target.radius_at(z) - 1.0).abs())
        .fold(0.0, f64::max);

    let mut t = Table::new(&["hot_zone_m", "elongation_m"])?;
    for st in &traj.steps {
        t.row([num(st.hot_zone_m), num(st.elongation_m)])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_csv("profile.csv", profile_table(&drawn)?, false)?;
    s.emit("stages.txt", traj.stage_instructions().as_bytes(), false)?;
    s.emit_json(
        &json!({
            "r0_m": traj.r0_m,
            "steps": traj.steps.len(),
            "total_elongation_m": traj.total_elongation(),
            "waist_radius_m": drawn.waist_radius(),
            "max_relative_radius_error": worst,
        }),
        false,
    )?;
    s.finish()
}

fn taper_simulate(a: &TaperSimArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("taper simulate", argv, &a.out, &["csv", "json"])?;
    let t = Columns::parse(&s.read_input(&a.trajectory)?)?;
    let l = t.floats(t.index("hot_zone_m", 0)?)?;
    let x = t.floats(t.index("elongation_m", 1)?)?;
    let traj = PullTrajectory {
        r0_m: a.r0_m,
        steps: l
            .into_iter()
            .zip(x)
            .map(|(hot_zone_m, elongation_m)| PullStep {
                hot_zone_m,
                elongation_m,
            })
            .collect(),
    };
    let out = taper::simulate_pull_detailed(&traj)?;
    s.emit_csv("csv", profile_table(&out.profile)?, true)?;
    s.emit_json(
        &json!({
            "waist_radius_m": out.profile.waist_radius(),
            "processed_length_m": out.processed_length_m,
            "volume_m3": out.profile.volume(),
            "initial_volume_m3": out.initial_volume(a.r0_m),
            "total_elongation_m": traj.total_elongation(),
        }),
        false,
    )?;
    s.finish()
}

fn taper_check(a: &CheckArgs, argv: Vec<String>) -> Result<(), CliError> {
    let mut s = session("taper check", argv, &a.out, &["csv", "json"])?;
    let profile = read_profile(&mut s, &a.profile)?;
    let base = spec(&a.index, profile.r_m[0])?;
    log::info!("checking {} profile points", profile.len());
    let rep = taper::adiabaticity_check(&profile, &base, a.factor)?;
    let mut t = Table::new(&[
        "z_m",
        "r_m",
        "taper_angle_rad",
        "delineation_rad",
        "factor",
        "second_mode_guided",
    ])?;
    for i in 0..rep.z_m.len() {
        t.row([
            num(rep.z_m[i]),
            num(rep.r_m[i]),
            num(rep.taper_angle[i]),
            num(rep.delineation[i]),
            num(rep.factor[i]),
            rep.second_mode_guided[i].to_string(),
        ])?;
    }
    s.emit_csv("csv", t, true)?;
    s.emit_json(
        &json!({
            "pass": rep.pass,
            "threshold": rep.threshold,
            "max_factor": rep.max_factor,
            "worst_z_m": rep.worst_z_m,
            "worst_radius_m": rep.r_m[rep.worst_index],
        }),
        false,
    )?;
    s.finish()
}
