//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use mocobo::channel::{
    ev_concentration, frequency_response, iv_concentration, DoseEvent, DoseSchedule, Normalization,
    PkParams, Route,
};
use mocobo::engine::{render, Engine};
use mocobo::estimation::{fit_least_squares, fit_residuals, model_gradient, ConcentrationSeries};
use mocobo::modem::{detect, frame, DetectorSettings, Link};
use mocobo::platform::{mass_audit, plan_flows, plan_volumes, simulate_platform};
use mocobo::scenario::{builtin, Scenario, BUILTIN_NAMES};
use mocobo::signal::{
    convolve, deconvolve, inverse_filter_iv, relative_sup_difference, sample,
    sample_impulse_response, spectrum, Deconvolution, SampledSignal, SignalRole,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn scenarios() -> Vec<Scenario> {
    BUILTIN_NAMES.iter().map(|n| builtin(n).unwrap()).collect()
}

fn routes_of(p: &PkParams) -> Vec<Route> {
    if p.ka.is_some() {
        vec![Route::Intravenous, Route::Extravascular]
    } else {
        vec![Route::Intravenous]
    }
}

fn flow_planning() -> Outcome {
    let (q_a, q_e) = plan_flows(2.89e-4, 4.47e-5, 355.0, 2292.0).map_err(|e| e.to_string())?;
    let (v_a, v_b) = plan_volumes(1.69e-4, 5.08e-4, 1.025e-1).map_err(|e| e.to_string())?;
    let worst_q = rel(q_a, 1.025e-1).max(rel(q_e, 1.025e-1));
    let worst_v = rel(v_a, 605.0).max(rel(v_b, 202.0));
    ensure(
        worst_q <= 0.005 && worst_v <= 0.01,
        format!("flows ({q_a:.5}, {q_e:.5}) mL/s off by {worst_q:.2e}; volumes ({v_a:.1}, {v_b:.1}) mL off by {worst_v:.2e}"),
    )
}

fn volume_discrepancy() -> Outcome {
    let output = Command::new(env!("CARGO_BIN_EXE_mocobo"))
        .args([
            "plan", "--ka", "3.27e-3", "--ke", "1.51e-3", "--mode", "volumes", "--q", "0.98",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    let golden = include_str!("golden/plan_testbed_volumes.txt");
    let (v_a, v_b) = plan_volumes(3.27e-3, 1.51e-3, 0.98).map_err(|e| e.to_string())?;
    ensure(
        output.status.success()
            && stdout == golden
            && (v_a - 299.7).abs() < 0.05
            && (v_b - 649.0).abs() < 0.05,
        format!(
            "computed ({v_a:.1}, {v_b:.1}) vs listed (650, 300); golden output match: {}",
            stdout == golden
        ),
    )
}

fn oracle_triangle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for s in scenarios() {
        let schedule = s.schedule().map_err(|e| e.to_string())?;
        let min_rate = s.pk.slowest_rate(s.route);
        let horizon = s.grid.horizon.max(12.0 / min_rate);
        let run =
            |e| render(e, &s.pk, s.route, None, &schedule, 1.0, horizon).map_err(|e| e.to_string());
        let a = run(Engine::Analytic)?;
        let c = run(Engine::Convolution)?;
        let o = run(Engine::Ode)?;
        let d = [
            relative_sup_difference(a.samples(), c.samples()),
            relative_sup_difference(a.samples(), o.samples()),
            relative_sup_difference(c.samples(), o.samples()),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        notes.push(format!("{}={d:.1e}", s.name));
        worst = worst.max(d);
    }
    ensure(
        worst <= 1e-3,
        format!("worst pairwise {worst:.2e} [{}]", notes.join(" ")),
    )
}

fn impulse_areas() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in scenarios() {
        for route in routes_of(&s.pk) {
            let horizon = 20.0 / s.pk.slowest_rate(route);
            let dt = 1.0;
            let n = (horizon / dt) as usize + 1;
            let h = sample_impulse_response(&s.pk, route, Normalization::Concentration, dt, n)
                .map_err(|e| e.to_string())?;
            let expected = match route {
                Route::Intravenous => 1.0 / (s.pk.v * s.pk.ke),
                Route::Extravascular => s.pk.f / (s.pk.v * s.pk.ke),
            };
            let dc = frequency_response(&s.pk, route, 0.0).map_err(|e| e.to_string())?;
            worst = worst
                .max(rel(h.integral(), expected))
                .max(rel(dc.re / s.pk.v, expected));
        }
    }
    ensure(
        worst <= 1e-4,
        format!("worst relative area error {worst:.2e}"),
    )
}

fn spectrum_match() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bins = 0;
    for s in scenarios() {
        let ka = s.pk.ka.unwrap_or(s.pk.ke);
        for route in routes_of(&s.pk) {
            let dt = 5e-4 / s.pk.fastest_rate(Route::Extravascular);
            let horizon = 25.0 / s.pk.slowest_rate(route);
            let n = (horizon / dt) as usize;
            let h = sample_impulse_response(&s.pk, route, Normalization::Amount, dt, n)
                .map_err(|e| e.to_string())?;
            let spec = spectrum(&h).map_err(|e| e.to_string())?;
            for (w, v) in spec.omega.iter().zip(&spec.values) {
                if *w < 0.0 || *w > 10.0 * ka {
                    continue;
                }
                let exact = frequency_response(&s.pk, route, *w).map_err(|e| e.to_string())?;
                worst = worst.max((v - exact).norm() / exact.norm());
                bins += 1;
            }
        }
    }
    ensure(
        worst <= 0.01,
        format!("worst relative error {worst:.2e} over {bins} bins"),
    )
}

fn end_to_end_link() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["link-iv", "link-ev"] {
        let s = builtin(name).unwrap();
        let modulation = s.modulation_config().unwrap().unwrap();
        let payload = s.payload().unwrap().unwrap();
        let bits = frame(&payload).bits();
        for engine in [Engine::Analytic, Engine::Platform] {
            let link = Link {
                params: s.pk,
                modulation,
                detector: DetectorSettings::default(),
                engine,
                platform: s.platform_config().unwrap(),
                dt: s.grid.dt,
                tail: s.grid.horizon - bits.len() as f64 * modulation.symbol_period,
            };
            let (_, received) = link.transmit(&payload).map_err(|e| e.to_string())?;
            let report = link
                .receive(&received, &payload)
                .map_err(|e| e.to_string())?;
            let errors = report.bit_errors.unwrap_or(usize::MAX);

            let sharp = DetectorSettings {
                deconvolution: Deconvolution::regularized(0.0),
                ..DetectorSettings::default()
            };
            let exact = detect(&received, &s.pk, &modulation, payload.len(), &sharp)
                .map_err(|e| e.to_string())?;
            let x = exact.recovered.samples();
            let per = (modulation.symbol_period / s.grid.dt).round() as usize;
            let mut worst_offset = 0usize;
            for (i, &bit) in bits.iter().enumerate() {
                if !bit {
                    continue;
                }
                let w = &x[i * per..(i + 1) * per];
                let peak = w.iter().cloned().fold(f64::MIN, f64::max);
                let first = w.iter().position(|&v| v >= 0.5 * peak).unwrap_or(per);
                worst_offset = worst_offset.max(first);
            }
            ok &= errors == 0 && exact.payload == payload && worst_offset <= 1;
            notes.push(format!(
                "{name}/{engine}: errors={errors} spike_offset={worst_offset}"
            ));
        }
    }
    ensure(ok, notes.join("; "))
}

fn deconvolution_round_trip() -> Outcome {
    let p = PkParams::intravenous(1.51e-3, 649.0).map_err(|e| e.to_string())?;
    let dt = 1.0;
    let n = 4000;
    let schedule = DoseSchedule::new(vec![
        DoseEvent::infusion(0.0, 130.0, 10.0),
        DoseEvent::infusion(600.0, 130.0, 10.0),
        DoseEvent::infusion(2400.0, 130.0, 10.0),
    ])
    .map_err(|e| e.to_string())?;
    let x = schedule
        .to_input(Route::Intravenous, 0.0, dt, n)
        .map_err(|e| e.to_string())?;
    let h = sample_impulse_response(&p, Route::Intravenous, Normalization::Concentration, dt, n)
        .map_err(|e| e.to_string())?;
    let y = convolve(&x, &h).map_err(|e| e.to_string())?;
    let xr = deconvolve(&y, &h, Deconvolution::regularized(0.0)).map_err(|e| e.to_string())?;
    let round_trip = relative_sup_difference(x.samples(), &xr.samples()[..n]);

    // smooth input for the analytic inverse comparison
    let dt = 0.1;
    let m = 40_000;
    let bump = sample(
        |t| 0.05 * (-((t - 1500.0) / 300.0).powi(2)).exp(),
        0.0,
        dt,
        m,
        SignalRole::MassRate,
    )
    .map_err(|e| e.to_string())?;
    let h = sample_impulse_response(&p, Route::Intravenous, Normalization::Concentration, dt, m)
        .map_err(|e| e.to_string())?;
    let y = convolve(&bump, &h).map_err(|e| e.to_string())?;
    let y = SampledSignal::new(
        0.0,
        dt,
        y.samples()[..m].to_vec(),
        SignalRole::Concentration,
    )
    .map_err(|e| e.to_string())?;
    let inv = inverse_filter_iv(&y, p.ke, p.v).map_err(|e| e.to_string())?;
    let reg = deconvolve(&y, &h, Deconvolution::regularized(0.0)).map_err(|e| e.to_string())?;
    let interior = 1..m - 1;
    let filter_gap =
        relative_sup_difference(&inv.samples()[interior.clone()], &reg.samples()[interior]);
    ensure(
        round_trip <= 1e-6 && filter_gap <= 1e-3,
        format!("round trip {round_trip:.2e}; inverse filter vs regularized {filter_gap:.2e}"),
    )
}

fn mass_conservation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut traces = 0;
    for s in scenarios() {
        let Some(platform) = s.platform_config().map_err(|e| e.to_string())? else {
            continue;
        };
        let schedule = s.schedule().map_err(|e| e.to_string())?;
        let trace = simulate_platform(&platform, &schedule, s.grid.dt, s.grid.horizon)
            .map_err(|e| e.to_string())?;
        worst = worst.max(mass_audit(&trace));
        traces += 1;
    }
    ensure(
        worst < 1e-9,
        format!("worst audit {worst:.2e} over {traces} traces"),
    )
}

fn synthetic(p: &PkParams, route: Route, noise: Option<u64>) -> ConcentrationSeries {
    let dose = 130.0;
    let t: Vec<f64> = (0..150).map(|i| i as f64 * 60.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.unwrap_or(0));
    let normal = Normal::new(0.0, 0.01).unwrap();
    let c = t
        .iter()
        .map(|&ti| {
            let clean = match route {
                Route::Intravenous => iv_concentration(p, dose, ti).unwrap(),
                Route::Extravascular => ev_concentration(p, dose, ti).unwrap(),
            };
            match noise {
                Some(_) => clean * (1.0 + normal.sample(&mut rng)),
                None => clean,
            }
        })
        .collect();
    ConcentrationSeries::new(t, c, route, dose).unwrap()
}

fn fit_recovery() -> Outcome {
    let truth = PkParams::extravascular(3.27e-3, 1.51e-3, 1.0, 649.0).map_err(|e| e.to_string())?;
    let start = PkParams::extravascular(2.0 * 3.27e-3, 2.0 * 1.51e-3, 1.0, 649.0 / 2.0)
        .map_err(|e| e.to_string())?;
    let err = |p: &PkParams, route: Route| -> f64 {
        let e = rel(p.ke, truth.ke);
        match route {
            Route::Intravenous => e,
            Route::Extravascular => e.max(rel(p.ka.unwrap(), truth.ka.unwrap())),
        }
    };
    let (mut res_clean, mut lsq_clean, mut res_noisy, mut lsq_noisy) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for route in [Route::Intravenous, Route::Extravascular] {
        for (noise, res_slot, lsq_slot) in [
            (None, &mut res_clean, &mut lsq_clean),
            (Some(7), &mut res_noisy, &mut lsq_noisy),
        ] {
            let data = synthetic(&truth, route, noise);
            let r = fit_residuals(&data).map_err(|e| e.to_string())?;
            let l = fit_least_squares(&data, &start).map_err(|e| e.to_string())?;
            *res_slot = res_slot.max(err(r.params(), route));
            *lsq_slot = lsq_slot.max(err(l.params(), route));
        }
    }

    let mut jac: f64 = 0.0;
    for (route, theta) in [
        (Route::Intravenous, vec![1.51e-3, 0.2]),
        (Route::Extravascular, vec![3.27e-3, 1.51e-3, 0.2]),
    ] {
        for t in [30.0, 439.0, 2000.0, 6000.0] {
            let (_, grad) = model_gradient(route, &theta, t).map_err(|e| e.to_string())?;
            for j in 0..theta.len() {
                let h = theta[j] * 1e-5;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (model_gradient(route, &up, t).unwrap().0
                    - model_gradient(route, &dn, t).unwrap().0)
                    / (2.0 * h);
                jac = jac.max(rel(grad[j], fd));
            }
        }
    }
    ensure(
        res_clean <= 0.01 && lsq_clean <= 1e-4 && res_noisy <= 0.05 && lsq_noisy <= 0.05 && jac <= 1e-6,
        format!(
            "noiseless residuals {res_clean:.1e}, lsq {lsq_clean:.1e}; 1% noise residuals {res_noisy:.1e}, lsq {lsq_noisy:.1e}; jacobian {jac:.1e}"
        ),
    )
}

fn noise_robustness() -> Outcome {
    let s = builtin("link-iv").unwrap();
    let modulation = s.modulation_config().unwrap().unwrap();
    let payload_len = 8;
    let link = Link {
        params: s.pk,
        modulation,
        detector: DetectorSettings::default(),
        engine: Engine::Analytic,
        platform: None,
        dt: s.grid.dt,
        tail: s.grid.horizon - (3 + payload_len) as f64 * modulation.symbol_period,
    };
    let sigmas = [0.1, 0.15, 0.2, 0.25, 0.3];
    let points = link
        .ber_sweep(&sigmas, 0.0, 0.0, 100, payload_len, 2024)
        .map_err(|e| e.to_string())?;
    let bers: Vec<f64> = points.iter().map(|p| p.ber()).collect();
    let monotone = bers.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        monotone,
        format!(
            "BER by sigma: {}",
            sigmas
                .iter()
                .zip(&bers)
                .map(|(s, b)| format!("{s}:{b:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "flow and volume planning matches reference setups",
            flow_planning,
        ),
        ("testbed volume discrepancy warning", volume_discrepancy),
        (
            "analytic, convolution and ODE engines agree",
            oracle_triangle,
        ),
        ("impulse response areas", impulse_areas),
        (
            "sampled spectrum matches frequency response",
            spectrum_match,
        ),
        (
            "end-to-end link recovers the reference frame",
            end_to_end_link,
        ),
        (
            "deconvolution round trip and inverse filter",
            deconvolution_round_trip,
        ),
        ("platform mass conservation", mass_conservation),
        ("parameter fits recover testbed constants", fit_recovery),
        ("BER non-decreasing in noise level", noise_robustness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
