//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::channel::{Normalization, Route};
use crate::engine::{grid_len, render, Engine};
use crate::error::{config, Error, Result};
use crate::estimation::{fit_least_squares, fit_residuals, ConcentrationSeries};
use crate::modem::{frame, DetectorSettings, Link};
use crate::platform::{plan_flows, plan_volumes};
use crate::scenario::{builtin, volume_warning, Scenario, BUILTIN_NAMES};
use crate::signal::{relative_sup_difference, sample_impulse_response, Deconvolution};

#[derive(Debug, Parser)]
#[command(
    name = "mocobo",
    version,
    about = "Pharmacokinetic molecular communication simulator"
)]
pub struct Cli {
    /// Built-in scenario name, scenario file path, or name in $MOCOBO_SCENARIO_DIR
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Override the sample interval (s)
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Override the simulation horizon (s)
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Override the noise seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write CSV output here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Channel engine used by `link`
    #[arg(long, global = true, value_enum)]
    pub engine: Option<EngineArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EngineArg {
    Analytic,
    Convolution,
    Ode,
    Platform,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Analytic => Engine::Analytic,
            EngineArg::Convolution => Engine::Convolution,
            EngineArg::Ode => Engine::Ode,
            EngineArg::Platform => Engine::Platform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RouteArg {
    Iv,
    Ev,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Iv => Route::Intravenous,
            RouteArg::Ev => Route::Extravascular,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Residuals,
    Lsq,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlanMode {
    /// Fixed volumes, solve for pump flows
    Flows,
    /// Fixed equal flow, solve for beaker volumes
    Volumes,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sampled impulse responses of both routes
    Impulse,
    /// Scenario schedule through every engine, side by side
    Simulate,
    /// Modulate, transmit, add noise and detect a frame
    Link {
        /// Relative Tikhonov weight for deconvolution (0 = plain inverse)
        #[arg(long)]
        lambda: Option<f64>,
        /// Decision threshold as a fraction of the dose mass
        #[arg(long)]
        threshold: Option<f64>,
        /// Gaussian noise standard deviation (mg/mL)
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated noise levels for a BER sweep
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        /// Frames per sweep level
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Payload bits per sweep frame (defaults to the scenario payload length)
        #[arg(long)]
        payload_len: Option<usize>,
    },
    /// Fit channel parameters to a concentration CSV
    Fit {
        path: PathBuf,
        #[arg(long, value_enum)]
        route: Option<RouteArg>,
        #[arg(long, value_enum, default_value = "lsq")]
        method: MethodArg,
        /// Administered mass (mg); defaults to the scenario's total dose
        #[arg(long)]
        dose: Option<f64>,
        /// Concentration column (default `c`, else the second column)
        #[arg(long)]
        column: Option<String>,
    },
    /// Size a bench platform for given rate constants
    Plan {
        #[arg(long)]
        ka: f64,
        #[arg(long)]
        ke: f64,
        #[arg(long, value_enum)]
        mode: PlanMode,
        #[arg(long)]
        va: Option<f64>,
        #[arg(long)]
        vb: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
    },
    /// List or print built-in scenarios
    Scenarios {
        #[arg(long)]
        list: bool,
        /// Print one scenario as a scenario file
        #[arg(long)]
        show: Option<String>,
    },
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_scenario(cli: &Cli, default: &str) -> Result<Scenario> {
    let mut s = Scenario::resolve(cli.scenario.as_deref().unwrap_or(default))?;
    if let Some(dt) = cli.dt {
        s.grid.dt = dt;
    }
    if let Some(h) = cli.horizon {
        s.grid.horizon = h;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Impulse => impulse(&cli),
        Command::Simulate => simulate(&cli),
        Command::Link {
            lambda,
            threshold,
            sigma,
            sweep,
            frames,
            payload_len,
        } => {
            let s = load_scenario(&cli, "link-iv")?;
            let mut detector = DetectorSettings::default();
            if let Some(l) = lambda {
                detector.deconvolution = Deconvolution::regularized(*l);
            }
            if let Some(t) = threshold {
                detector.threshold_fraction = *t;
            }
            let mut noise = s.noise;
            if let Some(sg) = sigma {
                noise.sigma = *sg;
            }
            let engine = cli.engine.map_or(Engine::Analytic, Engine::from);
            let link = build_link(&s, engine, detector)?;
            let mut out = open_output(cli.out.as_deref())?;
            match sweep {
                Some(levels) => {
                    let len = payload_len.unwrap_or(link_payload(&s)?.len());
                    let points = link.ber_sweep(
                        levels,
                        noise.spike_prob,
                        noise.spike_scale,
                        *frames,
                        len,
                        s.seed,
                    )?;
                    writeln!(out, "sigma,bits,errors,lost_frames,ber")?;
                    for p in points {
                        writeln!(
                            out,
                            "{},{},{},{},{}",
                            p.sigma,
                            p.bits,
                            p.errors,
                            p.lost_frames,
                            p.ber()
                        )?;
                    }
                }
                None => {
                    let payload = link_payload(&s)?;
                    let report = link.run(&payload, &noise, s.seed)?;
                    report.write_csv(&mut out)?;
                    eprintln!("sent={}", frame(&payload));
                    eprintln!("received={}", frame(&report.payload));
                    eprintln!("{}", report.summary_line());
                }
            }
            out.flush()?;
            Ok(())
        }
        Command::Fit {
            path,
            route,
            method,
            dose,
            column,
        } => fit(&cli, path, *route, *method, *dose, column.as_deref()),
        Command::Plan {
            ka,
            ke,
            mode,
            va,
            vb,
            q,
        } => plan(&cli, *ka, *ke, *mode, *va, *vb, *q),
        Command::Scenarios { list, show } => {
            let mut out = open_output(cli.out.as_deref())?;
            if let Some(name) = show {
                out.write_all(Scenario::resolve(name)?.to_toml()?.as_bytes())?;
            } else if *list {
                for name in BUILTIN_NAMES {
                    let s = builtin(name).expect("listed built-in exists");
                    writeln!(out, "{name}\t{}", s.description)?;
                }
            } else {
                return Err(Error::Usage(
                    "scenarios needs --list or --show <name>".into(),
                ));
            }
            out.flush()?;
            Ok(())
        }
    }
}

fn link_payload(s: &Scenario) -> Result<Vec<bool>> {
    s.payload()?
        .ok_or_else(|| config(format!("scenario '{}' has no modulation section", s.name)))
}

fn build_link(s: &Scenario, engine: Engine, detector: DetectorSettings) -> Result<Link> {
    let modulation = s
        .modulation_config()?
        .ok_or_else(|| config(format!("scenario '{}' has no modulation section", s.name)))?;
    let payload = link_payload(s)?;
    let frame_time = frame(&payload).len() as f64 * modulation.symbol_period;
    let tail = s.grid.horizon - frame_time;
    if tail < 0.0 {
        return Err(config(format!(
            "grid.horizon: {} s is shorter than the {frame_time} s frame",
            s.grid.horizon
        )));
    }
    Ok(Link {
        params: s.pk,
        modulation,
        detector,
        engine,
        platform: s.platform_config()?,
        dt: s.grid.dt,
        tail,
    })
}

fn impulse(cli: &Cli) -> Result<()> {
    let s = load_scenario(cli, "testbed-iv")?;
    let n = grid_len(s.grid.dt, s.grid.horizon)?;
    let mut routes = vec![Route::Intravenous];
    if s.pk.ka.is_some() {
        routes.push(Route::Extravascular);
    }
    let mut columns = Vec::new();
    let mut header = vec!["t".to_string()];
    for route in &routes {
        let tag = match route {
            Route::Intravenous => "iv",
            Route::Extravascular => "ev",
        };
        let amount = sample_impulse_response(&s.pk, *route, Normalization::Amount, s.grid.dt, n)?;
        let conc =
            sample_impulse_response(&s.pk, *route, Normalization::Concentration, s.grid.dt, n)?;
        let peak = conc.max_abs();
        let norm: Vec<f64> = conc.samples().iter().map(|v| v / peak).collect();
        header.extend([
            format!("{tag}_amount"),
            format!("{tag}_concentration"),
            format!("{tag}_normalized"),
        ]);
        columns.push(amount.into_samples());
        columns.push(conc.into_samples());
        columns.push(norm);
    }
    let mut out = open_output(cli.out.as_deref())?;
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        write!(out, "{}", i as f64 * s.grid.dt)?;
        for c in &columns {
            write!(out, ",{}", c[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn simulate(cli: &Cli) -> Result<()> {
    let s = load_scenario(cli, "testbed-iv")?;
    let schedule = s.schedule()?;
    let platform = s.platform_config()?;
    let engines: Vec<Engine> = Engine::ALL
        .into_iter()
        .filter(|e| *e != Engine::Platform || platform.is_some())
        .collect();
    let traces = engines
        .iter()
        .map(|&e| {
            render(
                e,
                &s.pk,
                s.route,
                platform.as_ref(),
                &schedule,
                s.grid.dt,
                s.grid.horizon,
            )
            .map(|y| y.into_samples())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = open_output(cli.out.as_deref())?;
    let names: Vec<String> = engines.iter().map(|e| e.to_string()).collect();
    writeln!(out, "t,{}", names.join(","))?;
    for i in 0..traces[0].len() {
        write!(out, "{}", i as f64 * s.grid.dt)?;
        for tr in &traces {
            write!(out, ",{}", tr[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    let deviations: Vec<String> = engines
        .iter()
        .zip(&traces)
        .skip(1)
        .map(|(e, tr)| format!("{e}={}", relative_sup_difference(&traces[0], tr)))
        .collect();
    eprintln!(
        "max_relative_deviation_from_analytic: {}",
        deviations.join(",")
    );
    Ok(())
}

fn fit(
    cli: &Cli,
    path: &Path,
    route: Option<RouteArg>,
    method: MethodArg,
    dose: Option<f64>,
    column: Option<&str>,
) -> Result<()> {
    let scenario = cli.scenario.as_deref().map(Scenario::resolve).transpose()?;
    let route = route
        .map(Route::from)
        .or(scenario.as_ref().map(|s| s.route))
        .ok_or_else(|| Error::Usage("fit needs --route or --scenario".into()))?;
    let dose = match (dose, &scenario) {
        (Some(d), _) => d,
        (None, Some(s)) => s.schedule()?.total_mass(),
        (None, None) => return Err(Error::Usage("fit needs --dose or --scenario".into())),
    };
    let data = ConcentrationSeries::from_csv(File::open(path)?, column, route, dose)?;
    let result = match method {
        MethodArg::Residuals => fit_residuals(&data)?,
        MethodArg::Lsq => {
            let init = match (fit_residuals(&data), &scenario) {
                (Ok(r), _) => *r.params(),
                (Err(_), Some(s)) => s.pk,
                (Err(e), None) => return Err(e),
            };
            fit_least_squares(&data, &init)?
        }
    };
    let mut out = open_output(cli.out.as_deref())?;
    writeln!(out, "{}", result.summary())?;
    out.flush()?;
    Ok(())
}

fn plan(
    cli: &Cli,
    ka: f64,
    ke: f64,
    mode: PlanMode,
    va: Option<f64>,
    vb: Option<f64>,
    q: Option<f64>,
) -> Result<()> {
    let mut out = open_output(cli.out.as_deref())?;
    match mode {
        PlanMode::Flows => {
            let (va, vb) = va
                .zip(vb)
                .ok_or_else(|| Error::Usage("--mode flows needs --va and --vb".into()))?;
            let (q_a, q_e) = plan_flows(ka, ke, va, vb)?;
            writeln!(
                out,
                "mode=flows\nk_a={ka}\nk_e={ke}\nv_a={va}\nv_b={vb}\nq_a={q_a}\nq_e={q_e}"
            )?;
        }
        PlanMode::Volumes => {
            let q = q.ok_or_else(|| Error::Usage("--mode volumes needs --q".into()))?;
            let (v_a, v_b) = plan_volumes(ka, ke, q)?;
            writeln!(
                out,
                "mode=volumes\nk_a={ka}\nk_e={ke}\nq={q}\nv_a={v_a}\nv_b={v_b}"
            )?;
            if let Some(w) = listed_volumes(cli, ka, ke, q)?
                .and_then(|listed| volume_warning((v_a, v_b), listed))
            {
                writeln!(out, "{w}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Listed reference volumes for the planned setup: from `--scenario` when
/// given, else from any built-in with the same rates and flow.
fn listed_volumes(cli: &Cli, ka: f64, ke: f64, q: f64) -> Result<Option<(f64, f64)>> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
    let listed = |s: &Scenario| s.platform.and_then(|p| p.listed_v_a.zip(p.listed_v_b));
    if let Some(name) = &cli.scenario {
        return Ok(listed(&Scenario::resolve(name)?));
    }
    Ok(BUILTIN_NAMES
        .iter()
        .filter_map(|n| builtin(n))
        .find_map(|s| {
            let p = s.platform?;
            let matches = s.pk.ka.is_some_and(|a| same(ka, a))
                && same(ke, s.pk.ke)
                && same(q, p.q_a)
                && same(q, p.q_e);
            if matches {
                listed(&s)
            } else {
                None
            }
        }))
}
