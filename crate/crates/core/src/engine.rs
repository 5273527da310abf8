//! Interchangeable ways of pushing a dose schedule through the channel.

use std::fmt;
use std::str::FromStr;

use crate::channel::{superpose_sampled, DoseSchedule, Normalization, PkParams, Route};
use crate::error::{config, domain, Error, Result};
use crate::ode::integrate_ode;
use crate::platform::{simulate_platform, PlatformConfig};
use crate::signal::{convolve, sample_impulse_response, SampledSignal, SignalRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    /// Closed-form superposition of per-event responses.
    Analytic,
    /// Sampled input convolved with the sampled impulse response.
    Convolution,
    /// RK4 integration of the compartment equations.
    Ode,
    /// Mass-balance simulation of the bench platform.
    Platform,
}

impl Engine {
    pub const ALL: [Engine; 4] = [
        Engine::Analytic,
        Engine::Convolution,
        Engine::Ode,
        Engine::Platform,
    ];
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Analytic => "analytic",
            Engine::Convolution => "convolution",
            Engine::Ode => "ode",
            Engine::Platform => "platform",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Engine::Analytic),
            "convolution" => Ok(Engine::Convolution),
            "ode" => Ok(Engine::Ode),
            "platform" => Ok(Engine::Platform),
            other => Err(Error::Usage(format!(
                "unknown engine '{other}' (expected analytic, convolution, ode or platform)"
            ))),
        }
    }
}

/// Number of grid points `0, dt, ..., <= horizon`.
pub fn grid_len(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(domain(format!(
            "grid needs dt > 0 and horizon >= 0, got dt={dt}, horizon={horizon}"
        )));
    }
    Ok((horizon / dt + 1e-9).floor() as usize + 1)
}

/// Body concentration on the grid `i*dt`, `0 <= t <= horizon`, produced by
/// `schedule` through the selected engine.
pub fn render(
    engine: Engine,
    params: &PkParams,
    route: Route,
    platform: Option<&PlatformConfig>,
    schedule: &DoseSchedule,
    dt: f64,
    horizon: f64,
) -> Result<SampledSignal> {
    params.check_route(route)?;
    let n = grid_len(dt, horizon)?;
    match engine {
        Engine::Analytic => superpose_sampled(params, route, schedule, 0.0, dt, n),
        Engine::Convolution => {
            let x = schedule.to_input(route, 0.0, dt, n)?;
            let h = sample_impulse_response(params, route, Normalization::Concentration, dt, n)?;
            let mut y = convolve(&x, &h)?.into_samples();
            y.truncate(n);
            SampledSignal::new(0.0, dt, y, SignalRole::Concentration)
        }
        Engine::Ode => {
            let x = schedule.to_input(route, 0.0, dt, n)?;
            integrate_ode(params, route, &x, horizon)
        }
        Engine::Platform => {
            let platform =
                platform.ok_or_else(|| config("the platform engine needs a platform section"))?;
            if platform.route != route {
                return Err(config(format!(
                    "platform is set up for {} administration, channel uses {route}",
                    platform.route
                )));
            }
            let trace = simulate_platform(platform, schedule, dt, horizon)?;
            SampledSignal::new(0.0, dt, trace.c_b, SignalRole::Concentration)
        }
    }
}
