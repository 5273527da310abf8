//! Fixed-step fourth-order Runge–Kutta integration of the compartment
//! equations. Used as an oracle for the closed-form channel and shared with
//! the platform twin.

use crate::channel::{PkParams, Route};
use crate::error::{config, domain, Error, Result};
use crate::signal::{SampledSignal, SignalRole};

/// Largest `dt * rate` accepted by the integrators.
pub const MAX_STEP_RATE_PRODUCT: f64 = 0.1;

pub(crate) fn check_step(dt: f64, fastest_rate: f64) -> Result<()> {
    let product = dt * fastest_rate;
    if product > MAX_STEP_RATE_PRODUCT {
        return Err(Error::StepSize {
            product,
            limit: MAX_STEP_RATE_PRODUCT,
        });
    }
    Ok(())
}

/// One classic RK4 step of `y' = f(y)`.
pub(crate) fn rk4_step<const N: usize>(
    y: &mut [f64; N],
    h: f64,
    f: impl Fn(&[f64; N]) -> [f64; N],
) {
    let shift = |base: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *base;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&shift(y, &k1, h / 2.0));
    let k3 = f(&shift(y, &k2, h / 2.0));
    let k4 = f(&shift(y, &k3, h));
    for i in 0..N {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates the compartment equations driven by a mass-rate input.
///
/// Each input sample is injected as the mass `input[i] * dt` at its grid time
/// (into the administration compartment, scaled by `F`, for the
/// extravascular route; into the body otherwise), after which the
/// homogeneous system is advanced one RK4 step. The returned concentration
/// at each grid time includes the mass injected at that time. State starts
/// at zero; the input is zero past its last sample.
pub fn integrate_ode(
    params: &PkParams,
    route: Route,
    input: &SampledSignal,
    horizon: f64,
) -> Result<SampledSignal> {
    params.check_route(route)?;
    if input.role() != SignalRole::MassRate {
        return Err(config(format!(
            "ODE input must be a mass rate, got {}",
            input.role()
        )));
    }
    let dt = input.dt();
    let duration = (input.len() - 1) as f64 * dt;
    if !(horizon >= duration - 1e-9 * dt) {
        return Err(domain(format!(
            "horizon {horizon} s is shorter than the input ({duration} s)"
        )));
    }
    check_step(dt, params.fastest_rate(route))?;

    let n = (horizon / dt + 1e-9).floor() as usize + 1;
    let ke = params.ke;
    let ka = params.ka.unwrap_or(0.0);
    let x = input.samples();
    let mut out = Vec::with_capacity(n);
    // [administration amount, body amount]
    let mut state = [0.0f64; 2];
    for i in 0..n {
        let dose = x.get(i).copied().unwrap_or(0.0) * dt;
        match route {
            Route::Intravenous => state[1] += dose,
            Route::Extravascular => state[0] += params.f * dose,
        }
        out.push(state[1] / params.v);
        match route {
            Route::Intravenous => rk4_step(&mut state, dt, |s| [0.0, -ke * s[1]]),
            Route::Extravascular => {
                rk4_step(&mut state, dt, |s| [-ka * s[0], ka * s[0] - ke * s[1]])
            }
        }
    }
    SampledSignal::new(input.t0(), dt, out, SignalRole::Concentration)
}
