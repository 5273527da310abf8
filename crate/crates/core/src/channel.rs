//! One-compartment pharmacokinetic channel.
//!
//! The body is a linear time-invariant system whose input is a mass rate
//! (mg/s) of signaling substance and whose output is the body concentration
//! (mg/mL). Two administration routes are modeled:
//!
//! * intravenous: the dose enters the body compartment directly and is only
//!   subject to first-order elimination `k_e`;
//! * extravascular: the dose enters an administration compartment, is
//!   absorbed into the body with first-order rate `k_a` (fraction `F`
//!   reaching circulation) and is then eliminated.
//!
//! Canonical units are seconds, mL, mg and mg/mL.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// Relative distance between `k_a` and `k_e` below which the equal-rate
/// limit of the extravascular response is evaluated.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    #[serde(alias = "iv")]
    Intravenous,
    #[serde(alias = "ev")]
    Extravascular,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::Intravenous => f.write_str("intravenous"),
            Route::Extravascular => f.write_str("extravascular"),
        }
    }
}

impl FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iv" | "intravenous" => Ok(Route::Intravenous),
            "ev" | "extravascular" => Ok(Route::Extravascular),
            other => Err(Error::Usage(format!(
                "unknown route '{other}' (expected iv or ev)"
            ))),
        }
    }
}

/// Whether a response is per unit dose amount (mg in body per mg dosed) or
/// per unit dose concentration (mg/mL per mg dosed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Amount,
    Concentration,
}

fn default_fraction() -> f64 {
    1.0
}

/// Channel parameters. `k_a` is only needed for extravascular use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParams {
    /// Absorption rate constant (1/s).
    #[serde(rename = "k_a", default, skip_serializing_if = "Option::is_none")]
    pub ka: Option<f64>,
    /// Elimination rate constant (1/s).
    #[serde(rename = "k_e")]
    pub ke: f64,
    /// Bioavailable fraction.
    #[serde(default = "default_fraction")]
    pub f: f64,
    /// Apparent volume of distribution (mL).
    pub v: f64,
}

impl PkParams {
    pub fn intravenous(ke: f64, v: f64) -> Result<Self> {
        let p = PkParams {
            ka: None,
            ke,
            f: 1.0,
            v,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn extravascular(ka: f64, ke: f64, f: f64, v: f64) -> Result<Self> {
        let p = PkParams {
            ka: Some(ka),
            ke,
            f,
            v,
        };
        p.validate()?;
        p.require_ka()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ke.is_finite() && self.ke > 0.0) {
            return Err(config(format!("k_e must be positive, got {}", self.ke)));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(config(format!("V must be positive, got {}", self.v)));
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return Err(config(format!("F must lie in (0, 1], got {}", self.f)));
        }
        if let Some(ka) = self.ka {
            if !(ka.is_finite() && ka > 0.0) {
                return Err(config(format!("k_a must be positive, got {ka}")));
            }
        }
        Ok(())
    }

    pub fn require_ka(&self) -> Result<f64> {
        self.ka
            .ok_or_else(|| config("extravascular route requires k_a"))
    }

    /// Validates the parameters for use with `route`.
    pub fn check_route(&self, route: Route) -> Result<()> {
        self.validate()?;
        if route == Route::Extravascular {
            self.require_ka()?;
        }
        Ok(())
    }

    /// Largest rate constant that matters for `route`.
    pub fn fastest_rate(&self, route: Route) -> f64 {
        match (route, self.ka) {
            (Route::Extravascular, Some(ka)) => ka.max(self.ke),
            _ => self.ke,
        }
    }

    /// Smallest rate constant that matters for `route`.
    pub fn slowest_rate(&self, route: Route) -> f64 {
        match (route, self.ka) {
            (Route::Extravascular, Some(ka)) => ka.min(self.ke),
            _ => self.ke,
        }
    }
}

/// `(e^{-ke t} - e^{-ka t}) / (ka - ke)` evaluated without cancellation,
/// including the equal-rate limit `t e^{-ka t}`.
pub(crate) fn biexp_kernel(ka: f64, ke: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let d = ka - ke;
    if d.abs() < DEGENERACY_TOLERANCE * ka.max(ke) {
        return t * (-ka * t).exp();
    }
    let u = d * t;
    if u.abs() < 0.5 {
        // e^{-ke t} (1 - e^{-u}) / d  with  (1 - e^{-u}) / u  from expm1
        t * (-ke * t).exp() * (-(-u).exp_m1() / u)
    } else {
        ((-ke * t).exp() - (-ka * t).exp()) / d
    }
}

/// Closed-form amount response (mg in body per mg dosed).
fn amount_response(params: &PkParams, route: Route, ka: f64, t: f64) -> f64 {
    match route {
        Route::Intravenous => (-params.ke * t).exp(),
        Route::Extravascular => params.f * ka * biexp_kernel(ka, params.ke, t),
    }
}

/// Integral of the amount response over `[0, tau]`; zero for `tau <= 0`.
fn amount_step(params: &PkParams, route: Route, ka: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let ke = params.ke;
    match route {
        Route::Intravenous => -(-ke * tau).exp_m1() / ke,
        Route::Extravascular => {
            let s = params.f / ke * (-(-ke * tau).exp_m1() - ke * biexp_kernel(ka, ke, tau));
            s.max(0.0)
        }
    }
}

fn check_time_dose(t: f64, dose: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(domain(format!("time must be non-negative, got {t}")));
    }
    if !(dose >= 0.0) || !dose.is_finite() {
        return Err(domain(format!("dose must be non-negative, got {dose}")));
    }
    Ok(())
}

/// Body concentration after an intravenous bolus of `dose` mg at `t = 0`.
pub fn iv_concentration(params: &PkParams, dose: f64, t: f64) -> Result<f64> {
    params.validate()?;
    check_time_dose(t, dose)?;
    Ok(dose / params.v * (-params.ke * t).exp())
}

/// Body concentration after an extravascular dose of `dose` mg at `t = 0`.
pub fn ev_concentration(params: &PkParams, dose: f64, t: f64) -> Result<f64> {
    params.validate()?;
    let ka = params.require_ka()?;
    check_time_dose(t, dose)?;
    Ok(dose * params.f * ka * biexp_kernel(ka, params.ke, t) / params.v)
}

/// Response to a unit impulse applied at `t = 0`.
pub fn impulse_response(
    params: &PkParams,
    route: Route,
    normalization: Normalization,
    t: f64,
) -> Result<f64> {
    params.check_route(route)?;
    check_time_dose(t, 0.0)?;
    let ka = params.ka.unwrap_or(0.0);
    let h = amount_response(params, route, ka, t);
    Ok(match normalization {
        Normalization::Amount => h,
        Normalization::Concentration => h / params.v,
    })
}

/// Response to a unit step in input rate starting at `t = 0` (the running
/// integral of the impulse response).
pub fn step_response(
    params: &PkParams,
    route: Route,
    normalization: Normalization,
    t: f64,
) -> Result<f64> {
    params.check_route(route)?;
    let ka = params.ka.unwrap_or(0.0);
    let s = amount_step(params, route, ka, t);
    Ok(match normalization {
        Normalization::Amount => s,
        Normalization::Concentration => s / params.v,
    })
}

/// Frequency response `H(jω)` of the amount channel.
pub fn frequency_response(params: &PkParams, route: Route, omega: f64) -> Result<Complex64> {
    params.check_route(route)?;
    let jw = Complex64::new(0.0, omega);
    let body = Complex64::new(params.ke, 0.0) + jw;
    Ok(match route {
        Route::Intravenous => body.inv(),
        Route::Extravascular => {
            let ka = params.require_ka()?;
            Complex64::new(params.f * ka, 0.0) / ((Complex64::new(ka, 0.0) + jw) * body)
        }
    })
}

/// A single administration: an ideal impulse when `duration == 0`, otherwise
/// a constant delivery rate `mass / duration` over `[time, time + duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseEvent {
    pub time: f64,
    pub mass: f64,
    #[serde(default)]
    pub duration: f64,
}

impl DoseEvent {
    pub fn impulse(time: f64, mass: f64) -> Self {
        DoseEvent {
            time,
            mass,
            duration: 0.0,
        }
    }

    pub fn infusion(time: f64, mass: f64, duration: f64) -> Self {
        DoseEvent {
            time,
            mass,
            duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.time) || !ok(self.mass) || !ok(self.duration) {
            return Err(domain(format!(
                "dose event fields must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_impulse(&self) -> bool {
        self.duration == 0.0
    }

    pub fn end(&self) -> f64 {
        self.time + self.duration
    }
}

/// Time-ordered dose events; the transmitted signal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DoseSchedule {
    events: Vec<DoseEvent>,
}

impl DoseSchedule {
    pub fn new(mut events: Vec<DoseEvent>) -> Result<Self> {
        for e in &events {
            e.validate()?;
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(DoseSchedule { events })
    }

    pub fn empty() -> Self {
        DoseSchedule::default()
    }

    pub fn events(&self) -> &[DoseEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.events.iter().map(|e| e.mass).sum()
    }

    /// Time at which the last delivery finishes (0 for an empty schedule).
    pub fn end_time(&self) -> f64 {
        self.events.iter().map(DoseEvent::end).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        DoseSchedule::new(
            self.events
                .iter()
                .map(|e| DoseEvent {
                    mass: e.mass * factor,
                    ..*e
                })
                .collect(),
        )
    }

    pub fn shifted(&self, offset: f64) -> Result<Self> {
        DoseSchedule::new(
            self.events
                .iter()
                .map(|e| DoseEvent {
                    time: e.time + offset,
                    ..*e
                })
                .collect(),
        )
    }

    /// Projects the schedule onto a uniform grid as a mass-rate signal whose
    /// samples are impulse weights (`sample * dt` is the mass injected at that
    /// grid time).
    ///
    /// Impulses on grid points are represented exactly. Continuous delivery is
    /// projected by route: into the body compartment each sample carries the
    /// mass delivered over the preceding interval, so the observed compartment
    /// never receives mass before it is delivered; into the administration
    /// compartment the mass of each interval is split linearly between its two
    /// end points, which is second-order accurate because the body response to
    /// absorption starts from zero.
    pub fn to_input(
        &self,
        route: Route,
        t0: f64,
        dt: f64,
        n: usize,
    ) -> Result<crate::signal::SampledSignal> {
        if !(dt > 0.0) || n == 0 {
            return Err(domain("grid needs dt > 0 and at least one sample"));
        }
        let mut weights = vec![0.0; n];
        let mut deposit = |idx: i64, mass: f64| {
            if idx >= 0 && (idx as usize) < n {
                weights[idx as usize] += mass;
            }
        };
        let snap = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                r
            } else {
                x
            }
        };
        for e in &self.events {
            let start = snap((e.time - t0) / dt);
            let end = snap((e.end() - t0) / dt);
            if e.is_impulse() || end <= start {
                match route {
                    Route::Intravenous => deposit(start.ceil() as i64, e.mass),
                    Route::Extravascular => {
                        let i = start.floor();
                        let u = start - i;
                        deposit(i as i64, e.mass * (1.0 - u));
                        if u > 0.0 {
                            deposit(i as i64 + 1, e.mass * u);
                        }
                    }
                }
                continue;
            }
            // rate in mass per grid unit
            let rate = e.mass / (end - start);
            let mut cell = start.floor();
            while cell < end {
                let a = start.max(cell);
                let b = end.min(cell + 1.0);
                if b > a {
                    let m = rate * (b - a);
                    match route {
                        Route::Intravenous => deposit(cell as i64 + 1, m),
                        Route::Extravascular => {
                            // ∫(1-u) and ∫u over [a, b] relative to the cell
                            let (ua, ub) = (a - cell, b - cell);
                            let right = rate * (ub * ub - ua * ua) / 2.0;
                            deposit(cell as i64, m - right);
                            deposit(cell as i64 + 1, right);
                        }
                    }
                }
                cell += 1.0;
            }
        }
        let samples = weights.into_iter().map(|m| m / dt).collect();
        crate::signal::SampledSignal::new(t0, dt, samples, crate::signal::SignalRole::MassRate)
    }
}

/// Body concentration at time `t` produced by every event of `schedule`.
///
/// Impulses use the closed-form impulse response; continuous deliveries use
/// the difference of two shifted step responses, which is exact for this
/// first-order system.
pub fn superpose(params: &PkParams, route: Route, schedule: &DoseSchedule, t: f64) -> Result<f64> {
    params.check_route(route)?;
    if !(t >= 0.0) {
        return Err(domain(format!("time must be non-negative, got {t}")));
    }
    Ok(superpose_unchecked(params, route, schedule, t))
}

fn superpose_unchecked(params: &PkParams, route: Route, schedule: &DoseSchedule, t: f64) -> f64 {
    let ka = params.ka.unwrap_or(0.0);
    let mut total = 0.0;
    for e in schedule.events() {
        let tau = t - e.time;
        if tau < 0.0 {
            break;
        }
        if e.is_impulse() {
            total += e.mass * amount_response(params, route, ka, tau);
        } else {
            let rate = e.mass / e.duration;
            let delivered = if route == Route::Intravenous && tau >= e.duration {
                // decayed form avoids the difference of two saturated steps
                let ke = params.ke;
                (-ke * (tau - e.duration)).exp() * -(-ke * e.duration).exp_m1() / ke
            } else {
                amount_step(params, route, ka, tau)
                    - amount_step(params, route, ka, tau - e.duration)
            };
            total += rate * delivered.max(0.0);
        }
    }
    total / params.v
}

/// [`superpose`] evaluated on the grid `t0 + i*dt`, `i < n`.
pub fn superpose_sampled(
    params: &PkParams,
    route: Route,
    schedule: &DoseSchedule,
    t0: f64,
    dt: f64,
    n: usize,
) -> Result<crate::signal::SampledSignal> {
    params.check_route(route)?;
    if !(t0 >= 0.0) {
        return Err(domain(format!("time must be non-negative, got {t0}")));
    }
    crate::signal::sample(
        |t| superpose_unchecked(params, route, schedule, t),
        t0,
        dt,
        n,
        crate::signal::SignalRole::Concentration,
    )
}
