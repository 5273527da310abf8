//! Digital twin of the beaker-and-pump bench platform.
//!
//! The administration and body compartments are stirred beakers of fixed
//! volume. A pump moves solution from the administration beaker to the body
//! beaker at `Q_a` and another drains the body beaker into an excreta
//! container at `Q_e`; clean-water makeup flows keep both volumes constant
//! and carry no solute. Matching `Q_a = k_a V_a` and `Q_e = k_e V_b`
//! reproduces the one-compartment channel.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{DoseSchedule, Route};
use crate::error::{config, domain, Result};
use crate::ode::{check_step, rk4_step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    /// Administration to body pump flow (mL/s).
    pub q_a: f64,
    /// Body to excreta pump flow (mL/s).
    pub q_e: f64,
    /// Administration beaker volume (mL).
    pub v_a: f64,
    /// Body beaker volume (mL).
    pub v_b: f64,
    pub route: Route,
}

impl PlatformConfig {
    pub fn new(q_a: f64, q_e: f64, v_a: f64, v_b: f64, route: Route) -> Result<Self> {
        let c = PlatformConfig {
            q_a,
            q_e,
            v_a,
            v_b,
            route,
        };
        c.validate()?;
        Ok(c)
    }

    /// Equal-flow setup: both pumps run at `q`, volumes sized from the rates.
    pub fn equal_flow(ka: f64, ke: f64, q: f64, route: Route) -> Result<Self> {
        let (v_a, v_b) = plan_volumes(ka, ke, q)?;
        PlatformConfig::new(q, q, v_a, v_b, route)
    }

    /// Fixed-volume setup: pump flows derived from the rates.
    pub fn fixed_volumes(ka: f64, ke: f64, v_a: f64, v_b: f64, route: Route) -> Result<Self> {
        let (q_a, q_e) = plan_flows(ka, ke, v_a, v_b)?;
        PlatformConfig::new(q_a, q_e, v_a, v_b, route)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("q_a", self.q_a),
            ("q_e", self.q_e),
            ("v_a", self.v_a),
            ("v_b", self.v_b),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(config(format!(
                    "platform.{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn absorption_rate(&self) -> f64 {
        self.q_a / self.v_a
    }

    pub fn elimination_rate(&self) -> f64 {
        self.q_e / self.v_b
    }

    /// Clean-water makeup flows into the (administration, body) beakers that
    /// keep both volumes constant. A negative body makeup means the inflow
    /// from the administration beaker exceeds the drain.
    pub fn makeup_flows(&self) -> (f64, f64) {
        match self.route {
            Route::Intravenous => (0.0, self.q_e),
            Route::Extravascular => (self.q_a, self.q_e - self.q_a),
        }
    }

    fn fastest_rate(&self) -> f64 {
        match self.route {
            Route::Intravenous => self.elimination_rate(),
            Route::Extravascular => self.absorption_rate().max(self.elimination_rate()),
        }
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(domain(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}

/// Pump flows `(Q_a, Q_e)` that realize `k_a`, `k_e` with the given volumes.
pub fn plan_flows(ka: f64, ke: f64, v_a: f64, v_b: f64) -> Result<(f64, f64)> {
    check_positive("k_a", ka)?;
    check_positive("k_e", ke)?;
    check_positive("V_a", v_a)?;
    check_positive("V_b", v_b)?;
    Ok((ka * v_a, ke * v_b))
}

/// Beaker volumes `(V_a, V_b)` that realize `k_a`, `k_e` with both pumps at `q`.
pub fn plan_volumes(ka: f64, ke: f64, q: f64) -> Result<(f64, f64)> {
    check_positive("k_a", ka)?;
    check_positive("k_e", ke)?;
    check_positive("Q", q)?;
    Ok((q / ka, q / ke))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformTrace {
    pub time: Vec<f64>,
    /// mg/mL
    pub c_a: Vec<f64>,
    /// mg/mL
    pub c_b: Vec<f64>,
    /// Cumulative mg drained to the excreta container.
    pub excreta_mass: Vec<f64>,
    /// Cumulative mg dosed.
    pub input_mass: Vec<f64>,
    pub v_a: f64,
    pub v_b: f64,
}

impl PlatformTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,c_a,c_b,excreta,input")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.time[i], self.c_a[i], self.c_b[i], self.excreta_mass[i], self.input_mass[i]
            )?;
        }
        Ok(())
    }
}

// state: [administration mg, body mg, excreta mg, dosed mg]
type State = [f64; 4];

/// Simulates the platform under `doses` on the grid `i * dt`, `0 <= t <= horizon`.
///
/// Impulsive doses are added instantaneously; doses with a duration enter
/// as a constant mass rate. Steps are split at every dose boundary so the
/// forcing is constant inside each RK4 sub-step. The recorded value at a
/// grid time includes any impulse landing exactly on it.
pub fn simulate_platform(
    platform: &PlatformConfig,
    doses: &DoseSchedule,
    dt: f64,
    horizon: f64,
) -> Result<PlatformTrace> {
    platform.validate()?;
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(domain("simulation needs dt > 0 and horizon >= 0"));
    }
    check_step(dt, platform.fastest_rate()).map_err(|e| config(e.to_string()))?;

    let n = (horizon / dt + 1e-9).floor() as usize + 1;
    let route = platform.route;
    let k_a = platform.absorption_rate();
    let k_e = platform.elimination_rate();
    let events = doses.events();

    let rate_at = |t: f64| -> f64 {
        events
            .iter()
            .filter(|e| !e.is_impulse() && e.time <= t && t < e.end())
            .map(|e| e.mass / e.duration)
            .sum()
    };
    let derivative = |s: &State, rate: f64| -> State {
        let to_excreta = k_e * s[1];
        match route {
            Route::Intravenous => [0.0, rate - to_excreta, to_excreta, rate],
            Route::Extravascular => {
                let absorbed = k_a * s[0];
                [rate - absorbed, absorbed - to_excreta, to_excreta, rate]
            }
        }
    };
    let inject = |s: &mut State, mass: f64| {
        match route {
            Route::Intravenous => s[1] += mass,
            Route::Extravascular => s[0] += mass,
        }
        s[3] += mass;
    };

    let mut breakpoints: Vec<f64> = events.iter().flat_map(|e| [e.time, e.end()]).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let mut trace = PlatformTrace {
        time: Vec::with_capacity(n),
        c_a: Vec::with_capacity(n),
        c_b: Vec::with_capacity(n),
        excreta_mass: Vec::with_capacity(n),
        input_mass: Vec::with_capacity(n),
        v_a: platform.v_a,
        v_b: platform.v_b,
    };
    let mut state: State = [0.0; 4];
    let mut next_impulse = 0usize;
    let impulses: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| e.is_impulse())
        .map(|e| (e.time, e.mass))
        .collect();
    let mut apply_impulses = |s: &mut State, upto: f64| {
        while next_impulse < impulses.len() && impulses[next_impulse].0 <= upto {
            inject(s, impulses[next_impulse].1);
            next_impulse += 1;
        }
    };

    let mut now = 0.0;
    let mut bp = 0usize;
    for i in 0..n {
        let target = i as f64 * dt;
        // advance from `now` to `target`, stopping at dose boundaries
        while now < target {
            while bp < breakpoints.len() && breakpoints[bp] <= now {
                bp += 1;
            }
            let stop = if bp < breakpoints.len() && breakpoints[bp] < target {
                breakpoints[bp]
            } else {
                target
            };
            let rate = rate_at(0.5 * (now + stop));
            rk4_step(&mut state, stop - now, |s| derivative(s, rate));
            now = stop;
            apply_impulses(&mut state, now);
        }
        apply_impulses(&mut state, target);
        trace.time.push(target);
        trace.c_a.push(match route {
            Route::Intravenous => 0.0,
            Route::Extravascular => state[0] / platform.v_a,
        });
        trace.c_b.push(state[1] / platform.v_b);
        trace.excreta_mass.push(state[2]);
        trace.input_mass.push(state[3]);
    }
    Ok(trace)
}

/// Largest relative violation of `V_a c_a + V_b c_b + excreta = input`.
pub fn mass_audit(trace: &PlatformTrace) -> f64 {
    const FLOOR: f64 = 1e-12;
    (0..trace.len())
        .map(|i| {
            let held = trace.v_a * trace.c_a[i] + trace.v_b * trace.c_b[i] + trace.excreta_mass[i];
            (held - trace.input_mass[i]).abs() / trace.input_mass[i].max(FLOOR)
        })
        .fold(0.0, f64::max)
}
