//! Scenario files and the compiled-in reference scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{DoseEvent, DoseSchedule, PkParams, Route};
use crate::error::{config, Error, Result};
use crate::modem::{format_bits, frame, modulate_ook, parse_bits, ModulationConfig, NoiseModel};
use crate::platform::{plan_flows, plan_volumes, PlatformConfig};

pub const SCENARIO_DIR_VAR: &str = "MOCOBO_SCENARIO_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// s
    pub dt: f64,
    /// s
    pub horizon: f64,
}

/// Bench platform section. Flows in mL/s, volumes in mL. `listed_*` hold
/// reference volumes quoted alongside the setup, kept for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformSection {
    pub q_a: f64,
    pub q_e: f64,
    pub v_a: f64,
    pub v_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listed_v_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listed_v_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSection {
    pub symbol_period: f64,
    pub dose_mass: f64,
    /// mg/s; absent for impulsive release.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_rate: Option<f64>,
    /// Payload bits, e.g. "01010011".
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub route: Route,
    #[serde(default)]
    pub seed: u64,
    pub pk: PkParams,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<PlatformSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<ModulationSection>,
    #[serde(default, skip_serializing_if = "is_silent")]
    pub noise: NoiseModel,
    /// Explicit schedule; when empty and a modulation section is present the
    /// schedule is the modulated frame.
    #[serde(default, skip_serializing_if = "DoseSchedule::is_empty")]
    pub doses: DoseSchedule,
}

fn is_silent(n: &NoiseModel) -> bool {
    *n == NoiseModel::default()
}

fn at(path: &str, e: Error) -> Error {
    let message = match e {
        Error::Config(m) | Error::Domain(m) | Error::Usage(m) => m,
        other => other.to_string(),
    };
    if message.starts_with(path) {
        Error::Config(message)
    } else {
        Error::Config(format!("{path}: {message}"))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(config("name: must not be empty"));
        }
        self.pk.check_route(self.route).map_err(|e| at("pk", e))?;
        if !(self.grid.dt > 0.0 && self.grid.dt.is_finite()) {
            return Err(config(format!(
                "grid.dt: must be positive, got {}",
                self.grid.dt
            )));
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(config(format!(
                "grid.horizon: must be positive, got {}",
                self.grid.horizon
            )));
        }
        self.platform_config()?;
        self.modulation_config()?;
        self.payload()?;
        for (i, e) in self.doses.events().iter().enumerate() {
            e.validate()
                .map_err(|err| at(&format!("doses[{i}]"), err))?;
        }
        self.noise.validate().map_err(|e| at("noise", e))?;
        Ok(())
    }

    pub fn params(&self) -> PkParams {
        self.pk
    }

    pub fn platform_config(&self) -> Result<Option<PlatformConfig>> {
        self.platform
            .map(|p| PlatformConfig::new(p.q_a, p.q_e, p.v_a, p.v_b, self.route))
            .transpose()
            .map_err(|e| at("platform", e))
    }

    pub fn modulation_config(&self) -> Result<Option<ModulationConfig>> {
        self.modulation
            .as_ref()
            .map(|m| ModulationConfig::new(m.symbol_period, m.dose_mass, m.pump_rate, self.route))
            .transpose()
            .map_err(|e| at("modulation", e))
    }

    pub fn payload(&self) -> Result<Option<Vec<bool>>> {
        self.modulation
            .as_ref()
            .map(|m| parse_bits(&m.payload))
            .transpose()
            .map_err(|e| at("modulation.payload", e))
    }

    /// The transmitted schedule: explicit doses if any, else the modulated
    /// frame, else nothing.
    pub fn schedule(&self) -> Result<DoseSchedule> {
        if !self.doses.is_empty() {
            return Ok(self.doses.clone());
        }
        match (self.modulation_config()?, self.payload()?) {
            (Some(m), Some(bits)) => modulate_ook(&frame(&bits), &m),
            _ => Ok(DoseSchedule::empty()),
        }
    }

    /// Warning text when listed platform volumes disagree with the
    /// configured ones by more than 1%.
    pub fn volume_warning(&self) -> Option<String> {
        let p = self.platform?;
        match (p.listed_v_a, p.listed_v_b) {
            (Some(la), Some(lb)) => volume_warning((p.v_a, p.v_b), (la, lb)),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|sp| text[..sp.start.min(text.len())].lines().count().max(1) as u64)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numeric(format!("cannot serialize scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Looks `name` up among the built-ins, then as a file path, then as
    /// `<name>.toml` in the directory named by `MOCOBO_SCENARIO_DIR`.
    pub fn resolve(name: &str) -> Result<Self> {
        if let Some(s) = builtin(name) {
            return Ok(s);
        }
        let path = Path::new(name);
        if path.is_file() {
            return Scenario::load(path);
        }
        if let Some(dir) = std::env::var_os(SCENARIO_DIR_VAR) {
            let candidate = Path::new(&dir).join(format!("{name}.toml"));
            if candidate.is_file() {
                return Scenario::load(&candidate);
            }
        }
        Err(Error::Usage(format!(
            "unknown scenario '{name}'; built-in scenarios: {}",
            BUILTIN_NAMES.join(", ")
        )))
    }
}

fn off_by(a: f64, b: f64) -> bool {
    (a - b).abs() > 0.01 * b.abs()
}

/// Compares computed `(v_a, v_b)` against listed values.
pub fn volume_warning(computed: (f64, f64), listed: (f64, f64)) -> Option<String> {
    if !off_by(listed.0, computed.0) && !off_by(listed.1, computed.1) {
        return None;
    }
    let mut text = format!(
        "warning: computed volumes (v_a={:.1} mL, v_b={:.1} mL) differ from the listed (v_a={} mL, v_b={} mL) by more than 1%",
        computed.0, computed.1, listed.0, listed.1
    );
    if !off_by(listed.1, computed.0) && !off_by(listed.0, computed.1) {
        text.push_str("; the listed values match the computed ones with v_a and v_b swapped");
    }
    Some(text)
}

pub const BUILTIN_NAMES: [&str; 6] = [
    "chlorphenesin-human",
    "vinpocetine-rat",
    "testbed-iv",
    "testbed-ev",
    "link-iv",
    "link-ev",
];

const TESTBED_KA: f64 = 3.27e-3;
const TESTBED_KE: f64 = 1.51e-3;
const TESTBED_Q: f64 = 0.98;

fn testbed(name: &str, route: Route) -> Scenario {
    let (v_a, v_b) = plan_volumes(TESTBED_KA, TESTBED_KE, TESTBED_Q).expect("valid constants");
    Scenario {
        name: name.to_string(),
        description: format!("salt-water testbed, {route} administration of a 130 mg bolus"),
        route,
        seed: 1,
        pk: PkParams {
            ka: Some(TESTBED_KA),
            ke: TESTBED_KE,
            f: 1.0,
            v: v_b,
        },
        grid: Grid {
            dt: 1.0,
            horizon: 8000.0,
        },
        platform: Some(PlatformSection {
            q_a: TESTBED_Q,
            q_e: TESTBED_Q,
            v_a,
            v_b,
            listed_v_a: Some(650.0),
            listed_v_b: Some(300.0),
        }),
        modulation: None,
        noise: NoiseModel::default(),
        doses: DoseSchedule::new(vec![DoseEvent::impulse(0.0, 130.0)]).expect("valid dose"),
    }
}

fn link(name: &str, route: Route) -> Scenario {
    let base = testbed(name, route);
    Scenario {
        description: format!("on-off keyed frame over the testbed, {route} pump doses"),
        grid: Grid {
            dt: 1.0,
            horizon: 15000.0,
        },
        modulation: Some(ModulationSection {
            symbol_period: 600.0,
            dose_mass: 130.0,
            pump_rate: Some(13.0),
            payload: format_bits(&parse_bits("01010011").expect("literal bits")),
        }),
        doses: DoseSchedule::empty(),
        ..base
    }
}

/// Compiled-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    Some(match name {
        "chlorphenesin-human" => {
            let (ka, ke, v_a, v_b) = (2.89e-4, 4.47e-5, 355.0, 2292.0);
            let (q_a, q_e) = plan_flows(ka, ke, v_a, v_b).expect("valid constants");
            Scenario {
                name: name.into(),
                description: "oral chlorphenesin carbamate in humans, 1 g dose".into(),
                route: Route::Extravascular,
                seed: 1,
                pk: PkParams {
                    ka: Some(ka),
                    ke,
                    f: 1.0,
                    v: v_b,
                },
                grid: Grid {
                    dt: 1.0,
                    horizon: 270_000.0,
                },
                platform: Some(PlatformSection {
                    q_a,
                    q_e,
                    v_a,
                    v_b,
                    listed_v_a: None,
                    listed_v_b: None,
                }),
                modulation: None,
                noise: NoiseModel::default(),
                doses: DoseSchedule::new(vec![DoseEvent::impulse(0.0, 1000.0)])
                    .expect("valid dose"),
            }
        }
        "vinpocetine-rat" => {
            let (ka, ke, q) = (1.69e-4, 5.08e-4, 0.1025);
            let (v_a, v_b) = plan_volumes(ka, ke, q).expect("valid constants");
            Scenario {
                name: name.into(),
                description:
                    "oral vinpocetine in rats (absorption slower than elimination), 522 mg dose"
                        .into(),
                route: Route::Extravascular,
                seed: 1,
                pk: PkParams {
                    ka: Some(ka),
                    ke,
                    f: 1.0,
                    v: v_b,
                },
                grid: Grid {
                    dt: 1.0,
                    horizon: 72_000.0,
                },
                platform: Some(PlatformSection {
                    q_a: q,
                    q_e: q,
                    v_a,
                    v_b,
                    listed_v_a: Some(605.0),
                    listed_v_b: Some(202.0),
                }),
                modulation: None,
                noise: NoiseModel::default(),
                doses: DoseSchedule::new(vec![DoseEvent::impulse(0.0, 522.0)]).expect("valid dose"),
            }
        }
        "testbed-iv" => testbed(name, Route::Intravenous),
        "testbed-ev" => testbed(name, Route::Extravascular),
        "link-iv" => link(name, Route::Intravenous),
        "link-ev" => link(name, Route::Extravascular),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_round_trip() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            s.validate().unwrap();
            let text = s.to_toml().unwrap();
            assert_eq!(Scenario::from_toml(&text).unwrap(), s, "{name}:\n{text}");
        }
    }

    #[test]
    fn link_schedule_comes_from_frame() {
        let s = builtin("link-iv").unwrap();
        let sched = s.schedule().unwrap();
        assert_eq!(sched.len(), 7);
        assert!(sched.events().iter().all(|e| e.duration == 10.0));
    }

    #[test]
    fn warnings() {
        let w = builtin("testbed-iv").unwrap().volume_warning().unwrap();
        assert!(w.contains("swapped"), "{w}");
        assert!(builtin("vinpocetine-rat")
            .unwrap()
            .volume_warning()
            .is_none());
    }

    #[test]
    fn field_paths_in_errors() {
        let mut text = builtin("testbed-iv").unwrap().to_toml().unwrap();
        text = text.replace("dt = 1.0", "dt = -1.0");
        match Scenario::from_toml(&text) {
            Err(Error::Config(m)) => assert!(m.starts_with("grid.dt"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mut s = builtin("testbed-ev").unwrap();
        s.pk.ka = None;
        assert!(matches!(s.validate(), Err(Error::Config(m)) if m.starts_with("pk")));
        let mut s = builtin("testbed-ev").unwrap();
        s.platform.as_mut().unwrap().q_a = -1.0;
        assert!(matches!(s.validate(), Err(Error::Config(m)) if m.contains("platform.q_a")));
    }

    #[test]
    fn unknown_name_lists_builtins() {
        match Scenario::resolve("no-such-scenario") {
            Err(Error::Usage(m)) => assert!(m.contains("testbed-iv")),
            other => panic!("{other:?}"),
        }
    }
}
