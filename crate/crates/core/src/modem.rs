//! Bit-level transmit and receive chain: framing, on-off keying as dose
//! schedules, passive-pill encoding, synthetic measurement noise, detection
//! by deconvolution and bit error rate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{DoseEvent, DoseSchedule, Normalization, PkParams, Route};
use crate::engine::{render, Engine};
use crate::error::{config, domain, Error, Result};
use crate::platform::PlatformConfig;
use crate::signal::{deconvolve, sample_impulse_response, Deconvolution, SampledSignal};

pub const PREAMBLE: [bool; 3] = [true, true, true];

/// Parses a bit string such as `111-01010011`; `-`, `_` and whitespace are
/// ignored.
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .filter(|c| !matches!(c, '-' | '_') && !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(domain(format!("invalid bit character '{other}'"))),
        })
        .collect()
}

pub fn format_bits(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFrame {
    payload: Vec<bool>,
}

impl BitFrame {
    pub fn payload(&self) -> &[bool] {
        &self.payload
    }

    pub fn preamble(&self) -> &[bool] {
        &PREAMBLE
    }

    /// Preamble followed by payload.
    pub fn bits(&self) -> Vec<bool> {
        PREAMBLE.iter().chain(&self.payload).copied().collect()
    }

    pub fn len(&self) -> usize {
        PREAMBLE.len() + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::fmt::Display for BitFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}-{}",
            format_bits(&PREAMBLE),
            format_bits(&self.payload)
        )
    }
}

pub fn frame(payload: &[bool]) -> BitFrame {
    BitFrame {
        payload: payload.to_vec(),
    }
}

/// Forward error correction hook. Codes operate on the payload before
/// framing and after detection.
pub trait ChannelCode {
    fn encode(&self, data: &[bool]) -> Vec<bool>;
    fn decode(&self, received: &[bool]) -> Vec<bool>;
}

/// Identity code.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl ChannelCode for PassThrough {
    fn encode(&self, data: &[bool]) -> Vec<bool> {
        data.to_vec()
    }

    fn decode(&self, received: &[bool]) -> Vec<bool> {
        received.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig {
    /// Seconds per symbol.
    pub symbol_period: f64,
    /// mg released for a 1 symbol.
    pub dose_mass: f64,
    /// Pump delivery rate in mg/s; `None` releases each dose as an impulse.
    pub pump_rate: Option<f64>,
    pub route: Route,
}

impl ModulationConfig {
    pub fn new(
        symbol_period: f64,
        dose_mass: f64,
        pump_rate: Option<f64>,
        route: Route,
    ) -> Result<Self> {
        let c = ModulationConfig {
            symbol_period,
            dose_mass,
            pump_rate,
            route,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_period > 0.0 && self.symbol_period.is_finite()) {
            return Err(config(format!(
                "modulation.symbol_period must be positive, got {}",
                self.symbol_period
            )));
        }
        if !(self.dose_mass > 0.0 && self.dose_mass.is_finite()) {
            return Err(config(format!(
                "modulation.dose_mass must be positive, got {}",
                self.dose_mass
            )));
        }
        if let Some(rate) = self.pump_rate {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(config(format!(
                    "modulation.pump_rate must be positive, got {rate}"
                )));
            }
            if self.dose_mass / rate > self.symbol_period {
                return Err(config(format!(
                    "pump needs {} s per dose, longer than the {} s symbol",
                    self.dose_mass / rate,
                    self.symbol_period
                )));
            }
        }
        Ok(())
    }

    /// Seconds the pump runs per dose (0 for impulses).
    pub fn dose_duration(&self) -> f64 {
        self.pump_rate.map_or(0.0, |r| self.dose_mass / r)
    }
}

/// On-off keying: a 1 at symbol index `i` releases `dose_mass` starting at
/// `i * symbol_period`; a 0 releases nothing.
pub fn modulate_ook(frame: &BitFrame, modulation: &ModulationConfig) -> Result<DoseSchedule> {
    modulation.validate()?;
    let duration = modulation.dose_duration();
    DoseSchedule::new(
        frame
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| {
                DoseEvent::infusion(
                    i as f64 * modulation.symbol_period,
                    modulation.dose_mass,
                    duration,
                )
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PillCompartment {
    /// mg of substance held.
    pub level: f64,
    /// Seconds until the wall dissolves.
    pub dissolution_time: f64,
}

/// Passive multi-compartment transmitter. Compartments are ordered by
/// strictly decreasing dissolution time; each holds either the full level
/// `L1` or the half level `L0 = L1 / 2`.
///
/// Bit mapping: compartment `i` carries bit `i` of the message, most
/// significant first, with `L1` for a 1 and `L0` for a 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PassivePill {
    full_level: f64,
    compartments: Vec<PillCompartment>,
}

impl PassivePill {
    pub fn new(full_level: f64, compartments: Vec<PillCompartment>) -> Result<Self> {
        check_pill(full_level, &compartments)?;
        Ok(PassivePill {
            full_level,
            compartments,
        })
    }

    /// Builds a pill carrying `bits`; `times` are the dissolution times in
    /// decreasing order, one per bit.
    pub fn encode(bits: &[bool], full_level: f64, times: &[f64]) -> Result<Self> {
        if bits.len() != times.len() {
            return Err(config(format!(
                "{} bits need {} dissolution times, got {}",
                bits.len(),
                bits.len(),
                times.len()
            )));
        }
        PassivePill::new(
            full_level,
            bits.iter()
                .zip(times)
                .map(|(&b, &t)| PillCompartment {
                    level: if b { full_level } else { full_level / 2.0 },
                    dissolution_time: t,
                })
                .collect(),
        )
    }

    pub fn compartments(&self) -> &[PillCompartment] {
        &self.compartments
    }

    /// `L1`, mg.
    pub fn full_level(&self) -> f64 {
        self.full_level
    }

    /// Bits in compartment order.
    pub fn bits(&self) -> Vec<bool> {
        self.compartments
            .iter()
            .map(|c| c.level > 0.75 * self.full_level)
            .collect()
    }
}

fn check_pill(full: f64, compartments: &[PillCompartment]) -> Result<()> {
    if !(full > 0.0 && full.is_finite()) {
        return Err(config(format!("full level must be positive, got {full}")));
    }
    if compartments.is_empty() {
        return Err(config("a pill needs at least one compartment"));
    }
    for c in compartments {
        if !(c.level > 0.0 && c.level.is_finite()) {
            return Err(config(format!(
                "compartment level must be positive, got {}",
                c.level
            )));
        }
        if !(c.dissolution_time >= 0.0 && c.dissolution_time.is_finite()) {
            return Err(config(format!(
                "dissolution time must be non-negative, got {}",
                c.dissolution_time
            )));
        }
    }
    for w in compartments.windows(2) {
        if w[0].dissolution_time == w[1].dissolution_time {
            return Err(config(format!(
                "duplicate dissolution time {}",
                w[0].dissolution_time
            )));
        }
        if w[0].dissolution_time < w[1].dissolution_time {
            return Err(config(
                "dissolution times must strictly decrease across compartments",
            ));
        }
    }
    for c in compartments {
        let is_full = (c.level - full).abs() <= 1e-9 * full;
        let is_half = (c.level - full / 2.0).abs() <= 1e-9 * full;
        if !is_full && !is_half {
            return Err(config(format!(
                "compartment level {} is neither L1 = {full} nor L0 = {}",
                c.level,
                full / 2.0
            )));
        }
    }
    Ok(())
}

/// One impulsive release per compartment at its dissolution time.
pub fn passive_pill_schedule(pill: &PassivePill) -> Result<DoseSchedule> {
    check_pill(pill.full_level, &pill.compartments)?;
    DoseSchedule::new(
        pill.compartments
            .iter()
            .map(|c| DoseEvent::impulse(c.dissolution_time, c.level))
            .collect(),
    )
}

/// Synthetic receiver noise: zero-mean Gaussian jitter plus sparse positive
/// spikes with exponentially distributed height.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// mg/mL
    #[serde(default)]
    pub sigma: f64,
    /// Per-sample spike probability.
    #[serde(default)]
    pub spike_prob: f64,
    /// Mean spike height, mg/mL.
    #[serde(default)]
    pub spike_scale: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64, spike_prob: f64, spike_scale: f64) -> Result<Self> {
        let m = NoiseModel {
            sigma,
            spike_prob,
            spike_scale,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(domain(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return Err(domain(format!(
                "spike probability must lie in [0, 1], got {}",
                self.spike_prob
            )));
        }
        if !(self.spike_scale >= 0.0 && self.spike_scale.is_finite()) {
            return Err(domain(format!(
                "spike scale must be non-negative, got {}",
                self.spike_scale
            )));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.sigma == 0.0 && (self.spike_prob == 0.0 || self.spike_scale == 0.0)
    }

    /// Noisy copy of `x` and the mask of samples that received a spike.
    /// Output is clamped at zero.
    pub fn realize(&self, x: &SampledSignal, seed: u64) -> Result<(SampledSignal, Vec<bool>)> {
        self.validate()?;
        if self.is_silent() {
            return Ok((x.clone(), vec![false; x.len()]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
        let spikes = if self.spike_scale > 0.0 {
            Some(Exp::new(1.0 / self.spike_scale).map_err(|e| Error::Numeric(e.to_string()))?)
        } else {
            None
        };
        let mut mask = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for &v in x.samples() {
            let mut noisy = v + self.sigma * normal.sample(&mut rng);
            let hit = rng.random::<f64>() < self.spike_prob;
            if hit {
                if let Some(exp) = &spikes {
                    noisy += exp.sample(&mut rng);
                }
            }
            mask.push(hit);
            out.push(noisy.max(0.0));
        }
        Ok((SampledSignal::new(x.t0(), x.dt(), out, x.role())?, mask))
    }
}

pub fn add_noise(
    x: &SampledSignal,
    sigma: f64,
    spike_prob: f64,
    spike_scale: f64,
    seed: u64,
) -> Result<SampledSignal> {
    NoiseModel::new(sigma, spike_prob, spike_scale)?
        .realize(x, seed)
        .map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSettings {
    /// Decision threshold as a fraction of the dose mass.
    pub threshold_fraction: f64,
    pub deconvolution: Deconvolution,
    /// Symbol windows open this fraction of a period early, to keep mass
    /// smeared ahead of a dose by regularization inside its own window.
    pub guard_fraction: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            threshold_fraction: 0.5,
            deconvolution: Deconvolution::default(),
            guard_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionReport {
    /// Decoded payload bits.
    pub payload: Vec<bool>,
    /// Recovered mass (mg) per symbol window, preamble included.
    pub statistics: Vec<f64>,
    pub decisions: Vec<bool>,
    /// Nominal start time of the first preamble symbol.
    pub frame_start: f64,
    /// mg
    pub threshold: f64,
    pub bit_errors: Option<usize>,
    /// Deconvolved input rate.
    pub recovered: SampledSignal,
}

impl DetectionReport {
    /// Counts payload errors against the transmitted payload.
    pub fn score(&mut self, reference: &[bool]) -> Result<usize> {
        let errors = hamming(reference, &self.payload)?;
        self.bit_errors = Some(errors);
        Ok(errors)
    }

    pub fn ber(&self) -> Option<f64> {
        self.bit_errors.map(|e| {
            if self.payload.is_empty() {
                0.0
            } else {
                e as f64 / self.payload.len() as f64
            }
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "symbol,statistic,decision")?;
        for (i, (s, d)) in self.statistics.iter().zip(&self.decisions).enumerate() {
            writeln!(out, "{i},{s},{}", u8::from(*d))?;
        }
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        let (errors, ber) = match (self.bit_errors, self.ber()) {
            (Some(e), Some(b)) => (e.to_string(), b.to_string()),
            _ => ("NA".to_string(), "NA".to_string()),
        };
        format!(
            "frame_start={},threshold={},errors={errors},ber={ber}",
            self.frame_start, self.threshold
        )
    }
}

/// Recovers the payload from a received concentration record.
///
/// The record is deconvolved with the sampled channel impulse response, the
/// recovered input is integrated over symbol windows laid on the record's
/// own time grid, the first run of three windows above threshold is taken
/// as the preamble, and the next `payload_len` windows are sliced.
pub fn detect(
    received: &SampledSignal,
    params: &PkParams,
    modulation: &ModulationConfig,
    payload_len: usize,
    settings: &DetectorSettings,
) -> Result<DetectionReport> {
    modulation.validate()?;
    params.check_route(modulation.route)?;
    if !(settings.threshold_fraction > 0.0) || !(0.0..0.5).contains(&settings.guard_fraction) {
        return Err(config(
            "threshold_fraction must be positive and guard_fraction in [0, 0.5)",
        ));
    }
    let dt = received.dt();
    let ratio = modulation.symbol_period / dt;
    let per_symbol = ratio.round();
    if per_symbol < 1.0 || (ratio - per_symbol).abs() > 1e-9 * ratio {
        return Err(config(format!(
            "sample interval {dt} s does not divide the symbol period {} s",
            modulation.symbol_period
        )));
    }
    let per_symbol = per_symbol as usize;
    let guard = (settings.guard_fraction * per_symbol as f64).round() as usize;

    let n = received.len();
    let h = sample_impulse_response(
        params,
        modulation.route,
        Normalization::Concentration,
        dt,
        n,
    )?;
    let recovered = deconvolve(received, &h, settings.deconvolution)?;

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in recovered.samples() {
        acc += v * dt;
        prefix.push(acc);
    }
    let window_count = (n + guard) / per_symbol;
    let window = |k: usize| -> f64 {
        let start = (k * per_symbol).saturating_sub(guard);
        let end = (k + 1) * per_symbol - guard;
        prefix[end] - prefix[start]
    };
    let statistics: Vec<f64> = (0..window_count).map(window).collect();

    let threshold = settings.threshold_fraction * modulation.dose_mass;
    let above = |k: usize| statistics.get(k).is_some_and(|&s| s > threshold);
    let start = (0..window_count)
        .find(|&k| (0..PREAMBLE.len()).all(|j| above(k + j)))
        .ok_or_else(|| {
            Error::Sync(format!(
                "no run of {} symbols above {threshold} mg in {window_count} windows",
                PREAMBLE.len()
            ))
        })?;
    let first_payload = start + PREAMBLE.len();
    let available = window_count.saturating_sub(first_payload);
    if available < payload_len {
        return Err(Error::Truncation {
            available,
            expected: payload_len,
        });
    }
    let frame_stats = statistics[start..first_payload + payload_len].to_vec();
    let decisions: Vec<bool> = frame_stats.iter().map(|&s| s > threshold).collect();
    Ok(DetectionReport {
        payload: decisions[PREAMBLE.len()..].to_vec(),
        statistics: frame_stats,
        decisions,
        frame_start: received.t0() + (start * per_symbol) as f64 * dt,
        threshold,
        bit_errors: None,
        recovered,
    })
}

fn hamming(a: &[bool], b: &[bool]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(domain(format!(
            "bit streams differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Fraction of positions where the streams differ.
pub fn ber(tx: &[bool], rx: &[bool]) -> Result<f64> {
    let errors = hamming(tx, rx)?;
    Ok(if tx.is_empty() {
        0.0
    } else {
        errors as f64 / tx.len() as f64
    })
}

/// Deterministic pseudo-random payload.
pub fn random_payload(len: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random()).collect()
}

/// End-to-end link: modulate, push through a channel engine, add noise,
/// detect.
#[derive(Debug, Clone)]
pub struct Link {
    pub params: PkParams,
    pub modulation: ModulationConfig,
    pub detector: DetectorSettings,
    pub engine: Engine,
    pub platform: Option<PlatformConfig>,
    pub dt: f64,
    /// Record length kept after the last symbol, seconds.
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sigma: f64,
    pub bits: usize,
    pub errors: usize,
    /// Frames whose preamble was missed or cut short; all their payload bits
    /// count as errors.
    pub lost_frames: usize,
}

impl SweepPoint {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

impl Link {
    pub fn horizon(&self, payload_len: usize) -> f64 {
        (PREAMBLE.len() + payload_len) as f64 * self.modulation.symbol_period + self.tail
    }

    pub fn transmit(&self, payload: &[bool]) -> Result<(DoseSchedule, SampledSignal)> {
        let schedule = modulate_ook(&frame(payload), &self.modulation)?;
        let received = render(
            self.engine,
            &self.params,
            self.modulation.route,
            self.platform.as_ref(),
            &schedule,
            self.dt,
            self.horizon(payload.len()),
        )?;
        Ok((schedule, received))
    }

    pub fn receive(&self, received: &SampledSignal, payload: &[bool]) -> Result<DetectionReport> {
        let mut report = detect(
            received,
            &self.params,
            &self.modulation,
            payload.len(),
            &self.detector,
        )?;
        report.score(payload)?;
        Ok(report)
    }

    /// Runs one frame and returns its report, noise applied with `seed`.
    pub fn run(&self, payload: &[bool], noise: &NoiseModel, seed: u64) -> Result<DetectionReport> {
        let (_, clean) = self.transmit(payload)?;
        let (noisy, _) = noise.realize(&clean, seed)?;
        self.receive(&noisy, payload)
    }

    /// BER at each noise level over `frames` random payloads. Frame `i` uses
    /// payload seed `seed + i` and noise seed `seed + i` at every level, so
    /// levels differ only in noise amplitude.
    pub fn ber_sweep(
        &self,
        sigmas: &[f64],
        spike_prob: f64,
        spike_scale: f64,
        frames: usize,
        payload_len: usize,
        seed: u64,
    ) -> Result<Vec<SweepPoint>> {
        let clean: Vec<(Vec<bool>, SampledSignal)> = (0..frames)
            .into_par_iter()
            .map(|i| {
                let payload = random_payload(payload_len, seed.wrapping_add(i as u64));
                self.transmit(&payload).map(|(_, y)| (payload, y))
            })
            .collect::<Result<_>>()?;
        sigmas
            .iter()
            .map(|&sigma| {
                let noise = NoiseModel::new(sigma, spike_prob, spike_scale)?;
                let outcomes: Vec<(usize, bool)> = clean
                    .par_iter()
                    .enumerate()
                    .map(|(i, (payload, y))| {
                        let (noisy, _) = noise.realize(y, seed.wrapping_add(i as u64))?;
                        match self.receive(&noisy, payload) {
                            Ok(r) => Ok((r.bit_errors.unwrap_or(0), false)),
                            Err(Error::Sync(_) | Error::Truncation { .. }) => {
                                Ok((payload.len(), true))
                            }
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(SweepPoint {
                    sigma,
                    bits: frames * payload_len,
                    errors: outcomes.iter().map(|o| o.0).sum(),
                    lost_frames: outcomes.iter().filter(|o| o.1).count(),
                })
            })
            .collect()
    }
}
