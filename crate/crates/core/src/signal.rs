//! Uniformly sampled signals and the discrete-time machinery around them:
//! sampling, convolution, deconvolution, inverse filtering and spectra.
//!
//! A mass-rate signal is read as a train of impulses: `samples[i] * dt` is
//! the mass delivered at `t0 + i*dt`. Convolution is the matching Riemann
//! sum, so a one-sample pulse of height `m/dt` reproduces `m * h` exactly on
//! the grid.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{impulse_response, Normalization, PkParams, Route};
use crate::error::{config, domain, Error, Result};

/// Output length at or above which convolution switches to the FFT path.
pub const DIRECT_CONVOLUTION_LIMIT: usize = 1 << 14;

/// Default Tikhonov weight, relative to `max |H|^2`.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalRole {
    /// mg/s
    MassRate,
    /// mg
    Mass,
    /// mg/mL
    Concentration,
}

impl fmt::Display for SignalRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalRole::MassRate => "mass_rate",
            SignalRole::Mass => "mass",
            SignalRole::Concentration => "concentration",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
    role: SignalRole,
}

impl SampledSignal {
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>, role: SignalRole) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain(format!(
                "sample interval must be positive, got {dt}"
            )));
        }
        if !t0.is_finite() {
            return Err(domain("start time must be finite"));
        }
        if samples.is_empty() {
            return Err(domain("a signal needs at least one sample"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} is not finite")));
        }
        Ok(SampledSignal {
            t0,
            dt,
            samples,
            role,
        })
    }

    pub fn zeros(t0: f64, dt: f64, n: usize, role: SignalRole) -> Result<Self> {
        SampledSignal::new(t0, dt, vec![0.0; n], role)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn role(&self) -> SignalRole {
        self.role
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index and value of the largest sample.
    pub fn argmax(&self) -> (usize, f64) {
        self.samples
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::MIN),
                |best, (i, v)| if v > best.1 { (i, v) } else { best },
            )
    }

    /// Trapezoidal integral over the sampled span.
    pub fn integral(&self) -> f64 {
        let s = &self.samples;
        if s.len() < 2 {
            return 0.0;
        }
        let inner: f64 = s[1..s.len() - 1].iter().sum();
        self.dt * (inner + 0.5 * (s[0] + s[s.len() - 1]))
    }

    /// `dt * sum(samples)`: total mass of an impulse-train mass rate.
    pub fn total(&self) -> f64 {
        self.dt * self.samples.iter().sum::<f64>()
    }

    pub fn scaled(&self, factor: f64) -> SampledSignal {
        SampledSignal {
            samples: self.samples.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn with_role(mut self, role: SignalRole) -> SampledSignal {
        self.role = role;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SampledSignal> {
        SampledSignal::new(
            self.t0,
            self.dt,
            self.samples.iter().map(|&v| f(v)).collect(),
            self.role,
        )
    }

    /// Linear interpolation; zero outside the sampled span.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x < 0.0 || x > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.len() {
            return self.samples[self.len() - 1];
        }
        let u = x - i as f64;
        self.samples[i] * (1.0 - u) + self.samples[i + 1] * u
    }

    pub fn same_grid(&self, other: &SampledSignal) -> bool {
        self.len() == other.len()
            && rel_close(self.dt, other.dt, 1e-12)
            && (self.t0 - other.t0).abs() <= 1e-9 * self.dt
    }

    /// Writes `t,value,role` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value,role")?;
        for (t, v) in self.times().zip(&self.samples) {
            writeln!(out, "{t},{v},{}", self.role)?;
        }
        Ok(())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Largest absolute difference relative to the largest magnitude of either
/// signal; signals are compared sample by sample over their common length.
pub fn relative_sup_difference(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

pub fn sample(
    f: impl Fn(f64) -> f64,
    t0: f64,
    dt: f64,
    n: usize,
    role: SignalRole,
) -> Result<SampledSignal> {
    if !(dt > 0.0) || n == 0 {
        return Err(domain("sampling needs dt > 0 and n >= 1"));
    }
    let samples: Vec<f64> = (0..n).map(|i| f(t0 + i as f64 * dt)).collect();
    SampledSignal::new(t0, dt, samples, role)
}

/// Samples the channel impulse response from lag 0.
pub fn sample_impulse_response(
    params: &PkParams,
    route: Route,
    normalization: Normalization,
    dt: f64,
    n: usize,
) -> Result<SampledSignal> {
    params.check_route(route)?;
    let role = match normalization {
        Normalization::Amount => SignalRole::Mass,
        Normalization::Concentration => SignalRole::Concentration,
    };
    // validated above; evaluation cannot fail for t >= 0
    sample(
        |t| impulse_response(params, route, normalization, t).unwrap_or(f64::NAN),
        0.0,
        dt,
        n,
        role,
    )
}

fn convolved_role(x: SignalRole, h: SignalRole) -> SignalRole {
    match (x, h) {
        (SignalRole::MassRate, other) | (other, SignalRole::MassRate) => other,
        (other, _) => other,
    }
}

fn check_dt(a: &SampledSignal, b: &SampledSignal) -> Result<()> {
    if !rel_close(a.dt, b.dt, 1e-12) {
        return Err(config(format!(
            "sample intervals differ: {} vs {}",
            a.dt, b.dt
        )));
    }
    Ok(())
}

/// Riemann approximation of the continuous convolution: `dt * (x * h)`.
///
/// Output starts at `x.t0 + h.t0` and has `len(x) + len(h) - 1` samples.
pub fn convolve(x: &SampledSignal, h: &SampledSignal) -> Result<SampledSignal> {
    check_dt(x, h)?;
    let out_len = x.len() + h.len() - 1;
    let raw = if out_len < DIRECT_CONVOLUTION_LIMIT {
        convolve_direct(&x.samples, &h.samples)
    } else {
        convolve_fft(&x.samples, &h.samples)
    };
    let samples = raw.into_iter().map(|v| v * x.dt).collect();
    SampledSignal::new(x.t0 + h.t0, x.dt, samples, convolved_role(x.role, h.role))
}

/// Full linear convolution evaluated term by term.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &hj) in out[i..].iter_mut().zip(h) {
            *o += xi * hj;
        }
    }
    out
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl FftPair {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    fn transform(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform, normalized, real part.
    fn invert(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.len as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Full linear convolution through a zero-padded FFT.
pub fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let fft = FftPair::new(out_len.next_power_of_two());
    let xs = fft.transform(x);
    let hs = fft.transform(h);
    let prod = xs.into_iter().zip(hs).map(|(a, b)| a * b).collect();
    let mut out = fft.invert(prod);
    out.truncate(out_len);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Deconvolution {
    /// Tikhonov-regularized division in the frequency domain. The penalty is
    /// `relative_lambda * max|H|^2`; zero gives the plain least-squares inverse.
    FrequencyRegularized { relative_lambda: f64 },
    /// Sample-by-sample polynomial division; needs `h[0]` away from zero.
    TimeRecursive,
}

impl Default for Deconvolution {
    fn default() -> Self {
        Deconvolution::FrequencyRegularized {
            relative_lambda: DEFAULT_RELATIVE_LAMBDA,
        }
    }
}

impl Deconvolution {
    pub fn regularized(relative_lambda: f64) -> Self {
        Deconvolution::FrequencyRegularized { relative_lambda }
    }
}

/// Recovers the input `x` with `convolve(x, h) ≈ y` on the grid of `y`.
///
/// The regularized method solves the Tikhonov problem on a zero-padded
/// circular embedding long enough that `convolve(x, h)` does not wrap, so for
/// a complete `y` (including the convolution tail) and `lambda = 0` the
/// result is the exact inverse.
pub fn deconvolve(
    y: &SampledSignal,
    h: &SampledSignal,
    method: Deconvolution,
) -> Result<SampledSignal> {
    check_dt(y, h)?;
    let h_peak = h.max_abs();
    if h_peak == 0.0 {
        return Err(domain("impulse response has zero energy"));
    }
    let dt = y.dt;
    let n = y.len();
    let samples = match method {
        Deconvolution::FrequencyRegularized { relative_lambda } => {
            if !(relative_lambda >= 0.0) {
                return Err(domain(format!(
                    "regularization weight must be non-negative, got {relative_lambda}"
                )));
            }
            let fft = FftPair::new((n + h.len()).next_power_of_two());
            let ys = fft.transform(&y.samples);
            let hs: Vec<Complex64> = fft
                .transform(&h.samples)
                .into_iter()
                .map(|c| c * dt)
                .collect();
            let peak_power = hs.iter().fold(0.0f64, |m, c| m.max(c.norm_sqr()));
            let lambda = relative_lambda * peak_power;
            let xs = ys
                .into_iter()
                .zip(&hs)
                .map(|(yk, hk)| {
                    let denom = hk.norm_sqr() + lambda;
                    if denom > 0.0 {
                        hk.conj() * yk / denom
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            let mut out = fft.invert(xs);
            out.truncate(n);
            out
        }
        Deconvolution::TimeRecursive => {
            let hs = &h.samples;
            if hs[0].abs() < 1e-12 * h_peak {
                return Err(Error::IllConditioned(format!(
                    "h[0] = {} is negligible relative to max|h| = {h_peak}; use the regularized method",
                    hs[0]
                )));
            }
            let mut x = vec![0.0; n];
            for k in 0..n {
                let lo = (k + 1).saturating_sub(hs.len());
                let acc: f64 = (lo..k).map(|i| x[i] * hs[k - i]).sum();
                x[k] = (y.samples[k] / dt - acc) / hs[0];
            }
            x
        }
    };
    let role = if y.role == h.role {
        SignalRole::MassRate
    } else if h.role == SignalRole::MassRate {
        y.role
    } else {
        SignalRole::MassRate
    };
    SampledSignal::new(y.t0 - h.t0, dt, samples, role)
}

/// Analytic inverse of the intravenous channel: the input rate is
/// `V dC/dt + k_e V C`, with central differences inside the record and
/// one-sided differences at its ends.
pub fn inverse_filter_iv(y: &SampledSignal, ke: f64, v: f64) -> Result<SampledSignal> {
    if y.len() < 3 {
        return Err(domain(format!(
            "inverse filtering needs at least 3 samples, got {}",
            y.len()
        )));
    }
    let s = &y.samples;
    let n = s.len();
    let dt = y.dt;
    let out = (0..n)
        .map(|i| {
            let deriv = if i == 0 {
                (s[1] - s[0]) / dt
            } else if i == n - 1 {
                (s[n - 1] - s[n - 2]) / dt
            } else {
                (s[i + 1] - s[i - 1]) / (2.0 * dt)
            };
            v * deriv + ke * v * s[i]
        })
        .collect();
    SampledSignal::new(y.t0, dt, out, SignalRole::MassRate)
}

/// Discrete Fourier transform scaled by `dt`, on the angular-frequency grid
/// `2πk / (n dt)` with the upper half folded to negative frequencies.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    pub dt: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `∫|X(ω)|² dω / 2π` approximated on the DFT grid.
    pub fn energy(&self) -> f64 {
        let n = self.len() as f64;
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / (n * self.dt)
    }
}

pub fn spectrum(x: &SampledSignal) -> Result<Spectrum> {
    let n = x.len();
    if n < 2 {
        return Err(domain("spectrum needs at least 2 samples"));
    }
    let fft = FftPair::new(n);
    let values = fft
        .transform(&x.samples)
        .into_iter()
        .map(|c| c * x.dt)
        .collect();
    let step = 2.0 * std::f64::consts::PI / (n as f64 * x.dt);
    let omega = (0..n)
        .map(|k| {
            if k <= n / 2 {
                k as f64 * step
            } else {
                (k as f64 - n as f64) * step
            }
        })
        .collect();
    Ok(Spectrum {
        omega,
        values,
        dt: x.dt,
    })
}

/// `dt * sum |x|^2`.
pub fn energy(x: &SampledSignal) -> f64 {
    x.dt * x.samples.iter().map(|v| v * v).sum::<f64>()
}

/// Ratio of polynomials in `jω`; coefficients are in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalResponse {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl RationalResponse {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() || denominator.is_empty() {
            return Err(domain("coefficient lists must not be empty"));
        }
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::Numeric("coefficients must be finite".into()));
        }
        if *denominator.last().unwrap_or(&0.0) == 0.0 {
            return Err(domain("leading denominator coefficient must be nonzero"));
        }
        Ok(RationalResponse {
            numerator,
            denominator,
        })
    }

    /// The channel's governing differential equation in transfer-function form.
    pub fn for_channel(params: &PkParams, route: Route) -> Result<Self> {
        params.check_route(route)?;
        let ke = params.ke;
        match route {
            Route::Intravenous => RationalResponse::new(vec![1.0], vec![ke, 1.0]),
            Route::Extravascular => {
                let ka = params.require_ka()?;
                RationalResponse::new(vec![params.f * ka], vec![ka * ke, ka + ke, 1.0])
            }
        }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    pub fn eval(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        let poly = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &k| acc * s + k)
        };
        poly(&self.numerator) / poly(&self.denominator)
    }
}
