//! Parameter recovery from concentration-time data and cross-substance
//! calibration.
//!
//! Models are written in terms of a lumped amplitude `A`: `A e^{-ke t}` for
//! the intravenous route (`A = dose / V`) and `A ka g(t)` for the
//! extravascular route (`A = F dose / V`, `g` the biexponential kernel).
//! Concentration data alone cannot separate `F` from `V`; fitted parameters
//! carry `F = 1` and `V = dose / A`.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::channel::{biexp_kernel, PkParams, Route, DEGENERACY_TOLERANCE};
use crate::error::{config, domain, Error, Result};
use crate::signal::SampledSignal;

/// Concentration samples of one administration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSeries {
    t: Vec<f64>,
    c: Vec<f64>,
    pub route: Route,
    /// mg
    pub dose: f64,
}

impl ConcentrationSeries {
    pub fn new(t: Vec<f64>, c: Vec<f64>, route: Route, dose: f64) -> Result<Self> {
        if t.len() != c.len() {
            return Err(Error::Data(format!(
                "{} times but {} concentrations",
                t.len(),
                c.len()
            )));
        }
        if !(dose > 0.0 && dose.is_finite()) {
            return Err(domain(format!("dose must be positive, got {dose}")));
        }
        if let Some(i) = t.iter().chain(&c).position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at entry {i}")));
        }
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "times must strictly increase: t[{}] = {} follows {}",
                i + 1,
                t[i + 1],
                t[i]
            )));
        }
        Ok(ConcentrationSeries { t, c, route, dose })
    }

    pub fn from_signal(signal: &SampledSignal, route: Route, dose: f64) -> Result<Self> {
        ConcentrationSeries::new(
            signal.times().collect(),
            signal.samples().to_vec(),
            route,
            dose,
        )
    }

    /// Reads a CSV with a header row. Times come from column `t`;
    /// concentrations from `column`, else `c`, else the second column.
    pub fn from_csv<R: Read>(
        reader: R,
        column: Option<&str>,
        route: Route,
        dose: f64,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let parse_err = |e: csv::Error| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let headers = rdr.headers().map_err(parse_err)?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let t_col = find("t").ok_or_else(|| Error::Parse {
            line: 1,
            message: "header has no 't' column".into(),
        })?;
        let c_col = match column {
            Some(name) => find(name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header has no '{name}' column"),
            })?,
            None => find("c")
                .or_else(|| (headers.len() > 1).then_some(if t_col == 0 { 1 } else { 0 }))
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: "no concentration column".into(),
                })?,
        };
        let (mut t, mut c) = (Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record.map_err(parse_err)?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64> {
                let raw = record.get(i).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing field {}", i + 1),
                })?;
                raw.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("'{raw}' is not a number"),
                })
            };
            t.push(field(t_col)?);
            c.push(field(c_col)?);
        }
        ConcentrationSeries::new(t, c, route, dose)
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check_count(&self) -> Result<()> {
        let needed = match self.route {
            Route::Intravenous => 3,
            Route::Extravascular => 4,
        };
        if self.len() < needed {
            return Err(Error::Data(format!(
                "{} fit needs at least {needed} points, got {}",
                self.route,
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Residuals,
    LeastSquares,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Residuals => "residuals",
            FitMethod::LeastSquares => "lsq",
        })
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residuals" => Ok(FitMethod::Residuals),
            "lsq" | "least-squares" => Ok(FitMethod::LeastSquares),
            other => Err(Error::Usage(format!(
                "unknown fit method '{other}' (expected residuals or lsq)"
            ))),
        }
    }
}

/// One way of attaching the fitted rate constants to `k_a` and `k_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub params: PkParams,
    /// `F dose / V` (extravascular) or `dose / V` (intravenous), mg/mL.
    pub lumped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub route: Route,
    pub method: FitMethod,
    /// Absorption assumed faster than elimination.
    pub primary: Assignment,
    /// Extravascular fits only: the same curve with the rate constants
    /// swapped (flip-flop kinetics). Concentration data cannot tell the two
    /// apart.
    pub alternative: Option<Assignment>,
    /// Residual sum of squares of the primary assignment.
    pub rss: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn params(&self) -> &PkParams {
        &self.primary.params
    }

    pub fn lumped(&self) -> f64 {
        self.primary.lumped
    }

    pub fn k_fast(&self) -> f64 {
        self.primary.params.fastest_rate(self.route)
    }

    pub fn k_slow(&self) -> f64 {
        self.primary.params.slowest_rate(self.route)
    }

    pub fn predict(&self, t: f64) -> f64 {
        model_value(self.route, &theta_of(&self.primary, self.route), t)
    }

    pub fn summary(&self) -> String {
        let p = &self.primary.params;
        let mut s = format!(
            "method={},route={},k_e={},lumped={},v={},rss={},iterations={}",
            self.method, self.route, p.ke, self.primary.lumped, p.v, self.rss, self.iterations
        );
        if let Some(ka) = p.ka {
            s = format!("{s},k_a={ka}");
        }
        if let Some(alt) = &self.alternative {
            s = format!(
                "{s}\nflip_flop_alternative: k_a={},k_e={},lumped={},v={}",
                alt.params.ka.unwrap_or(f64::NAN),
                alt.params.ke,
                alt.lumped,
                alt.params.v
            );
        }
        s
    }
}

fn assignment(
    route: Route,
    ka: Option<f64>,
    ke: f64,
    lumped: f64,
    dose: f64,
) -> Result<Assignment> {
    if !(lumped > 0.0 && lumped.is_finite()) {
        return Err(Error::Numeric(format!(
            "fitted amplitude {lumped} is not positive"
        )));
    }
    let params = match route {
        Route::Intravenous => PkParams::intravenous(ke, dose / lumped),
        Route::Extravascular => PkParams::extravascular(
            ka.ok_or_else(|| config("extravascular assignment needs k_a"))?,
            ke,
            1.0,
            dose / lumped,
        ),
    }
    .map_err(|e| Error::Numeric(format!("fit produced invalid parameters: {e}")))?;
    Ok(Assignment { params, lumped })
}

/// Both assignments of an extravascular fit `(k_fast, k_slow, A_fast)`,
/// where `A_fast` is the amplitude with `k_a = k_fast`.
fn ev_assignments(
    k_fast: f64,
    k_slow: f64,
    amplitude: f64,
    dose: f64,
) -> Result<(Assignment, Assignment)> {
    let primary = assignment(Route::Extravascular, Some(k_fast), k_slow, amplitude, dose)?;
    let flipped = amplitude * k_fast / k_slow;
    let alternative = assignment(Route::Extravascular, Some(k_slow), k_fast, flipped, dose)?;
    Ok((primary, alternative))
}

/// Ordinary least-squares line `y = a + b x`.
fn regress(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Data("regression needs distinct times".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

fn log_regress(t: &[f64], c: &[f64], what: &str) -> Result<(f64, f64)> {
    if let Some(i) = c.iter().position(|&v| !(v > 0.0)) {
        return Err(domain(format!(
            "{what}: concentration {} at t = {} is not positive",
            c[i], t[i]
        )));
    }
    let logs: Vec<f64> = c.iter().map(|v| v.ln()).collect();
    regress(t, &logs)
}

/// Method of residuals.
///
/// Intravenous: `ln c` regressed on `t` over all points. Extravascular: the
/// terminal phase (the later half of the post-peak points, at least three)
/// gives the slower constant and its back-extrapolated line; points up to
/// the peak whose residual against that line is positive give the faster
/// constant.
pub fn fit_residuals(data: &ConcentrationSeries) -> Result<FitResult> {
    data.check_count()?;
    let (t, c) = (&data.t[..], &data.c[..]);
    match data.route {
        Route::Intravenous => {
            let (intercept, slope) = log_regress(t, c, "log-linear regression")?;
            let ke = -slope;
            if !(ke > 0.0) {
                return Err(Error::Data(format!(
                    "concentrations do not decay (slope {slope})"
                )));
            }
            let primary = assignment(Route::Intravenous, None, ke, intercept.exp(), data.dose)?;
            finish(data, FitMethod::Residuals, primary, None, 0)
        }
        Route::Extravascular => {
            let peak = c
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > c[best] { i } else { best });
            let post = c.len() - peak - 1;
            if post < 3 {
                return Err(Error::Data(format!(
                    "terminal phase needs at least 3 points after the peak, got {post}"
                )));
            }
            let tail = post.div_ceil(2).max(3);
            let start = c.len() - tail;
            let (b_ln, slope) = log_regress(&t[start..], &c[start..], "terminal phase")?;
            let k_slow = -slope;
            if !(k_slow > 0.0) {
                return Err(Error::Data(format!(
                    "terminal phase does not decay (slope {slope})"
                )));
            }
            let b = b_ln.exp();
            let (rt, rc): (Vec<f64>, Vec<f64>) = t[..=peak]
                .iter()
                .zip(&c[..=peak])
                .map(|(&ti, &ci)| (ti, b * (-k_slow * ti).exp() - ci))
                .filter(|&(_, r)| r > 0.0)
                .unzip();
            if rt.len() < 2 {
                return Err(Error::Data(format!(
                    "only {} usable residual points before the peak",
                    rt.len()
                )));
            }
            let (_, rslope) = regress(&rt, &rc.iter().map(|v| v.ln()).collect::<Vec<_>>())?;
            let k_fast = -rslope;
            if !(k_fast > k_slow) {
                return Err(Error::Data(format!(
                    "residual phase ({k_fast}) is not faster than the terminal phase ({k_slow})"
                )));
            }
            let amplitude = b * (k_fast - k_slow) / k_fast;
            let (primary, alternative) = ev_assignments(k_fast, k_slow, amplitude, data.dose)?;
            finish(data, FitMethod::Residuals, primary, Some(alternative), 0)
        }
    }
}

fn finish(
    data: &ConcentrationSeries,
    method: FitMethod,
    primary: Assignment,
    alternative: Option<Assignment>,
    iterations: usize,
) -> Result<FitResult> {
    let theta = theta_of(&primary, data.route);
    let rss = rss_of(data, &theta);
    Ok(FitResult {
        route: data.route,
        method,
        primary,
        alternative,
        rss,
        iterations,
    })
}

/// Parameter vector used by the least-squares model: `[ke, A]` for the
/// intravenous route, `[ka, ke, A]` for the extravascular route.
fn theta_of(a: &Assignment, route: Route) -> Vec<f64> {
    match route {
        Route::Intravenous => vec![a.params.ke, a.lumped],
        Route::Extravascular => vec![a.params.ka.unwrap_or(f64::NAN), a.params.ke, a.lumped],
    }
}

fn model_value(route: Route, theta: &[f64], t: f64) -> f64 {
    match route {
        Route::Intravenous => theta[1] * (-theta[0] * t).exp(),
        Route::Extravascular => theta[2] * theta[0] * biexp_kernel(theta[0], theta[1], t),
    }
}

fn rss_of(data: &ConcentrationSeries, theta: &[f64]) -> f64 {
    data.t
        .iter()
        .zip(&data.c)
        .map(|(&t, &c)| (model_value(data.route, theta, t) - c).powi(2))
        .sum()
}

/// `sum z^m * coef(m)` for small `|z|`.
fn series(z: f64, coef: impl Fn(u32) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut zp = 1.0;
    for m in 0..24 {
        sum += zp * coef(m);
        zp *= z;
    }
    sum
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Partial derivatives of the biexponential kernel with respect to `ka` and
/// `ke`, stable when the two rates are close.
fn kernel_partials(ka: f64, ke: f64, t: f64) -> (f64, f64) {
    let z = -(ka - ke) * t;
    let base = -t * t * (-ke * t).exp();
    if z.abs() < 0.1 {
        let d_ka = base * series(z, |m| f64::from(m + 1) / factorial(m + 2));
        let d_ke = base * series(z, |m| 1.0 / factorial(m + 2));
        (d_ka, d_ke)
    } else {
        let g = biexp_kernel(ka, ke, t);
        let d = ka - ke;
        ((t * (-ka * t).exp() - g) / d, (g - t * (-ke * t).exp()) / d)
    }
}

/// Model concentration and its gradient with respect to `theta` at time `t`.
/// `theta` is `[ke, A]` (intravenous) or `[ka, ke, A]` (extravascular).
pub fn model_gradient(route: Route, theta: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
    let expected = match route {
        Route::Intravenous => 2,
        Route::Extravascular => 3,
    };
    if theta.len() != expected {
        return Err(domain(format!(
            "{route} model has {expected} parameters, got {}",
            theta.len()
        )));
    }
    Ok(match route {
        Route::Intravenous => {
            let (ke, a) = (theta[0], theta[1]);
            let e = (-ke * t).exp();
            (a * e, vec![-a * t * e, e])
        }
        Route::Extravascular => {
            let (ka, ke, a) = (theta[0], theta[1], theta[2]);
            let g = biexp_kernel(ka, ke, t);
            let (dg_ka, dg_ke) = kernel_partials(ka, ke, t);
            (
                a * ka * g,
                vec![a * (g + ka * dg_ka), a * ka * dg_ke, ka * g],
            )
        }
    })
}

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-9;
const MAX_REJECTIONS: usize = 20;

/// Levenberg-Marquardt minimization of the squared concentration error,
/// starting from `init`.
///
/// Stops when the largest relative parameter step falls below `1e-9` or
/// after 200 iterations. Twenty consecutive rejected steps are reported as
/// a convergence failure. Extravascular results are reordered so that
/// `k_a >= k_e`, with the swapped assignment as the alternative.
pub fn fit_least_squares(data: &ConcentrationSeries, init: &PkParams) -> Result<FitResult> {
    data.check_count()?;
    init.check_route(data.route)?;
    let route = data.route;
    let mut theta = match route {
        Route::Intravenous => vec![init.ke, data.dose / init.v],
        Route::Extravascular => vec![init.require_ka()?, init.ke, init.f * data.dose / init.v],
    };
    let p = theta.len();
    let m = data.len();
    let mut rss = rss_of(data, &theta);
    let scale: f64 = data.c.iter().map(|c| c * c).sum();
    let mut damping = 1e-3;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(m, p);
        let mut resid = DVector::<f64>::zeros(m);
        for (i, (&t, &c)) in data.t.iter().zip(&data.c).enumerate() {
            let (value, grad) = model_gradient(route, &theta, t)?;
            resid[i] = value - c;
            for (j, gj) in grad.into_iter().enumerate() {
                jac[(i, j)] = gj;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &resid;
        let mut rejections = 0;
        let step = loop {
            let mut lhs = jtj.clone();
            for j in 0..p {
                lhs[(j, j)] += damping * jtj[(j, j)].max(f64::MIN_POSITIVE);
            }
            let delta = lhs
                .lu()
                .solve(&(-&jtr))
                .unwrap_or_else(|| DVector::zeros(p));
            let relative = (0..p).fold(0.0f64, |r, j| r.max((delta[j] / theta[j]).abs()));
            if relative < STEP_TOLERANCE || rss <= 1e-30 * scale {
                break None;
            }
            let candidate: Vec<f64> = (0..p).map(|j| theta[j] + delta[j]).collect();
            if candidate.iter().all(|&v| v > 0.0 && v.is_finite()) {
                let cand_rss = rss_of(data, &candidate);
                if cand_rss < rss {
                    damping = (damping / 10.0).max(1e-12);
                    break Some((candidate, cand_rss, relative));
                }
            }
            damping *= 10.0;
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::Convergence(format!(
                    "{MAX_REJECTIONS} consecutive steps failed to reduce the residual (rss {rss})"
                )));
            }
        };
        match step {
            None => break,
            Some((candidate, cand_rss, relative)) => {
                theta = candidate;
                rss = cand_rss;
                if relative < STEP_TOLERANCE {
                    break;
                }
            }
        }
    }

    let (primary, alternative) = match route {
        Route::Intravenous => (
            assignment(route, None, theta[0], theta[1], data.dose)?,
            None,
        ),
        Route::Extravascular => {
            let (ka, ke, a) = (theta[0], theta[1], theta[2]);
            let (k_fast, k_slow, a_fast) = if ka >= ke {
                (ka, ke, a)
            } else {
                (ke, ka, a * ka / ke)
            };
            if (k_fast - k_slow) <= DEGENERACY_TOLERANCE * k_fast {
                let only = assignment(route, Some(ka), ke, a, data.dose)?;
                (only, Some(only))
            } else {
                let (p, alt) = ev_assignments(k_fast, k_slow, a_fast, data.dose)?;
                (p, Some(alt))
            }
        }
    };
    Ok(FitResult {
        route,
        method: FitMethod::LeastSquares,
        primary,
        alternative,
        rss,
        iterations,
    })
}

/// Least-squares gain `s` minimizing `|s model - target|^2`.
pub fn calibration_scale(model: &SampledSignal, target: &SampledSignal) -> Result<f64> {
    if !model.same_grid(target) {
        return Err(config("model and target curves must share a grid"));
    }
    let mm: f64 = model.samples().iter().map(|v| v * v).sum();
    if mm == 0.0 {
        return Err(domain("model curve has zero energy"));
    }
    let mt: f64 = model
        .samples()
        .iter()
        .zip(target.samples())
        .map(|(a, b)| a * b)
        .sum();
    Ok(mt / mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ev_concentration, iv_concentration};
    use crate::signal::SignalRole;

    const KA: f64 = 3.27e-3;
    const KE: f64 = 1.51e-3;

    fn synthetic(route: Route, dt: f64, n: usize) -> ConcentrationSeries {
        let p = PkParams::extravascular(KA, KE, 1.0, 649.0).unwrap();
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let c = t
            .iter()
            .map(|&ti| match route {
                Route::Intravenous => iv_concentration(&p, 130.0, ti).unwrap(),
                Route::Extravascular => ev_concentration(&p, 130.0, ti).unwrap(),
            })
            .collect();
        ConcentrationSeries::new(t, c, route, 130.0).unwrap()
    }

    #[test]
    fn iv_residuals_exact() {
        let fit = fit_residuals(&synthetic(Route::Intravenous, 60.0, 120)).unwrap();
        assert!((fit.params().ke / KE - 1.0).abs() < 1e-6);
        assert!((fit.params().v / 649.0 - 1.0).abs() < 1e-6);
        assert!(fit.alternative.is_none());
    }

    #[test]
    fn ev_residuals_within_one_percent() {
        let fit = fit_residuals(&synthetic(Route::Extravascular, 60.0, 150)).unwrap();
        let p = fit.params();
        assert!((p.ka.unwrap() / KA - 1.0).abs() < 0.01, "ka {:?}", p.ka);
        assert!((p.ke / KE - 1.0).abs() < 0.01, "ke {}", p.ke);
        let alt = fit.alternative.unwrap();
        assert!((alt.params.ka.unwrap() - p.ke).abs() < 1e-15);
        // both assignments describe the same curve
        for t in [100.0, 1000.0, 5000.0] {
            let a = ev_concentration(p, 130.0, t).unwrap();
            let b = ev_concentration(&alt.params, 130.0, t).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn zero_in_window_is_domain_error() {
        let mut s = synthetic(Route::Intravenous, 60.0, 10);
        s.c[4] = 0.0;
        assert!(matches!(fit_residuals(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn too_few_points() {
        let s = synthetic(Route::Extravascular, 60.0, 3);
        assert!(matches!(fit_residuals(&s), Err(Error::Data(_))));
        // peak too close to the end
        let s = synthetic(Route::Extravascular, 60.0, 9);
        assert!(matches!(fit_residuals(&s), Err(Error::Data(_))));
    }

    #[test]
    fn least_squares_from_truth_stops_immediately() {
        let data = synthetic(Route::Extravascular, 60.0, 150);
        let truth = PkParams::extravascular(KA, KE, 1.0, 649.0).unwrap();
        let fit = fit_least_squares(&data, &truth).unwrap();
        assert!(fit.iterations <= 2);
        assert!(fit.rss < 1e-18);
    }

    #[test]
    fn least_squares_from_double_truth() {
        let data = synthetic(Route::Extravascular, 60.0, 150);
        let init = PkParams::extravascular(2.0 * KA, 2.0 * KE, 1.0, 649.0 / 2.0).unwrap();
        let fit = fit_least_squares(&data, &init).unwrap();
        let p = fit.params();
        assert!((p.ka.unwrap() / KA - 1.0).abs() < 1e-4);
        assert!((p.ke / KE - 1.0).abs() < 1e-4);
        assert!((p.v / 649.0 - 1.0).abs() < 1e-4);

        let iv = synthetic(Route::Intravenous, 60.0, 100);
        let fit = fit_least_squares(&iv, &PkParams::intravenous(2.0 * KE, 300.0).unwrap()).unwrap();
        assert!((fit.params().ke / KE - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flip_flop_start_is_canonicalized() {
        let data = synthetic(Route::Extravascular, 60.0, 150);
        let init = PkParams::extravascular(KE * 0.9, KA * 1.1, 1.0, 649.0).unwrap();
        let fit = fit_least_squares(&data, &init).unwrap();
        assert!(fit.params().ka.unwrap() >= fit.params().ke);
        assert!((fit.params().ka.unwrap() / KA - 1.0).abs() < 1e-4);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for (route, theta) in [
            (Route::Intravenous, vec![KE, 0.2]),
            (Route::Extravascular, vec![KA, KE, 0.2]),
            (Route::Extravascular, vec![KE * (1.0 + 1e-3), KE, 0.2]),
        ] {
            for t in [10.0, 400.0, 3000.0] {
                let (_, grad) = model_gradient(route, &theta, t).unwrap();
                for j in 0..theta.len() {
                    let h = theta[j] * 1e-5;
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[j] += h;
                    dn[j] -= h;
                    let fd = (model_gradient(route, &up, t).unwrap().0
                        - model_gradient(route, &dn, t).unwrap().0)
                        / (2.0 * h);
                    assert!(
                        (grad[j] - fd).abs() <= 1e-6 * fd.abs(),
                        "{route} j={j} t={t}: {} vs {fd}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn calibration() {
        let m =
            SampledSignal::new(0.0, 1.0, vec![1.0, 2.0, 3.0], SignalRole::Concentration).unwrap();
        let t = m.scaled(5.595e-2);
        assert!((calibration_scale(&m, &t).unwrap() - 5.595e-2).abs() < 1e-15);
        assert!((calibration_scale(&m, &m).unwrap() - 1.0).abs() < 1e-15);
        let z = SampledSignal::zeros(0.0, 1.0, 3, SignalRole::Concentration).unwrap();
        assert!(matches!(calibration_scale(&z, &m), Err(Error::Domain(_))));
        let other = SampledSignal::zeros(0.0, 2.0, 3, SignalRole::Concentration).unwrap();
        assert!(matches!(
            calibration_scale(&m, &other),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_parsing() {
        let ok = "t,c\n0,1\n1,0.5\n2,0.25\n";
        let s =
            ConcentrationSeries::from_csv(ok.as_bytes(), None, Route::Intravenous, 1.0).unwrap();
        assert_eq!(s.values(), &[1.0, 0.5, 0.25]);
        let bad = "t,c\n0,1\n1,abc\n";
        match ConcentrationSeries::from_csv(bad.as_bytes(), None, Route::Intravenous, 1.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let cols = "t,analytic,ode\n0,1,2\n1,3,4\n";
        let s =
            ConcentrationSeries::from_csv(cols.as_bytes(), Some("ode"), Route::Intravenous, 1.0)
                .unwrap();
        assert_eq!(s.values(), &[2.0, 4.0]);
        let unordered = "t,c\n1,1\n0,1\n";
        assert!(matches!(
            ConcentrationSeries::from_csv(unordered.as_bytes(), None, Route::Intravenous, 1.0),
            Err(Error::Data(_))
        ));
    }
}
