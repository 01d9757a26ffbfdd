//! Inverse problems: path recovery from port powers, exponential and
//! polynomial fits, statistics, and the TDPS extraction pipeline.

pub mod lm;

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drift::{DriftTrace, TdpsCurve, SECONDS_PER_HOUR};
use crate::error::{Error, Result};
use crate::optics::{cw_port_powers, InterferometerSpec};
use lm::{parameter_variances, CurveModel, LevenbergMarquardt};

const NM: f64 = 1e-9;
/// Guard band on the arcsin argument at the fringe extrema.
const SATURATION_TOL: f64 = 1e-6;
/// Reduced-chi^2 improvement required before a quadratic TDPS is preferred.
pub const QUADRATIC_IMPROVEMENT: f64 = 1.5;
/// Relative floor on point sigmas; finer values are below the fit's own
/// convergence resolution.
const SIGMA_FLOOR: f64 = 1e-8;

/// Where the per-point sigma in `reduced_chi2` came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Post-fit RMSE used as the per-point sigma.
    Rmse,
    /// Caller-supplied per-point sigmas.
    Supplied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `y_inf + (y0 - y_inf) exp(-r t)`, params `[y_inf, y0, r]`.
    Exponential,
    /// `y_inf - a1 exp(-r1 t) - a2 exp(-r2 t)`, params `[y_inf, a1, r1, a2, r2]`.
    DoubleExponential,
    /// `c0 + c1 x + ...`.
    Polynomial,
}

/// Fitted parameters. Rates are per hour; exponential models take time in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// 1-sigma; `null` in JSON when a parameter is unconstrained.
    #[serde(with = "nonfinite_as_null")]
    pub sigmas: Vec<f64>,
    pub rmse: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub noise_model: NoiseModel,
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.sigmas[i])
    }

    /// Model value at `x` (seconds for the exponential models).
    pub fn predict(&self, x: f64) -> f64 {
        match self.model {
            ModelKind::Exponential => Exponential.value(x / SECONDS_PER_HOUR, &self.params),
            ModelKind::DoubleExponential => {
                DoubleExponential.value(x / SECONDS_PER_HOUR, &self.params)
            }
            ModelKind::Polynomial => self.params.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }
}

/// Single-exponential relaxation, time in hours.
pub struct Exponential;

impl CurveModel for Exponential {
    fn num_params(&self) -> usize {
        3
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        p[0] + (p[1] - p[0]) * (-p[2] * t).exp()
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-p[2] * t).exp();
        out[0] = 1.0 - e;
        out[1] = e;
        out[2] = -(p[1] - p[0]) * t * e;
    }
}

/// Double-exponential rise, time in hours.
pub struct DoubleExponential;

impl CurveModel for DoubleExponential {
    fn num_params(&self) -> usize {
        5
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        p[0] - p[1] * (-p[2] * t).exp() - p[3] * (-p[4] * t).exp()
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e1 = (-p[2] * t).exp();
        let e2 = (-p[4] * t).exp();
        out[0] = 1.0;
        out[1] = -e1;
        out[2] = p[1] * t * e1;
        out[3] = -e2;
        out[4] = p[3] * t * e2;
    }
}

fn split_series(series: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    series
        .iter()
        .map(|&(t, y)| (t / SECONDS_PER_HOUR, y))
        .unzip()
}

/// Linear least squares `min |X b - y|` through SVD; `None` if rank deficient.
fn linear_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let max = svd.singular_values.max();
    if !(max > 0.0) || svd.singular_values.min() <= 1e-12 * max {
        return None;
    }
    svd.solve(y, 0.0).ok()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Least squares over a few dense columns through Jacobi-scaled normal
/// equations. Returns the coefficients and the residual sum of squares, or
/// `None` when the columns are numerically dependent. Used for start values,
/// where speed on long series matters more than the last digits.
fn column_solve(columns: &[&[f64]], ys: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = columns.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for i in 0..k {
        b[i] = columns[i].iter().zip(ys).map(|(x, y)| x * y).sum();
        for j in i..k {
            let v: f64 = columns[i].iter().zip(columns[j]).map(|(x, z)| x * z).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let scale: Vec<f64> = (0..k).map(|i| a[(i, i)].sqrt()).collect();
    if scale.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    for i in 0..k {
        b[i] /= scale[i];
        for j in 0..k {
            a[(i, j)] /= scale[i] * scale[j];
        }
    }
    let chol = a.cholesky()?;
    let diag: Vec<f64> = (0..k).map(|i| chol.l_dirty()[(i, i)].powi(2)).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    if diag.iter().any(|&d| d <= 1e-13 * max) {
        return None;
    }
    let coef: Vec<f64> = chol.solve(&b).iter().zip(&scale).map(|(c, s)| c / s).collect();
    let ssr = (0..ys.len())
        .map(|t| {
            let fit: f64 = columns.iter().zip(&coef).map(|(c, w)| c[t] * w).sum();
            (ys[t] - fit).powi(2)
        })
        .sum();
    Some((coef, ssr))
}

fn decay(ts: &[f64], r: f64) -> Vec<f64> {
    ts.iter().map(|t| (-r * t).exp()).collect()
}

/// Best single-exponential start: scan `r` on a log grid, solve the linear
/// parameters exactly at each `r`.
fn exponential_start(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let span = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - ts.iter().copied().fold(f64::INFINITY, f64::min);
    let span = if span > 0.0 { span } else { 1.0 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in log_grid(0.01 / span, 200.0 / span, 60) {
        let e = decay(ts, r);
        let rise: Vec<f64> = e.iter().map(|v| 1.0 - v).collect();
        let Some((b, ssr)) = column_solve(&[&rise, &e], ys) else { continue };
        if best.as_ref().is_none_or(|(s, _)| ssr < *s) {
            best = Some((ssr, vec![b[0], b[1], r]));
        }
    }
    best.map(|(_, p)| p).unwrap_or_else(|| {
        let last = *ys.last().unwrap_or(&0.0);
        vec![last, ys[0], 1.0 / span]
    })
}

/// Linear parameters `(y_inf, a1, a2)` for fixed rates, with their SSR.
fn double_linear_columns(
    ones: &[f64],
    e1: &[f64],
    e2: &[f64],
    ys: &[f64],
    rates: (f64, f64),
) -> Option<(f64, Vec<f64>)> {
    let (b, ssr) = column_solve(&[ones, e1, e2], ys)?;
    // columns carry +exp, the model subtracts the amplitudes
    Some((ssr, vec![b[0], -b[1], rates.0, -b[2], rates.1]))
}

fn double_linear(ts: &[f64], ys: &[f64], r1: f64, r2: f64) -> Option<(f64, Vec<f64>)> {
    let ones = vec![1.0; ts.len()];
    double_linear_columns(&ones, &decay(ts, r1), &decay(ts, r2), ys, (r1, r2))
}

/// Compass search over `(ln r1, ln r2)` on the profiled SSR.
fn refine_rates(
    ts: &[f64],
    ys: &[f64],
    mut best: (f64, Vec<f64>),
    mut step: f64,
    bounds: (f64, f64),
) -> (f64, Vec<f64>) {
    const MOVES: [(f64, f64); 8] = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    // only a start value: LM takes over once the rates are within ~1%
    while step > 1e-2 {
        let (r1, r2) = (best.1[2], best.1[4]);
        let improved = MOVES.iter().find_map(|&(u, v)| {
            let (a, b) = (r1 * (u * step).exp(), r2 * (v * step).exp());
            if !(a > b && b >= bounds.0 && a <= bounds.1) {
                return None;
            }
            let trial = double_linear(ts, ys, a, b)?;
            (trial.0 < best.0).then_some(trial)
        });
        match improved {
            Some(b) => best = b,
            None => step /= 2.0,
        }
    }
    best
}

fn double_exponential_start(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    let single = exponential_start(ts, ys);
    let r_single = single[2];
    let t_end = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_tail = (3.0 / r_single).min(0.6 * t_end);
    let (tail_t, tail_y): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(ys)
        .filter(|(t, _)| **t >= t_tail)
        .map(|(t, y)| (*t, *y))
        .unzip();
    let r_tail = if tail_t.len() >= 4 {
        exponential_start(&tail_t, &tail_y)[2]
    } else {
        r_single / 10.0
    };
    let span = if t_end > 0.0 { t_end } else { 1.0 };
    let grid = log_grid(0.02 / span, 100.0 / span, 18);
    let ones = vec![1.0; ts.len()];
    let columns: Vec<Vec<f64>> = grid.iter().map(|&r| decay(ts, r)).collect();
    let mut best = double_linear(ts, ys, r_single * 1.2, r_tail.min(r_single / 2.0));
    for i in 0..grid.len() {
        for j in 0..i {
            let trial = double_linear_columns(&ones, &columns[i], &columns[j], ys, (grid[i], grid[j]));
            if let Some((ssr, p)) = trial {
                if best.as_ref().is_none_or(|(s, _)| ssr < *s) {
                    best = Some((ssr, p));
                }
            }
        }
    }
    let step = (grid[1] / grid[0]).ln();
    best.map(|b| refine_rates(ts, ys, b, step, (grid[0], grid[grid.len() - 1])))
        .map(|(_, p)| p)
        .unwrap_or_else(|| vec![single[0], 0.7 * (single[0] - single[1]), r_single, 0.3 * (single[0] - single[1]), r_single / 10.0])
}

fn summarize<M: CurveModel>(
    model: &M,
    kind: ModelKind,
    names: &[&str],
    ts: &[f64],
    min: lm::Minimum,
) -> FitResult {
    let n = ts.len();
    let p = model.num_params();
    let dof = n.saturating_sub(p);
    let rmse = (min.ssr / n as f64).sqrt();
    let sigmas = if dof == 0 {
        vec![f64::INFINITY; p]
    } else {
        parameter_variances(&min.normal_matrix, min.ssr / dof as f64)
            .into_iter()
            .map(f64::sqrt)
            .collect()
    };
    FitResult {
        model: kind,
        names: names.iter().map(|s| s.to_string()).collect(),
        params: min.params,
        sigmas,
        rmse,
        reduced_chi2: rmse_reduced_chi2(min.ssr, n, p),
        converged: min.converged,
        iterations: min.iterations,
        noise_model: NoiseModel::Rmse,
    }
}

/// Reduced chi^2 with the post-fit RMSE as the per-point sigma: `N / (N - p)`,
/// or 0 for an exact fit.
fn rmse_reduced_chi2(ssr: f64, n: usize, p: usize) -> f64 {
    if ssr == 0.0 || n <= p {
        0.0
    } else {
        n as f64 / (n - p) as f64
    }
}

fn finish(result: FitResult) -> Result<FitResult> {
    if result.converged {
        Ok(result)
    } else {
        Err(Error::Convergence {
            iterations: result.iterations,
            best: Box::new(result),
        })
    }
}

/// Fits `y(t) = y_inf + (y0 - y_inf) exp(-r t)`; `t` in seconds, `r` reported per hour.
pub fn fit_exponential(series: &[(f64, f64)]) -> Result<FitResult> {
    if series.len() < 4 {
        return Err(Error::domain("exponential fit needs at least 4 points"));
    }
    let (ts, ys) = split_series(series);
    if ts.iter().all(|&t| t == ts[0]) {
        return Err(Error::domain("exponential fit needs distinct times"));
    }
    let start = exponential_start(&ts, &ys);
    let min = LevenbergMarquardt::default().minimize(&Exponential, &ts, &ys, start);
    finish(summarize(
        &Exponential,
        ModelKind::Exponential,
        &["y_inf", "y0", "rate_per_hour"],
        &ts,
        min,
    ))
}

/// Fits `y(t) = y_inf - a1 exp(-r1 t) - a2 exp(-r2 t)` with `r1 >= r2` on output.
pub fn fit_double_exponential(series: &[(f64, f64)]) -> Result<FitResult> {
    if series.len() < 6 {
        return Err(Error::domain("double-exponential fit needs at least 6 points"));
    }
    let (ts, ys) = split_series(series);
    if ts.iter().all(|&t| t == ts[0]) {
        return Err(Error::domain("double-exponential fit needs distinct times"));
    }
    let start = double_exponential_start(&ts, &ys);
    let min = LevenbergMarquardt::default().minimize(&DoubleExponential, &ts, &ys, start);
    let mut result = summarize(
        &DoubleExponential,
        ModelKind::DoubleExponential,
        &["y_inf", "a1", "r1_per_hour", "a2", "r2_per_hour"],
        &ts,
        min,
    );
    if result.params[2] < result.params[4] {
        result.params.swap(1, 3);
        result.params.swap(2, 4);
        result.sigmas.swap(1, 3);
        result.sigmas.swap(2, 4);
    }
    finish(result)
}

/// Data point for a polynomial fit; `sigma` enables weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub sigma: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, sigma: None }
    }
}

/// Polynomial fit of `dL_inf` against temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub degree: usize,
    /// Coefficients `c0, c1, ...` in `result.params`.
    pub result: FitResult,
}

impl PolynomialFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.result.params
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.result.predict(x)
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        self.coefficients()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c * x.powi(k as i32 - 1))
            .sum()
    }

    /// Stationary point of a quadratic.
    pub fn vertex(&self) -> Option<f64> {
        match self.coefficients() {
            [_, b, c] if *c != 0.0 => Some(-b / (2.0 * c)),
            _ => None,
        }
    }

    /// Equivalent equilibrium curve.
    pub fn to_curve(&self, reference_c: f64) -> Result<TdpsCurve> {
        match self.degree {
            1 => Ok(TdpsCurve::Linear {
                slope_nm_per_c: self.coefficients()[1],
                reference_c,
                offset_nm: self.value_at(reference_c),
            }),
            2 => {
                let vertex = self
                    .vertex()
                    .ok_or_else(|| Error::domain("quadratic fit has zero curvature"))?;
                Ok(TdpsCurve::Quadratic {
                    curvature_nm_per_c2: self.coefficients()[2],
                    vertex_c: vertex,
                    offset_nm: self.value_at(vertex),
                })
            }
            d => Err(Error::domain(format!("no TDPS curve of degree {d}"))),
        }
    }
}

/// Weighted least-squares polynomial of degree 1 or 2.
///
/// Weights apply only when every point carries a positive sigma; otherwise the
/// fit is unweighted and the residual scatter sets the uncertainties.
pub fn fit_polynomial(points: &[Point], degree: usize) -> Result<PolynomialFit> {
    if !(1..=2).contains(&degree) {
        return Err(Error::domain(format!("polynomial degree must be 1 or 2, got {degree}")));
    }
    let p = degree + 1;
    if points.len() < p {
        return Err(Error::domain(format!(
            "degree-{degree} fit needs at least {p} points, got {}",
            points.len()
        )));
    }
    let weighted = points.iter().all(|pt| pt.sigma.is_some_and(|s| s > 0.0));
    let w: Vec<f64> = points
        .iter()
        .map(|pt| if weighted { 1.0 / pt.sigma.unwrap() } else { 1.0 })
        .collect();
    let x = DMatrix::from_fn(points.len(), p, |i, j| w[i] * points[i].x.powi(j as i32));
    let y = DVector::from_iterator(points.len(), points.iter().zip(&w).map(|(pt, wi)| wi * pt.y));
    let coeffs = linear_solve(&x, &y).ok_or_else(|| {
        Error::domain("polynomial design matrix is rank deficient")
    })?;
    let params: Vec<f64> = coeffs.iter().copied().collect();
    let fitted = |x: f64| params.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let ssr: f64 = points.iter().map(|pt| (pt.y - fitted(pt.x)).powi(2)).sum();
    let chi2: f64 = points
        .iter()
        .zip(&w)
        .map(|(pt, wi)| (wi * (pt.y - fitted(pt.x))).powi(2))
        .sum();
    let n = points.len();
    let dof = n - p;
    let normal = x.transpose() * &x;
    let sigmas: Vec<f64> = if weighted {
        parameter_variances(&normal, 1.0).into_iter().map(f64::sqrt).collect()
    } else if dof == 0 {
        vec![f64::INFINITY; p]
    } else {
        parameter_variances(&normal, ssr / dof as f64)
            .into_iter()
            .map(f64::sqrt)
            .collect()
    };
    let (reduced_chi2, noise_model) = if weighted {
        (if dof == 0 { 0.0 } else { chi2 / dof as f64 }, NoiseModel::Supplied)
    } else {
        (rmse_reduced_chi2(ssr, n, p), NoiseModel::Rmse)
    };
    let names = ["c0", "c1", "c2"][..p].iter().map(|s| s.to_string()).collect();
    Ok(PolynomialFit {
        degree,
        result: FitResult {
            model: ModelKind::Polynomial,
            names,
            params,
            sigmas,
            rmse: (ssr / n as f64).sqrt(),
            reduced_chi2,
            converged: true,
            iterations: 0,
            noise_model,
        },
    })
}

/// Product-moment correlation coefficient.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Laser detuning equivalent to a path error `rmse_m`: `df = rmse * f0 / L0`.
pub fn rmse_to_frequency(rmse_m: f64, nominal_path_m: f64, center_hz: f64) -> Result<f64> {
    if !(nominal_path_m > 0.0) {
        return Err(Error::domain("nominal path difference must be positive"));
    }
    Ok(rmse_m * center_hz / nominal_path_m)
}

/// Inverts `P+ = (alpha P0 / 2)(1 - sin(k dL))` sample by sample, taking
/// `alpha * P_ref` as `alpha P0`. Returns nm.
pub fn extract_path_from_power(trace: &DriftTrace, insertion: f64, wavelength_m: f64) -> Result<Vec<f64>> {
    if !(wavelength_m > 0.0) {
        return Err(Error::domain("wavelength must be positive"));
    }
    if !(insertion > 0.0 && insertion <= 1.0) {
        return Err(Error::domain("insertion transmission must lie in (0, 1]"));
    }
    let k = TAU / wavelength_m;
    trace
        .p_plus_w
        .iter()
        .zip(&trace.p_ref_w)
        .enumerate()
        .map(|(index, (&plus, &reference))| {
            let scale = insertion * reference;
            let argument = if scale > 0.0 { 2.0 * plus / scale - 1.0 } else { f64::NAN };
            if !(argument.abs() < 1.0 - SATURATION_TOL) {
                return Err(Error::Saturation { index, argument });
            }
            Ok(-argument.asin() / k / NM)
        })
        .collect()
}

/// Builds cumulative `(T, dL)` points from `(T_inf, increment)` pairs, starting
/// at `(initial_c, 0)`.
pub fn cumulate_increments(initial_c: f64, increments: &[(f64, f64)]) -> Vec<Point> {
    let mut total = 0.0;
    std::iter::once(Point::new(initial_c, 0.0))
        .chain(increments.iter().map(|&(t, inc)| {
            total += inc;
            Point::new(t, total)
        }))
        .collect()
}

/// Peak fringe visibility of a single interferometer with short-arm power
/// fraction `gamma`, from its CW port powers at zero net phase.
pub fn fringe_visibility(spec: &InterferometerSpec) -> Result<f64> {
    let (plus, minus) = cw_port_powers(spec, 1.0);
    crate::optics::contrast(plus, minus)
}

/// Short-arm fraction in `(0, 0.5]` whose peak visibility equals `target`,
/// found by bisection (visibility rises monotonically toward the balanced split).
pub fn split_imbalance_for_visibility(target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::domain(format!("target visibility must lie in (0, 1], got {target}")));
    }
    // the net phase is explicit, so the nominal path only has to be valid
    let base = InterferometerSpec::new(1, 0.0, 1.0)?;
    let visibility = |gamma: f64| -> Result<f64> {
        fringe_visibility(&base.clone().with_split_imbalance(gamma)?)
    };
    let (mut lo, mut hi) = (1e-12, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if visibility(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-interval fits feeding the TDPS curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalFit {
    pub temperature: FitResult,
    pub path: FitResult,
    pub t_inf_c: f64,
    /// Extrapolated path at long time, absolute.
    pub l_inf_nm: f64,
    /// Change of `l_inf_nm` relative to the previous interval.
    pub increment_nm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdpsReport {
    pub curve: TdpsCurve,
    pub selected_degree: usize,
    pub linear: PolynomialFit,
    pub quadratic: Option<PolynomialFit>,
    pub intervals: Vec<IntervalFit>,
    pub initial_c: f64,
    /// `(T, cumulative dL)` points that were fitted.
    pub points: Vec<(f64, f64)>,
    /// Standard errors of `points`, absent when the fits left none usable.
    pub point_sigmas: Option<Vec<f64>>,
}

/// Degree selection: quadratic only when its reduced chi^2 beats the linear
/// one by [`QUADRATIC_IMPROVEMENT`]. Points that all carry a positive sigma are
/// compared on their weighted chi^2; otherwise the linear fit's scatter is used
/// as the common sigma.
pub fn select_tdps_degree(points: &[Point]) -> Result<(usize, PolynomialFit, Option<PolynomialFit>)> {
    let linear = fit_polynomial(points, 1)?;
    if points.len() < 4 {
        return Ok((1, linear, None));
    }
    let quadratic = fit_polynomial(points, 2)?;
    let (chi1, chi2) = if linear.result.noise_model == NoiseModel::Supplied {
        (linear.result.reduced_chi2, quadratic.result.reduced_chi2)
    } else {
        let n = points.len() as f64;
        let ssr1 = linear.result.rmse.powi(2) * n;
        let ssr2 = quadratic.result.rmse.powi(2) * n;
        let scale = ssr1 / (n - 2.0);
        if scale > 0.0 {
            (ssr1 / scale / (n - 2.0), ssr2 / scale / (n - 3.0))
        } else {
            (0.0, 0.0)
        }
    };
    let degree = if chi1 > 0.0 && (chi2 == 0.0 || chi1 / chi2 > QUADRATIC_IMPROVEMENT) {
        2
    } else {
        1
    };
    Ok((degree, linear, Some(quadratic)))
}

/// Fits every heating interval (temperature: single exponential, path: double
/// exponential), accumulates the extrapolated path increments against the
/// extrapolated temperatures and fits the TDPS curve. Each interval's clock
/// starts at its first sample.
pub fn tdps_pipeline(intervals: &[DriftTrace]) -> Result<TdpsReport> {
    if intervals.len() < 2 {
        return Err(Error::domain(format!(
            "TDPS pipeline needs at least 2 intervals, got {}",
            intervals.len()
        )));
    }
    let mut fits = Vec::with_capacity(intervals.len());
    let mut initial = (0.0, 0.0);
    let mut previous_l = 0.0;
    for (i, trace) in intervals.iter().enumerate() {
        let wrap = |e: Error| Error::Interval {
            interval: i,
            source: Box::new(e),
        };
        if trace.is_empty() {
            return Err(wrap(Error::domain("empty interval")));
        }
        let t0 = trace.time_s[0];
        let temp: Vec<(f64, f64)> = trace
            .time_s
            .iter()
            .zip(&trace.temperature_c)
            .map(|(t, y)| (t - t0, *y))
            .collect();
        let path: Vec<(f64, f64)> = trace
            .time_s
            .iter()
            .zip(&trace.delta_l_nm)
            .map(|(t, y)| (t - t0, *y))
            .collect();
        let temperature = fit_exponential(&temp).map_err(wrap)?;
        let path_fit = fit_double_exponential(&path).map_err(wrap)?;
        if i == 0 {
            initial = (temperature.params[1], path_fit.predict(0.0));
            previous_l = initial.1;
        }
        let l_inf = path_fit.params[0];
        fits.push(IntervalFit {
            t_inf_c: temperature.params[0],
            l_inf_nm: l_inf,
            increment_nm: l_inf - previous_l,
            temperature,
            path: path_fit,
        });
        previous_l = l_inf;
    }
    let increments: Vec<(f64, f64)> = fits.iter().map(|f| (f.t_inf_c, f.increment_nm)).collect();
    let mut points = cumulate_increments(initial.0, &increments);
    // the origin is known to the first interval's sample scatter, each later
    // point to its own asymptote's standard error
    points[0].sigma = Some(fits[0].path.rmse);
    for (pt, fit) in points[1..].iter_mut().zip(&fits) {
        pt.sigma = fit.path.sigma("y_inf");
    }
    if points.iter().all(|pt| pt.sigma.is_some_and(f64::is_finite)) {
        let floor = SIGMA_FLOOR * points.iter().map(|pt| pt.y.abs()).fold(1.0, f64::max);
        points.iter_mut().for_each(|pt| pt.sigma = pt.sigma.map(|s| s.max(floor)));
    } else {
        points.iter_mut().for_each(|pt| pt.sigma = None);
    }
    let (degree, linear, quadratic) = select_tdps_degree(&points)?;
    let curve = match degree {
        2 => quadratic.as_ref().expect("quadratic fit present").to_curve(initial.0)?,
        _ => linear.to_curve(initial.0)?,
    };
    Ok(TdpsReport {
        curve,
        selected_degree: degree,
        linear,
        quadratic,
        intervals: fits,
        initial_c: initial.0,
        points: points.iter().map(|p| (p.x, p.y)).collect(),
        point_sigmas: points.iter().map(|p| p.sigma).collect(),
    })
}
