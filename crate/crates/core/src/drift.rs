//! Forward models of the environmental dynamics of a delay interferometer:
//! thermal steps, double-exponential path response, TDPS equilibrium curves,
//! laser-frequency wander, heater tuning and the resulting port powers.
//!
//! Rates are quoted per hour, times are stored in seconds.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{InterferometerSpec, SPEED_OF_LIGHT};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
const NM: f64 = 1e-9;

/// Port powers `P+-= (alpha P0 / 2)(1 +- cos(phase + k dL))`, `k = 2 pi / wavelength`.
///
/// At `phase = pi/2` this reduces to `(alpha P0 / 2)(1 -+ sin(k dL))`.
pub fn output_power(
    input_power_w: f64,
    insertion: f64,
    wavelength_m: f64,
    delta_l_m: f64,
    phase: f64,
) -> Result<(f64, f64)> {
    if !(wavelength_m > 0.0) {
        return Err(Error::domain(format!("wavelength must be positive, got {wavelength_m}")));
    }
    if !(input_power_w >= 0.0) {
        return Err(Error::domain("input power must be non-negative"));
    }
    if !(insertion > 0.0 && insertion <= 1.0) {
        return Err(Error::domain("insertion transmission must lie in (0, 1]"));
    }
    let half = 0.5 * insertion * input_power_w;
    let c = (phase + TAU * delta_l_m / wavelength_m).cos();
    Ok((half * (1.0 + c), half * (1.0 - c)))
}

/// Path change that mimics a laser detuning `delta_f_hz`: `dL = L0 * df / f0`.
pub fn apparent_path_from_frequency(delta_f_hz: f64, nominal_path_m: f64, center_hz: f64) -> f64 {
    nominal_path_m * delta_f_hz / center_hz
}

/// Heater-induced path change `coefficient * V^2` (nm for a nm/V^2 coefficient).
pub fn heater_path_shift(voltage: f64, coefficient_nm_per_v2: f64) -> f64 {
    coefficient_nm_per_v2 * voltage * voltage
}

/// A temperature set-point change applied at `start_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalStep {
    pub start_s: f64,
    pub target_c: f64,
    /// Overrides the model rate for this step.
    #[serde(default)]
    pub rate_per_hour: Option<f64>,
}

/// First-order relaxation of the housing temperature toward each step target.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalModel {
    pub initial_c: f64,
    pub rate_per_hour: f64,
    pub steps: Vec<ThermalStep>,
}

impl ThermalModel {
    pub fn new(initial_c: f64, rate_per_hour: f64, steps: Vec<ThermalStep>) -> Result<Self> {
        let model = Self {
            initial_c,
            rate_per_hour,
            steps,
        };
        model.validate()?;
        Ok(model)
    }

    /// Constant temperature.
    pub fn constant(temperature_c: f64) -> Self {
        Self {
            initial_c: temperature_c,
            rate_per_hour: 1.0,
            steps: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let rates = std::iter::once(self.rate_per_hour)
            .chain(self.steps.iter().filter_map(|s| s.rate_per_hour));
        for r in rates {
            if !(r > 0.0) {
                return Err(Error::domain(format!("thermal rate must be positive, got {r}")));
            }
        }
        if self.steps.windows(2).any(|w| w[1].start_s < w[0].start_s) {
            return Err(Error::domain("thermal steps must be ordered by start time"));
        }
        Ok(())
    }

    fn step_rate(&self, step: &ThermalStep) -> f64 {
        step.rate_per_hour.unwrap_or(self.rate_per_hour)
    }

    /// Targets seen so far: `(T0, T1, ..., Tk)` for steps started by `t_s`.
    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_c).chain(self.steps.iter().map(|s| s.target_c))
    }
}

/// Temperature at `t_s`; continuous across steps.
pub fn thermal_response(model: &ThermalModel, t_s: f64) -> f64 {
    let mut temperature = model.initial_c;
    for (k, step) in model.steps.iter().enumerate() {
        if t_s < step.start_s {
            break;
        }
        let end = model
            .steps
            .get(k + 1)
            .map_or(t_s, |next| next.start_s.min(t_s));
        let rate = model.step_rate(step) / SECONDS_PER_HOUR;
        temperature = step.target_c + (temperature - step.target_c) * (-rate * (end - step.start_s)).exp();
    }
    temperature
}

/// Fast (housing-coupled) and slow (glass-coupled) path relaxation.
#[derive(Clone, Debug, PartialEq)]
pub struct PathResponseModel {
    pub fast_rate_per_hour: f64,
    pub slow_rate_per_hour: f64,
    /// Long-time path change for a single step, nm.
    pub asymptote_nm: f64,
    /// Share of each step carried by the fast component.
    pub fast_fraction: f64,
}

impl PathResponseModel {
    pub fn new(fast_rate_per_hour: f64, slow_rate_per_hour: f64, asymptote_nm: f64) -> Result<Self> {
        check_rates(fast_rate_per_hour, slow_rate_per_hour)?;
        Ok(Self {
            fast_rate_per_hour,
            slow_rate_per_hour,
            asymptote_nm,
            fast_fraction: 0.7,
        })
    }

    /// `(A1, A2)` for a step of size `asymptote_nm` using `fast_fraction`.
    pub fn default_weights(&self) -> (f64, f64) {
        (
            self.fast_fraction * self.asymptote_nm,
            (1.0 - self.fast_fraction) * self.asymptote_nm,
        )
    }
}

fn check_rates(fast: f64, slow: f64) -> Result<()> {
    if !(slow > 0.0 && fast > slow) {
        return Err(Error::domain(format!(
            "path rates need fast > slow > 0, got fast={fast} slow={slow}"
        )));
    }
    Ok(())
}

/// `dL(t) = dL_inf - A1 exp(-r1 t) - A2 exp(-r2 t)` in nm.
pub fn path_response(model: &PathResponseModel, weights: (f64, f64), t_s: f64) -> Result<f64> {
    check_rates(model.fast_rate_per_hour, model.slow_rate_per_hour)?;
    let h = t_s / SECONDS_PER_HOUR;
    Ok(model.asymptote_nm
        - weights.0 * (-model.fast_rate_per_hour * h).exp()
        - weights.1 * (-model.slow_rate_per_hour * h).exp())
}

/// Equilibrium path difference as a function of temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TdpsCurve {
    /// `s (T - T_ref) + offset`.
    Linear {
        slope_nm_per_c: f64,
        reference_c: f64,
        #[serde(default)]
        offset_nm: f64,
    },
    /// `c2 (T - T_vertex)^2 + c0`.
    Quadratic {
        curvature_nm_per_c2: f64,
        vertex_c: f64,
        offset_nm: f64,
    },
}

impl TdpsCurve {
    /// Value and local slope at `temperature_c`.
    pub fn evaluate(&self, temperature_c: f64) -> (f64, f64) {
        match *self {
            TdpsCurve::Linear {
                slope_nm_per_c,
                reference_c,
                offset_nm,
            } => (
                slope_nm_per_c * (temperature_c - reference_c) + offset_nm,
                slope_nm_per_c,
            ),
            TdpsCurve::Quadratic {
                curvature_nm_per_c2,
                vertex_c,
                offset_nm,
            } => {
                let dt = temperature_c - vertex_c;
                (
                    curvature_nm_per_c2 * dt * dt + offset_nm,
                    2.0 * curvature_nm_per_c2 * dt,
                )
            }
        }
    }
}

/// `(dL_inf(T) nm, d dL_inf / dT nm/C)`.
pub fn tdps_equilibrium(curve: &TdpsCurve, temperature_c: f64) -> (f64, f64) {
    curve.evaluate(temperature_c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaserModel {
    pub center_hz: f64,
    pub rms_hz: f64,
    pub correlation_s: f64,
    pub seed: u64,
}

impl LaserModel {
    /// Laser with no frequency noise at `wavelength_m`.
    pub fn quiet(wavelength_m: f64) -> Self {
        Self {
            center_hz: SPEED_OF_LIGHT / wavelength_m,
            rms_hz: 0.0,
            correlation_s: 60.0,
            seed: 0,
        }
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_hz
    }
}

fn sample_count(duration_s: f64, dt_s: f64) -> Result<usize> {
    if !(dt_s > 0.0 && dt_s.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt_s}")));
    }
    if !(duration_s >= 0.0) {
        return Err(Error::domain("duration must be non-negative"));
    }
    Ok((duration_s / dt_s + 1e-9).floor() as usize + 1)
}

/// Frequency offsets (Hz) from an exactly discretized Ornstein-Uhlenbeck
/// process started in its stationary distribution. `floor(duration/dt) + 1`
/// samples, deterministic in `model.seed`.
pub fn laser_frequency_walk(model: &LaserModel, duration_s: f64, dt_s: f64) -> Result<Vec<f64>> {
    let n = sample_count(duration_s, dt_s)?;
    if !(model.rms_hz >= 0.0) {
        return Err(Error::domain("laser RMS bound must be non-negative"));
    }
    if model.rms_hz == 0.0 {
        return Ok(vec![0.0; n]);
    }
    if !(model.correlation_s > 0.0) {
        return Err(Error::domain("laser correlation time must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let decay = (-dt_s / model.correlation_s).exp();
    let kick = model.rms_hz * (1.0 - decay * decay).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut x = model.rms_hz * z0;
    let mut out = Vec::with_capacity(n);
    out.push(x);
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        x = decay * x + kick * z;
        out.push(x);
    }
    Ok(out)
}

/// Uniformly sampled record of one drift run.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftTrace {
    pub time_s: Vec<f64>,
    pub temperature_c: Vec<f64>,
    pub delta_l_nm: Vec<f64>,
    pub p_plus_w: Vec<f64>,
    pub p_minus_w: Vec<f64>,
    pub p_ref_w: Vec<f64>,
}

pub const DRIFT_CSV_HEADER: [&str; 6] = [
    "time_s",
    "temperature_C",
    "delta_L_nm",
    "p_plus_W",
    "p_minus_W",
    "p_ref_W",
];

impl DriftTrace {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    /// Checks equal column lengths, a uniform time step and non-negative powers.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.temperature_c.len(),
            self.delta_l_nm.len(),
            self.p_plus_w.len(),
            self.p_minus_w.len(),
            self.p_ref_w.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::domain("drift trace columns have unequal lengths"));
        }
        if n >= 2 {
            let dt = self.time_s[1] - self.time_s[0];
            if !(dt > 0.0) {
                return Err(Error::domain("drift trace time must increase"));
            }
            for (k, w) in self.time_s.windows(2).enumerate() {
                if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
                    return Err(Error::domain(format!(
                        "non-uniform time step between samples {k} and {}",
                        k + 1
                    )));
                }
            }
        }
        let powers = self.p_plus_w.iter().chain(&self.p_minus_w).chain(&self.p_ref_w);
        if powers.copied().any(|p| !(p >= 0.0)) {
            return Err(Error::domain("drift trace powers must be non-negative"));
        }
        Ok(())
    }

    /// Sub-trace with `start_s <= t < end_s`.
    pub fn window(&self, start_s: f64, end_s: f64) -> DriftTrace {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| self.time_s[k] >= start_s && self.time_s[k] < end_s)
            .collect();
        let pick = |col: &[f64]| keep.iter().map(|&k| col[k]).collect::<Vec<f64>>();
        DriftTrace {
            time_s: pick(&self.time_s),
            temperature_c: pick(&self.temperature_c),
            delta_l_nm: pick(&self.delta_l_nm),
            p_plus_w: pick(&self.p_plus_w),
            p_minus_w: pick(&self.p_minus_w),
            p_ref_w: pick(&self.p_ref_w),
        }
    }

    /// Cuts the trace at each boundary time, yielding `boundaries.len() + 1` pieces.
    pub fn split_at(&self, boundaries_s: &[f64]) -> Vec<DriftTrace> {
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend_from_slice(boundaries_s);
        edges.push(f64::INFINITY);
        edges.windows(2).map(|w| self.window(w[0], w[1])).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(DRIFT_CSV_HEADER).map_err(io_err)?;
        for k in 0..self.len() {
            w.write_record([
                self.time_s[k].to_string(),
                self.temperature_c[k].to_string(),
                self.delta_l_nm[k].to_string(),
                self.p_plus_w[k].to_string(),
                self.p_minus_w[k].to_string(),
                self.p_ref_w[k].to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the six-column CSV. Errors carry the 1-based line number.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names != DRIFT_CSV_HEADER {
            return Err(parse_err(
                1,
                format!("expected header {}", DRIFT_CSV_HEADER.join(",")),
            ));
        }
        let mut trace = DriftTrace {
            time_s: Vec::new(),
            temperature_c: Vec::new(),
            delta_l_nm: Vec::new(),
            p_plus_w: Vec::new(),
            p_minus_w: Vec::new(),
            p_ref_w: Vec::new(),
        };
        for record in r.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 6 {
                return Err(parse_err(line, format!("expected 6 fields, found {}", record.len())));
            }
            let mut vals = [0.0; 6];
            for (slot, field) in vals.iter_mut().zip(record.iter()) {
                *slot = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid number {field:?}")))?;
            }
            trace.time_s.push(vals[0]);
            trace.temperature_c.push(vals[1]);
            trace.delta_l_nm.push(vals[2]);
            trace.p_plus_w.push(vals[3]);
            trace.p_minus_w.push(vals[4]);
            trace.p_ref_w.push(vals[5]);
        }
        trace.validate()?;
        Ok(trace)
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse { line, message }
}

/// Path dynamics driven by the thermal schedule: every step changes the
/// equilibrium by `tdps(T_k) - tdps(T_{k-1})` and relaxes with the model rates.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDynamics {
    pub response: PathResponseModel,
    pub tdps: TdpsCurve,
    /// Optional `(fast, slow)` rates per thermal step.
    pub step_rates: Vec<Option<(f64, f64)>>,
}

impl PathDynamics {
    pub fn new(response: PathResponseModel, tdps: TdpsCurve) -> Self {
        Self {
            response,
            tdps,
            step_rates: Vec::new(),
        }
    }

    /// True path change (nm) relative to the equilibrium at the initial temperature.
    pub fn path_at(&self, thermal: &ThermalModel, t_s: f64) -> Result<f64> {
        let mut total = 0.0;
        let mut previous = thermal.initial_c;
        for (k, step) in thermal.steps.iter().enumerate() {
            if t_s < step.start_s {
                break;
            }
            let (fast, slow) = self
                .step_rates
                .get(k)
                .copied()
                .flatten()
                .unwrap_or((self.response.fast_rate_per_hour, self.response.slow_rate_per_hour));
            let increment =
                self.tdps.evaluate(step.target_c).0 - self.tdps.evaluate(previous).0;
            let model = PathResponseModel {
                fast_rate_per_hour: fast,
                slow_rate_per_hour: slow,
                asymptote_nm: increment,
                fast_fraction: self.response.fast_fraction,
            };
            total += path_response(&model, model.default_weights(), t_s - step.start_s)?;
            previous = step.target_c;
        }
        Ok(total)
    }
}

/// All inputs of a synthetic drift run.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftSimulation {
    pub thermal: ThermalModel,
    pub path: PathDynamics,
    pub laser: LaserModel,
    pub interferometer: InterferometerSpec,
    pub input_power_w: f64,
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: u64,
    /// Relative white jitter of the input power, tracked by the reference arm.
    pub reference_jitter: f64,
    pub operating_phase: f64,
}

impl DriftSimulation {
    pub fn new(
        thermal: ThermalModel,
        path: PathDynamics,
        laser: LaserModel,
        interferometer: InterferometerSpec,
    ) -> Self {
        Self {
            thermal,
            path,
            laser,
            interferometer,
            input_power_w: 200e-6,
            duration_s: 3600.0,
            dt_s: 1.0,
            seed: 0,
            reference_jitter: 1e-4,
            operating_phase: FRAC_PI_2,
        }
    }
}

/// Generates a trace. The recorded `delta_L_nm` is the apparent path shift the
/// powers encode: thermal path response plus the laser-frequency equivalent.
pub fn simulate_drift_trace(sim: &DriftSimulation) -> Result<DriftTrace> {
    let n = sample_count(sim.duration_s, sim.dt_s)?;
    if !(sim.reference_jitter >= 0.0) {
        return Err(Error::domain("reference jitter must be non-negative"));
    }
    let walk = laser_frequency_walk(&sim.laser, sim.duration_s, sim.dt_s)?;
    let wavelength = sim.laser.wavelength_m();
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut trace = DriftTrace {
        time_s: Vec::with_capacity(n),
        temperature_c: Vec::with_capacity(n),
        delta_l_nm: Vec::with_capacity(n),
        p_plus_w: Vec::with_capacity(n),
        p_minus_w: Vec::with_capacity(n),
        p_ref_w: Vec::with_capacity(n),
    };
    for (k, df) in walk.iter().enumerate() {
        let t = k as f64 * sim.dt_s;
        let apparent = apparent_path_from_frequency(
            *df,
            sim.interferometer.nominal_path_m(),
            sim.laser.center_hz,
        );
        let dl_nm = sim.path.path_at(&sim.thermal, t)? + apparent / NM;
        let jitter = if sim.reference_jitter > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sim.reference_jitter * z
        } else {
            0.0
        };
        let p_in = (sim.input_power_w * (1.0 + jitter)).max(0.0);
        let (plus, minus) = output_power(
            p_in,
            sim.interferometer.insertion(),
            wavelength,
            dl_nm * NM,
            sim.operating_phase,
        )?;
        trace.time_s.push(t);
        trace.temperature_c.push(thermal_response(&sim.thermal, t));
        trace.delta_l_nm.push(dl_nm);
        trace.p_plus_w.push(plus);
        trace.p_minus_w.push(minus);
        trace.p_ref_w.push(p_in);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const LAMBDA: f64 = 1550e-9;

    #[test]
    fn output_power_examples() {
        let (p, m) = output_power(200e-6, 1.0, LAMBDA, 0.0, FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(p, 100e-6, epsilon = 1e-15);
        assert_abs_diff_eq!(m, 100e-6, epsilon = 1e-15);
        let (p, m) = output_power(200e-6, 1.0, LAMBDA, 3e-9, FRAC_PI_2).unwrap();
        // sin(2 pi 3 / 1550) = 0.0121609...
        assert_abs_diff_eq!(p, 98.78e-6, epsilon = 0.005e-6);
        assert_abs_diff_eq!(m, 101.22e-6, epsilon = 0.005e-6);
        let (p, m) = output_power(200e-6, 1.0, LAMBDA, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(p, 200e-6, epsilon = 1e-15);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
        assert!(output_power(200e-6, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(output_power(200e-6, 1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn small_signal_slope() {
        let k = TAU / LAMBDA;
        for dl in [1e-10, 1e-9, 3e-9] {
            let (p, m) = output_power(200e-6, 0.9, LAMBDA, dl, FRAC_PI_2).unwrap();
            let linear = 0.9 * 200e-6 * k * dl;
            let cubic = (k * dl).powi(3);
            assert!(((m - p) - linear).abs() <= 0.9 * 200e-6 * cubic / 6.0 * 1.01 + 1e-20);
        }
    }

    #[test]
    fn drift_visibility_at_bright_fringe() {
        let (p, m) = output_power(1.0, 1.0, LAMBDA, 3e-9, 0.0).unwrap();
        let v = (p - m) / (p + m);
        assert_abs_diff_eq!(v, (TAU * 3.0 / 1550.0).cos(), epsilon = 1e-12);
        assert!(v >= 0.99992);
    }

    #[test]
    fn frequency_equivalence() {
        let f0 = SPEED_OF_LIGHT / LAMBDA;
        assert_abs_diff_eq!(apparent_path_from_frequency(1e6, 0.12, f0) / NM, 0.62, epsilon = 0.01);
        assert_abs_diff_eq!(apparent_path_from_frequency(1e6, 0.24, f0) / NM, 1.24, epsilon = 0.01);
        assert_eq!(apparent_path_from_frequency(0.0, 0.12, f0), 0.0);
    }

    #[test]
    fn heater_tuning() {
        let coeff = 1550.0 / 9.0;
        assert_abs_diff_eq!(heater_path_shift(3.0, coeff), 1550.0, epsilon = 1e-9);
        assert_abs_diff_eq!(heater_path_shift(1.5, coeff), 387.5, epsilon = 1e-9);
        assert_eq!(heater_path_shift(0.0, coeff), 0.0);
    }

    #[test]
    fn thermal_step_response() {
        let model = ThermalModel::new(
            22.0,
            1.223,
            vec![ThermalStep {
                start_s: 0.0,
                target_c: 32.35,
                rate_per_hour: None,
            }],
        )
        .unwrap();
        assert_abs_diff_eq!(thermal_response(&model, 0.0), 22.0, epsilon = 1e-12);
        assert_abs_diff_eq!(thermal_response(&model, 1e9), 32.35, epsilon = 1e-9);
        let t = SECONDS_PER_HOUR / 1.223;
        let expected = 22.0 + (1.0 - (-1.0f64).exp()) * (32.35 - 22.0);
        assert_abs_diff_eq!(thermal_response(&model, t), expected, epsilon = 1e-12);
        assert!(ThermalModel::new(22.0, 0.0, vec![]).is_err());
    }

    #[test]
    fn thermal_continuous_across_steps() {
        let model = ThermalModel::new(
            20.0,
            1.28,
            vec![
                ThermalStep { start_s: 0.0, target_c: 30.0, rate_per_hour: None },
                ThermalStep { start_s: 3600.0, target_c: 40.0, rate_per_hour: Some(2.0) },
            ],
        )
        .unwrap();
        let before = thermal_response(&model, 3600.0 - 1e-6);
        let after = thermal_response(&model, 3600.0 + 1e-6);
        assert_abs_diff_eq!(before, after, epsilon = 1e-7);
        assert!(ThermalModel::new(
            20.0,
            1.0,
            vec![
                ThermalStep { start_s: 10.0, target_c: 30.0, rate_per_hour: None },
                ThermalStep { start_s: 5.0, target_c: 40.0, rate_per_hour: None },
            ]
        )
        .is_err());
    }

    #[test]
    fn path_response_examples() {
        let model = PathResponseModel::new(1.3, 0.10, 135.0).unwrap();
        let w = model.default_weights();
        assert_abs_diff_eq!(path_response(&model, w, 1e9).unwrap(), 135.0, epsilon = 1e-9);
        assert_abs_diff_eq!(path_response(&model, w, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        let mut last = f64::NEG_INFINITY;
        for k in 0..500 {
            let v = path_response(&model, w, k as f64 * 100.0).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(PathResponseModel::new(0.1, 1.3, 1.0).is_err());
        let bad = PathResponseModel { fast_rate_per_hour: 0.5, ..model };
        assert!(path_response(&bad, w, 0.0).is_ok());
        let equal = PathResponseModel { fast_rate_per_hour: 0.1, slow_rate_per_hour: 0.1, ..bad };
        assert!(path_response(&equal, w, 0.0).is_err());
    }

    #[test]
    fn tdps_curves() {
        let lin = TdpsCurve::Linear { slope_nm_per_c: 26.0, reference_c: 22.0, offset_nm: 0.0 };
        assert_abs_diff_eq!(tdps_equilibrium(&lin, 23.0).0, 26.0, epsilon = 1e-12);
        let quad = TdpsCurve::Quadratic {
            curvature_nm_per_c2: -1.5,
            vertex_c: 37.1,
            offset_nm: 350.0,
        };
        let (v, s) = tdps_equilibrium(&quad, 37.1);
        assert_eq!(s, 0.0);
        assert_eq!(v, 350.0);
        assert_abs_diff_eq!(quad.evaluate(22.0).1, 2.0 * 1.5 * 15.1, epsilon = 1e-12);
    }

    #[test]
    fn laser_walk_statistics() {
        let quiet = LaserModel { rms_hz: 0.0, ..LaserModel::quiet(LAMBDA) };
        assert!(laser_frequency_walk(&quiet, 100.0, 1.0).unwrap().iter().all(|&x| x == 0.0));

        let model = LaserModel {
            rms_hz: 1e6,
            correlation_s: 10.0,
            seed: 7,
            ..LaserModel::quiet(LAMBDA)
        };
        let walk = laser_frequency_walk(&model, 99_999.0, 1.0).unwrap();
        assert_eq!(walk.len(), 100_000);
        let rms = (walk.iter().map(|x| x * x).sum::<f64>() / walk.len() as f64).sqrt();
        assert!((rms - 1e6).abs() < 0.05e6, "rms {rms}");
        assert_eq!(walk, laser_frequency_walk(&model, 99_999.0, 1.0).unwrap());
        assert!(laser_frequency_walk(&model, 10.0, 0.0).is_err());
    }

    fn quiet_sim(thermal: ThermalModel, tdps: TdpsCurve) -> DriftSimulation {
        let path = PathDynamics::new(PathResponseModel::new(1.3, 0.1, 0.0).unwrap(), tdps);
        let mut sim = DriftSimulation::new(
            thermal,
            path,
            LaserModel::quiet(LAMBDA),
            InterferometerSpec::new(1, FRAC_PI_2, 0.12).unwrap(),
        );
        sim.reference_jitter = 0.0;
        sim
    }

    #[test]
    fn noise_free_constant_temperature() {
        let sim = quiet_sim(
            ThermalModel::constant(22.0),
            TdpsCurve::Linear { slope_nm_per_c: 26.0, reference_c: 22.0, offset_nm: 0.0 },
        );
        let trace = simulate_drift_trace(&sim).unwrap();
        assert_eq!(trace.len(), 3601);
        for k in 0..trace.len() {
            assert_abs_diff_eq!(trace.p_plus_w[k], 100e-6, epsilon = 1e-15);
            assert_abs_diff_eq!(trace.p_minus_w[k], 100e-6, epsilon = 1e-15);
            assert_eq!(trace.delta_l_nm[k], 0.0);
        }
    }

    #[test]
    fn laser_only_path_rms() {
        let mut sim = quiet_sim(
            ThermalModel::constant(22.0),
            TdpsCurve::Linear { slope_nm_per_c: 26.0, reference_c: 22.0, offset_nm: 0.0 },
        );
        sim.laser = LaserModel { rms_hz: 1e6, correlation_s: 10.0, seed: 3, ..sim.laser };
        sim.duration_s = 50_000.0;
        let trace = simulate_drift_trace(&sim).unwrap();
        let rms = (trace.delta_l_nm.iter().map(|x| x * x).sum::<f64>() / trace.len() as f64).sqrt();
        assert!((rms - 0.62).abs() < 0.05 * 0.62, "rms {rms}");
    }

    #[test]
    fn step_trace_approaches_interval_one_asymptote() {
        let thermal = ThermalModel::new(
            22.0,
            1.223,
            vec![ThermalStep { start_s: 0.0, target_c: 32.35, rate_per_hour: None }],
        )
        .unwrap();
        let mut sim = quiet_sim(
            thermal,
            TdpsCurve::Linear { slope_nm_per_c: 253.0 / 10.35, reference_c: 22.0, offset_nm: 0.0 },
        );
        sim.path.response = PathResponseModel::new(1.4, 0.10, 0.0).unwrap();
        sim.duration_s = 6.0 * SECONDS_PER_HOUR;
        sim.dt_s = 60.0;
        let trace = simulate_drift_trace(&sim).unwrap();
        let early = trace.delta_l_nm[60]; // 1 h
        let late = *trace.delta_l_nm.last().unwrap();
        assert!(early > 0.5 * 253.0 * 0.7 && early < late && late < 253.0);
        let far = sim.path.path_at(&sim.thermal, 1e7).unwrap();
        assert_abs_diff_eq!(far, 253.0, epsilon = 1e-6);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let sim = quiet_sim(
            ThermalModel::constant(22.0),
            TdpsCurve::Linear { slope_nm_per_c: 26.0, reference_c: 22.0, offset_nm: 0.0 },
        );
        let mut sim = sim;
        sim.duration_s = 10.0;
        let trace = simulate_drift_trace(&sim).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,temperature_C,delta_L_nm,p_plus_W,p_minus_W,p_ref_W\n"));
        assert!(!text.contains('\r'));
        assert_eq!(DriftTrace::read_csv(&buf[..]).unwrap(), trace);

        let bad = "time_s,temperature_C,delta_L_nm,p_plus_W,p_minus_W,p_ref_W\n0,22,0,1,1,2\n1,22,zz,1,1,2\n";
        match DriftTrace::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(DriftTrace::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        let jumpy = "time_s,temperature_C,delta_L_nm,p_plus_W,p_minus_W,p_ref_W\n0,22,0,1,1,2\n1,22,0,1,1,2\n3,22,0,1,1,2\n";
        assert!(matches!(DriftTrace::read_csv(jumpy.as_bytes()), Err(Error::Domain(_))));
    }

    #[test]
    fn split_into_intervals() {
        let mut sim = quiet_sim(
            ThermalModel::constant(22.0),
            TdpsCurve::Linear { slope_nm_per_c: 0.0, reference_c: 22.0, offset_nm: 0.0 },
        );
        sim.duration_s = 99.0;
        let trace = simulate_drift_trace(&sim).unwrap();
        let parts = trace.split_at(&[25.0, 50.0]);
        assert_eq!(parts.iter().map(DriftTrace::len).collect::<Vec<_>>(), vec![25, 25, 50]);
    }
}
