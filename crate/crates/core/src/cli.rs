//! Command-line front end.
//!
//! Data tables are written as CSV/JSON files into `--out` (default: the
//! current directory); a short human-readable summary goes to stdout. The
//! `states` table is printed directly.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    extract_path_from_power, fit_double_exponential, fit_exponential, fringe_visibility,
    split_imbalance_for_visibility, tdps_pipeline, FitResult,
};
use crate::drift::{
    apparent_path_from_frequency, simulate_drift_trace, DriftSimulation, DriftTrace, LaserModel,
    PathDynamics, PathResponseModel, TdpsCurve, ThermalModel, ThermalStep,
};
use crate::error::{Error, Result};
use crate::optics::{build_cascade, central_bin_visibility, measure_cascade, CascadeSpec, InterferometerSpec, SPEED_OF_LIGHT};
use crate::states::{make_frequency_state, make_time_state, PhotonicState};
use crate::waveform::{carrier_phase, DetectorModel, FourPulseDemo, PowerTrace};

#[derive(Parser, Debug)]
#[command(name = "tfqkd", version, about = "Delay-interferometer receiver simulation and drift analysis")]
pub struct Cli {
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for stochastic scenarios; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print bin amplitudes of a time or frequency state.
    States(StateArgs),
    /// Propagate states through the measurement cascade.
    Cascade {
        #[command(flatten)]
        state: StateArgs,
        /// Run every state of the chosen basis and write a confusion matrix.
        #[arg(long)]
        all_inputs: bool,
    },
    /// Generate a synthetic drift trace.
    SimulateDrift,
    /// Fit drift traces.
    Fit {
        #[arg(long, value_enum)]
        model: FitModel,
        /// Column to fit (defaults: temperature_C for exp, delta_L_nm for double-exp).
        #[arg(long)]
        column: Option<String>,
        /// Recover delta_L_nm from the recorded powers before fitting.
        #[arg(long)]
        from_power: bool,
        /// Trace CSV files; one per heating interval for `tdps`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Sampled-waveform run of the two-interferometer demonstration.
    Waveform {
        /// Sweep the wavelength range from the config instead of a single run.
        #[arg(long)]
        sweep: bool,
    },
    /// Derived quantities for the configured devices.
    Report,
}

#[derive(Args, Debug, Default, Clone)]
pub struct StateArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub basis: Option<Basis>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Basis {
    #[value(name = "t", alias = "time")]
    #[serde(rename = "t", alias = "time")]
    Time,
    #[value(name = "f", alias = "frequency")]
    #[serde(rename = "f", alias = "frequency")]
    Frequency,
}

impl Basis {
    fn label(self) -> &'static str {
        match self {
            Basis::Time => "t",
            Basis::Frequency => "f",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Exp,
    DoubleExp,
    Tdps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdpsForm {
    Linear,
    Quadratic,
}

/// Flat run configuration. Every physical quantity carries its unit in the key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,

    pub d: usize,
    pub n: usize,
    pub basis: Basis,
    pub tau_ps: f64,
    pub insertion: f64,
    /// Short-arm power fraction of every interferometer; 0.5 is balanced.
    pub split_imbalance: f64,
    /// Phase error added to every interferometer of layer `k + 1`.
    pub layer_phase_errors_rad: Vec<f64>,
    pub all_inputs: bool,

    pub fsr_ghz: f64,
    pub wavelength_nm: f64,
    pub input_power_uw: f64,
    pub operating_phase_rad: f64,
    pub reference_jitter: f64,
    pub initial_temperature_c: f64,
    pub temperature_rate_per_hour: f64,
    pub step_start_s: Vec<f64>,
    pub step_target_c: Vec<f64>,
    pub step_temperature_rate_per_hour: Vec<f64>,
    pub path_fast_rate_per_hour: f64,
    pub path_slow_rate_per_hour: f64,
    pub step_path_fast_rate_per_hour: Vec<f64>,
    pub step_path_slow_rate_per_hour: Vec<f64>,
    pub fast_fraction: f64,
    pub tdps_form: TdpsForm,
    pub tdps_slope_nm_per_c: f64,
    pub tdps_curvature_nm_per_c2: f64,
    pub tdps_vertex_c: f64,
    pub tdps_offset_nm: f64,
    pub laser_rms_mhz: f64,
    pub laser_correlation_s: f64,
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: Option<u64>,

    pub fwhm_ps: f64,
    pub sample_ps: f64,
    /// `null` selects an ideal (infinite-bandwidth) detector.
    pub detector_bandwidth_ghz: Option<f64>,
    pub detector_order: usize,
    pub phases_rad: Vec<f64>,
    pub weights: Vec<f64>,
    pub sweep_start_nm: f64,
    pub sweep_stop_nm: f64,
    pub sweep_step_nm: f64,
    /// Re-tune the heaters at every sweep wavelength.
    pub sweep_retune: bool,

    pub drift_bound_nm: f64,
    pub target_visibility: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            d: 4,
            n: 0,
            basis: Basis::Frequency,
            tau_ps: 400.0,
            insertion: 1.0,
            split_imbalance: 0.5,
            layer_phase_errors_rad: Vec::new(),
            all_inputs: false,
            fsr_ghz: 2.5,
            wavelength_nm: 1550.0,
            input_power_uw: 200.0,
            operating_phase_rad: std::f64::consts::FRAC_PI_2,
            reference_jitter: 1e-4,
            initial_temperature_c: 22.0,
            temperature_rate_per_hour: 1.223,
            step_start_s: Vec::new(),
            step_target_c: Vec::new(),
            step_temperature_rate_per_hour: Vec::new(),
            path_fast_rate_per_hour: 1.4,
            path_slow_rate_per_hour: 0.1,
            step_path_fast_rate_per_hour: Vec::new(),
            step_path_slow_rate_per_hour: Vec::new(),
            fast_fraction: 0.7,
            tdps_form: TdpsForm::Linear,
            tdps_slope_nm_per_c: 26.0,
            tdps_curvature_nm_per_c2: 0.0,
            tdps_vertex_c: 37.1,
            tdps_offset_nm: 0.0,
            laser_rms_mhz: 0.0,
            laser_correlation_s: 60.0,
            duration_s: 3600.0,
            dt_s: 1.0,
            seed: None,
            fwhm_ps: 100.0,
            sample_ps: 5.0,
            detector_bandwidth_ghz: Some(8.0),
            detector_order: 4,
            phases_rad: vec![0.0, 0.0],
            weights: vec![1.0; 4],
            sweep_start_nm: 1525.0,
            sweep_stop_nm: 1565.0,
            sweep_step_nm: 5.0,
            sweep_retune: true,
            drift_bound_nm: 3.0,
            target_visibility: 0.985,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn apply_state_args(&mut self, args: &StateArgs) {
        if let Some(d) = args.d {
            self.d = d;
        }
        if let Some(n) = args.n {
            self.n = n;
        }
        if let Some(b) = args.basis {
            self.basis = b;
        }
    }

    fn tau_s(&self) -> Result<f64> {
        positive("tau_ps", self.tau_ps).map(|v| v * 1e-12)
    }

    fn wavelength_m(&self) -> Result<f64> {
        positive("wavelength_nm", self.wavelength_nm).map(|v| v * 1e-9)
    }

    fn nominal_path_m(&self) -> Result<f64> {
        positive("fsr_ghz", self.fsr_ghz).map(|f| SPEED_OF_LIGHT / (f * 1e9))
    }

    fn state(&self, n: usize) -> Result<PhotonicState> {
        match self.basis {
            Basis::Time => make_time_state(self.d, n),
            Basis::Frequency => make_frequency_state(self.d, n),
        }
    }

    pub fn cascade(&self) -> Result<CascadeSpec> {
        let mut cascade = build_cascade(self.d, self.tau_s()?)?;
        if self.layer_phase_errors_rad.len() > cascade.depth() as usize {
            return Err(Error::Config(format!(
                "layer_phase_errors_rad has {} entries but the cascade has {} layers",
                self.layer_phase_errors_rad.len(),
                cascade.depth()
            )));
        }
        for (k, &delta) in self.layer_phase_errors_rad.iter().enumerate() {
            cascade = cascade.with_layer_phase_offset(k as u32 + 1, delta)?;
        }
        let (alpha, gamma) = (self.insertion, self.split_imbalance);
        cascade.try_map_interferometers(|spec| spec.with_insertion(alpha)?.with_split_imbalance(gamma))
    }

    fn tdps_curve(&self) -> TdpsCurve {
        match self.tdps_form {
            TdpsForm::Linear => TdpsCurve::Linear {
                slope_nm_per_c: self.tdps_slope_nm_per_c,
                reference_c: self.initial_temperature_c,
                offset_nm: self.tdps_offset_nm,
            },
            TdpsForm::Quadratic => TdpsCurve::Quadratic {
                curvature_nm_per_c2: self.tdps_curvature_nm_per_c2,
                vertex_c: self.tdps_vertex_c,
                offset_nm: self.tdps_offset_nm,
            },
        }
    }

    fn is_stochastic(&self) -> bool {
        self.laser_rms_mhz > 0.0 || self.reference_jitter > 0.0
    }

    pub fn drift_simulation(&self) -> Result<DriftSimulation> {
        let steps = self.step_start_s.len();
        if self.step_target_c.len() != steps {
            return Err(Error::Config("step_start_s and step_target_c differ in length".into()));
        }
        for (name, len) in [
            ("step_temperature_rate_per_hour", self.step_temperature_rate_per_hour.len()),
            ("step_path_fast_rate_per_hour", self.step_path_fast_rate_per_hour.len()),
            ("step_path_slow_rate_per_hour", self.step_path_slow_rate_per_hour.len()),
        ] {
            if len != 0 && len != steps {
                return Err(Error::Config(format!("{name} must be empty or have {steps} entries")));
            }
        }
        if self.step_path_fast_rate_per_hour.len() != self.step_path_slow_rate_per_hour.len() {
            return Err(Error::Config("per-step fast and slow path rates must be given together".into()));
        }
        let seed = match (self.seed, self.is_stochastic()) {
            (Some(s), _) => s,
            (None, false) => 0,
            (None, true) => {
                return Err(Error::Config(
                    "stochastic drift run (laser_rms_mhz or reference_jitter > 0) needs a seed".into(),
                ))
            }
        };
        let thermal_steps = (0..steps)
            .map(|k| ThermalStep {
                start_s: self.step_start_s[k],
                target_c: self.step_target_c[k],
                rate_per_hour: self.step_temperature_rate_per_hour.get(k).copied(),
            })
            .collect();
        let thermal = ThermalModel::new(self.initial_temperature_c, self.temperature_rate_per_hour, thermal_steps)?;
        let mut response =
            PathResponseModel::new(self.path_fast_rate_per_hour, self.path_slow_rate_per_hour, 0.0)?;
        if !(0.0..=1.0).contains(&self.fast_fraction) {
            return Err(Error::Config(format!("fast_fraction must lie in [0, 1], got {}", self.fast_fraction)));
        }
        response.fast_fraction = self.fast_fraction;
        let mut path = PathDynamics::new(response, self.tdps_curve());
        path.step_rates = self
            .step_path_fast_rate_per_hour
            .iter()
            .zip(&self.step_path_slow_rate_per_hour)
            .map(|(&f, &s)| Some((f, s)))
            .collect();
        let wavelength = self.wavelength_m()?;
        let laser = LaserModel {
            center_hz: SPEED_OF_LIGHT / wavelength,
            rms_hz: self.laser_rms_mhz * 1e6,
            correlation_s: self.laser_correlation_s,
            seed: seed.wrapping_add(1),
        };
        let interferometer = InterferometerSpec::new(1, 0.0, self.nominal_path_m()?)?.with_insertion(self.insertion)?;
        let mut sim = DriftSimulation::new(thermal, path, laser, interferometer);
        sim.input_power_w = positive("input_power_uw", self.input_power_uw)? * 1e-6;
        sim.duration_s = self.duration_s;
        sim.dt_s = self.dt_s;
        sim.seed = seed;
        sim.reference_jitter = self.reference_jitter;
        sim.operating_phase = self.operating_phase_rad;
        Ok(sim)
    }

    pub fn demo(&self) -> Result<FourPulseDemo> {
        if self.phases_rad.len() != 2 {
            return Err(Error::Config("phases_rad needs exactly two entries".into()));
        }
        let detector = match self.detector_bandwidth_ghz {
            None => DetectorModel::ideal(),
            Some(b) => DetectorModel::new(b * 1e9, self.detector_order)?,
        };
        Ok(FourPulseDemo {
            fwhm_s: positive("fwhm_ps", self.fwhm_ps)? * 1e-12,
            bin_width_s: self.tau_s()?,
            sample_period_s: positive("sample_ps", self.sample_ps)? * 1e-12,
            wavelength_m: self.wavelength_m()?,
            phases: (self.phases_rad[0], self.phases_rad[1]),
            insertion: self.insertion,
            split_imbalance: self.split_imbalance,
            weights: self.weights.iter().map(|&w| Complex64::new(w, 0.0)).collect(),
            detector,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, summary: &mut dyn Write) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let out = Output::new(cli.out.clone());
    match &cli.command {
        Command::States(args) => {
            config.apply_state_args(args);
            cmd_states(&config, summary)
        }
        Command::Cascade { state, all_inputs } => {
            config.apply_state_args(state);
            config.all_inputs |= *all_inputs;
            cmd_cascade(&config, &out, summary)
        }
        Command::SimulateDrift => cmd_simulate_drift(&config, &out, summary),
        Command::Fit {
            model,
            column,
            from_power,
            inputs,
        } => cmd_fit(&config, *model, column.as_deref(), *from_power, inputs, &out, summary),
        Command::Waveform { sweep } => {
            if *sweep {
                cmd_waveform_sweep(&config, &out, summary)
            } else {
                cmd_waveform(&config, &out, summary)
            }
        }
        Command::Report => cmd_report(&config, &out, summary),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir: dir.unwrap_or_else(|| PathBuf::from(".")),
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.dir)?;
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(self.create(name)?))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_rows<W: Write>(w: &mut csv::Writer<W>, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_states(config: &RunConfig, summary: &mut dyn Write) -> Result<()> {
    let state = config.state(config.n)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let rows = state.amplitudes().iter().enumerate().map(|(m, a)| {
        vec![m.to_string(), a.re.to_string(), a.im.to_string(), a.norm_sqr().to_string()]
    });
    write_rows(&mut w, &["bin", "real", "imag", "probability"], rows)?;
    summary.write_all(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    Ok(())
}

fn cmd_cascade(config: &RunConfig, out: &Output, summary: &mut dyn Write) -> Result<()> {
    let cascade = config.cascade()?;
    let d = config.d;
    let inputs: Vec<usize> = if config.all_inputs { (0..d).collect() } else { vec![config.n] };
    let label = config.basis.label();
    let mut confusion = Vec::new();
    for &n in &inputs {
        let state = config.state(n)?;
        let outcome = measure_cascade(&state, &cascade)?;
        let rows = outcome.probabilities.iter().enumerate().flat_map(|(port, bins)| {
            bins.iter()
                .enumerate()
                .map(move |(bin, p)| vec![port.to_string(), bin.to_string(), p.to_string()])
        });
        write_rows(&mut out.csv(&format!("cascade_{label}{n}.csv"))?, &["port", "bin", "probability"], rows)?;
        match config.basis {
            Basis::Frequency => {
                let v = central_bin_visibility(&outcome, n)?;
                writeln!(summary, "{label}{n} V={v:.6}")?;
            }
            Basis::Time => {
                let central: Vec<String> = outcome.central_probabilities().iter().map(|p| format!("{p:.6}")).collect();
                writeln!(summary, "{label}{n} V=undefined central=[{}]", central.join(","))?;
            }
        }
        let central = outcome.central_probabilities();
        let total: f64 = central.iter().sum();
        confusion.push(central.iter().map(|p| if total > 0.0 { p / total } else { 0.0 }).collect::<Vec<f64>>());
    }
    if config.all_inputs {
        let header: Vec<String> = std::iter::once("input".to_string())
            .chain((0..d).map(|p| format!("port_{p}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = inputs.iter().zip(&confusion).map(|(n, row)| {
            std::iter::once(format!("{label}{n}"))
                .chain(row.iter().map(|p| p.to_string()))
                .collect()
        });
        write_rows(&mut out.csv("confusion.csv")?, &header, rows)?;
        let bright: Vec<String> = confusion
            .iter()
            .map(|row| {
                let best = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b });
                best.0.to_string()
            })
            .collect();
        writeln!(summary, "bright ports: {}", bright.join(","))?;
    }
    Ok(())
}

fn cmd_simulate_drift(config: &RunConfig, out: &Output, summary: &mut dyn Write) -> Result<()> {
    let sim = config.drift_simulation()?;
    let trace = simulate_drift_trace(&sim)?;
    let mut w = out.create("drift.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    if config.step_start_s.len() >= 2 {
        // one file per heating interval, ready for `fit --model tdps`
        let pieces = trace.split_at(&config.step_start_s);
        for (k, piece) in pieces.iter().enumerate().skip(1) {
            let mut w = out.create(&format!("drift_interval_{k}.csv"))?;
            piece.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let last = trace.len() - 1;
    writeln!(
        summary,
        "samples={} final_temperature_C={:.4} final_delta_L_nm={:.4}",
        trace.len(),
        trace.temperature_c[last],
        trace.delta_l_nm[last]
    )?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<DriftTrace> {
    DriftTrace::read_csv(BufReader::new(File::open(path)?))
}

fn column<'a>(trace: &'a DriftTrace, name: &str) -> Result<&'a [f64]> {
    Ok(match name {
        "temperature_C" => &trace.temperature_c,
        "delta_L_nm" => &trace.delta_l_nm,
        "p_plus_W" => &trace.p_plus_w,
        "p_minus_W" => &trace.p_minus_w,
        "p_ref_W" => &trace.p_ref_w,
        other => return Err(Error::Config(format!("unknown column {other:?}"))),
    })
}

fn write_fit(out: &Output, fit: &FitResult, series: &[(f64, f64)]) -> Result<()> {
    out.json("fit.json", fit)?;
    let rows = series.iter().map(|&(t, y)| {
        let f = fit.predict(t);
        vec![t.to_string(), y.to_string(), f.to_string(), (y - f).to_string()]
    });
    write_rows(&mut out.csv("residuals.csv")?, &["time_s", "observed", "fitted", "residual"], rows)
}

fn cmd_fit(
    config: &RunConfig,
    model: FitModel,
    column_name: Option<&str>,
    from_power: bool,
    inputs: &[PathBuf],
    out: &Output,
    summary: &mut dyn Write,
) -> Result<()> {
    let mut traces = inputs.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
    if from_power {
        let wavelength = config.wavelength_m()?;
        for trace in &mut traces {
            trace.delta_l_nm = extract_path_from_power(trace, config.insertion, wavelength)?;
        }
    }
    if model == FitModel::Tdps {
        let report = tdps_pipeline(&traces)?;
        out.json("tdps.json", &report)?;
        let curve = report.curve.clone();
        let rows = report.points.iter().map(|&(t, y)| {
            vec![t.to_string(), y.to_string(), curve.evaluate(t).0.to_string()]
        });
        write_rows(&mut out.csv("tdps_points.csv")?, &["temperature_C", "delta_L_nm", "fitted_nm"], rows)?;
        let slope = report.curve.evaluate(report.initial_c).1;
        match report.curve {
            TdpsCurve::Quadratic { vertex_c, .. } => writeln!(
                summary,
                "degree=2 vertex_C={vertex_c:.3} slope_at_initial_nm_per_C={slope:.3}"
            )?,
            TdpsCurve::Linear { slope_nm_per_c, .. } => {
                writeln!(summary, "degree=1 slope_nm_per_C={slope_nm_per_c:.3}")?
            }
        }
        return Ok(());
    }
    if traces.len() != 1 {
        return Err(Error::Config(format!("{model:?} fit takes exactly one trace, got {}", traces.len())));
    }
    let trace = &traces[0];
    let default_column = if model == FitModel::Exp { "temperature_C" } else { "delta_L_nm" };
    let ys = column(trace, column_name.unwrap_or(default_column))?;
    let series: Vec<(f64, f64)> = trace.time_s.iter().copied().zip(ys.iter().copied()).collect();
    let fitted = match model {
        FitModel::Exp => fit_exponential(&series),
        _ => fit_double_exponential(&series),
    };
    match fitted {
        Ok(fit) => {
            write_fit(out, &fit, &series)?;
            let parts: Vec<String> = fit
                .names
                .iter()
                .zip(fit.params.iter().zip(&fit.sigmas))
                .map(|(n, (p, s))| format!("{n}={p:.6}+-{s:.6}"))
                .collect();
            writeln!(summary, "{} rmse={:.6}", parts.join(" "), fit.rmse)?;
            Ok(())
        }
        Err(Error::Convergence { iterations, best }) => {
            write_fit(out, &best, &series)?;
            Err(Error::Convergence { iterations, best })
        }
        Err(e) => Err(e),
    }
}

fn write_trace(out: &Output, name: &str, trace: &PowerTrace) -> Result<()> {
    let mut w = out.create(name)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_waveform(config: &RunConfig, out: &Output, summary: &mut dyn Write) -> Result<()> {
    let outcome = config.demo()?.run()?;
    write_trace(out, "waveform_bright.csv", &outcome.bright)?;
    write_trace(out, "waveform_dark.csv", &outcome.dark)?;
    let v = outcome.visibility?;
    writeln!(summary, "V={v:.6}")?;
    Ok(())
}

fn cmd_waveform_sweep(config: &RunConfig, out: &Output, summary: &mut dyn Write) -> Result<()> {
    let base = config.demo()?;
    let step = positive("sweep_step_nm", config.sweep_step_nm)?;
    if !(config.sweep_stop_nm >= config.sweep_start_nm) {
        return Err(Error::Config("sweep_stop_nm must not be below sweep_start_nm".into()));
    }
    let d = base.weights.len();
    let long_path = (d / 2) as f64 * base.short_path_m();
    let short_path = (d / 4).max(1) as f64 * base.short_path_m();
    let count = ((config.sweep_stop_nm - config.sweep_start_nm) / step + 1e-9).floor() as usize + 1;
    let mut rows = Vec::with_capacity(count);
    let mut worst = f64::INFINITY;
    for k in 0..count {
        let nm = config.sweep_start_nm + k as f64 * step;
        let lambda = nm * 1e-9;
        let mut demo = base.clone();
        demo.wavelength_m = lambda;
        if !config.sweep_retune {
            // heaters stay at the set-point found at the nominal wavelength
            let drift = |path: f64| carrier_phase(path, lambda) - carrier_phase(path, base.wavelength_m);
            demo.phases = (base.phases.0 + drift(long_path), base.phases.1 + drift(short_path));
        }
        let v = demo.run()?.visibility?;
        worst = worst.min(v);
        rows.push(vec![nm.to_string(), v.to_string()]);
    }
    write_rows(&mut out.csv("waveform_sweep.csv")?, &["wavelength_nm", "visibility"], rows)?;
    writeln!(summary, "points={count} min_V={worst:.6}")?;
    Ok(())
}

#[derive(Serialize)]
struct NodeReport {
    index: usize,
    layer: u32,
    delay_bins: usize,
    phase_rad: f64,
    residue: usize,
}

#[derive(Serialize)]
struct Report {
    d: usize,
    tau_ps: f64,
    fsr_ghz: f64,
    nominal_path_m: f64,
    path_per_mhz_nm: f64,
    laser_rms_path_nm: f64,
    cascade: Vec<NodeReport>,
    port_frequency: Vec<usize>,
    drift_bound_nm: f64,
    drift_visibility: f64,
    target_visibility: f64,
    split_imbalance_for_target: f64,
}

fn cmd_report(config: &RunConfig, out: &Output, summary: &mut dyn Write) -> Result<()> {
    let cascade = config.cascade()?;
    let path = config.nominal_path_m()?;
    let wavelength = config.wavelength_m()?;
    let f0 = SPEED_OF_LIGHT / wavelength;
    let per_mhz = apparent_path_from_frequency(1e6, path, f0) * 1e9;
    let drift_phase = std::f64::consts::TAU * config.drift_bound_nm * 1e-9 / wavelength;
    let drifted = InterferometerSpec::new(1, drift_phase, path)?;
    let report = Report {
        d: config.d,
        tau_ps: config.tau_ps,
        fsr_ghz: config.fsr_ghz,
        nominal_path_m: path,
        path_per_mhz_nm: per_mhz,
        laser_rms_path_nm: per_mhz * config.laser_rms_mhz,
        cascade: cascade
            .nodes()
            .iter()
            .enumerate()
            .map(|(index, node)| NodeReport {
                index,
                layer: node.layer,
                delay_bins: node.spec.delay_bins(),
                phase_rad: node.spec.phase(),
                residue: node.residue,
            })
            .collect(),
        port_frequency: cascade.port_frequency().to_vec(),
        drift_bound_nm: config.drift_bound_nm,
        drift_visibility: fringe_visibility(&drifted)?,
        target_visibility: config.target_visibility,
        split_imbalance_for_target: split_imbalance_for_visibility(config.target_visibility)?,
    };
    out.json("report.json", &report)?;
    writeln!(summary, "nominal_path_m={:.6} path_per_MHz_nm={:.4}", report.nominal_path_m, report.path_per_mhz_nm)?;
    writeln!(summary, "V(|dL|={} nm)={:.6}", report.drift_bound_nm, report.drift_visibility)?;
    writeln!(
        summary,
        "split_imbalance for V={}: {:.5}",
        report.target_visibility, report.split_imbalance_for_target
    )?;
    Ok(())
}
