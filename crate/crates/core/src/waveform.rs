//! Sampled complex-envelope model of the classical four-pulse demonstration.
//!
//! The optical carrier is never sampled; any carrier phase picked up in a delay
//! line is folded into the interferometer phase.

use std::f64::consts::LN_2;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::optics::{contrast, interfere_samples, CascadeSpec, SPEED_OF_LIGHT};
use crate::states::PhotonicState;

/// Minimum samples per time bin.
pub const SAMPLES_PER_BIN_MIN: f64 = 20.0;
const DELAY_SNAP_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SampledWaveform {
    sample_period: f64,
    samples: Vec<Complex64>,
    wavelength_m: f64,
}

impl SampledWaveform {
    pub fn new(sample_period: f64, samples: Vec<Complex64>, wavelength_m: f64) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::domain(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if !(wavelength_m > 0.0) {
            return Err(Error::domain(format!("wavelength must be positive, got {wavelength_m}")));
        }
        Ok(Self {
            sample_period,
            samples,
            wavelength_m,
        })
    }

    /// Constant envelope of unit power lasting `duration` seconds.
    pub fn continuous(sample_period: f64, duration: f64, wavelength_m: f64) -> Result<Self> {
        let n = (duration / sample_period).round() as usize;
        Self::new(sample_period, vec![Complex64::new(1.0, 0.0); n], wavelength_m)
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_m
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.sample_period
    }

    /// Instantaneous power `|envelope|^2`.
    pub fn power(&self) -> PowerTrace {
        PowerTrace {
            sample_period: self.sample_period,
            values: self.samples.iter().map(|s| s.norm_sqr()).collect(),
        }
    }

    /// Energy falling in each bin `[k*tau, (k+1)*tau)`.
    pub fn bin_energies(&self, bin_width: f64) -> Vec<f64> {
        let nbins = ((self.len() as f64 * self.sample_period) / bin_width).ceil() as usize;
        let mut bins = vec![0.0; nbins];
        for (k, s) in self.samples.iter().enumerate() {
            let b = ((k as f64 * self.sample_period) / bin_width).floor() as usize;
            if let Some(slot) = bins.get_mut(b) {
                *slot += s.norm_sqr() * self.sample_period;
            }
        }
        bins
    }

    /// Linear interpolation onto a new sample grid starting at t = 0.
    fn resampled(&self, sample_period: f64) -> Self {
        let span = self.len().saturating_sub(1) as f64 * self.sample_period;
        let n = (span / sample_period).floor() as usize + 1;
        let samples = (0..n)
            .map(|k| {
                let x = k as f64 * sample_period / self.sample_period;
                let i = x.floor() as usize;
                let frac = x - i as f64;
                match (self.samples.get(i), self.samples.get(i + 1)) {
                    (Some(a), Some(b)) => a * (1.0 - frac) + b * frac,
                    (Some(a), None) => *a,
                    _ => Complex64::new(0.0, 0.0),
                }
            })
            .collect();
        Self {
            sample_period,
            samples,
            wavelength_m: self.wavelength_m,
        }
    }
}

/// Frame pattern for a pulse train: Gaussian peaks at bin centers.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseTrainSpec {
    pub fwhm_s: f64,
    pub bin_width_s: f64,
    pub weights: Vec<Complex64>,
    pub guard_bins: usize,
    pub repetitions: usize,
    pub wavelength_m: f64,
}

impl PulseTrainSpec {
    /// One frame, `d - 1` guard bins, 1550 nm carrier.
    pub fn new(fwhm_s: f64, bin_width_s: f64, weights: Vec<Complex64>) -> Self {
        let guard_bins = weights.len().saturating_sub(1);
        Self {
            fwhm_s,
            bin_width_s,
            weights,
            guard_bins,
            repetitions: 1,
            wavelength_m: 1550e-9,
        }
    }

    /// Pulse pattern carrying the first `d` amplitudes of `state`.
    pub fn from_state(state: &PhotonicState, fwhm_s: f64, bin_width_s: f64) -> Self {
        Self::new(
            fwhm_s,
            bin_width_s,
            state.amplitudes()[..state.dimension()].to_vec(),
        )
    }

    pub fn frame_bins(&self) -> usize {
        self.weights.len() + self.guard_bins
    }
}

/// Samples the envelope of `spec.repetitions` frames, each normalized to unit energy.
pub fn synthesize_frame(spec: &PulseTrainSpec, sample_period: f64) -> Result<SampledWaveform> {
    if spec.weights.is_empty() {
        return Err(Error::domain("pulse train needs at least one bin weight"));
    }
    if !(spec.bin_width_s > 0.0) {
        return Err(Error::domain("bin width must be positive"));
    }
    if !(spec.fwhm_s > 0.0 && spec.fwhm_s < spec.bin_width_s) {
        return Err(Error::domain(format!(
            "pulse FWHM {} s must be positive and shorter than the bin width {} s",
            spec.fwhm_s, spec.bin_width_s
        )));
    }
    if !(sample_period > 0.0 && sample_period <= spec.bin_width_s / SAMPLES_PER_BIN_MIN * (1.0 + 1e-9))
    {
        return Err(Error::domain(format!(
            "sample period {sample_period} s too coarse for bin width {} s",
            spec.bin_width_s
        )));
    }
    let frame_len = (spec.frame_bins() as f64 * spec.bin_width_s / sample_period).round() as usize;
    // field envelope exp(-2 ln2 x^2 / fwhm^2) has intensity FWHM = fwhm
    let width = 2.0 * LN_2 / (spec.fwhm_s * spec.fwhm_s);
    let mut frame: Vec<Complex64> = (0..frame_len)
        .map(|k| {
            let t = k as f64 * sample_period;
            spec.weights
                .iter()
                .enumerate()
                .filter(|(_, w)| w.norm_sqr() > 0.0)
                .map(|(m, w)| {
                    let dt = t - (m as f64 + 0.5) * spec.bin_width_s;
                    w * (-width * dt * dt).exp()
                })
                .sum()
        })
        .collect();
    let energy: f64 = frame.iter().map(|s| s.norm_sqr()).sum::<f64>() * sample_period;
    if energy > 0.0 {
        let scale = energy.sqrt().recip();
        frame.iter_mut().for_each(|s| *s *= scale);
    }
    let samples = frame
        .iter()
        .copied()
        .cycle()
        .take(frame_len * spec.repetitions.max(1))
        .collect();
    SampledWaveform::new(sample_period, samples, spec.wavelength_m)
}

/// A delay line acting on a sampled envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayLine {
    pub delay_s: f64,
    pub phase: f64,
    pub insertion: f64,
    /// Power fraction sent to the short arm; 0.5 is balanced.
    pub split_imbalance: f64,
}

impl DelayLine {
    pub fn ideal(delay_s: f64, phase: f64) -> Self {
        Self {
            delay_s,
            phase,
            insertion: 1.0,
            split_imbalance: 0.5,
        }
    }
}

/// Balanced lossless delay interferometer at the waveform level.
pub fn delay_interfere_waveform(
    wf: &SampledWaveform,
    delay_s: f64,
    phase: f64,
) -> Result<(SampledWaveform, SampledWaveform)> {
    delay_interfere_with(wf, &DelayLine::ideal(delay_s, phase))
}

/// General delay interferometer. If the delay is not within `1e-3` sample
/// periods of an integer number of samples, the input is linearly resampled
/// onto a grid that divides the delay exactly.
pub fn delay_interfere_with(
    wf: &SampledWaveform,
    line: &DelayLine,
) -> Result<(SampledWaveform, SampledWaveform)> {
    if !(line.delay_s > 0.0 && line.delay_s.is_finite()) {
        return Err(Error::domain(format!("delay must be positive, got {}", line.delay_s)));
    }
    if !(line.insertion > 0.0 && line.insertion <= 1.0) {
        return Err(Error::domain("insertion transmission must lie in (0, 1]"));
    }
    if !(line.split_imbalance > 0.0 && line.split_imbalance < 1.0) {
        return Err(Error::domain("split imbalance must lie in (0, 1)"));
    }
    let ratio = line.delay_s / wf.sample_period;
    let (source, steps) = if (ratio - ratio.round()).abs() <= DELAY_SNAP_TOL && ratio.round() >= 1.0
    {
        (std::borrow::Cow::Borrowed(wf), ratio.round() as usize)
    } else {
        let steps = ratio.ceil().max(1.0) as usize;
        let resampled = wf.resampled(line.delay_s / steps as f64);
        let check = line.delay_s / resampled.sample_period;
        if (check - steps as f64).abs() > DELAY_SNAP_TOL {
            return Err(Error::domain(format!(
                "delay {} s not representable at sample period {} s",
                line.delay_s, resampled.sample_period
            )));
        }
        (std::borrow::Cow::Owned(resampled), steps)
    };
    let (plus, minus) = interfere_samples(
        &source.samples,
        steps,
        line.phase,
        line.insertion,
        line.split_imbalance,
    );
    let build = |samples| SampledWaveform {
        sample_period: source.sample_period,
        samples,
        wavelength_m: source.wavelength_m,
    };
    Ok((build(plus), build(minus)))
}

/// Carrier phase `2 pi * path / wavelength`, wrapped to `[0, 2 pi)`.
pub fn carrier_phase(path_m: f64, wavelength_m: f64) -> f64 {
    let cycles = path_m / wavelength_m;
    std::f64::consts::TAU * (cycles - cycles.floor())
}

/// Heater phase that cancels the carrier phase of `path_m` at `wavelength_m`,
/// leaving a net interferometer phase of `target`.
pub fn retune_phase(path_m: f64, wavelength_m: f64, target: f64) -> f64 {
    target - carrier_phase(path_m, wavelength_m)
}

/// Runs a waveform through every interferometer of a bin-level cascade,
/// using `delay_bins * bin_width` as the delay. Ports ordered by frequency index.
pub fn propagate_cascade_waveform(
    wf: &SampledWaveform,
    cascade: &CascadeSpec,
) -> Result<Vec<SampledWaveform>> {
    let tau = cascade.bin_width();
    cascade.propagate(wf.clone(), |w, spec| {
        delay_interfere_with(
            w,
            &DelayLine {
                delay_s: spec.delay_bins() as f64 * tau,
                phase: spec.phase(),
                insertion: spec.insertion(),
                split_imbalance: spec.split_imbalance(),
            },
        )
    })
}

/// Photoreceiver/oscilloscope front end.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub bandwidth_hz: f64,
    pub order: usize,
}

impl DetectorModel {
    pub fn new(bandwidth_hz: f64, order: usize) -> Result<Self> {
        if !(bandwidth_hz > 0.0) {
            return Err(Error::domain(format!("bandwidth must be positive, got {bandwidth_hz}")));
        }
        if order == 0 {
            return Err(Error::domain("filter order must be at least 1"));
        }
        Ok(Self { bandwidth_hz, order })
    }

    /// 4th-order Bessel response at `bandwidth_hz`.
    pub fn bessel4(bandwidth_hz: f64) -> Result<Self> {
        Self::new(bandwidth_hz, 4)
    }

    pub fn ideal() -> Self {
        Self {
            bandwidth_hz: f64::INFINITY,
            order: 4,
        }
    }

    /// Magnitude response at frequency `f` (Hz), unity at DC.
    pub fn magnitude(&self, f: f64) -> f64 {
        if self.bandwidth_hz.is_infinite() {
            return 1.0;
        }
        let bessel = BesselMagnitude::new(self.order);
        bessel.at(bessel.cutoff * f.abs() / self.bandwidth_hz)
    }
}

/// `|H(j w)|` of the normalized Bessel low-pass `theta_N(0) / theta_N(s)`.
struct BesselMagnitude {
    coeffs: Vec<f64>,
    /// -3 dB angular frequency of the unscaled polynomial.
    cutoff: f64,
}

impl BesselMagnitude {
    fn new(order: usize) -> Self {
        // reverse Bessel polynomial: a_k = (2N-k)! / (2^(N-k) k! (N-k)!)
        let n = order;
        let mut coeffs = vec![0.0; n + 1];
        coeffs[n] = 1.0;
        for k in (0..n).rev() {
            // a_k / a_{k+1} = (2N-k)(k+1) / (2 (N-k))
            coeffs[k] = coeffs[k + 1] * ((2 * n - k) * (k + 1)) as f64 / (2 * (n - k)) as f64;
        }
        let mut this = Self { coeffs, cutoff: 1.0 };
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while this.at(hi) > std::f64::consts::FRAC_1_SQRT_2 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if this.at(mid) > std::f64::consts::FRAC_1_SQRT_2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        this.cutoff = 0.5 * (lo + hi);
        this
    }

    fn at(&self, w: f64) -> f64 {
        let jw = Complex64::new(0.0, w);
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * jw + c;
        }
        self.coeffs[0] / acc.norm()
    }
}

/// Detected power samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerTrace {
    pub sample_period: f64,
    pub values: Vec<f64>,
}

impl PowerTrace {
    pub fn area(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.sample_period
    }

    /// Integral over samples with `start <= t < end`.
    pub fn area_in(&self, start: f64, end: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = *k as f64 * self.sample_period;
                t >= start && t < end
            })
            .map(|(_, v)| v)
            .sum::<f64>()
            * self.sample_period
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Two-column CSV with header `time_s,power_W`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["time_s", "power_W"]).map_err(csv_err)?;
        for (k, v) in self.values.iter().enumerate() {
            let t = k as f64 * self.sample_period;
            w.write_record([t.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Low-pass filters `|envelope|^2` with the detector magnitude response.
///
/// The response is applied as a zero-phase filter in the frequency domain.
/// A bandwidth at or above Nyquist returns the raw power trace.
pub fn detect(wf: &SampledWaveform, det: &DetectorModel) -> PowerTrace {
    let raw = wf.power();
    let nyquist = 0.5 / wf.sample_period;
    if det.bandwidth_hz >= nyquist || raw.values.is_empty() {
        return raw;
    }
    let n = raw.values.len();
    let guard = (20.0 / (det.bandwidth_hz * wf.sample_period)).ceil() as usize;
    let len = (n + 2 * guard).next_power_of_two();
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); len];
    for (slot, v) in buf[guard..].iter_mut().zip(&raw.values) {
        *slot = Complex64::new(*v, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let bessel = BesselMagnitude::new(det.order);
    let df = 1.0 / (len as f64 * wf.sample_period);
    for (k, x) in buf.iter_mut().enumerate() {
        let f = df * k.min(len - k) as f64;
        *x *= bessel.at(bessel.cutoff * f / det.bandwidth_hz);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / len as f64;
    PowerTrace {
        sample_period: wf.sample_period,
        values: buf[guard..guard + n].iter().map(|x| x.re * scale).collect(),
    }
}

/// `V = (A+ - A-) / (A+ + A-)` with areas taken over `[start, end)`.
pub fn visibility_from_areas(
    bright: &PowerTrace,
    dark: &PowerTrace,
    window: (f64, f64),
) -> Result<f64> {
    let (start, end) = window;
    if !(end > start) {
        return Err(Error::domain(format!("empty visibility window [{start}, {end})")));
    }
    contrast(bright.area_in(start, end), dark.area_in(start, end))
}

/// The two-interferometer, four-pulse `|f_0>` experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct FourPulseDemo {
    pub fwhm_s: f64,
    pub bin_width_s: f64,
    pub sample_period_s: f64,
    pub wavelength_m: f64,
    /// Phases of the long (2 tau) and short (tau) interferometers.
    pub phases: (f64, f64),
    pub insertion: f64,
    pub split_imbalance: f64,
    pub weights: Vec<Complex64>,
    pub detector: DetectorModel,
}

impl Default for FourPulseDemo {
    fn default() -> Self {
        Self {
            fwhm_s: 100e-12,
            bin_width_s: 400e-12,
            sample_period_s: 5e-12,
            wavelength_m: 1550e-9,
            phases: (0.0, 0.0),
            insertion: 1.0,
            split_imbalance: 0.5,
            weights: vec![Complex64::new(1.0, 0.0); 4],
            detector: DetectorModel {
                bandwidth_hz: 8e9,
                order: 4,
            },
        }
    }
}

#[derive(Debug)]
pub struct DemoOutcome {
    /// `+` port of the second interferometer.
    pub bright: PowerTrace,
    /// `-` port of the second interferometer.
    pub dark: PowerTrace,
    /// Time window of the central bin.
    pub window: (f64, f64),
    pub visibility: Result<f64>,
}

impl FourPulseDemo {
    pub fn run(&self) -> Result<DemoOutcome> {
        let tau = self.bin_width_s;
        let mut spec = PulseTrainSpec::new(self.fwhm_s, tau, self.weights.clone());
        spec.wavelength_m = self.wavelength_m;
        let frame = synthesize_frame(&spec, self.sample_period_s)?;
        let d = self.weights.len();
        let first = DelayLine {
            delay_s: (d / 2) as f64 * tau,
            phase: self.phases.0,
            insertion: self.insertion,
            split_imbalance: self.split_imbalance,
        };
        let (plus, _) = delay_interfere_with(&frame, &first)?;
        let second = DelayLine {
            delay_s: (d / 4).max(1) as f64 * tau,
            phase: self.phases.1,
            ..first
        };
        let (bright, dark) = delay_interfere_with(&plus, &second)?;
        let bright = detect(&bright, &self.detector);
        let dark = detect(&dark, &self.detector);
        let window = ((d - 1) as f64 * tau, d as f64 * tau);
        let visibility = visibility_from_areas(&bright, &dark, window);
        Ok(DemoOutcome {
            bright,
            dark,
            window,
            visibility,
        })
    }

    /// Nominal path of the `tau` interferometer.
    pub fn short_path_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.bin_width_s
    }
}
