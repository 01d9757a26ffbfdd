//! Time-bin and frequency (DFT) qudit states.
//!
//! A frame holds `d` contiguous time bins of width `tau`. Temporal states
//! occupy a single bin; frequency states spread equal amplitude across the
//! whole frame with relative phases `2*pi*n*m/d`. The two bases are mutually
//! unbiased.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Bin width used when a state is built without an explicit frame timing.
pub const UNIT_BIN_WIDTH: f64 = 1.0;

/// Complex amplitudes over time bins for one frame.
///
/// Entries past index `dimension - 1` are guard/spread bins produced by
/// propagation through delay interferometers.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonicState {
    dimension: usize,
    bin_width: f64,
    amplitudes: Vec<Complex64>,
}

/// Checks that `d` is a power of two no smaller than 2.
pub fn check_dimension(d: usize) -> Result<()> {
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::domain(format!(
            "dimension must be a power of 2 and at least 2, got {d}"
        )));
    }
    Ok(())
}

impl PhotonicState {
    /// Builds a state from raw amplitudes. No normalization is applied.
    pub fn from_amplitudes(dimension: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_dimension(dimension)?;
        if amplitudes.len() < dimension {
            return Err(Error::domain(format!(
                "amplitude vector of length {} is shorter than dimension {dimension}",
                amplitudes.len()
            )));
        }
        Ok(Self {
            dimension,
            bin_width: UNIT_BIN_WIDTH,
            amplitudes,
        })
    }

    pub fn with_bin_width(mut self, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::domain(format!("bin width must be positive, got {bin_width}")));
        }
        self.bin_width = bin_width;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Per-bin detection probabilities `|a(t)|^2`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Total probability `sum |a(t)|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// True when every amplitude past the first `dimension` bins is exactly zero.
    pub fn is_confined_to_frame(&self) -> bool {
        self.amplitudes[self.dimension..]
            .iter()
            .all(|a| a.norm_sqr() == 0.0)
    }

    /// Copy truncated to the `d` signal bins. Fails if a guard bin is occupied.
    pub fn frame(&self) -> Result<Self> {
        if !self.is_confined_to_frame() {
            return Err(Error::domain(
                "state has amplitude outside the first d bins of the frame",
            ));
        }
        Ok(Self {
            dimension: self.dimension,
            bin_width: self.bin_width,
            amplitudes: self.amplitudes[..self.dimension].to_vec(),
        })
    }

    pub(crate) fn with_amplitudes(&self, amplitudes: Vec<Complex64>) -> Self {
        Self {
            dimension: self.dimension,
            bin_width: self.bin_width,
            amplitudes,
        }
    }
}

/// Temporal state `|t_n>`: the wavepacket sits in bin `n` of the frame.
pub fn make_time_state(d: usize, n: usize) -> Result<PhotonicState> {
    check_dimension(d)?;
    if n >= d {
        return Err(Error::domain(format!("time-bin index {n} out of range for d={d}")));
    }
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); d];
    amplitudes[n] = Complex64::new(1.0, 0.0);
    PhotonicState::from_amplitudes(d, amplitudes)
}

/// Frequency state `|f_n> = d^{-1/2} sum_m exp(2 pi i n m / d) |t_m>`.
pub fn make_frequency_state(d: usize, n: usize) -> Result<PhotonicState> {
    check_dimension(d)?;
    if n >= d {
        return Err(Error::domain(format!("frequency index {n} out of range for d={d}")));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let amplitudes = (0..d)
        .map(|m| Complex64::from_polar(scale, TAU * ((n * m) % d) as f64 / d as f64))
        .collect();
    PhotonicState::from_amplitudes(d, amplitudes)
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner_product(a: &PhotonicState, b: &PhotonicState) -> Result<Complex64> {
    if a.dimension != b.dimension || a.amplitudes.len() != b.amplitudes.len() {
        return Err(Error::domain(format!(
            "mismatched states: d={} len={} vs d={} len={}",
            a.dimension,
            a.amplitudes.len(),
            b.dimension,
            b.amplitudes.len()
        )));
    }
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// Brute-force frequency-basis coefficients `c[n] = <f_n|state>`.
///
/// Direct O(d^2) summation, kept deliberately naive so it can serve as the
/// reference for the interferometer cascade.
pub fn dft_oracle(state: &PhotonicState) -> Result<Vec<Complex64>> {
    let frame = state.frame()?;
    let d = frame.dimension;
    let scale = 1.0 / (d as f64).sqrt();
    Ok((0..d)
        .map(|n| {
            frame
                .amplitudes
                .iter()
                .enumerate()
                .map(|(m, a)| {
                    Complex64::from_polar(scale, -TAU * ((n * m) % d) as f64 / d as f64) * a
                })
                .sum()
        })
        .collect())
}
