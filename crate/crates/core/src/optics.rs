//! Delay interferometers acting on time-bin amplitudes and the radix-2
//! cascade that sorts frequency states onto separate output ports.
//!
//! Transfer convention: the delayed (long) arm carries `exp(i*phase)` and the
//! `+` port is the sum port, so `phase = 0` is constructive for `|f_0>`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::states::{check_dimension, make_frequency_state, PhotonicState};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const FSR_REL_TOL: f64 = 1e-6;
const CASCADE_CHECK_TOL: f64 = 1e-9;

/// One unequal-path delay interferometer.
#[derive(Clone, Debug, PartialEq)]
pub struct InterferometerSpec {
    delay_bins: usize,
    phase: f64,
    nominal_path_m: f64,
    fsr_hz: f64,
    insertion: f64,
    split_imbalance: f64,
}

impl InterferometerSpec {
    /// Balanced, lossless interferometer with nominal path difference
    /// `nominal_path_m`; the FSR follows as `c / nominal_path_m`.
    pub fn new(delay_bins: usize, phase: f64, nominal_path_m: f64) -> Result<Self> {
        if !(nominal_path_m > 0.0 && nominal_path_m.is_finite()) {
            return Err(Error::domain(format!(
                "nominal path difference must be positive, got {nominal_path_m}"
            )));
        }
        let spec = Self {
            delay_bins,
            phase,
            nominal_path_m,
            fsr_hz: SPEED_OF_LIGHT / nominal_path_m,
            insertion: 1.0,
            split_imbalance: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Interferometer bound to a frame of bin width `bin_width_s`:
    /// `nominal_path = c * bin_width * delay_bins`.
    pub fn for_frame(delay_bins: usize, bin_width_s: f64, phase: f64) -> Result<Self> {
        Self::new(
            delay_bins,
            phase,
            SPEED_OF_LIGHT * bin_width_s * delay_bins as f64,
        )
    }

    /// Sets the FSR explicitly, checked against `c / nominal_path`.
    pub fn with_fsr(mut self, fsr_hz: f64) -> Result<Self> {
        self.fsr_hz = fsr_hz;
        self.validate()?;
        Ok(self)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_insertion(mut self, insertion: f64) -> Result<Self> {
        self.insertion = insertion;
        self.validate()?;
        Ok(self)
    }

    /// Fraction of the input power routed into the short arm; 0.5 is balanced.
    pub fn with_split_imbalance(mut self, split_imbalance: f64) -> Result<Self> {
        self.split_imbalance = split_imbalance;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.delay_bins < 1 {
            return Err(Error::domain("interferometer delay must be at least one bin"));
        }
        if !self.phase.is_finite() {
            return Err(Error::domain("interferometer phase must be finite"));
        }
        let expected = SPEED_OF_LIGHT / self.nominal_path_m;
        if !((self.fsr_hz - expected).abs() <= FSR_REL_TOL * expected) {
            return Err(Error::domain(format!(
                "FSR {} Hz inconsistent with c/nominal_path = {expected} Hz",
                self.fsr_hz
            )));
        }
        if !(self.insertion > 0.0 && self.insertion <= 1.0) {
            return Err(Error::domain(format!(
                "insertion transmission must lie in (0, 1], got {}",
                self.insertion
            )));
        }
        if !(self.split_imbalance > 0.0 && self.split_imbalance < 1.0) {
            return Err(Error::domain(format!(
                "split imbalance must lie in (0, 1), got {}",
                self.split_imbalance
            )));
        }
        Ok(())
    }

    pub fn delay_bins(&self) -> usize {
        self.delay_bins
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn nominal_path_m(&self) -> f64 {
        self.nominal_path_m
    }

    pub fn fsr_hz(&self) -> f64 {
        self.fsr_hz
    }

    pub fn insertion(&self) -> f64 {
        self.insertion
    }

    pub fn split_imbalance(&self) -> f64 {
        self.split_imbalance
    }
}

/// Amplitude weights of the short and long arm at either output port.
///
/// The first splitter sends `gamma` of the power into the short arm, the
/// recombiner is 50:50, and `alpha` is the power transmission of the device.
pub(crate) fn arm_weights(alpha: f64, gamma: f64) -> (f64, f64) {
    let short = (alpha * gamma / 2.0).sqrt();
    let long = (alpha * (1.0 - gamma) / 2.0).sqrt();
    (short, long)
}

/// Sample-level transfer rule shared by the bin and waveform models.
///
/// `plus(t) = s*a(t) + l*e^{i phase}*a(t - delay)`, `minus` with the sign of the
/// delayed term flipped. Outputs are `delay` samples longer than the input.
pub(crate) fn interfere_samples(
    input: &[Complex64],
    delay: usize,
    phase: f64,
    alpha: f64,
    gamma: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let (short, long) = arm_weights(alpha, gamma);
    let rot = Complex64::from_polar(long, phase);
    let len = input.len() + delay;
    let zero = Complex64::new(0.0, 0.0);
    let mut plus = Vec::with_capacity(len);
    let mut minus = Vec::with_capacity(len);
    for t in 0..len {
        let prompt = input.get(t).copied().unwrap_or(zero) * short;
        let delayed = if t >= delay {
            input.get(t - delay).copied().unwrap_or(zero) * rot
        } else {
            zero
        };
        plus.push(prompt + delayed);
        minus.push(prompt - delayed);
    }
    (plus, minus)
}

/// Continuous-wave output powers `(P+, P-)` for input power `p0`, taking the
/// spec phase as the net phase between the arms.
pub fn cw_port_powers(spec: &InterferometerSpec, p0: f64) -> (f64, f64) {
    let (short, long) = arm_weights(spec.insertion, spec.split_imbalance);
    let rot = Complex64::from_polar(long, spec.phase);
    let s = Complex64::new(short, 0.0);
    (p0 * (s + rot).norm_sqr(), p0 * (s - rot).norm_sqr())
}

/// Propagates a state through one interferometer, returning the `+` and `-` port states.
pub fn apply_interferometer(
    state: &PhotonicState,
    spec: &InterferometerSpec,
) -> Result<(PhotonicState, PhotonicState)> {
    if spec.delay_bins < 1 {
        return Err(Error::domain("interferometer delay must be at least one bin"));
    }
    let (plus, minus) = interfere_samples(
        state.amplitudes(),
        spec.delay_bins,
        spec.phase,
        spec.insertion,
        spec.split_imbalance,
    );
    Ok((state.with_amplitudes(plus), state.with_amplitudes(minus)))
}

/// One interferometer placed in the cascade tree.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeNode {
    pub spec: InterferometerSpec,
    /// 1-indexed from the root.
    pub layer: u32,
    /// Frequency index residue `n mod 2^(layer-1)` already resolved on the way here.
    pub residue: usize,
}

/// Binary tree of `d - 1` interferometers for dimension `d`.
///
/// Nodes are stored in heap order: the `+` child of node `i` is `2i + 1`, the
/// `-` child `2i + 2`. Leaf `p` (heap index `d - 1 + p`) is an output port.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeSpec {
    dimension: usize,
    bin_width: f64,
    nodes: Vec<CascadeNode>,
    port_frequency: Vec<usize>,
}

impl CascadeSpec {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn depth(&self) -> u32 {
        self.dimension.trailing_zeros()
    }

    pub fn nodes(&self) -> &[CascadeNode] {
        &self.nodes
    }

    /// Frequency index served by each output port, in leaf order.
    pub fn port_frequency(&self) -> &[usize] {
        &self.port_frequency
    }

    /// Leaf position of the port whose central bin lights up for `|f_n>`.
    pub fn port_of_frequency(&self, n: usize) -> Option<usize> {
        self.port_frequency.iter().position(|&f| f == n)
    }

    /// Adds `delta` to the phase of node `index` (heap order).
    pub fn with_phase_offset(mut self, index: usize, delta: f64) -> Result<Self> {
        let node = self
            .nodes
            .get_mut(index)
            .ok_or_else(|| Error::domain(format!("cascade has no node {index}")))?;
        node.spec.phase += delta;
        Ok(self)
    }

    /// Adds `delta` to every interferometer in `layer` (1-indexed).
    pub fn with_layer_phase_offset(mut self, layer: u32, delta: f64) -> Result<Self> {
        if layer < 1 || layer > self.depth() {
            return Err(Error::domain(format!(
                "layer {layer} outside 1..={}",
                self.depth()
            )));
        }
        for node in self.nodes.iter_mut().filter(|n| n.layer == layer) {
            node.spec.phase += delta;
        }
        Ok(self)
    }

    /// Applies a fallible edit to every interferometer (loss, imbalance, ...).
    pub fn try_map_interferometers(
        mut self,
        mut f: impl FnMut(InterferometerSpec) -> Result<InterferometerSpec>,
    ) -> Result<Self> {
        for node in &mut self.nodes {
            node.spec = f(node.spec.clone())?;
        }
        Ok(self)
    }

    /// Walks the tree with a user-supplied splitter and returns the leaf
    /// values ordered by frequency index.
    pub fn propagate<T>(
        &self,
        input: T,
        mut split: impl FnMut(&T, &InterferometerSpec) -> Result<(T, T)>,
    ) -> Result<Vec<T>> {
        let d = self.dimension;
        let mut slots: Vec<Option<T>> = (0..2 * d - 1).map(|_| None).collect();
        slots[0] = Some(input);
        for i in 0..d - 1 {
            let value = slots[i].take().expect("parent visited before children");
            let (plus, minus) = split(&value, &self.nodes[i].spec)?;
            slots[2 * i + 1] = Some(plus);
            slots[2 * i + 2] = Some(minus);
        }
        let mut by_frequency: Vec<Option<T>> = (0..d).map(|_| None).collect();
        for (p, slot) in slots.drain(d - 1..).enumerate() {
            by_frequency[self.port_frequency[p]] = slot;
        }
        Ok(by_frequency
            .into_iter()
            .map(|v| v.expect("port map is a permutation"))
            .collect())
    }
}

/// Builds the radix-2 cascade for dimension `d` and bin width `bin_width_s`.
///
/// Layer `j` uses delay `d / 2^j`. A node reached with resolved residue `r`
/// (bits already decided by the ports taken above it) carries phase
/// `pi * r / 2^(j-1)`; the `+` port then fixes the next bit to 0 and the `-`
/// port to 1. The resulting port map is checked against the DFT oracle
/// before the spec is returned.
pub fn build_cascade(d: usize, bin_width_s: f64) -> Result<CascadeSpec> {
    check_dimension(d)?;
    if !(bin_width_s > 0.0 && bin_width_s.is_finite()) {
        return Err(Error::domain(format!("bin width must be positive, got {bin_width_s}")));
    }
    let mut nodes: Vec<CascadeNode> = Vec::with_capacity(d - 1);
    for i in 0..d - 1 {
        let (layer, residue) = if i == 0 {
            (1, 0)
        } else {
            let parent = &nodes[(i - 1) / 2];
            let bit = usize::from(i % 2 == 0);
            (parent.layer + 1, parent.residue + (bit << (parent.layer - 1)))
        };
        let delay = d >> layer;
        let phase = PI * residue as f64 / (1usize << (layer - 1)) as f64;
        nodes.push(CascadeNode {
            spec: InterferometerSpec::for_frame(delay, bin_width_s, phase)?,
            layer,
            residue,
        });
    }
    let port_frequency = (0..d)
        .map(|p| {
            let heap = d - 1 + p;
            let parent = &nodes[(heap - 1) / 2];
            let bit = usize::from(heap % 2 == 0);
            parent.residue + (bit << (parent.layer - 1))
        })
        .collect();
    let cascade = CascadeSpec {
        dimension: d,
        bin_width: bin_width_s,
        nodes,
        port_frequency,
    };
    verify_cascade(&cascade)?;
    Ok(cascade)
}

fn verify_cascade(cascade: &CascadeSpec) -> Result<()> {
    let d = cascade.dimension;
    let bright = 1.0 / d as f64;
    for n in 0..d {
        let outcome = measure_cascade(&make_frequency_state(d, n)?, cascade)?;
        for (port, p) in outcome.central_probabilities().into_iter().enumerate() {
            let expected = if port == n { bright } else { 0.0 };
            if (p - expected).abs() > CASCADE_CHECK_TOL {
                return Err(Error::CascadeMismatch(format!(
                    "|f_{n}> gives central probability {p} at port {port}, expected {expected}"
                )));
            }
        }
    }
    Ok(())
}

/// Per-port detection probabilities over output time bins.
#[derive(Clone, Debug, PartialEq)]
pub struct PortOutcome {
    /// `probabilities[n][t]`: port serving `|f_n>`, output bin `t`.
    pub probabilities: Vec<Vec<f64>>,
    pub central_bin: usize,
}

impl PortOutcome {
    pub fn num_ports(&self) -> usize {
        self.probabilities.len()
    }

    pub fn central_probabilities(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| p[self.central_bin]).collect()
    }

    pub fn total_probability(&self) -> f64 {
        self.probabilities.iter().flatten().sum()
    }
}

/// Sends a frame through the cascade; ports are returned ordered by frequency index.
pub fn measure_cascade(state: &PhotonicState, cascade: &CascadeSpec) -> Result<PortOutcome> {
    if state.dimension() != cascade.dimension {
        return Err(Error::domain(format!(
            "state dimension {} does not match cascade dimension {}",
            state.dimension(),
            cascade.dimension
        )));
    }
    let frame = state.frame()?;
    let ports = cascade.propagate(frame, apply_interferometer)?;
    Ok(PortOutcome {
        probabilities: ports.iter().map(PhotonicState::probabilities).collect(),
        central_bin: cascade.dimension - 1,
    })
}

/// Fringe contrast from the central bin: expected port vs. all the others.
pub fn central_bin_visibility(outcome: &PortOutcome, expected_port: usize) -> Result<f64> {
    if outcome.num_ports() < 2 {
        return Err(Error::domain("visibility needs at least two ports"));
    }
    if expected_port >= outcome.num_ports() {
        return Err(Error::domain(format!(
            "expected port {expected_port} out of range for {} ports",
            outcome.num_ports()
        )));
    }
    let central = outcome.central_probabilities();
    let bright = central[expected_port];
    let dark: f64 = central
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != expected_port)
        .map(|(_, v)| v)
        .sum();
    contrast(bright, dark)
}

pub(crate) fn contrast(bright: f64, dark: f64) -> Result<f64> {
    let total = bright + dark;
    if !(total > 0.0) {
        return Err(Error::UndefinedVisibility);
    }
    Ok((bright - dark) / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{dft_oracle, make_time_state};
    use approx::assert_abs_diff_eq;

    fn assert_probs(state: &PhotonicState, expected: &[f64]) {
        let p = state.probabilities();
        assert_eq!(p.len(), expected.len());
        for (a, e) in p.iter().zip(expected) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_interferometer_d2() {
        let spec = InterferometerSpec::for_frame(1, 400e-12, 0.0).unwrap();
        let (plus, minus) =
            apply_interferometer(&make_frequency_state(2, 0).unwrap(), &spec).unwrap();
        assert_probs(&plus, &[0.125, 0.5, 0.125]);
        assert_probs(&minus, &[0.125, 0.0, 0.125]);

        let (plus, minus) =
            apply_interferometer(&make_frequency_state(2, 1).unwrap(), &spec).unwrap();
        assert_abs_diff_eq!(plus.probabilities()[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(minus.probabilities()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn first_layer_d4() {
        let spec = InterferometerSpec::for_frame(2, 400e-12, 0.0).unwrap();
        let (plus, _) = apply_interferometer(&make_frequency_state(4, 0).unwrap(), &spec).unwrap();
        let s = 1.0 / 16.0;
        assert_probs(&plus, &[s, s, 0.25, 0.25, s, s]);
    }

    #[test]
    fn interferometer_invariants() {
        assert!(InterferometerSpec::for_frame(0, 1e-9, 0.0).is_err());
        let spec = InterferometerSpec::for_frame(1, 400e-12, 0.0).unwrap();
        assert_abs_diff_eq!(spec.nominal_path_m(), SPEED_OF_LIGHT * 400e-12, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.fsr_hz(), 2.5e9, epsilon = 1e-3);
        assert!(spec.clone().with_fsr(2.6e9).is_err());
        assert!(spec.clone().with_fsr(2.5e9 * (1.0 + 1e-7)).is_ok());
        assert!(spec.clone().with_insertion(0.0).is_err());
        assert!(spec.clone().with_insertion(1.2).is_err());
        assert!(spec.clone().with_split_imbalance(0.0).is_err());
        assert!(spec.clone().with_split_imbalance(1.0).is_err());
        assert!(InterferometerSpec::new(1, 0.0, -1.0).is_err());
    }

    #[test]
    fn lossy_interferometer_scales_power() {
        let spec = InterferometerSpec::for_frame(1, 1.0, 0.3)
            .unwrap()
            .with_insertion(0.8)
            .unwrap();
        let (plus, minus) = apply_interferometer(&make_time_state(2, 1).unwrap(), &spec).unwrap();
        assert_abs_diff_eq!(plus.norm_sqr() + minus.norm_sqr(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn cascade_layout() {
        let c2 = build_cascade(2, 1.0).unwrap();
        assert_eq!(c2.nodes().len(), 1);
        assert_eq!(c2.nodes()[0].spec.delay_bins(), 1);
        assert_eq!(c2.nodes()[0].spec.phase(), 0.0);
        assert_eq!(c2.port_frequency(), &[0, 1]);

        let c4 = build_cascade(4, 1.0).unwrap();
        let n = c4.nodes();
        assert_eq!(n[0].spec.delay_bins(), 2);
        assert_eq!(n[0].spec.phase(), 0.0);
        assert_eq!((n[1].spec.delay_bins(), n[1].spec.phase()), (1, 0.0));
        assert_eq!((n[2].spec.delay_bins(), n[2].spec.phase()), (1, PI / 2.0));
        // + child of the root resolves f0/f2, - child f1/f3
        assert_eq!(c4.port_frequency(), &[0, 2, 1, 3]);

        let c8 = build_cascade(8, 1.0).unwrap();
        assert_eq!(c8.nodes().len(), 7);
        let layer3: Vec<(usize, f64)> = c8
            .nodes()
            .iter()
            .filter(|n| n.layer == 3)
            .map(|n| (n.residue, n.spec.phase()))
            .collect();
        assert_eq!(layer3.len(), 4);
        for (r, phi) in layer3 {
            assert_abs_diff_eq!(phi, PI * r as f64 / 4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cascade_rejects_bad_dimension() {
        assert!(build_cascade(6, 1.0).is_err());
        assert!(build_cascade(1, 1.0).is_err());
        assert!(build_cascade(4, 0.0).is_err());
    }

    #[test]
    fn cascade_d8_matches_oracle_for_every_port() {
        let cascade = build_cascade(8, 1.0).unwrap();
        for n in 0..8 {
            let f = make_frequency_state(8, n).unwrap();
            let coeffs = dft_oracle(&f).unwrap();
            let central = measure_cascade(&f, &cascade).unwrap().central_probabilities();
            for port in 0..8 {
                let constructive = coeffs[port].norm() > 1e-9;
                assert_eq!(constructive, central[port] > 1e-9, "f{n} port {port}");
            }
        }
    }

    #[test]
    fn measure_d4_worked_examples() {
        let cascade = build_cascade(4, 400e-12).unwrap();
        let out = measure_cascade(&make_frequency_state(4, 0).unwrap(), &cascade).unwrap();
        assert_eq!(out.central_bin, 3);
        assert!(out.probabilities.iter().all(|p| p.len() == 7));
        let central = out.central_probabilities();
        assert_abs_diff_eq!(central[0], 0.25, epsilon = 1e-12);
        for p in &central[1..] {
            assert_abs_diff_eq!(*p, 0.0, epsilon = 1e-12);
        }

        let out = measure_cascade(&make_time_state(4, 0).unwrap(), &cascade).unwrap();
        for p in out.central_probabilities() {
            assert_abs_diff_eq!(p, 1.0 / 16.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(central_bin_visibility(&out, 2).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn measure_d2_reversal() {
        let cascade = build_cascade(2, 1.0).unwrap();
        let out = measure_cascade(&make_frequency_state(2, 1).unwrap(), &cascade).unwrap();
        assert_abs_diff_eq!(out.probabilities[1][1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.probabilities[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn measure_rejects_mismatch() {
        let cascade = build_cascade(4, 1.0).unwrap();
        assert!(measure_cascade(&make_time_state(2, 0).unwrap(), &cascade).is_err());
        let mut amps = vec![Complex64::new(0.0, 0.0); 6];
        amps[5] = Complex64::new(1.0, 0.0);
        let spread = PhotonicState::from_amplitudes(4, amps).unwrap();
        assert!(measure_cascade(&spread, &cascade).is_err());
    }

    #[test]
    fn visibility_cases() {
        let cascade = build_cascade(4, 1.0).unwrap();
        for n in 0..4 {
            let out = measure_cascade(&make_frequency_state(4, n).unwrap(), &cascade).unwrap();
            assert_abs_diff_eq!(central_bin_visibility(&out, n).unwrap(), 1.0, epsilon = 1e-12);
        }
        let flipped = build_cascade(2, 1.0).unwrap().with_phase_offset(0, PI).unwrap();
        let out = measure_cascade(&make_frequency_state(2, 0).unwrap(), &flipped).unwrap();
        assert_abs_diff_eq!(central_bin_visibility(&out, 0).unwrap(), -1.0, epsilon = 1e-12);

        let single = PortOutcome {
            probabilities: vec![vec![1.0]],
            central_bin: 0,
        };
        assert!(central_bin_visibility(&single, 0).is_err());
        let dark = PortOutcome {
            probabilities: vec![vec![0.0], vec![0.0]],
            central_bin: 0,
        };
        assert!(matches!(
            central_bin_visibility(&dark, 0),
            Err(Error::UndefinedVisibility)
        ));
    }

    #[test]
    fn phase_error_lowers_visibility() {
        let cascade = build_cascade(4, 1.0)
            .unwrap()
            .with_layer_phase_offset(2, 0.1)
            .unwrap();
        let out = measure_cascade(&make_frequency_state(4, 0).unwrap(), &cascade).unwrap();
        let v = central_bin_visibility(&out, 0).unwrap();
        assert!(v < 1.0 && v > 0.99);
        assert!(build_cascade(4, 1.0).unwrap().with_layer_phase_offset(3, 0.1).is_err());
    }
}
