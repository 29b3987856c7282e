//! Streaming per-channel IIR filtering.
//!
//! Filters are cascades of normalized second-order sections run in
//! transposed direct form II. Coefficients are shared by all channels; each
//! channel owns two delay registers per section.
//!
//! Butterworth designs use the bilinear transform with the analog prototype
//! prewarped at the cutoff, so the -3 dB point lands exactly on `cutoff_hz`.
//! Notches are prewarped at their center, which places the transmission zero
//! exactly on the center frequency.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail, Error, Result};
use crate::CHANNELS;

/// Line-noise notch quality factor (about 1.7 Hz bandwidth at 60 Hz).
pub const DEFAULT_NOTCH_Q: f64 = 35.0;
pub const HIGHPASS_CUTOFF_HZ: f64 = 15.0;
pub const HIGHPASS_ORDER: usize = 6;
pub const LOWPASS_CUTOFF_HZ: f64 = 375.0;
pub const LOWPASS_ORDER: usize = 2;
pub const LINE_NOISE_HZ: [f64; 3] = [60.0, 120.0, 180.0];
/// Filter output during the first 500 ms is treated as warm-up.
pub const WARMUP_SAMPLES: u64 = 500;

/// One 1 kHz time step of electrode samples, µV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFrame {
    /// Sample index in 1 kHz ticks.
    pub t: u64,
    pub samples: [f64; CHANNELS],
}

impl RawFrame {
    pub fn new(t: u64, samples: [f64; CHANNELS]) -> Result<Self> {
        let frame = Self { t, samples };
        frame.check_finite()?;
        Ok(frame)
    }

    pub fn zeros(t: u64) -> Self {
        Self {
            t,
            samples: [0.0; CHANNELS],
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|v| !v.is_finite()) {
            Some(ch) => bail!(Data, "non-finite sample on channel {ch} at t={}", self.t),
            None => Ok(()),
        }
    }
}

/// Filtered counterpart of [`RawFrame`].
pub type FilteredFrame = RawFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Highpass,
    Lowpass,
    Notch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Butterworth order; ignored for notches, which are always one section.
    pub order: usize,
    /// Cutoff for Butterworth kinds, center frequency for notches.
    pub cutoff_hz: f64,
    /// Quality factor, notches only.
    pub q: f64,
    pub fs_hz: f64,
}

impl FilterSpec {
    pub fn highpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Self {
        Self {
            kind: FilterKind::Highpass,
            order,
            cutoff_hz,
            q: 0.0,
            fs_hz,
        }
    }

    pub fn lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Self {
        Self {
            kind: FilterKind::Lowpass,
            order,
            cutoff_hz,
            q: 0.0,
            fs_hz,
        }
    }

    pub fn notch(center_hz: f64, q: f64, fs_hz: f64) -> Self {
        Self {
            kind: FilterKind::Notch,
            order: 2,
            cutoff_hz: center_hz,
            q,
            fs_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz > 0.0) || !self.fs_hz.is_finite() {
            bail!(
                InvalidSpec,
                "sample rate must be positive, got {}",
                self.fs_hz
            );
        }
        if !(self.cutoff_hz > 0.0) || self.cutoff_hz >= self.fs_hz / 2.0 {
            bail!(
                InvalidSpec,
                "frequency {} Hz outside (0, Nyquist = {} Hz)",
                self.cutoff_hz,
                self.fs_hz / 2.0
            );
        }
        match self.kind {
            FilterKind::Notch => {
                if !(self.q > 0.0) || !self.q.is_finite() {
                    bail!(InvalidSpec, "notch q must be positive, got {}", self.q);
                }
            }
            FilterKind::Highpass | FilterKind::Lowpass => {
                if !matches!(self.order, 2 | 4 | 6) {
                    bail!(
                        InvalidSpec,
                        "Butterworth order must be 2, 4 or 6, got {}",
                        self.order
                    );
                }
            }
        }
        Ok(())
    }
}

/// Second-order section with `a0` normalized to 1:
/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        libm::fabs(self.a2) < 1.0 && libm::fabs(self.a1) < 1.0 + self.a2
    }

    /// |H(e^{jω})| evaluated from the coefficients.
    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs_hz;
        let (c1, s1) = (libm::cos(w), libm::sin(w));
        let (c2, s2) = (libm::cos(2.0 * w), libm::sin(2.0 * w));
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = -(self.b1 * s1 + self.b2 * s2);
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = -(self.a1 * s1 + self.a2 * s2);
        libm::sqrt((num_re * num_re + num_im * num_im) / (den_re * den_re + den_im * den_im))
    }

    #[inline(always)]
    fn tick(&self, x: f64, s: &mut [f64; 2]) -> f64 {
        let y = self.b0 * x + s[0];
        s[0] = self.b1 * x - self.a1 * y + s[1];
        s[1] = self.b2 * x - self.a2 * y;
        y
    }
}

/// Ordered biquad sections plus per-channel delay registers.
#[derive(Debug, Clone)]
pub struct FilterCascade {
    sections: Vec<Biquad>,
    channels: usize,
    /// `channels × sections` register pairs, channel-major.
    state: Vec<[f64; 2]>,
    last_t: Option<u64>,
}

impl FilterCascade {
    /// Builds a cascade, rejecting any unstable section.
    pub fn new(sections: Vec<Biquad>, channels: usize) -> Result<Self> {
        if channels == 0 {
            bail!(InvalidArgument, "cascade needs at least one channel");
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            bail!(
                InvalidSpec,
                "section {i} has a pole on or outside the unit circle"
            );
        }
        let state = vec![[0.0; 2]; channels * sections.len()];
        Ok(Self {
            sections,
            channels,
            state,
            last_t: None,
        })
    }

    /// The full acquisition chain: high-pass, low-pass, then the 60, 120
    /// and 180 Hz notches, in that order.
    pub fn emg_chain(fs_hz: f64, channels: usize) -> Result<Self> {
        let mut sections = Vec::new();
        let hp = design_butterworth(&FilterSpec::highpass(
            HIGHPASS_ORDER,
            HIGHPASS_CUTOFF_HZ,
            fs_hz,
        ))?;
        let lp = design_butterworth(&FilterSpec::lowpass(
            LOWPASS_ORDER,
            LOWPASS_CUTOFF_HZ,
            fs_hz,
        ))?;
        sections.extend_from_slice(hp.sections());
        sections.extend_from_slice(lp.sections());
        for f in LINE_NOISE_HZ {
            sections.extend_from_slice(design_notch(f, DEFAULT_NOTCH_Q, fs_hz)?.sections());
        }
        Self::new(sections, channels)
    }

    /// Same sections, fresh state for `channels` channels.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        Self::new(self.sections.clone(), channels)
    }

    /// Appends another cascade's sections after this one's.
    pub fn then(mut self, other: &FilterCascade) -> Self {
        self.sections.extend_from_slice(&other.sections);
        self.state = vec![[0.0; 2]; self.channels * self.sections.len()];
        self.last_t = None;
        self
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state(&self) -> &[[f64; 2]] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
        self.last_t = None;
    }

    /// Product of section magnitudes at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.magnitude(freq_hz, fs_hz))
            .product()
    }

    /// Filters one frame, enforcing strictly increasing sample indices.
    ///
    /// State is left untouched when the frame is rejected.
    pub fn process_frame(&mut self, frame: &RawFrame) -> Result<FilteredFrame> {
        if self.channels != CHANNELS {
            bail!(
                InvalidArgument,
                "cascade has {} channels, frames carry {CHANNELS}",
                self.channels
            );
        }
        if let Some(last) = self.last_t {
            if frame.t <= last {
                bail!(Sequencing, "frame t={} does not follow t={last}", frame.t);
            }
        }
        frame.check_finite()?;
        let mut out = *frame;
        self.process_in_place(&mut out.samples);
        self.last_t = Some(frame.t);
        Ok(out)
    }

    /// Filters one multi-channel sample in place, with no sequencing checks.
    pub fn process_in_place(&mut self, samples: &mut [f64]) {
        assert_eq!(samples.len(), self.channels, "channel count mismatch");
        let n_sec = self.sections.len();
        for (ch, x) in samples.iter_mut().enumerate() {
            let regs = &mut self.state[ch * n_sec..(ch + 1) * n_sec];
            let mut v = *x;
            for (sec, s) in self.sections.iter().zip(regs.iter_mut()) {
                v = sec.tick(v, s);
            }
            *x = v;
        }
    }

    /// Filters a single-channel signal (channel 0) in place.
    pub fn process_signal(&mut self, signal: &mut [f64]) {
        assert_eq!(
            self.channels, 1,
            "process_signal needs a single-channel cascade"
        );
        for x in signal.iter_mut() {
            let mut one = [*x];
            self.process_in_place(&mut one);
            *x = one[0];
        }
    }
}

/// Designs a Butterworth high- or low-pass cascade of `order / 2` sections.
///
/// The returned cascade is sized for [`CHANNELS`] channels; use
/// [`FilterCascade::with_channels`] for other widths.
pub fn design_butterworth(spec: &FilterSpec) -> Result<FilterCascade> {
    if spec.kind == FilterKind::Notch {
        return Err(Error::InvalidSpec(
            "design_butterworth does not build notches".into(),
        ));
    }
    if spec.order % 2 == 1 {
        bail!(
            InvalidSpec,
            "odd Butterworth order {} is not supported",
            spec.order
        );
    }
    spec.validate()?;

    let n = spec.order;
    let k = libm::tan(PI * spec.cutoff_hz / spec.fs_hz);
    let k2 = k * k;
    let sections = (0..n / 2)
        .map(|i| {
            // Pole pair i of the analog prototype: s² + s/Q + 1.
            let q = 1.0 / (2.0 * libm::sin(PI * (2 * i + 1) as f64 / (2 * n) as f64));
            let norm = 1.0 / (1.0 + k / q + k2);
            let a1 = 2.0 * (k2 - 1.0) * norm;
            let a2 = (1.0 - k / q + k2) * norm;
            match spec.kind {
                FilterKind::Lowpass => {
                    let b0 = k2 * norm;
                    Biquad {
                        b0,
                        b1: 2.0 * b0,
                        b2: b0,
                        a1,
                        a2,
                    }
                }
                _ => Biquad {
                    b0: norm,
                    b1: -2.0 * norm,
                    b2: norm,
                    a1,
                    a2,
                },
            }
        })
        .collect();
    FilterCascade::new(sections, CHANNELS)
}

/// Designs a single-section notch at `center_hz` with unity gain at DC and
/// Nyquist.
pub fn design_notch(center_hz: f64, q: f64, fs_hz: f64) -> Result<FilterCascade> {
    FilterSpec::notch(center_hz, q, fs_hz).validate()?;
    let k = libm::tan(PI * center_hz / fs_hz);
    let k2 = k * k;
    let norm = 1.0 / (1.0 + k / q + k2);
    let b0 = (1.0 + k2) * norm;
    let b1 = 2.0 * (k2 - 1.0) * norm;
    let section = Biquad {
        b0,
        b1,
        b2: b0,
        a1: b1,
        a2: (1.0 - k / q + k2) * norm,
    };
    FilterCascade::new(vec![section], CHANNELS)
}
