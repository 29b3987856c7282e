//! Synthetic surface EMG driven by kinematics.
//!
//! Each DOF contributes two rectified activations (positive and negative
//! direction). A nonnegative mixing matrix spreads them over channels to
//! form amplitude envelopes, which modulate independent unit-variance
//! band-limited Gaussian noise:
//!
//! `sample_c(t) = (baseline + gain · (M a(t))_c) · n_c(t)`
//!
//! Kinematics arrive at 30 Hz and are held across each tick's samples.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};
use crate::features::TickScheduler;
use crate::filter::{design_butterworth, FilterCascade, FilterSpec, RawFrame};
use crate::linalg::Matrix;
use crate::trajectory::Trajectory;
use crate::{CHANNELS, FEATURE_RATE_HZ, SAMPLE_RATE_HZ};

pub const DEFAULT_BASELINE_UV: f64 = 5.0;
pub const DEFAULT_GAIN_UV: f64 = 50.0;
pub const DEFAULT_NOISE_BAND_HZ: (f64, f64) = (15.0, 375.0);
pub const CROSSTALK: f64 = 0.2;
/// Noise samples discarded before t = 0 so the shaping filter is stationary.
const NOISE_BURN_IN: usize = 2000;
const NOISE_FILTER_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Channels × (2·DOF): column `2d` is DOF `d` positive, `2d + 1` negative.
    pub mixing: Matrix,
    pub baseline_uv: f64,
    pub gain_uv: f64,
    pub noise_band_hz: (f64, f64),
    pub seed: u64,
}

/// Block-sparse mixing: each directional activation owns a block of
/// dedicated channels (4, or fewer when 32 channels cannot fit them all)
/// and leaks [`CROSSTALK`] into the channel on either side of its block.
pub fn default_mixing(dof: usize) -> Matrix {
    let activations = 2 * dof;
    let per = (CHANNELS / activations.max(1)).clamp(1, 4);
    let mut m = Matrix::zeros(CHANNELS, activations);
    for a in 0..activations {
        let start = a * per;
        for c in start..start + per {
            m[(c % CHANNELS, a)] = 1.0;
        }
        for c in [start + CHANNELS - 1, start + per] {
            let c = c % CHANNELS;
            if m[(c, a)] == 0.0 {
                m[(c, a)] = CROSSTALK;
            }
        }
    }
    m
}

impl SynthConfig {
    pub fn default_for(dof: usize, seed: u64) -> Self {
        Self {
            mixing: default_mixing(dof),
            baseline_uv: DEFAULT_BASELINE_UV,
            gain_uv: DEFAULT_GAIN_UV,
            noise_band_hz: DEFAULT_NOISE_BAND_HZ,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn dof(&self) -> usize {
        self.mixing.cols() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.mixing.shape();
        if rows != CHANNELS || cols == 0 || cols % 2 != 0 {
            bail!(
                InvalidArgument,
                "mixing must be {CHANNELS} × 2·DOF, got {rows} × {cols}"
            );
        }
        if self
            .mixing
            .as_slice()
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            bail!(
                InvalidArgument,
                "mixing entries must be finite and nonnegative"
            );
        }
        if !(self.baseline_uv >= 0.0) || !self.baseline_uv.is_finite() {
            bail!(
                InvalidArgument,
                "baseline must be >= 0 µV, got {}",
                self.baseline_uv
            );
        }
        if !(self.gain_uv > 0.0) || !self.gain_uv.is_finite() {
            bail!(InvalidArgument, "gain must be > 0 µV, got {}", self.gain_uv);
        }
        let (lo, hi) = self.noise_band_hz;
        let nyquist = f64::from(SAMPLE_RATE_HZ) / 2.0;
        if !(lo > 0.0 && lo < hi && hi < nyquist) {
            bail!(
                InvalidArgument,
                "noise band ({lo}, {hi}) Hz must lie inside (0, {nyquist})"
            );
        }
        Ok(())
    }
}

/// Streaming generator; one instance per session.
#[derive(Debug, Clone)]
pub struct EmgSynth {
    cfg: SynthConfig,
    rngs: Vec<ChaCha8Rng>,
    shaping: FilterCascade,
    noise_gain: f64,
    activation: Vec<f64>,
    envelope: Vec<f64>,
    t: u64,
}

/// Band-pass shaping cascade for the noise carrier.
fn noise_filter(band: (f64, f64)) -> Result<FilterCascade> {
    let fs = f64::from(SAMPLE_RATE_HZ);
    let hp = design_butterworth(&FilterSpec::highpass(NOISE_FILTER_ORDER, band.0, fs))?;
    let lp = design_butterworth(&FilterSpec::lowpass(NOISE_FILTER_ORDER, band.1, fs))?;
    Ok(hp.then(&lp))
}

/// RMS gain of the shaping filter for unit white noise: sqrt(Σ h[n]²).
fn white_noise_gain(filter: &FilterCascade) -> Result<f64> {
    let mut f = filter.with_channels(1)?;
    let mut impulse = vec![0.0; 1 << 15];
    impulse[0] = 1.0;
    f.process_signal(&mut impulse);
    Ok(libm::sqrt(impulse.iter().map(|h| h * h).sum()))
}

impl EmgSynth {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let shaping = noise_filter(cfg.noise_band_hz)?;
        let noise_gain = 1.0 / white_noise_gain(&shaping)?;
        let rngs = (0..CHANNELS)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(c as u64);
                rng
            })
            .collect();
        let mut synth = Self {
            cfg: cfg.clone(),
            rngs,
            shaping: shaping.with_channels(CHANNELS)?,
            noise_gain,
            activation: vec![0.0; cfg.mixing.cols()],
            envelope: vec![0.0; CHANNELS],
            t: 0,
        };
        let mut scratch = [0.0; CHANNELS];
        for _ in 0..NOISE_BURN_IN {
            synth.draw_noise(&mut scratch);
        }
        Ok(synth)
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    fn draw_noise(&mut self, out: &mut [f64; CHANNELS]) {
        for (o, rng) in out.iter_mut().zip(self.rngs.iter_mut()) {
            *o = StandardNormal.sample(rng);
        }
        self.shaping.process_in_place(out);
        out.iter_mut().for_each(|v| *v *= self.noise_gain);
    }

    /// Next 1 kHz frame for the current kinematic position `x` (one value
    /// per DOF).
    pub fn next_frame(&mut self, x: &[f64]) -> RawFrame {
        assert_eq!(x.len(), self.cfg.dof(), "kinematic width mismatch");
        for (d, v) in x.iter().enumerate() {
            self.activation[2 * d] = v.max(0.0);
            self.activation[2 * d + 1] = (-v).max(0.0);
        }
        self.cfg
            .mixing
            .mul_vec_into(&self.activation, &mut self.envelope);
        let mut frame = RawFrame::zeros(self.t);
        self.draw_noise(&mut frame.samples);
        for (s, e) in frame.samples.iter_mut().zip(&self.envelope) {
            *s *= self.cfg.baseline_uv + self.cfg.gain_uv * e;
        }
        self.t += 1;
        frame
    }

    /// Frames for a 30 Hz trajectory, holding each kinematic frame across
    /// the samples of its feature tick.
    pub fn generate(&mut self, kinematics: &Trajectory) -> Result<Vec<RawFrame>> {
        if kinematics.dof() != self.cfg.dof() {
            bail!(
                InvalidArgument,
                "trajectory has {} DOFs, mixing expects {}",
                kinematics.dof(),
                self.cfg.dof()
            );
        }
        let sched = TickScheduler::new(SAMPLE_RATE_HZ, FEATURE_RATE_HZ)?;
        let n = samples_for_frames(kinematics.len());
        let mut out = Vec::with_capacity(n as usize);
        for s in 0..n {
            let k = sched.tick_of_sample(s) as usize;
            out.push(self.next_frame(kinematics.frame(k)));
        }
        Ok(out)
    }
}

/// 1 kHz samples spanned by `frames` feature ticks.
pub fn samples_for_frames(frames: usize) -> u64 {
    frames as u64 * u64::from(SAMPLE_RATE_HZ) / u64::from(FEATURE_RATE_HZ)
}

pub fn synth_emg(kinematics: &Trajectory, cfg: &SynthConfig) -> Result<Vec<RawFrame>> {
    EmgSynth::new(cfg)?.generate(kinematics)
}
