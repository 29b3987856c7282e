//! Streaming frame path: filter, MAV features, smoothing, selection and
//! Kalman decoding, one 1 kHz frame at a time.
//!
//! All buffers are sized at construction, so pushing frames does not
//! allocate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::features::{
    enumerate_features, BaselineProfile, BoxcarSmoother, FeatureIndexMap, MavAccumulator,
    TickScheduler, BOXCAR_FRAMES,
};
use crate::filter::{FilterCascade, RawFrame, WARMUP_SAMPLES};
use crate::kalman::{DecodeState, KalmanModel, OutputShaping, TrainWarning};
use crate::select::SelectionResult;
use crate::{CHANNELS, FEATURE_RATE_HZ, SAMPLE_RATE_HZ};

/// One smoothed feature frame as emitted by [`FeatureExtractor::push`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTick<'a> {
    pub k: u64,
    pub values: &'a [f64],
    /// The frame's MAV window overlaps the filter warm-up period.
    pub warmup: bool,
}

/// Raw 1 kHz frames in, smoothed 528-wide MAV frames out at 30 Hz.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cascade: FilterCascade,
    scheduler: TickScheduler,
    map: FeatureIndexMap,
    mav: MavAccumulator,
    smoother: BoxcarSmoother,
    raw: Vec<f64>,
    smooth: Vec<f64>,
}

/// Whether tick `k`'s window starts inside the filter warm-up period.
pub fn is_warmup_tick(k: u64) -> bool {
    let sched = TickScheduler::new(SAMPLE_RATE_HZ, FEATURE_RATE_HZ).expect("valid rates");
    sched.window(k).start < WARMUP_SAMPLES
}

impl FeatureExtractor {
    pub fn new() -> Result<Self> {
        let map = enumerate_features(CHANNELS)?;
        let n = map.len();
        Ok(Self {
            cascade: FilterCascade::emg_chain(f64::from(SAMPLE_RATE_HZ), CHANNELS)?,
            scheduler: TickScheduler::new(SAMPLE_RATE_HZ, FEATURE_RATE_HZ)?,
            mav: MavAccumulator::new(&map),
            smoother: BoxcarSmoother::new(BOXCAR_FRAMES, n)?,
            map,
            raw: vec![0.0; n],
            smooth: vec![0.0; n],
        })
    }

    pub fn feature_map(&self) -> &FeatureIndexMap {
        &self.map
    }

    pub fn n_features(&self) -> usize {
        self.map.len()
    }

    /// Feeds one frame; returns the smoothed features when it closes a tick.
    #[inline]
    pub fn push(&mut self, frame: &RawFrame) -> Result<Option<FeatureTick<'_>>> {
        let filtered = self.cascade.process_frame(frame)?;
        self.mav.accumulate(&filtered.samples);
        let Some(k) = self.scheduler.push_sample() else {
            return Ok(None);
        };
        self.mav.finish_into(&mut self.raw)?;
        self.smoother.push_into(&self.raw, &mut self.smooth);
        Ok(Some(FeatureTick {
            k,
            values: &self.smooth,
            warmup: self.scheduler.window(k).start < WARMUP_SAMPLES,
        }))
    }

    /// Unsmoothed MAV values of the most recent tick.
    pub fn last_raw(&self) -> &[f64] {
        &self.raw
    }
}

/// Everything needed to decode: rest baseline, feature subset and model.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub baseline: BaselineProfile,
    pub selection: SelectionResult,
    pub model: KalmanModel,
    pub warnings: Vec<TrainWarning>,
}

impl Decoder {
    pub fn new(
        baseline: BaselineProfile,
        selection: SelectionResult,
        model: KalmanModel,
    ) -> Result<Self> {
        if baseline.len() != selection.n_features {
            bail!(
                InvalidArgument,
                "baseline covers {} features, selection expects {}",
                baseline.len(),
                selection.n_features
            );
        }
        if model.n_obs() != selection.k() {
            bail!(
                InvalidArgument,
                "model observes {} features, selection picks {}",
                model.n_obs(),
                selection.k()
            );
        }
        Ok(Self {
            baseline,
            selection,
            model,
            warnings: Vec::new(),
        })
    }

    pub fn dof(&self) -> usize {
        self.model.dof()
    }

    /// Baseline means of the selected features, in pick order.
    pub fn selected_baseline(&self) -> Vec<f64> {
        self.selection
            .order
            .iter()
            .map(|&i| self.baseline.means[i])
            .collect()
    }

    /// Writes the baseline-subtracted observation for one full feature frame.
    pub fn observe_into(&self, features: &[f64], z: &mut [f64]) -> Result<()> {
        self.selection.apply_into(features, z)?;
        for (v, &i) in z.iter_mut().zip(&self.selection.order) {
            *v -= self.baseline.means[i];
        }
        Ok(())
    }
}

/// Raw frames in, decoded DOF positions out at each 30 Hz tick.
#[derive(Debug, Clone)]
pub struct StreamingDecoder {
    extractor: FeatureExtractor,
    order: Vec<usize>,
    base: Vec<f64>,
    model: KalmanModel,
    state: DecodeState,
    shaping: OutputShaping,
    z: Vec<f64>,
    out: Vec<f64>,
    last_k: Option<u64>,
}

impl StreamingDecoder {
    pub fn new(decoder: &Decoder) -> Result<Self> {
        Self::with_shaping(decoder, OutputShaping::default())
    }

    pub fn with_shaping(decoder: &Decoder, shaping: OutputShaping) -> Result<Self> {
        let extractor = FeatureExtractor::new()?;
        if decoder.selection.n_features != extractor.n_features() {
            bail!(
                InvalidArgument,
                "selection indexes {} features, extractor emits {}",
                decoder.selection.n_features,
                extractor.n_features()
            );
        }
        let d = decoder.dof();
        for stage in [&shaping.deadband, &shaping.gain].into_iter().flatten() {
            if stage.len() != d {
                bail!(
                    InvalidArgument,
                    "output shaping has {} values for {d} DOFs",
                    stage.len()
                );
            }
        }
        Ok(Self {
            extractor,
            order: decoder.selection.order.clone(),
            base: decoder.selected_baseline(),
            state: DecodeState::new(&decoder.model),
            model: decoder.model.clone(),
            shaping,
            z: vec![0.0; decoder.selection.k()],
            out: vec![0.0; d],
            last_k: None,
        })
    }

    /// Feeds one frame; returns clamped positions when a tick closes.
    #[inline]
    pub fn push(&mut self, frame: &RawFrame) -> Result<Option<&[f64]>> {
        let Some(tick) = self.extractor.push(frame)? else {
            return Ok(None);
        };
        for ((z, &i), b) in self.z.iter_mut().zip(&self.order).zip(&self.base) {
            *z = tick.values[i] - b;
        }
        self.last_k = Some(tick.k);
        self.state.step(&self.model, &self.z)?;
        self.shaping.apply_into(self.state.mean(), &mut self.out);
        Ok(Some(&self.out))
    }

    /// Tick index of the most recent output.
    pub fn last_tick(&self) -> Option<u64> {
        self.last_k
    }

    pub fn state(&self) -> &DecodeState {
        &self.state
    }
}
