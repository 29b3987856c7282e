//! Mean-absolute-value feature bank.
//!
//! Every single-ended channel plus every unordered channel pair (as a
//! sample-wise difference) yields one feature, `n + n(n-1)/2` in total: 528
//! for a 32-channel sleeve. Features are sampled at 30 Hz from a 1 kHz
//! stream, so windows alternate between 33 and 34 samples.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::filter::FilteredFrame;

/// Boxcar width in 30 Hz frames (300 ms).
pub const BOXCAR_FRAMES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureDescriptor {
    SingleEnded(usize),
    /// Difference of channels `i < j`.
    Differential(usize, usize),
}

/// Canonical feature order: single-ended `0..n`, then pairs `(i, j)`
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndexMap {
    n_channels: usize,
    entries: Vec<FeatureDescriptor>,
}

pub fn feature_count(n_channels: usize) -> usize {
    n_channels + n_channels * n_channels.saturating_sub(1) / 2
}

pub fn enumerate_features(n_channels: usize) -> Result<FeatureIndexMap> {
    if n_channels == 0 {
        bail!(InvalidArgument, "feature bank needs at least one channel");
    }
    let mut entries = Vec::with_capacity(feature_count(n_channels));
    entries.extend((0..n_channels).map(FeatureDescriptor::SingleEnded));
    for i in 0..n_channels {
        for j in (i + 1)..n_channels {
            entries.push(FeatureDescriptor::Differential(i, j));
        }
    }
    Ok(FeatureIndexMap {
        n_channels,
        entries,
    })
}

impl FeatureIndexMap {
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureDescriptor] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<FeatureDescriptor> {
        self.entries.get(index).copied()
    }

    /// Closed-form inverse of the canonical order.
    pub fn index_of(&self, desc: FeatureDescriptor) -> Option<usize> {
        let n = self.n_channels;
        match desc {
            FeatureDescriptor::SingleEnded(i) if i < n => Some(i),
            FeatureDescriptor::Differential(i, j) if i < j && j < n => {
                // Pairs starting before row i: sum_{r<i} (n - 1 - r).
                let before = i * (2 * n - i - 1) / 2;
                Some(n + before + (j - i - 1))
            }
            _ => None,
        }
    }
}

/// Smoothed MAV features at one 30 Hz tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub k: u64,
    pub values: Vec<f64>,
}

/// Phase-accumulator tick scheduling: tick `k` closes after sample
/// `floor((k + 1) · fs / rate) - 1`, so windows partition the stream with
/// no gap or overlap.
#[derive(Debug, Clone)]
pub struct TickScheduler {
    fs_hz: u64,
    rate_hz: u64,
    next_tick: u64,
    next_boundary: u64,
    samples_seen: u64,
}

impl TickScheduler {
    pub fn new(fs_hz: u32, rate_hz: u32) -> Result<Self> {
        if fs_hz == 0 || rate_hz == 0 || rate_hz > fs_hz {
            bail!(InvalidArgument, "need 0 < rate ({rate_hz}) <= fs ({fs_hz})");
        }
        let (fs_hz, rate_hz) = (u64::from(fs_hz), u64::from(rate_hz));
        Ok(Self {
            fs_hz,
            rate_hz,
            next_tick: 0,
            next_boundary: fs_hz / rate_hz,
            samples_seen: 0,
        })
    }

    /// Exclusive end sample of tick `k`'s window.
    pub fn boundary(&self, k: u64) -> u64 {
        (k + 1) * self.fs_hz / self.rate_hz
    }

    /// Half-open sample range of tick `k`.
    pub fn window(&self, k: u64) -> core::ops::Range<u64> {
        let start = if k == 0 { 0 } else { self.boundary(k - 1) };
        start..self.boundary(k)
    }

    /// Tick whose window contains sample `n`.
    pub fn tick_of_sample(&self, n: u64) -> u64 {
        // Smallest k with boundary(k) > n, i.e. ceil((n + 1) · rate / fs) - 1.
        ((n + 1) * self.rate_hz).div_ceil(self.fs_hz) - 1
    }

    /// Number of complete ticks in the first `n_samples` samples.
    pub fn ticks_in(&self, n_samples: u64) -> u64 {
        // Ticks with boundary(k) <= n, which is the tick containing sample n.
        self.tick_of_sample(n_samples)
    }

    /// Counts one sample; returns the tick index when it closes a window.
    #[inline]
    pub fn push_sample(&mut self) -> Option<u64> {
        self.samples_seen += 1;
        if self.samples_seen == self.next_boundary {
            let k = self.next_tick;
            self.next_tick += 1;
            self.next_boundary = self.boundary(self.next_tick);
            Some(k)
        } else {
            None
        }
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }
}

/// Streaming MAV accumulator for the canonical feature order.
#[derive(Debug, Clone)]
pub struct MavAccumulator {
    n_channels: usize,
    sums: Vec<f64>,
    count: usize,
}

impl MavAccumulator {
    pub fn new(map: &FeatureIndexMap) -> Self {
        Self {
            n_channels: map.n_channels(),
            sums: vec![0.0; map.len()],
            count: 0,
        }
    }

    #[inline]
    pub fn accumulate(&mut self, samples: &[f64]) {
        let n = self.n_channels;
        assert_eq!(samples.len(), n, "channel count mismatch");
        let (single, diff) = self.sums.split_at_mut(n);
        for (s, x) in single.iter_mut().zip(samples) {
            *s += libm::fabs(*x);
        }
        let mut out = diff.iter_mut();
        for i in 0..n {
            let xi = samples[i];
            // Slice first: zip must stop before pulling an extra output slot.
            for (xj, s) in samples[i + 1..].iter().zip(out.by_ref()) {
                *s += libm::fabs(xi - xj);
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Writes window means into `out` and starts a new window.
    pub fn finish_into(&mut self, out: &mut [f64]) -> Result<()> {
        if self.count == 0 {
            bail!(Sequencing, "MAV window closed with no samples");
        }
        assert_eq!(out.len(), self.sums.len());
        let inv = 1.0 / self.count as f64;
        for (o, s) in out.iter_mut().zip(self.sums.iter_mut()) {
            *o = *s * inv;
            *s = 0.0;
        }
        self.count = 0;
        Ok(())
    }
}

/// MAV of one window of filtered frames.
pub fn compute_mav(
    k: u64,
    window: &[FilteredFrame],
    map: &FeatureIndexMap,
) -> Result<FeatureFrame> {
    if window.is_empty() {
        bail!(Sequencing, "MAV window for tick {k} is empty");
    }
    let mut acc = MavAccumulator::new(map);
    for frame in window {
        acc.accumulate(&frame.samples[..map.n_channels()]);
    }
    let mut values = vec![0.0; map.len()];
    acc.finish_into(&mut values)?;
    Ok(FeatureFrame { k, values })
}

/// Overlapping boxcar over the last `width` frames; during warm-up the mean
/// covers only the frames seen so far.
#[derive(Debug, Clone)]
pub struct BoxcarSmoother {
    width: usize,
    n_features: usize,
    ring: Vec<f64>,
    filled: usize,
    pos: usize,
}

impl BoxcarSmoother {
    pub fn new(width: usize, n_features: usize) -> Result<Self> {
        if width == 0 {
            bail!(InvalidArgument, "boxcar width must be at least 1");
        }
        Ok(Self {
            width,
            n_features,
            ring: vec![0.0; width * n_features],
            filled: 0,
            pos: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn reset(&mut self) {
        self.filled = 0;
        self.pos = 0;
    }

    pub fn push_into(&mut self, input: &[f64], out: &mut [f64]) {
        let f = self.n_features;
        assert_eq!(input.len(), f);
        assert_eq!(out.len(), f);
        self.ring[self.pos * f..(self.pos + 1) * f].copy_from_slice(input);
        self.pos = (self.pos + 1) % self.width;
        self.filled = (self.filled + 1).min(self.width);
        // Direct summation each frame; no running-sum drift.
        out.iter_mut().for_each(|o| *o = 0.0);
        for slot in 0..self.filled {
            for (o, v) in out.iter_mut().zip(&self.ring[slot * f..(slot + 1) * f]) {
                *o += v;
            }
        }
        let inv = 1.0 / self.filled as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    pub fn push(&mut self, frame: &FeatureFrame) -> FeatureFrame {
        let mut values = vec![0.0; self.n_features];
        self.push_into(&frame.values, &mut values);
        FeatureFrame { k: frame.k, values }
    }
}

/// Per-feature rest means.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile {
    pub means: Vec<f64>,
    pub n_frames: usize,
}

impl BaselineProfile {
    pub fn estimate<'a, I>(rest_frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rest_frames.into_iter();
        let Some(first) = iter.next() else {
            bail!(InvalidArgument, "baseline needs at least one rest frame");
        };
        let mut sums = first.to_vec();
        let mut n = 1usize;
        for frame in iter {
            if frame.len() != sums.len() {
                bail!(
                    InvalidArgument,
                    "rest frame has {} features, expected {}",
                    frame.len(),
                    sums.len()
                );
            }
            sums.iter_mut().zip(frame).for_each(|(s, v)| *s += v);
            n += 1;
        }
        let inv = 1.0 / n as f64;
        sums.iter_mut().for_each(|s| *s *= inv);
        Ok(Self {
            means: sums,
            n_frames: n,
        })
    }

    pub fn from_frames(rest_frames: &[FeatureFrame]) -> Result<Self> {
        Self::estimate(rest_frames.iter().map(|f| f.values.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    #[inline]
    pub fn subtract_in_place(&self, values: &mut [f64]) {
        assert_eq!(values.len(), self.means.len());
        values
            .iter_mut()
            .zip(&self.means)
            .for_each(|(v, m)| *v -= m);
    }

    #[inline]
    pub fn add_in_place(&self, values: &mut [f64]) {
        assert_eq!(values.len(), self.means.len());
        values
            .iter_mut()
            .zip(&self.means)
            .for_each(|(v, m)| *v += m);
    }

    pub fn subtract(&self, frame: &FeatureFrame) -> FeatureFrame {
        let mut out = frame.clone();
        self.subtract_in_place(&mut out.values);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CHANNELS;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        assert_eq!(enumerate_features(32).unwrap().len(), 528);
        assert_eq!(enumerate_features(4).unwrap().len(), 10);
        let two = enumerate_features(2).unwrap();
        assert_eq!(
            two.entries(),
            &[
                FeatureDescriptor::SingleEnded(0),
                FeatureDescriptor::SingleEnded(1),
                FeatureDescriptor::Differential(0, 1)
            ]
        );
        assert!(enumerate_features(0).is_err());
    }

    proptest! {
        #[test]
        fn index_map_round_trips(n in 1usize..40) {
            let map = enumerate_features(n).unwrap();
            prop_assert_eq!(map.len(), feature_count(n));
            for (i, d) in map.entries().iter().enumerate() {
                prop_assert_eq!(map.index_of(*d), Some(i));
            }
        }

        #[test]
        fn mav_scales_linearly(scale in 0.01f64..100.0, seed in 0u64..1000) {
            let map = enumerate_features(CHANNELS).unwrap();
            let window: Vec<FilteredFrame> = (0..33u64)
                .map(|t| {
                    let mut f = FilteredFrame::zeros(t);
                    for (c, s) in f.samples.iter_mut().enumerate() {
                        *s = libm::sin((seed + t * 37 + c as u64 * 11) as f64);
                    }
                    f
                })
                .collect();
            let scaled: Vec<FilteredFrame> = window
                .iter()
                .map(|f| {
                    let mut g = *f;
                    g.samples.iter_mut().for_each(|s| *s *= scale);
                    g
                })
                .collect();
            let a = compute_mav(0, &window, &map).unwrap();
            let b = compute_mav(0, &scaled, &map).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x * scale - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mav_examples() {
        let map = enumerate_features(CHANNELS).unwrap();
        let window: Vec<FilteredFrame> = (0..33u64)
            .map(|t| {
                let mut f = FilteredFrame::zeros(t);
                f.samples[4] = 5.0;
                f.samples[7] = if t % 2 == 0 { 2.0 } else { -2.0 };
                f.samples[8] = f.samples[7];
                f
            })
            .collect();
        let m = compute_mav(0, &window, &map).unwrap();
        assert_eq!(m.values[4], 5.0);
        assert_eq!(m.values[7], 2.0);
        let d78 = map.index_of(FeatureDescriptor::Differential(7, 8)).unwrap();
        assert_eq!(m.values[d78], 0.0);
        let d47 = map.index_of(FeatureDescriptor::Differential(4, 7)).unwrap();
        assert!((m.values[d47] - (3.0 * 17.0 + 7.0 * 16.0) / 33.0).abs() < 1e-12);
        assert!(compute_mav(0, &[], &map).is_err());
    }

    #[test]
    fn scheduler_windows() {
        let s = TickScheduler::new(1000, 30).unwrap();
        let lens: Vec<u64> = (0..3)
            .map(|k| s.window(k).end - s.window(k).start)
            .collect();
        assert_eq!(lens, [33, 33, 34]);
        for k in 0..600 {
            let total: u64 = (k..k + 3)
                .map(|j| s.window(j).end - s.window(j).start)
                .sum();
            if k % 3 == 0 {
                assert_eq!(total, 100);
            }
            assert_eq!(s.window(k + 1).start, s.window(k).end);
        }
        for n in 0..5000 {
            let k = s.tick_of_sample(n);
            assert!(s.window(k).contains(&n), "sample {n} tick {k}");
        }
    }

    #[test]
    fn scheduler_streaming_counts() {
        let mut s = TickScheduler::new(1000, 30).unwrap();
        let mut ticks = Vec::new();
        for _ in 0..60_000 {
            if let Some(k) = s.push_sample() {
                ticks.push((k, s.samples_seen()));
            }
        }
        assert_eq!(ticks.len(), 1800);
        assert_eq!(ticks[0], (0, 33));
        assert_eq!(ticks[2], (2, 100));
        assert!(ticks.iter().enumerate().all(|(i, (k, _))| *k == i as u64));
        assert_eq!(s.ticks_in(60_000), 1800);
    }

    #[test]
    fn boxcar_examples() {
        let mut b = BoxcarSmoother::new(9, 1).unwrap();
        let mut out = [0.0];
        let mut series = Vec::new();
        for k in 0..30 {
            let x = if k == 10 { 1.0 } else { 0.0 };
            b.push_into(&[x], &mut out);
            series.push(out[0]);
        }
        for (k, v) in series.iter().enumerate() {
            let expect = if (10..=18).contains(&k) {
                1.0 / 9.0
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-15, "frame {k}: {v}");
        }
        let mut c = BoxcarSmoother::new(9, 2).unwrap();
        let mut o = [0.0; 2];
        c.push_into(&[3.0, -1.5], &mut o);
        assert_eq!(o, [3.0, -1.5]);
        for _ in 0..20 {
            c.push_into(&[3.0, -1.5], &mut o);
            assert!((o[0] - 3.0).abs() < 1e-15 && (o[1] + 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn boxcar_warmup_is_running_mean() {
        let mut b = BoxcarSmoother::new(9, 1).unwrap();
        let mut out = [0.0];
        b.push_into(&[2.0], &mut out);
        b.push_into(&[4.0], &mut out);
        assert_eq!(out[0], 3.0);
    }

    #[test]
    fn baseline_examples() {
        let frames = [
            FeatureFrame {
                k: 0,
                values: vec![1.0, 5.0],
            },
            FeatureFrame {
                k: 1,
                values: vec![3.0, 5.0],
            },
        ];
        let p = BaselineProfile::from_frames(&frames).unwrap();
        assert_eq!(p.means, [2.0, 5.0]);
        assert_eq!(p.n_frames, 2);
        let sub = p.subtract(&frames[0]);
        assert_eq!(sub.values, [-1.0, 0.0]);
        let mut back = sub.values.clone();
        p.add_in_place(&mut back);
        assert!(back
            .iter()
            .zip(&frames[0].values)
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(BaselineProfile::from_frames(&[]).is_err());
    }
}
