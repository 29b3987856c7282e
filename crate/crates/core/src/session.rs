//! Whole-session driver: synthesize training and target runs, fit a
//! decoder per condition, decode the ABBA target runs and score them.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{compute_rmse, rmse_per_dof, RmseReport, TrialRmse};
use crate::error::{bail, Result};
use crate::filter::RawFrame;
use crate::kalman::train_kalman;
use crate::linalg::Matrix;
use crate::pipeline::{Decoder, FeatureExtractor, StreamingDecoder};
use crate::protocol::{
    build_target_run, build_target_set, build_training_set, Condition, Dof, ProtocolRun,
    SegmentKind, SessionSchedule,
};
use crate::select::gram_schmidt_select;
use crate::synth::{synth_emg, SynthConfig};
use crate::trajectory::Trajectory;
use crate::DEFAULT_SELECTION_K;

/// Smoothed feature frames of one recording, one row per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub values: Matrix,
    /// Per-row filter warm-up flag; flagged rows are kept but not trained on.
    pub warmup: Vec<bool>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }
}

pub fn extract_features(raw: &[RawFrame]) -> Result<FeatureSet> {
    let mut fx = FeatureExtractor::new()?;
    let n = fx.n_features();
    let mut data = Vec::with_capacity(raw.len() / 33 * n + n);
    let mut warmup = Vec::with_capacity(raw.len() / 33 + 1);
    for frame in raw {
        if let Some(tick) = fx.push(frame)? {
            data.extend_from_slice(tick.values);
            warmup.push(tick.warmup);
        }
    }
    Ok(FeatureSet {
        values: Matrix::from_vec(warmup.len(), n, data),
        warmup,
    })
}

/// Fits baseline, selection and Kalman model on one training recording.
///
/// The baseline averages rest frames outside warm-up; selection and
/// training use every frame outside warm-up.
pub fn fit_decoder(
    features: &FeatureSet,
    kinematics: &Trajectory,
    rest_mask: &[bool],
    k: usize,
) -> Result<Decoder> {
    let t = features.len();
    if kinematics.len() != t || rest_mask.len() != t {
        bail!(
            InvalidArgument,
            "{t} feature frames but {} kinematic frames and {} rest labels",
            kinematics.len(),
            rest_mask.len()
        );
    }
    let rows: Vec<usize> = (0..t).filter(|&i| !features.warmup[i]).collect();
    if rows.windows(2).any(|w| w[1] != w[0] + 1) {
        bail!(Data, "warm-up frames must form a prefix of the recording");
    }
    let baseline = crate::features::BaselineProfile::estimate(
        rows.iter()
            .filter(|&&i| rest_mask[i])
            .map(|&i| features.values.row(i)),
    )?;

    let f = features.n_features();
    let mut centered = Matrix::zeros(rows.len(), f);
    let mut kin = Matrix::zeros(rows.len(), kinematics.dof());
    for (r, &i) in rows.iter().enumerate() {
        centered.row_mut(r).copy_from_slice(features.values.row(i));
        baseline.subtract_in_place(centered.row_mut(r));
        kin.row_mut(r).copy_from_slice(kinematics.frame(i));
    }
    let selection = gram_schmidt_select(&centered, &kin, k)?;
    let reduced = Matrix::from_fn(rows.len(), selection.k(), |r, c| {
        centered[(r, selection.order[c])]
    });
    let trained = train_kalman(&kin, &reduced)?;
    let mut decoder = Decoder::new(baseline, selection, trained.model)?;
    decoder.warnings = trained.warnings;
    Ok(decoder)
}

/// Decodes a precomputed feature set from rest.
pub fn decode_features(decoder: &Decoder, features: &FeatureSet) -> Result<Trajectory> {
    let mut z = vec![0.0; decoder.selection.k()];
    let mut state = crate::kalman::DecodeState::new(&decoder.model);
    let shaping = crate::kalman::OutputShaping::default();
    let mut frame = vec![0.0; decoder.dof()];
    let mut out = Trajectory::with_capacity(decoder.dof(), features.len());
    for i in 0..features.len() {
        decoder.observe_into(features.values.row(i), &mut z)?;
        state.step(&decoder.model, &z)?;
        shaping.apply_into(state.mean(), &mut frame);
        out.push(&frame);
    }
    Ok(out)
}

/// Streams raw frames through a fresh [`StreamingDecoder`].
pub fn decode_raw(decoder: &Decoder, raw: &[RawFrame]) -> Result<Trajectory> {
    let mut s = StreamingDecoder::new(decoder)?;
    let mut out = Trajectory::with_capacity(decoder.dof(), raw.len() / 33 + 1);
    for frame in raw {
        if let Some(x) = s.push(frame)? {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub dof: usize,
    pub selection_k: usize,
    pub synth: SynthConfig,
    pub schedule: SessionSchedule,
}

impl SessionConfig {
    pub fn default_for(dof: usize, seed: u64) -> Self {
        Self {
            dof,
            selection_k: DEFAULT_SELECTION_K,
            synth: SynthConfig::default_for(dof, seed),
            schedule: SessionSchedule::starting_with(Condition::Banded),
        }
    }

    pub fn seed(&self) -> u64 {
        self.synth.seed
    }

    pub fn validate(&self) -> Result<()> {
        Dof::for_count(self.dof)?;
        self.synth.validate()?;
        if self.synth.dof() != self.dof {
            bail!(
                InvalidArgument,
                "synth mixing drives {} DOFs, session has {}",
                self.synth.dof(),
                self.dof
            );
        }
        if self.selection_k == 0 {
            bail!(InvalidArgument, "selection_k must be at least 1");
        }
        Ok(())
    }
}

/// Independent stream seed for `stream` under a session seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream offsets for [`derive_seed`]: training recordings, target runs and
/// the control shuffle.
pub const TRAINING_STREAM: u64 = 1;
pub const TARGET_STREAM: u64 = 10;
pub const SHUFFLE_STREAM: u64 = 100;

/// One decoded ABBA target run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub index: usize,
    pub condition: Condition,
    pub seed: u64,
    pub protocol: ProtocolRun,
    pub decoded: Trajectory,
    /// Output of the shuffled-pairing control decoder on the same run.
    pub control: Trajectory,
    pub report: RmseReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub config: SessionConfig,
    pub decoders: Vec<(Condition, Decoder)>,
    pub runs: Vec<RunRecord>,
    /// Per-DOF RMSE pooled over every target-trial frame of every run.
    pub per_dof_rmse: Vec<f64>,
    /// Same, for the decoder trained with kinematics shuffled in time.
    pub control_per_dof_rmse: Vec<f64>,
}

impl SessionRecord {
    /// Trial × run RMSE table, rows in target-set order.
    pub fn rmse_table(&self) -> Vec<Vec<f64>> {
        let n = self.runs.first().map_or(0, |r| r.report.per_trial.len());
        (0..n)
            .map(|t| {
                self.runs
                    .iter()
                    .map(|r| r.report.per_trial[t].rmse)
                    .collect()
            })
            .collect()
    }

    pub fn decoder(&self, condition: Condition) -> Option<&Decoder> {
        self.decoders
            .iter()
            .find(|(c, _)| *c == condition)
            .map(|(_, d)| d)
    }
}

/// Frames of `traj` that fall inside target trials.
pub fn trial_frames(run: &ProtocolRun, traj: &Trajectory) -> Trajectory {
    let mut out = Trajectory::new(traj.dof());
    for seg in run.trials() {
        out.extend(&traj.slice(seg.range()));
    }
    out
}

/// Per-trial RMSE (all DOFs pooled) of a decoded target run.
pub fn score_run(run: &ProtocolRun, decoded: &Trajectory) -> Result<RmseReport> {
    let mut per_trial = Vec::new();
    for seg in run.trials() {
        let SegmentKind::Trial { id, category, .. } = &seg.kind else {
            continue;
        };
        let Some(category) = *category else {
            bail!(InvalidArgument, "trial {id} has no target category");
        };
        let rmse = compute_rmse(
            &decoded.slice(seg.range()),
            &run.kinematics.slice(seg.range()),
        )?;
        per_trial.push(TrialRmse {
            trial_id: *id,
            category,
            rmse,
        });
    }
    Ok(RmseReport::from_trials(per_trial))
}

fn fit_condition(cfg: &SessionConfig, stream: u64) -> Result<(ProtocolRun, FeatureSet, Decoder)> {
    let training = build_training_set(cfg.dof)?;
    let synth = cfg.synth.with_seed(derive_seed(cfg.seed(), stream));
    let raw = synth_emg(&training.kinematics, &synth)?;
    let features = extract_features(&raw)?;
    let decoder = fit_decoder(
        &features,
        &training.kinematics,
        &training.rest_mask(),
        cfg.selection_k,
    )?;
    Ok((training, features, decoder))
}

/// Runs the full simulated session: one training recording and decoder per
/// condition, four ABBA target runs, plus a negative control whose decoder
/// is fit on temporally shuffled kinematics.
pub fn simulate_session(cfg: &SessionConfig) -> Result<SessionRecord> {
    cfg.validate()?;
    let dofs = Dof::for_count(cfg.dof)?;
    let first = cfg.schedule.training_first;

    let mut decoders = Vec::with_capacity(2);
    let mut control = None;
    for (i, condition) in [first, first.other()].into_iter().enumerate() {
        let (training, features, decoder) = fit_condition(cfg, TRAINING_STREAM + i as u64)?;
        if control.is_none() {
            let mut perm: Vec<usize> = (0..training.frames()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed(), SHUFFLE_STREAM));
            perm.shuffle(&mut rng);
            let mut shuffled = Trajectory::with_capacity(cfg.dof, perm.len());
            for &p in &perm {
                shuffled.push(training.kinematics.frame(p));
            }
            control = Some(fit_decoder(
                &features,
                &shuffled,
                &training.rest_mask(),
                cfg.selection_k,
            )?);
        }
        decoders.push((condition, decoder));
    }
    let control = control.expect("first condition fits the control");

    let target_set = build_target_set();
    let mut runs = Vec::with_capacity(4);
    let mut target_trials = Trajectory::new(cfg.dof);
    let mut decoded_trials = Trajectory::new(cfg.dof);
    let mut control_trials = Trajectory::new(cfg.dof);
    for (index, &condition) in cfg.schedule.conditions.iter().enumerate() {
        let protocol = build_target_run(&target_set, dofs);
        let seed = derive_seed(cfg.seed(), TARGET_STREAM + index as u64);
        let raw = synth_emg(&protocol.kinematics, &cfg.synth.with_seed(seed))?;
        let decoder = &decoders
            .iter()
            .find(|(c, _)| *c == condition)
            .expect("both conditions fitted")
            .1;
        let decoded = decode_raw(decoder, &raw)?;
        let control_out = decode_raw(&control, &raw)?;
        let report = score_run(&protocol, &decoded)?;
        target_trials.extend(&trial_frames(&protocol, &protocol.kinematics));
        decoded_trials.extend(&trial_frames(&protocol, &decoded));
        control_trials.extend(&trial_frames(&protocol, &control_out));
        runs.push(RunRecord {
            index,
            condition,
            seed,
            protocol,
            decoded,
            control: control_out,
            report,
        });
    }

    Ok(SessionRecord {
        config: cfg.clone(),
        decoders,
        per_dof_rmse: rmse_per_dof(&decoded_trials, &target_trials)?,
        control_per_dof_rmse: rmse_per_dof(&control_trials, &target_trials)?,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..20).map(|s| derive_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn fit_rejects_length_mismatch() {
        let fs = FeatureSet {
            values: Matrix::zeros(10, 528),
            warmup: vec![false; 10],
        };
        let kin = Trajectory::zeros(3, 9);
        assert!(fit_decoder(&fs, &kin, &[true; 10], 4).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::default_for(3, 1).validate().is_ok());
        let mut cfg = SessionConfig::default_for(3, 1);
        cfg.dof = 6;
        assert!(cfg.validate().is_err());
        cfg.dof = 4;
        assert!(cfg.validate().is_err());
    }
}
