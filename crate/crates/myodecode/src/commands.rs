//! Subcommand implementations. Each returns what it wrote so callers and
//! tests can inspect results without re-reading files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use myodecode_core::analysis::{
    bbt_score, condition_compare, BbtVariant, BlockTestScore, Category, CategoryDecision,
    ParticipantRmse,
};
use myodecode_core::pipeline::Decoder;
use myodecode_core::protocol::{
    build_target_run, build_target_set, build_training_set, Condition, Dof, SessionSchedule,
    TARGET_LEVEL, TRIALS_3DOF, TRIALS_6DOF,
};
use myodecode_core::session::{
    decode_raw, derive_seed, extract_features, fit_decoder, score_run, TARGET_STREAM,
};
use myodecode_core::synth::{samples_for_frames, synth_emg};
use myodecode_core::FEATURE_RATE_HZ;

use crate::config::{sha256_hex, Manifest, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{self, ReportRow};
use crate::threads::parallel_map;

/// Held-out RMSE limit per DOF fixed by the calibration run; recorded in
/// task manifests.
pub const RMSE_THRESHOLD: f64 = 0.10;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn base_manifest(command: &str) -> Manifest {
    let mut m = Manifest::new();
    m.set("tool", env!("CARGO_PKG_NAME"))
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("command", command);
    m
}

fn dof_names(dofs: &[Dof]) -> String {
    dofs.iter().map(|d| d.name()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub frames: usize,
    pub samples: usize,
    pub manifest: Manifest,
}

/// Synthesizes a training session: raw EMG, labeled kinematics, manifest.
pub fn synth(cfg: &RunConfig, out: &Path, binary: bool) -> Result<SynthOutput> {
    cfg.validate()?;
    ensure_dir(out)?;
    let run = build_training_set(cfg.dof)?;
    let raw = synth_emg(&run.kinematics, &cfg.synth())?;
    if binary {
        formats::write_raw_bin(&out.join(formats::RAW_BIN), &raw)?;
    } else {
        formats::write_raw_csv(&out.join(formats::RAW_CSV), &raw)?;
    }
    formats::write_kinematics_csv(&out.join(formats::KINEMATICS_CSV), &run)?;

    let trials = if cfg.dof == 3 {
        TRIALS_3DOF
    } else {
        TRIALS_6DOF
    };
    let mut m = base_manifest("synth");
    m.record_config(cfg)
        .set("protocol", format!("training-{}dof", cfg.dof))
        .set("dofs", dof_names(&run.dofs))
        .set(
            "trial_duration_s",
            format!("{:.1}", run.trial_profile.duration_s()),
        )
        .set("trial_frames", run.trial_profile.frames())
        .set("trials_per_movement", trials)
        .set("extension_trials", "mirrored")
        .set("frames", run.frames())
        .set("samples", raw.len())
        .set("feature_rate_hz", FEATURE_RATE_HZ);
    m.write(&out.join(formats::MANIFEST))?;
    Ok(SynthOutput {
        frames: run.frames(),
        samples: raw.len(),
        manifest: m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub decoder: Decoder,
    pub model_hash: String,
}

/// Fits a decoder on a session directory and writes the model artifacts.
pub fn train(session: &Path, out: &Path, k: usize) -> Result<TrainOutput> {
    let kin_path = session.join(formats::KINEMATICS_CSV);
    let kin = formats::read_kinematics_csv(&kin_path)?;
    let raw = formats::read_raw_dir(session)?;
    let expected = samples_for_frames(kin.trajectory.len()) as usize;
    if raw.len() != expected {
        return Err(Error::format(
            session,
            format!(
                "raw recording has {} frames, kinematics need {expected}; file truncated?",
                raw.len()
            ),
        ));
    }
    let features = extract_features(&raw)?;
    let decoder = fit_decoder(&features, &kin.trajectory, &kin.rest, k)?;

    ensure_dir(out)?;
    let mut centered = features.clone();
    for r in 0..centered.len() {
        decoder
            .baseline
            .subtract_in_place(centered.values.row_mut(r));
    }
    formats::write_features_csv(&out.join(formats::FEATURES_CSV), &centered, true)?;
    formats::write_baseline_csv(&out.join(formats::BASELINE_CSV), &decoder.baseline)?;
    formats::write_selection_csv(&out.join(formats::SELECTION_CSV), &decoder.selection)?;
    let bytes = formats::write_model_bin(&out.join(formats::MODEL_BIN), &decoder.model)?;
    formats::write_model_csv(&out.join(formats::MODEL_CSV), &decoder.model)?;
    let model_hash = sha256_hex(&bytes);

    let mut m = Manifest::read_or_new(&session.join(formats::MANIFEST))?;
    m.set("command", "train")
        .set("dofs", dof_names(&kin.dofs))
        .set("selection_k", k)
        .set(
            "train_frames",
            features.warmup.iter().filter(|w| !**w).count(),
        )
        .set(
            "warmup_frames",
            features.warmup.iter().filter(|w| **w).count(),
        )
        .set("model_hash", &model_hash)
        .set(
            "train_warnings",
            decoder
                .warnings
                .iter()
                .map(|w| format!("{w:?}"))
                .collect::<Vec<_>>()
                .join(";"),
        );
    m.write(&out.join(formats::MANIFEST))?;
    Ok(TrainOutput {
        decoder,
        model_hash,
    })
}

fn model_dofs(model_dir: &Path, decoder: &Decoder) -> Result<Vec<Dof>> {
    let m = Manifest::read_or_new(&model_dir.join(formats::MANIFEST))?;
    if let Some(names) = m.get("dofs") {
        let dofs = names
            .split(';')
            .map(|n| {
                Dof::from_name(n)
                    .ok_or_else(|| Error::format(model_dir, format!("unknown DOF {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if dofs.len() == decoder.dof() {
            return Ok(dofs);
        }
    }
    Ok(Dof::for_count(decoder.dof())?.to_vec())
}

/// Decodes a session's raw recording; returns per-DOF RMSE when the
/// session carries matching kinematics.
pub fn decode(model_dir: &Path, session: &Path, out: &Path) -> Result<Option<Vec<f64>>> {
    let decoder = formats::read_decoder(model_dir)?;
    let dofs = model_dofs(model_dir, &decoder)?;
    let raw = formats::read_raw_dir(session)?;
    let decoded = decode_raw(&decoder, &raw)?;
    ensure_dir(out)?;
    formats::write_trajectory_csv(&out.join(formats::DECODED_CSV), &dofs, &decoded)?;
    let kin_path = session.join(formats::KINEMATICS_CSV);
    if !kin_path.exists() {
        return Ok(None);
    }
    let kin = formats::read_kinematics_csv(&kin_path)?;
    if kin.trajectory.len() != decoded.len() || kin.trajectory.dof() != decoded.dof() {
        return Ok(None);
    }
    Ok(Some(myodecode_core::analysis::rmse_per_dof(
        &decoded,
        &kin.trajectory,
    )?))
}

/// Runs the nine-trial target task once, or four times in ABBA order, and
/// writes the per-trial report.
pub fn task(
    model_dir: &Path,
    out: &Path,
    cfg: &RunConfig,
    abba: Option<Condition>,
    threads: usize,
) -> Result<Vec<ReportRow>> {
    let decoder = formats::read_decoder(model_dir)?;
    if decoder.dof() != cfg.dof {
        return Err(Error::Usage(format!(
            "model decodes {} DOFs but --dof is {}",
            decoder.dof(),
            cfg.dof
        )));
    }
    cfg.validate()?;
    let dofs = model_dofs(model_dir, &decoder)?;
    let conditions: Vec<Condition> = match abba {
        Some(first) => SessionSchedule::starting_with(first).conditions.to_vec(),
        None => vec![cfg.condition],
    };
    let set = build_target_set();
    let protocol = build_target_run(&set, &dofs);
    let synth = cfg.synth();

    let runs: Vec<(usize, Condition)> = conditions.into_iter().enumerate().collect();
    let results = parallel_map(&runs, threads, |&(i, _)| -> Result<_> {
        let seed = derive_seed(cfg.seed, TARGET_STREAM + i as u64);
        let raw = synth_emg(&protocol.kinematics, &synth.with_seed(seed))?;
        let decoded = decode_raw(&decoder, &raw)?;
        let report = score_run(&protocol, &decoded)?;
        Ok((decoded, report))
    });

    ensure_dir(out)?;
    let mut rows = Vec::new();
    for (&(run, condition), result) in runs.iter().zip(results) {
        let (decoded, report) = result?;
        formats::write_trajectory_csv(&out.join(format!("decoded_run{run}.csv")), &dofs, &decoded)?;
        for t in &report.per_trial {
            rows.push(ReportRow {
                participant: cfg.participant,
                condition,
                run,
                trial_id: t.trial_id,
                label: set[t.trial_id].label(),
                category: t.category,
                rmse: t.rmse,
            });
        }
    }
    formats::write_report_csv(&out.join(formats::REPORT_CSV), &rows)?;
    formats::write_summary_csv(&out.join(formats::SUMMARY_CSV), &rows)?;
    formats::write_trajectory_csv(
        &out.join(formats::KINEMATICS_CSV),
        &dofs,
        &protocol.kinematics,
    )?;

    let model_bytes = std::fs::read(model_dir.join(formats::MODEL_BIN))
        .map_err(|e| Error::io(&model_dir.join(formats::MODEL_BIN), e))?;
    let mut m = base_manifest("task");
    m.record_config(cfg)
        .set("protocol", "target-set")
        .set("dofs", dof_names(&dofs))
        .set("target_trials", set.len())
        .set("target_level", TARGET_LEVEL)
        .set(
            "runs",
            runs.iter()
                .map(|(_, c)| c.name())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("model_hash", sha256_hex(&model_bytes))
        .set("rmse_threshold", RMSE_THRESHOLD);
    m.write(&out.join(formats::MANIFEST))?;
    Ok(rows)
}

/// Per-participant category means over every trial in `rows`.
pub fn participant_means(rows: &[&ReportRow]) -> Result<Vec<ParticipantRmse>> {
    let mut by: BTreeMap<u32, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.participant).or_default().push(r);
    }
    by.into_iter()
        .map(|(participant, rs)| {
            let mean = |cat: Category| -> Result<f64> {
                let v: Vec<f64> = rs
                    .iter()
                    .filter(|r| formats::in_category(r.category, cat))
                    .map(|r| r.rmse)
                    .collect();
                if v.is_empty() {
                    return Err(Error::Usage(format!(
                        "participant {participant} has no {} trials",
                        cat.name()
                    )));
                }
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            };
            Ok(ParticipantRmse {
                participant,
                digit_only: mean(Category::DigitOnly)?,
                digit_wrist: mean(Category::DigitWrist)?,
                total: mean(Category::Total)?,
            })
        })
        .collect()
}

/// Compares two report files participant by participant, or with
/// `split_condition`, the banded and free runs pooled from every report.
pub fn stats(
    reports: &[PathBuf],
    split_condition: bool,
    alpha: f64,
    out: &Path,
) -> Result<Vec<CategoryDecision>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let loaded = reports
        .iter()
        .map(|p| formats::read_report_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let (a, b): (Vec<&ReportRow>, Vec<&ReportRow>) = if split_condition {
        if loaded.is_empty() {
            return Err(Error::Usage("stats needs at least one report".into()));
        }
        let all: Vec<&ReportRow> = loaded.iter().flatten().collect();
        (
            all.iter()
                .copied()
                .filter(|r| r.condition == Condition::Banded)
                .collect(),
            all.iter()
                .copied()
                .filter(|r| r.condition == Condition::Free)
                .collect(),
        )
    } else {
        if loaded.len() != 2 {
            return Err(Error::Usage(format!(
                "stats compares exactly two reports (or use --split-condition), got {}",
                loaded.len()
            )));
        }
        (loaded[0].iter().collect(), loaded[1].iter().collect())
    };
    let (pa, pb) = (participant_means(&a)?, participant_means(&b)?);
    let ids = |p: &[ParticipantRmse]| p.iter().map(|x| x.participant).collect::<Vec<_>>();
    if ids(&pa) != ids(&pb) {
        return Err(Error::Usage(format!(
            "unpaired inputs: participants {:?} vs {:?}",
            ids(&pa),
            ids(&pb)
        )));
    }
    if pa.len() < 2 {
        return Err(Error::Usage(format!(
            "paired comparison needs at least 2 participants, got {}",
            pa.len()
        )));
    }
    let decisions = condition_compare(&pa, &pb, alpha)?;
    ensure_dir(out)?;
    formats::write_decisions_csv(&out.join(formats::DECISIONS_CSV), &decisions)?;
    Ok(decisions)
}

pub fn bbt(blocks: u32, elapsed_s: f64, variant: BbtVariant) -> Result<BlockTestScore> {
    Ok(bbt_score(blocks, elapsed_s, variant)?)
}
