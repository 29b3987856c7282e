use myodecode_core::protocol::{
    abba_schedule, build_target_run, build_target_set, build_training_set, make_trapezoid,
    Condition, Dof, SegmentKind, TrapezoidProfile, TrialCategory, TARGET_LEVEL,
};
use myodecode_core::synth::{synth_emg, SynthConfig};
use myodecode_core::{Trajectory, CHANNELS};
use proptest::prelude::*;

#[test]
fn training_set_arithmetic() {
    let three = build_training_set(3).unwrap();
    assert_eq!(three.trial_profile.frames(), 192);
    assert!((three.trial_profile.duration_s() - 6.4).abs() < 1e-12);
    assert_eq!(three.trials().count(), 3 * 2 * 5);
    assert_eq!(three.frames(), 60 + 30 * (192 + 60));

    let six = build_training_set(6).unwrap();
    assert!((six.trial_profile.duration_s() - 4.4).abs() < 1e-12);
    assert_eq!(six.trial_profile.frames(), 132);
    assert_eq!(six.trials().count(), 6 * 2 * 4);
    assert_eq!(six.frames(), 60 + 48 * (132 + 60));
}

#[test]
fn target_set_composition() {
    let set = build_target_set();
    assert_eq!(set.len(), 9);
    let digit_only = set
        .iter()
        .filter(|t| t.category() == TrialCategory::DigitOnly)
        .count();
    assert_eq!(digit_only, 3);
    assert!(set
        .iter()
        .all(|t| t.movements.iter().all(|(_, l)| *l == TARGET_LEVEL)));

    let run = build_target_run(&set, Dof::for_count(6).unwrap());
    for seg in run.trials() {
        let peak = run
            .kinematics
            .slice(seg.range())
            .as_slice()
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!((peak - TARGET_LEVEL).abs() < 1e-12);
        let SegmentKind::Trial { movements, .. } = &seg.kind else {
            unreachable!()
        };
        assert!(!movements.is_empty());
    }
    // Three-DOF sessions keep the categories but drop the wrist component.
    let three = build_target_run(&set, Dof::for_count(3).unwrap());
    assert_eq!(three.kinematics.dof(), 3);
    assert_eq!(three.trials().count(), 9);
}

#[test]
fn abba_is_palindromic() {
    let s = abba_schedule(Condition::Free, Condition::Banded).unwrap();
    let mut rev = s.conditions;
    rev.reverse();
    assert_eq!(s.conditions, rev);
    assert_ne!(s.conditions[0], s.conditions[1]);
    assert!(abba_schedule(Condition::Free, Condition::Free).is_err());
}

proptest! {
    #[test]
    fn trapezoid_frame_count_and_range(hold in 0.0..10.0f64, amp in 0.05..1.0f64) {
        let p = TrapezoidProfile::new(hold, amp);
        let t = make_trapezoid(&p).unwrap();
        prop_assert_eq!(t.len(), (p.duration_s() * 30.0).round() as usize);
        prop_assert!(t.as_slice().iter().all(|v| (0.0..=amp).contains(v)));
    }
}

fn channel_mav(frames: &[myodecode_core::filter::RawFrame], c: usize) -> f64 {
    frames.iter().map(|f| f.samples[c].abs()).sum::<f64>() / frames.len() as f64
}

#[test]
fn doubling_activation_doubles_envelope() {
    let e_abs = (2.0 / std::f64::consts::PI).sqrt();
    let cfg = SynthConfig::default_for(3, 4);
    let hold = |x: f64| Trajectory::from_data(3, [x, 0.0, 0.0].repeat(300)).unwrap();
    let one = synth_emg(&hold(0.3), &cfg).unwrap();
    let two = synth_emg(&hold(0.6), &cfg.with_seed(5)).unwrap();
    let driven: Vec<usize> = (0..CHANNELS)
        .filter(|&c| cfg.mixing[(c, 0)] == 1.0)
        .collect();
    assert!(!driven.is_empty());
    for c in driven {
        let base = cfg.baseline_uv * e_abs;
        let ratio = (channel_mav(&two, c) - base) / (channel_mav(&one, c) - base);
        assert!((ratio - 2.0).abs() < 0.1, "channel {c}: ratio {ratio}");
    }
}

#[test]
fn amplitude_is_stationary_during_holds() {
    let cfg = SynthConfig::default_for(3, 8);
    let frames = synth_emg(
        &Trajectory::from_data(3, [0.0, -0.5, 0.0].repeat(600)).unwrap(),
        &cfg,
    )
    .unwrap();
    let (a, b) = frames.split_at(frames.len() / 2);
    for c in 0..CHANNELS {
        let rel = channel_mav(a, c) / channel_mav(b, c) - 1.0;
        assert!(rel.abs() < 0.05, "channel {c}: {rel}");
    }
}
