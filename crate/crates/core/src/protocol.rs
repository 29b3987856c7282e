//! Preprogrammed movement protocols.
//!
//! Training sets are sequences of trapezoidal single-DOF trials separated
//! by labeled rest; the target task is the nine-trial digit/wrist set; ABBA
//! scheduling counterbalances the two wrist conditions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::trajectory::Trajectory;
use crate::FEATURE_RATE_HZ;

pub const RAMP_S: f64 = 0.7;
pub const HOLD_3DOF_S: f64 = 5.0;
pub const HOLD_6DOF_S: f64 = 3.0;
pub const TRIALS_3DOF: usize = 5;
pub const TRIALS_6DOF: usize = 4;
pub const TARGET_HOLD_S: f64 = 5.0;
pub const TARGET_LEVEL: f64 = 0.5;
/// Labeled rest between trials, also used before the first and after the
/// last trial.
pub const REST_GAP_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dof {
    ThumbFe,
    IndexFe,
    MrpFe,
    ThumbAdab,
    WristPs,
    WristFe,
}

impl Dof {
    pub const THREE: [Dof; 3] = [Dof::ThumbFe, Dof::IndexFe, Dof::MrpFe];
    pub const SIX: [Dof; 6] = [
        Dof::ThumbFe,
        Dof::IndexFe,
        Dof::MrpFe,
        Dof::ThumbAdab,
        Dof::WristPs,
        Dof::WristFe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dof::ThumbFe => "thumb_fe",
            Dof::IndexFe => "index_fe",
            Dof::MrpFe => "mrp_fe",
            Dof::ThumbAdab => "thumb_adab",
            Dof::WristPs => "wrist_ps",
            Dof::WristFe => "wrist_fe",
        }
    }

    pub fn from_name(name: &str) -> Option<Dof> {
        Dof::SIX.into_iter().find(|d| d.name() == name)
    }

    /// DOF set for a protocol with `count` degrees of freedom.
    pub fn for_count(count: usize) -> Result<&'static [Dof]> {
        match count {
            3 => Ok(&Dof::THREE),
            6 => Ok(&Dof::SIX),
            _ => bail!(InvalidArgument, "protocols use 3 or 6 DOFs, got {count}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Flexion, abduction, pronation: +1.
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MovementClass {
    pub dof: Dof,
    pub direction: Direction,
}

/// Ramp-hold-ramp position profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    pub rise_s: f64,
    pub hold_s: f64,
    pub fall_s: f64,
    pub amplitude: f64,
    pub rate_hz: u32,
}

impl TrapezoidProfile {
    pub fn new(hold_s: f64, amplitude: f64) -> Self {
        Self {
            rise_s: RAMP_S,
            hold_s,
            fall_s: RAMP_S,
            amplitude,
            rate_hz: FEATURE_RATE_HZ,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.rise_s + self.hold_s + self.fall_s
    }

    pub fn frames(&self) -> usize {
        libm::round(self.duration_s() * f64::from(self.rate_hz)) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let durations_ok = [self.rise_s, self.hold_s, self.fall_s]
            .iter()
            .all(|d| *d > 0.0 && d.is_finite());
        if !durations_ok {
            bail!(
                InvalidArgument,
                "trapezoid durations must be positive: {:?}",
                self
            );
        }
        if !(libm::fabs(self.amplitude) <= 1.0) || self.amplitude == 0.0 || self.rate_hz == 0 {
            bail!(
                InvalidArgument,
                "trapezoid amplitude must be in [-1, 0) or (0, 1], got {}",
                self.amplitude
            );
        }
        Ok(())
    }

    /// Continuous-time position at `t` seconds from trial start.
    pub fn value_at(&self, t: f64) -> f64 {
        let d = self.duration_s();
        let v = if t <= 0.0 || t >= d {
            0.0
        } else if t < self.rise_s {
            t / self.rise_s
        } else if t <= self.rise_s + self.hold_s {
            1.0
        } else {
            (d - t) / self.fall_s
        };
        self.amplitude * v
    }
}

/// Samples a profile at its frame rate as a single-DOF trajectory.
pub fn make_trapezoid(profile: &TrapezoidProfile) -> Result<Trajectory> {
    profile.validate()?;
    let rate = f64::from(profile.rate_hz);
    let data = (0..profile.frames())
        .map(|i| profile.value_at(i as f64 / rate))
        .collect();
    Trajectory::from_data(1, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WristOrientation {
    Neutral,
    Pronation,
    Supination,
}

impl WristOrientation {
    pub const ALL: [WristOrientation; 3] = [
        WristOrientation::Neutral,
        WristOrientation::Pronation,
        WristOrientation::Supination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WristOrientation::Neutral => "neutral",
            WristOrientation::Pronation => "pronation",
            WristOrientation::Supination => "supination",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialCategory {
    DigitOnly,
    DigitWrist,
}

impl TrialCategory {
    pub fn name(self) -> &'static str {
        match self {
            TrialCategory::DigitOnly => "digit_only",
            TrialCategory::DigitWrist => "digit_wrist",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "digit_only" => Some(TrialCategory::DigitOnly),
            "digit_wrist" => Some(TrialCategory::DigitWrist),
            _ => None,
        }
    }
}

/// One target-matching trial: every listed movement ramps to its level.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrial {
    pub id: usize,
    pub digit: Dof,
    pub wrist: WristOrientation,
    pub movements: Vec<(MovementClass, f64)>,
}

impl TargetTrial {
    pub fn category(&self) -> TrialCategory {
        if self.movements.len() == 1 {
            TrialCategory::DigitOnly
        } else {
            TrialCategory::DigitWrist
        }
    }

    pub fn profile(&self) -> TrapezoidProfile {
        TrapezoidProfile::new(TARGET_HOLD_S, 1.0)
    }

    pub fn label(&self) -> alloc::string::String {
        alloc::format!("{}+{}", self.digit.name(), self.wrist.name())
    }
}

/// Thumb, index and middle flexion in neutral, pronated and supinated wrist
/// orientations; all targets at half range.
pub fn build_target_set() -> Vec<TargetTrial> {
    let mut out = Vec::with_capacity(9);
    for wrist in WristOrientation::ALL {
        for digit in Dof::THREE {
            let mut movements = vec![(
                MovementClass {
                    dof: digit,
                    direction: Direction::Positive,
                },
                TARGET_LEVEL,
            )];
            match wrist {
                WristOrientation::Neutral => {}
                WristOrientation::Pronation => movements.push((
                    MovementClass {
                        dof: Dof::WristPs,
                        direction: Direction::Positive,
                    },
                    TARGET_LEVEL,
                )),
                WristOrientation::Supination => movements.push((
                    MovementClass {
                        dof: Dof::WristPs,
                        direction: Direction::Negative,
                    },
                    TARGET_LEVEL,
                )),
            }
            out.push(TargetTrial {
                id: out.len(),
                digit,
                wrist,
                movements,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    Rest,
    Trial {
        id: usize,
        /// Movements present in the run's DOF set, with signed levels.
        movements: Vec<(MovementClass, f64)>,
        category: Option<TrialCategory>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn range(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn is_rest(&self) -> bool {
        matches!(self.kind, SegmentKind::Rest)
    }
}

/// A labeled kinematic timeline at 30 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub dofs: Vec<Dof>,
    pub kinematics: Trajectory,
    pub segments: Vec<Segment>,
    pub trial_profile: TrapezoidProfile,
}

impl ProtocolRun {
    fn new(dofs: &[Dof], trial_profile: TrapezoidProfile) -> Self {
        Self {
            dofs: dofs.to_vec(),
            kinematics: Trajectory::new(dofs.len()),
            segments: Vec::new(),
            trial_profile,
        }
    }

    fn push_rest(&mut self, seconds: f64) {
        let frames = libm::round(seconds * f64::from(FEATURE_RATE_HZ)) as usize;
        let start = self.kinematics.len();
        let zero = vec![0.0; self.dofs.len()];
        for _ in 0..frames {
            self.kinematics.push(&zero);
        }
        self.segments.push(Segment {
            start,
            len: frames,
            kind: SegmentKind::Rest,
        });
    }

    fn push_trial(
        &mut self,
        id: usize,
        movements: &[(MovementClass, f64)],
        category: Option<TrialCategory>,
    ) {
        let shape = make_trapezoid(&TrapezoidProfile {
            amplitude: 1.0,
            ..self.trial_profile
        })
        .expect("protocol profiles are valid");
        let start = self.kinematics.len();
        let kept: Vec<(MovementClass, f64)> = movements
            .iter()
            .copied()
            .filter(|(m, _)| self.dofs.contains(&m.dof))
            .collect();
        let mut frame = vec![0.0; self.dofs.len()];
        for s in shape.frames() {
            frame.iter_mut().for_each(|v| *v = 0.0);
            for (m, level) in &kept {
                let col = self
                    .dofs
                    .iter()
                    .position(|d| *d == m.dof)
                    .expect("filtered above");
                frame[col] = m.direction.sign() * level * s[0];
            }
            self.kinematics.push(&frame);
        }
        self.segments.push(Segment {
            start,
            len: shape.len(),
            kind: SegmentKind::Trial {
                id,
                movements: kept,
                category,
            },
        });
    }

    pub fn frames(&self) -> usize {
        self.kinematics.len()
    }

    /// Per-frame rest labels.
    pub fn rest_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.frames()];
        for seg in self.segments.iter().filter(|s| s.is_rest()) {
            mask[seg.range()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn trials(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !s.is_rest())
    }

    /// Per-frame trial id, `None` during rest.
    pub fn trial_ids(&self) -> Vec<Option<usize>> {
        let mut ids = vec![None; self.frames()];
        for seg in &self.segments {
            if let SegmentKind::Trial { id, .. } = seg.kind {
                ids[seg.range()].iter_mut().for_each(|v| *v = Some(id));
            }
        }
        ids
    }
}

/// Training timeline: for each DOF in order, flexion trials then mirrored
/// extension trials, each followed by rest.
pub fn build_training_set(dof_count: usize) -> Result<ProtocolRun> {
    let dofs = Dof::for_count(dof_count)?;
    let (hold, trials) = if dof_count == 3 {
        (HOLD_3DOF_S, TRIALS_3DOF)
    } else {
        (HOLD_6DOF_S, TRIALS_6DOF)
    };
    let mut run = ProtocolRun::new(dofs, TrapezoidProfile::new(hold, 1.0));
    run.push_rest(REST_GAP_S);
    let mut id = 0;
    for &dof in dofs {
        for direction in [Direction::Positive, Direction::Negative] {
            for _ in 0..trials {
                run.push_trial(id, &[(MovementClass { dof, direction }, 1.0)], None);
                run.push_rest(REST_GAP_S);
                id += 1;
            }
        }
    }
    Ok(run)
}

/// Target-task timeline for `dofs`. Movements on DOFs outside the set (the
/// wrist, in 3-DOF sessions) are dropped from the kinematics; trial
/// categories are kept.
pub fn build_target_run(set: &[TargetTrial], dofs: &[Dof]) -> ProtocolRun {
    let mut run = ProtocolRun::new(dofs, TrapezoidProfile::new(TARGET_HOLD_S, TARGET_LEVEL));
    run.push_rest(REST_GAP_S);
    for trial in set {
        run.push_trial(trial.id, &trial.movements, Some(trial.category()));
        run.push_rest(REST_GAP_S);
    }
    run
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Banded,
    Free,
}

impl Condition {
    pub fn other(self) -> Self {
        match self {
            Condition::Banded => Condition::Free,
            Condition::Free => Condition::Banded,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Banded => "banded",
            Condition::Free => "free",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "banded" => Some(Condition::Banded),
            "free" => Some(Condition::Free),
            _ => None,
        }
    }
}

/// Evaluation order over the two conditions: always A, B, B, A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSchedule {
    pub conditions: [Condition; 4],
    /// Condition whose training set is recorded first.
    pub training_first: Condition,
}

pub fn abba_schedule(first: Condition, second: Condition) -> Result<SessionSchedule> {
    if first == second {
        bail!(
            InvalidArgument,
            "ABBA needs two distinct conditions, got {} twice",
            first.name()
        );
    }
    Ok(SessionSchedule {
        conditions: [first, second, second, first],
        training_first: first,
    })
}

impl SessionSchedule {
    pub fn starting_with(first: Condition) -> Self {
        abba_schedule(first, first.other()).expect("conditions differ")
    }

    /// Counterbalanced schedule for 1-based participant numbers: odd
    /// participants start banded, even ones free.
    pub fn for_participant(participant: u32) -> Self {
        let first = if participant % 2 == 1 {
            Condition::Banded
        } else {
            Condition::Free
        };
        Self::starting_with(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_examples() {
        let p = TrapezoidProfile::new(5.0, 1.0);
        assert!((p.duration_s() - 6.4).abs() < 1e-12);
        let t = make_trapezoid(&p).unwrap();
        assert_eq!(t.len(), 192);
        assert_eq!(t.frame(96)[0], 1.0);
        assert!((p.value_at(0.35) - 0.5).abs() < 1e-12);
        assert!(t.frames().all(|f| (0.0..=1.0).contains(&f[0])));
        assert!(make_trapezoid(&TrapezoidProfile { hold_s: 0.0, ..p }).is_err());
        assert!(make_trapezoid(&TrapezoidProfile { rise_s: -0.7, ..p }).is_err());
    }

    #[test]
    fn training_sets() {
        let three = build_training_set(3).unwrap();
        assert_eq!(three.trials().count(), 3 * 2 * 5);
        for seg in three.trials() {
            assert_eq!(seg.len, 192);
        }
        let six = build_training_set(6).unwrap();
        assert_eq!(six.trials().count(), 6 * 2 * 4);
        assert!((six.trial_profile.duration_s() - 4.4).abs() < 1e-12);
        assert!(six.trials().all(|s| s.len == 132));
        let mask = three.rest_mask();
        for (f, rest) in three.kinematics.frames().zip(mask) {
            if rest {
                assert!(f.iter().all(|v| *v == 0.0));
            }
            assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(build_training_set(4).is_err());
    }

    #[test]
    fn target_set() {
        let set = build_target_set();
        assert_eq!(set.len(), 9);
        assert_eq!(
            set.iter()
                .filter(|t| t.category() == TrialCategory::DigitOnly)
                .count(),
            3
        );
        assert!(set
            .iter()
            .all(|t| t.movements.iter().all(|(_, l)| *l == 0.5)));
        assert!(set
            .iter()
            .all(|t| (t.profile().duration_s() - 6.4).abs() < 1e-12));
        let run = build_target_run(&set, &Dof::SIX);
        let wrist = Dof::SIX.iter().position(|d| *d == Dof::WristPs).unwrap();
        let seg = run.trials().nth(4).unwrap();
        let mid = run.kinematics.frame(seg.start + 96);
        assert_eq!(mid[wrist], 0.5);
        let seg = run.trials().nth(7).unwrap();
        assert_eq!(run.kinematics.frame(seg.start + 96)[wrist], -0.5);
        let three = build_target_run(&set, &Dof::THREE);
        assert_eq!(three.trials().count(), 9);
        assert!(three
            .kinematics
            .frames()
            .all(|f| f.iter().all(|v| (0.0..=0.5).contains(v))));
    }

    #[test]
    fn abba() {
        use Condition::*;
        assert_eq!(
            abba_schedule(Banded, Free).unwrap().conditions,
            [Banded, Free, Free, Banded]
        );
        assert_eq!(
            abba_schedule(Free, Banded).unwrap().conditions,
            [Free, Banded, Banded, Free]
        );
        assert!(abba_schedule(Free, Free).is_err());
        let p1 = SessionSchedule::for_participant(1);
        let p2 = SessionSchedule::for_participant(2);
        assert_ne!(p1.training_first, p2.training_first);
        for s in [p1, p2] {
            let c = s.conditions;
            assert_eq!(c[0], c[3]);
            assert_eq!(c[1], c[2]);
            assert_ne!(c[0], c[1]);
        }
    }
}
