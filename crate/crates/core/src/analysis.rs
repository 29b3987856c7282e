//! Scoring and statistics for decode sessions and functional tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::protocol::TrialCategory;
use crate::trajectory::Trajectory;

/// Root-mean-square error pooled over every frame and DOF.
pub fn compute_rmse(decoded: &Trajectory, target: &Trajectory) -> Result<f64> {
    check_pair(decoded, target)?;
    let n = decoded.as_slice().len();
    if n == 0 {
        bail!(InvalidArgument, "RMSE of empty trajectories");
    }
    let sse: f64 = decoded
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(sse / n as f64))
}

/// RMSE of each DOF column separately.
pub fn rmse_per_dof(decoded: &Trajectory, target: &Trajectory) -> Result<Vec<f64>> {
    check_pair(decoded, target)?;
    if decoded.is_empty() {
        bail!(InvalidArgument, "RMSE of empty trajectories");
    }
    let mut sse = vec![0.0; decoded.dof()];
    for (a, b) in decoded.frames().zip(target.frames()) {
        for (s, (x, y)) in sse.iter_mut().zip(a.iter().zip(b)) {
            *s += (x - y) * (x - y);
        }
    }
    let n = decoded.len() as f64;
    Ok(sse.into_iter().map(|s| libm::sqrt(s / n)).collect())
}

fn check_pair(decoded: &Trajectory, target: &Trajectory) -> Result<()> {
    if decoded.len() != target.len() || decoded.dof() != target.dof() {
        bail!(
            InvalidArgument,
            "trajectory shapes differ: {}×{} vs {}×{}",
            decoded.len(),
            decoded.dof(),
            target.len(),
            target.dof()
        );
    }
    Ok(())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        } else {
            0.0
        };
        Self { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRmse {
    pub trial_id: usize,
    pub category: TrialCategory,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub per_trial: Vec<TrialRmse>,
    pub digit_only: MeanSd,
    pub digit_wrist: MeanSd,
    pub total: MeanSd,
}

impl RmseReport {
    pub fn from_trials(per_trial: Vec<TrialRmse>) -> Self {
        let pick = |cat: Option<TrialCategory>| -> Vec<f64> {
            per_trial
                .iter()
                .filter(|t| cat.is_none_or(|c| t.category == c))
                .map(|t| t.rmse)
                .collect()
        };
        Self {
            digit_only: MeanSd::of(&pick(Some(TrialCategory::DigitOnly))),
            digit_wrist: MeanSd::of(&pick(Some(TrialCategory::DigitWrist))),
            total: MeanSd::of(&pick(None)),
            per_trial,
        }
    }

    pub fn category(&self, cat: Category) -> MeanSd {
        match cat {
            Category::DigitOnly => self.digit_only,
            Category::DigitWrist => self.digit_wrist,
            Category::Total => self.total,
        }
    }
}

/// Reporting categories, including the pooled total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    DigitOnly,
    DigitWrist,
    Total,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::DigitOnly, Category::DigitWrist, Category::Total];

    pub fn name(self) -> &'static str {
        match self {
            Category::DigitOnly => "digit_only",
            Category::DigitWrist => "digit_wrist",
            Category::Total => "total",
        }
    }
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let guard = |v: f64| if libm::fabs(v) < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Differences had zero variance; `t` and `p` follow the convention
    /// (0, 1) for zero mean and (±∞, 0) otherwise.
    pub zero_variance: bool,
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        bail!(
            InvalidArgument,
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        );
    }
    let n = a.len();
    if n < 2 {
        bail!(IllPosed, "paired t-test needs at least 2 pairs, got {n}");
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        bail!(Data, "non-finite paired difference");
    }
    let stats = MeanSd::of(&diffs);
    let df = n - 1;
    if stats.sd == 0.0 {
        let (t, p) = if stats.mean == 0.0 {
            (0.0, 1.0)
        } else {
            (libm::copysign(f64::INFINITY, stats.mean), 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            zero_variance: true,
        });
    }
    let t = stats.mean / (stats.sd / libm::sqrt(n as f64));
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
        zero_variance: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolmResult {
    /// In input order.
    pub rejected: Vec<bool>,
    /// Holm-adjusted p-values, in input order, capped at 1.
    pub adjusted: Vec<f64>,
}

/// Holm step-down correction with correction factor `m >= pvals.len()`.
pub fn holm_bonferroni(pvals: &[f64], alpha: f64, m: usize) -> Result<HolmResult> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        bail!(InvalidArgument, "p-value {p} outside [0, 1]");
    }
    if m < pvals.len() {
        bail!(
            InvalidArgument,
            "correction factor {m} smaller than {} hypotheses",
            pvals.len()
        );
    }
    let mut idx: Vec<usize> = (0..pvals.len()).collect();
    idx.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; pvals.len()];
    let mut rejected = vec![false; pvals.len()];
    let mut running = 0.0_f64;
    for (rank, &i) in idx.iter().enumerate() {
        running = running.max(pvals[i] * (m - rank) as f64).min(1.0);
        adjusted[i] = running;
        rejected[i] = running <= alpha;
    }
    Ok(HolmResult { rejected, adjusted })
}

/// Lower and upper quartiles by linear interpolation between order
/// statistics at positions `p · (n + 1)` (1-based), clamped to the sample
/// range.
pub fn quartiles(values: &[f64]) -> (f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let at = |p: f64| {
        let pos = (p * (n as f64 + 1.0)).clamp(1.0, n as f64);
        let lo = libm::floor(pos) as usize;
        let frac = pos - lo as f64;
        let lo_v = s[lo - 1];
        if lo >= n {
            lo_v
        } else {
            lo_v + frac * (s[lo] - lo_v)
        }
    };
    (at(0.25), at(0.75))
}

/// Tukey fences at 1.5 × IQR; `true` marks an outlier.
pub fn tukey_outliers(values: &[f64]) -> Result<Vec<bool>> {
    if values.len() < 4 {
        bail!(
            IllPosed,
            "outlier detection needs at least 4 values, got {}",
            values.len()
        );
    }
    let (q1, q3) = quartiles(values);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(values.iter().map(|v| *v < lo || *v > hi).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbtVariant {
    Original,
    /// 16 gridded blocks; finishing early extrapolates to a 60 s rate.
    Modified,
}

pub const MODIFIED_BBT_BLOCKS: u32 = 16;
pub const BBT_DURATION_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTestScore {
    pub variant: BbtVariant,
    pub blocks_moved: u32,
    pub elapsed_s: f64,
    pub score: f64,
}

pub fn bbt_score(blocks: u32, elapsed_s: f64, variant: BbtVariant) -> Result<BlockTestScore> {
    if !(elapsed_s > 0.0 && elapsed_s <= BBT_DURATION_S) {
        bail!(
            InvalidArgument,
            "elapsed time must be in (0, 60] s, got {elapsed_s}"
        );
    }
    let score = match variant {
        BbtVariant::Original => f64::from(blocks),
        BbtVariant::Modified => {
            if blocks > MODIFIED_BBT_BLOCKS {
                bail!(
                    InvalidArgument,
                    "modified test has only 16 blocks, got {blocks}"
                );
            }
            if blocks == MODIFIED_BBT_BLOCKS {
                f64::from(blocks) * BBT_DURATION_S / elapsed_s
            } else {
                f64::from(blocks)
            }
        }
    };
    Ok(BlockTestScore {
        variant,
        blocks_moved: blocks,
        elapsed_s,
        score,
    })
}

/// Elastic wrist-band resistance, linear between the rest and maximal
/// rotation anchors. Band geometry is carried as metadata only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueModel {
    pub tau_rest_nm: f64,
    pub tau_max_nm: f64,
    pub band_count: u32,
    pub band_diameter_cm: f64,
    pub modulus_n_per_mm2: f64,
    pub elongation_window_mm: (f64, f64),
}

impl Default for TorqueModel {
    fn default() -> Self {
        Self {
            tau_rest_nm: 0.34,
            tau_max_nm: 0.85,
            band_count: 4,
            band_diameter_cm: 0.8,
            modulus_n_per_mm2: 0.4,
            elongation_window_mm: (30.0, 90.0),
        }
    }
}

/// Resistance at `theta_frac` of maximal rotation, N·m.
pub fn band_torque(theta_frac: f64, model: &TorqueModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta_frac) {
        bail!(
            InvalidArgument,
            "rotation fraction {theta_frac} outside [0, 1]"
        );
    }
    if !(model.tau_max_nm >= model.tau_rest_nm && model.tau_rest_nm > 0.0) {
        bail!(
            InvalidArgument,
            "torque anchors must satisfy tau_max >= tau_rest > 0"
        );
    }
    if theta_frac == 1.0 {
        return Ok(model.tau_max_nm);
    }
    Ok(model.tau_rest_nm + (model.tau_max_nm - model.tau_rest_nm) * theta_frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RomMovement {
    WristDeviation,
    WristFlexion,
    ForearmRotation,
    ElbowFlexion,
    ShoulderRotation,
    ShoulderFrontalFlexion,
    ShoulderHorizontalFlexion,
}

impl RomMovement {
    pub const ALL: [RomMovement; 7] = [
        RomMovement::WristDeviation,
        RomMovement::WristFlexion,
        RomMovement::ForearmRotation,
        RomMovement::ElbowFlexion,
        RomMovement::ShoulderRotation,
        RomMovement::ShoulderFrontalFlexion,
        RomMovement::ShoulderHorizontalFlexion,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RomMovement::WristDeviation => "WD",
            RomMovement::WristFlexion => "WF",
            RomMovement::ForearmRotation => "FR",
            RomMovement::ElbowFlexion => "EF",
            RomMovement::ShoulderRotation => "SR",
            RomMovement::ShoulderFrontalFlexion => "SFF",
            RomMovement::ShoulderHorizontalFlexion => "SHF",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomRecord {
    pub movement: RomMovement,
    pub measured_deg: MeanSd,
    pub required_deg: MeanSd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RomVerdict {
    Exceeds,
    Meets,
    /// Measured mean falls short of the requirement by this many degrees.
    Hindered(f64),
}

pub fn rom_compare(records: &[RomRecord]) -> Result<Vec<(RomMovement, RomVerdict)>> {
    if records.is_empty() {
        bail!(InvalidArgument, "no range-of-motion records");
    }
    records
        .iter()
        .map(|r| {
            let (m, q) = (r.measured_deg.mean, r.required_deg.mean);
            if !m.is_finite()
                || !q.is_finite()
                || r.measured_deg.sd < 0.0
                || r.required_deg.sd < 0.0
            {
                bail!(
                    InvalidArgument,
                    "invalid range-of-motion record for {}",
                    r.movement.code()
                );
            }
            let tol = 1e-9 * m.abs().max(q.abs()).max(1.0);
            let verdict = if libm::fabs(m - q) <= tol {
                RomVerdict::Meets
            } else if m > q {
                RomVerdict::Exceeds
            } else {
                RomVerdict::Hindered(q - m)
            };
            Ok((r.movement, verdict))
        })
        .collect()
}

/// One participant's mean RMSE per category under one condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantRmse {
    pub participant: u32,
    pub digit_only: f64,
    pub digit_wrist: f64,
    pub total: f64,
}

impl ParticipantRmse {
    pub fn get(&self, cat: Category) -> f64 {
        match cat {
            Category::DigitOnly => self.digit_only,
            Category::DigitWrist => self.digit_wrist,
            Category::Total => self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDecision {
    pub category: Category,
    pub test: TTest,
    pub adjusted_p: f64,
    pub rejected: bool,
    /// Participant ids dropped by the Tukey filter for this category.
    pub outliers_dropped: Vec<u32>,
}

pub const CATEGORY_CORRECTION: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Compares two conditions category by category: Tukey-filter the paired
/// differences, paired t-test the survivors, Holm-correct over the three
/// categories.
pub fn condition_compare(
    a: &[ParticipantRmse],
    b: &[ParticipantRmse],
    alpha: f64,
) -> Result<Vec<CategoryDecision>> {
    if a.len() != b.len() {
        bail!(
            InvalidArgument,
            "unpaired data: {} vs {} participants",
            a.len(),
            b.len()
        );
    }
    for (x, y) in a.iter().zip(b) {
        if x.participant != y.participant {
            bail!(
                InvalidArgument,
                "unpaired data: participant {} vs {}",
                x.participant,
                y.participant
            );
        }
    }
    let mut out = Vec::with_capacity(3);
    for cat in Category::ALL {
        let diffs: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x.get(cat) - y.get(cat))
            .collect();
        let mask = if diffs.len() >= 4 {
            tukey_outliers(&diffs)?
        } else {
            vec![false; diffs.len()]
        };
        let keep: Vec<usize> = (0..diffs.len()).filter(|&i| !mask[i]).collect();
        let xa: Vec<f64> = keep.iter().map(|&i| a[i].get(cat)).collect();
        let xb: Vec<f64> = keep.iter().map(|&i| b[i].get(cat)).collect();
        let test = paired_ttest(&xa, &xb)?;
        let dropped = (0..diffs.len())
            .filter(|&i| mask[i])
            .map(|i| a[i].participant)
            .collect();
        out.push(CategoryDecision {
            category: cat,
            test,
            adjusted_p: 1.0,
            rejected: false,
            outliers_dropped: dropped,
        });
    }
    let pvals: Vec<f64> = out.iter().map(|d| d.test.p).collect();
    let holm = holm_bonferroni(&pvals, alpha, CATEGORY_CORRECTION)?;
    for (d, (adj, rej)) in out
        .iter_mut()
        .zip(holm.adjusted.into_iter().zip(holm.rejected))
    {
        d.adjusted_p = adj;
        d.rejected = rej;
    }
    Ok(out)
}
