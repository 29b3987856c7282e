//! Stepwise Gram-Schmidt forward selection.
//!
//! Candidate features are centered and scaled to unit norm, kinematic
//! columns likewise. Each step picks the candidate whose component
//! orthogonal to everything already picked explains the most remaining
//! kinematic energy, summed over all DOFs:
//!
//! `score(j) = Σ_d (x̃_jᵀ r_d)² / ‖x̃_j‖²`
//!
//! which is exactly the drop in total residual sum of squares from adding
//! feature `j` to the least-squares fit. The pick is then projected out of
//! every remaining candidate and of the residual. Ties go to the lowest
//! feature index.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;

/// Candidates whose orthogonal remainder falls below this squared norm
/// (relative to their unit starting norm) are linearly dependent on the
/// picks and become ineligible.
const DEPENDENCE_TOL: f64 = 1e-10;
/// Full re-orthogonalization cadence, in picks.
const REORTHO_EVERY: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Picked feature indices, in pick order.
    pub order: Vec<usize>,
    /// Cumulative fraction of (normalized) kinematic variance explained
    /// after each pick; non-decreasing.
    pub scores: Vec<f64>,
    /// Width of the frames this selection applies to.
    pub n_features: usize,
}

impl SelectionResult {
    /// Validates a persisted selection.
    pub fn from_parts(order: Vec<usize>, scores: Vec<f64>, n_features: usize) -> Result<Self> {
        if order.len() != scores.len() {
            bail!(
                Corruption,
                "{} indices but {} scores",
                order.len(),
                scores.len()
            );
        }
        let mut seen = vec![false; n_features];
        for &i in &order {
            if i >= n_features {
                bail!(
                    Corruption,
                    "feature index {i} out of range for {n_features} features"
                );
            }
            if core::mem::replace(&mut seen[i], true) {
                bail!(Corruption, "feature index {i} selected twice");
            }
        }
        Ok(Self {
            order,
            scores,
            n_features,
        })
    }

    pub fn k(&self) -> usize {
        self.order.len()
    }

    /// Gathers selected values in pick order.
    pub fn apply_into(&self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.order.len() {
            bail!(
                InvalidArgument,
                "output has {} slots, selection has {}",
                out.len(),
                self.order.len()
            );
        }
        for (o, &i) in out.iter_mut().zip(&self.order) {
            match frame.get(i) {
                Some(v) => *o = *v,
                None => bail!(
                    Corruption,
                    "selected index {i} outside frame of {} features",
                    frame.len()
                ),
            }
        }
        Ok(())
    }

    pub fn apply(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.order.len()];
        self.apply_into(frame, &mut out)?;
        Ok(out)
    }

    /// Writes `reduced` back into the selected slots of `frame`.
    pub fn scatter(&self, reduced: &[f64], frame: &mut [f64]) -> Result<()> {
        if reduced.len() != self.order.len() {
            bail!(
                InvalidArgument,
                "reduced vector has {} values, selection has {}",
                reduced.len(),
                self.order.len()
            );
        }
        for (&i, v) in self.order.iter().zip(reduced) {
            match frame.get_mut(i) {
                Some(slot) => *slot = *v,
                None => bail!(
                    Corruption,
                    "selected index {i} outside frame of {} features",
                    frame.len()
                ),
            }
        }
        Ok(())
    }
}

/// Free function form of [`SelectionResult::apply`].
pub fn apply_selection(frame: &[f64], result: &SelectionResult) -> Result<Vec<f64>> {
    result.apply(frame)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Centers a column and scales it to unit norm; `None` for zero variance.
fn standardize(col: &mut [f64]) -> Option<()> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let scale = col.iter().fold(0.0_f64, |m, v| m.max(libm::fabs(*v)));
    col.iter_mut().for_each(|v| *v -= mean);
    let norm = libm::sqrt(dot(col, col));
    if !(norm > 1e-12 * scale.max(f64::MIN_POSITIVE) * libm::sqrt(n)) {
        return None;
    }
    col.iter_mut().for_each(|v| *v /= norm);
    Some(())
}

/// Greedy selection of `k` columns of `features` (T×F) for predicting
/// `kinematics` (T×D).
pub fn gram_schmidt_select(
    features: &Matrix,
    kinematics: &Matrix,
    k: usize,
) -> Result<SelectionResult> {
    let (t, f) = features.shape();
    let d = kinematics.cols();
    if kinematics.rows() != t {
        bail!(
            InvalidArgument,
            "features have {t} rows, kinematics {}",
            kinematics.rows()
        );
    }
    if k > f {
        bail!(InvalidArgument, "cannot select {k} of {f} features");
    }
    if k == 0 {
        return Ok(SelectionResult {
            order: Vec::new(),
            scores: Vec::new(),
            n_features: f,
        });
    }
    if t <= k {
        bail!(IllPosed, "{t} samples cannot support {k} selected features");
    }
    if !features.is_finite() || !kinematics.is_finite() {
        bail!(Data, "selection input contains non-finite values");
    }

    // Column-major working copies.
    let mut cand: Vec<f64> = vec![0.0; f * t];
    let mut eligible = vec![true; f];
    for j in 0..f {
        let col = &mut cand[j * t..(j + 1) * t];
        for (r, v) in col.iter_mut().enumerate() {
            *v = features[(r, j)];
        }
        if standardize(col).is_none() {
            eligible[j] = false;
        }
    }
    let mut cand_norm2: Vec<f64> = (0..f)
        .map(|j| if eligible[j] { 1.0 } else { 0.0 })
        .collect();

    let mut resid: Vec<f64> = vec![0.0; d * t];
    for dd in 0..d {
        let col = &mut resid[dd * t..(dd + 1) * t];
        for (r, v) in col.iter_mut().enumerate() {
            *v = kinematics[(r, dd)];
        }
        if standardize(col).is_none() {
            col.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let total: f64 = dot(&resid, &resid);

    let mut basis: Vec<f64> = Vec::with_capacity(k * t);
    let mut order = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);

    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..f {
            if !eligible[j] || cand_norm2[j] <= DEPENDENCE_TOL {
                continue;
            }
            let x = &cand[j * t..(j + 1) * t];
            let gain: f64 = resid
                .chunks_exact(t)
                .map(|r| {
                    let c = dot(x, r);
                    c * c
                })
                .sum::<f64>()
                / cand_norm2[j];
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some((j, gain));
            }
        }
        let Some((pick, _)) = best else {
            bail!(
                IllPosed,
                "only {step} linearly independent features available, {k} requested"
            );
        };

        eligible[pick] = false;
        let inv = 1.0 / libm::sqrt(cand_norm2[pick]);
        let q: Vec<f64> = cand[pick * t..(pick + 1) * t]
            .iter()
            .map(|v| v * inv)
            .collect();

        for r in resid.chunks_exact_mut(t) {
            let c = dot(&q, r);
            axpy(-c, &q, r);
        }
        for j in 0..f {
            if !eligible[j] {
                continue;
            }
            let x = &mut cand[j * t..(j + 1) * t];
            let c = dot(&q, x);
            axpy(-c, &q, x);
            cand_norm2[j] = dot(x, x);
        }
        basis.extend_from_slice(&q);
        order.push(pick);

        if (step + 1) % REORTHO_EVERY == 0 {
            for qb in basis.chunks_exact(t) {
                for r in resid.chunks_exact_mut(t) {
                    let c = dot(qb, r);
                    axpy(-c, qb, r);
                }
                for j in 0..f {
                    if eligible[j] {
                        let x = &mut cand[j * t..(j + 1) * t];
                        let c = dot(qb, x);
                        axpy(-c, qb, x);
                    }
                }
            }
            for j in 0..f {
                if eligible[j] {
                    let x = &cand[j * t..(j + 1) * t];
                    cand_norm2[j] = dot(x, x);
                }
            }
        }

        let explained = if total > 0.0 {
            1.0 - dot(&resid, &resid) / total
        } else {
            0.0
        };
        // Rounding can nudge the running value down by an ulp.
        let prev = scores.last().copied().unwrap_or(0.0);
        scores.push(explained.max(prev));
    }

    Ok(SelectionResult {
        order,
        scores,
        n_features: f,
    })
}
