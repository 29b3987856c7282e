//! Linear Kalman decoder for position kinematics.
//!
//! Training fits the state and observation models by least squares:
//!
//! ```text
//! x[t+1] = A x[t] + w,   w ~ N(0, W)
//! z[t]   = H x[t] + q,   q ~ N(0, Q)
//! ```
//!
//! Decoding runs the standard predict/update recursion with a Joseph-form
//! covariance update. All per-step buffers live in [`DecodeState`], so a
//! step never allocates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place, solve_spd, Matrix};
use crate::trajectory::Trajectory;

/// Relative ridge added to a rank-deficient Gram matrix.
pub const RIDGE_SCALE: f64 = 1e-6;
/// A Cholesky pivot below this fraction of the mean diagonal counts as
/// rank-deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    /// D×D state transition.
    pub a: Matrix,
    /// D×D process noise covariance.
    pub w: Matrix,
    /// k×D observation matrix.
    pub h: Matrix,
    /// k×k observation noise covariance.
    pub q: Matrix,
    /// D×D initial posterior covariance.
    pub p0: Matrix,
}

impl KalmanModel {
    pub fn new(a: Matrix, w: Matrix, h: Matrix, q: Matrix, p0: Matrix) -> Result<Self> {
        let d = a.rows();
        let k = h.rows();
        let square = |m: &Matrix, n: usize| m.shape() == (n, n);
        if !square(&a, d) || !square(&w, d) || !square(&p0, d) || h.cols() != d || !square(&q, k) {
            bail!(
                InvalidArgument,
                "inconsistent model shapes: A {:?}, W {:?}, H {:?}, Q {:?}, P0 {:?}",
                a.shape(),
                w.shape(),
                h.shape(),
                q.shape(),
                p0.shape()
            );
        }
        for (name, m) in [("A", &a), ("W", &w), ("H", &h), ("Q", &q), ("P0", &p0)] {
            if !m.is_finite() {
                bail!(Data, "model matrix {name} has non-finite entries");
            }
        }
        for (name, m) in [("W", &w), ("Q", &q), ("P0", &p0)] {
            let scale = m
                .as_slice()
                .iter()
                .fold(1.0_f64, |s, v| s.max(libm::fabs(*v)));
            if m.asymmetry() > 1e-9 * scale {
                bail!(InvalidArgument, "covariance {name} is not symmetric");
            }
        }
        Ok(Self { a, w, h, q, p0 })
    }

    pub fn dof(&self) -> usize {
        self.a.rows()
    }

    pub fn n_obs(&self) -> usize {
        self.h.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainWarning {
    /// The kinematic Gram matrix for the named fit was rank-deficient and a
    /// ridge of the given size was added.
    RidgeRescue { fit: Fit, lambda: f64 },
    /// Q was singular; this much was added to its diagonal.
    ObservationNoiseFloor { added: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fit {
    Transition,
    Observation,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: KalmanModel,
    pub warnings: Vec<TrainWarning>,
}

/// Solves `G B = C` with a ridge rescue when `G` is rank-deficient.
fn ridge_solve(
    gram: &Matrix,
    rhs: &Matrix,
    fit: Fit,
    warnings: &mut Vec<TrainWarning>,
) -> Result<Matrix> {
    let n = gram.rows();
    let mean_diag = gram.trace() / n as f64;
    let mut l = gram.clone();
    let healthy = cholesky_in_place(&mut l).is_ok()
        && (0..n).all(|i| l[(i, i)] * l[(i, i)] > RANK_TOL * mean_diag);
    if healthy {
        let mut x = rhs.clone();
        cholesky_solve_in_place(&l, &mut x);
        return Ok(x);
    }
    let lambda = if mean_diag > 0.0 {
        RIDGE_SCALE * mean_diag
    } else {
        RIDGE_SCALE
    };
    warnings.push(TrainWarning::RidgeRescue { fit, lambda });
    let mut g = gram.clone();
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    solve_spd(&g, rhs)
}

/// `Σ_t a_tᵀ b_t` over row ranges: `aᵀ b` for row-aligned blocks.
fn cross(
    a: &Matrix,
    a_rows: core::ops::Range<usize>,
    b: &Matrix,
    b_rows: core::ops::Range<usize>,
) -> Matrix {
    assert_eq!(a_rows.len(), b_rows.len());
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for (ra, rb) in a_rows.zip(b_rows) {
        let (x, y) = (a.row(ra), b.row(rb));
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, yj) in out.row_mut(i).iter_mut().zip(y) {
                *o += xi * yj;
            }
        }
    }
    out
}

/// Fits `(A, W, H, Q, P0 = W)` from paired kinematics (T×D) and selected,
/// baseline-subtracted features (T×k).
pub fn train_kalman(kinematics: &Matrix, features: &Matrix) -> Result<TrainedModel> {
    let (t, d) = kinematics.shape();
    let k = features.cols();
    if features.rows() != t {
        bail!(
            InvalidArgument,
            "kinematics have {t} rows, features {}",
            features.rows()
        );
    }
    if t < 2 {
        bail!(
            IllPosed,
            "need at least 2 samples to fit a Kalman model, got {t}"
        );
    }
    if d == 0 {
        bail!(InvalidArgument, "kinematics have no DOF columns");
    }
    if !kinematics.is_finite() || !features.is_finite() {
        bail!(Data, "training data contains non-finite values");
    }
    let mut warnings = Vec::new();

    // State model on consecutive pairs.
    let g0 = cross(kinematics, 0..t - 1, kinematics, 0..t - 1);
    let c01 = cross(kinematics, 0..t - 1, kinematics, 1..t);
    let a = ridge_solve(&g0, &c01, Fit::Transition, &mut warnings)?.transpose();
    let mut w = Matrix::zeros(d, d);
    let mut pred = vec![0.0; d];
    for s in 0..t - 1 {
        a.mul_vec_into(kinematics.row(s), &mut pred);
        let e: Vec<f64> = kinematics
            .row(s + 1)
            .iter()
            .zip(&pred)
            .map(|(x, p)| x - p)
            .collect();
        for i in 0..d {
            for j in 0..d {
                w[(i, j)] += e[i] * e[j];
            }
        }
    }
    let w = {
        let mut w = w.scaled(1.0 / (t - 1) as f64);
        w.symmetrize();
        w
    };

    // Observation model.
    let g = cross(kinematics, 0..t, kinematics, 0..t);
    let cz = cross(kinematics, 0..t, features, 0..t);
    let h = ridge_solve(&g, &cz, Fit::Observation, &mut warnings)?.transpose();
    let mut q = Matrix::zeros(k, k);
    let mut zp = vec![0.0; k];
    let mut e = vec![0.0; k];
    for s in 0..t {
        h.mul_vec_into(kinematics.row(s), &mut zp);
        for ((ei, z), p) in e.iter_mut().zip(features.row(s)).zip(&zp) {
            *ei = z - p;
        }
        for i in 0..k {
            let ei = e[i];
            for (qij, ej) in q.row_mut(i).iter_mut().zip(&e) {
                *qij += ei * ej;
            }
        }
    }
    let mut q = q.scaled(1.0 / t as f64);
    q.symmetrize();
    if k > 0 && cholesky_in_place(&mut q.clone()).is_err() {
        let mean_diag = q.trace() / k as f64;
        let added = if mean_diag > 0.0 {
            1e-9 * mean_diag
        } else {
            1e-12
        };
        for i in 0..k {
            q[(i, i)] += added;
        }
        warnings.push(TrainWarning::ObservationNoiseFloor { added });
    }

    let p0 = w.clone();
    let model = KalmanModel::new(a, w, h, q, p0)?;
    Ok(TrainedModel { model, warnings })
}

/// Posterior mean and covariance plus the per-step scratch space.
#[derive(Debug, Clone)]
pub struct DecodeState {
    x: Vec<f64>,
    p: Matrix,
    x_prior: Vec<f64>,
    p_prior: Matrix,
    ap: Matrix,
    pht: Matrix,
    s: Matrix,
    kt: Matrix,
    innov: Vec<f64>,
    ikh: Matrix,
    tmp: Matrix,
    qkt: Matrix,
    kqk: Matrix,
}

impl DecodeState {
    /// Rest state: `x̂ = 0`, `P = P0`.
    pub fn new(model: &KalmanModel) -> Self {
        Self::with_prior(model, &vec![0.0; model.dof()], &model.p0)
    }

    pub fn with_prior(model: &KalmanModel, x: &[f64], p: &Matrix) -> Self {
        let (d, k) = (model.dof(), model.n_obs());
        assert_eq!(x.len(), d);
        assert_eq!(p.shape(), (d, d));
        Self {
            x: x.to_vec(),
            p: p.clone(),
            x_prior: vec![0.0; d],
            p_prior: Matrix::zeros(d, d),
            ap: Matrix::zeros(d, d),
            pht: Matrix::zeros(d, k),
            s: Matrix::zeros(k, k),
            kt: Matrix::zeros(k, d),
            innov: vec![0.0; k],
            ikh: Matrix::zeros(d, d),
            tmp: Matrix::zeros(d, d),
            qkt: Matrix::zeros(k, d),
            kqk: Matrix::zeros(d, d),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.x
    }

    pub fn covariance(&self) -> &Matrix {
        &self.p
    }

    /// Prior mean of the most recent step.
    pub fn predicted_mean(&self) -> &[f64] {
        &self.x_prior
    }

    /// Innovation `z - H x̂⁻` of the most recent step.
    pub fn innovation(&self) -> &[f64] {
        &self.innov
    }

    /// Innovation covariance `H P⁻ Hᵀ + Q` of the most recent step, as its
    /// Cholesky factor.
    pub fn innovation_factor(&self) -> &Matrix {
        &self.s
    }

    /// One predict/update cycle. The state is unchanged on error.
    pub fn step(&mut self, model: &KalmanModel, z: &[f64]) -> Result<()> {
        let (d, k) = (model.dof(), model.n_obs());
        if z.len() != k || self.x.len() != d {
            bail!(
                InvalidArgument,
                "observation has {} values, model expects {k}",
                z.len()
            );
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite observation at index {i}");
        }

        // Predict.
        model.a.mul_vec_into(&self.x, &mut self.x_prior);
        self.ap.set_product(&model.a, false, &self.p, false);
        self.p_prior.set_product(&self.ap, false, &model.a, true);
        for (pp, w) in self
            .p_prior
            .as_mut_slice()
            .iter_mut()
            .zip(model.w.as_slice())
        {
            *pp += w;
        }

        // Innovation covariance and gain: Kᵀ = S⁻¹ (P⁻Hᵀ)ᵀ.
        self.pht.set_product(&self.p_prior, false, &model.h, true);
        self.s.set_product(&model.h, false, &self.pht, false);
        for (sv, qv) in self.s.as_mut_slice().iter_mut().zip(model.q.as_slice()) {
            *sv += qv;
        }
        if let Err(pivot) = cholesky_in_place(&mut self.s) {
            bail!(
                Numerical,
                "innovation covariance not positive definite (pivot {pivot} of {k}); check Q and P"
            );
        }
        for r in 0..k {
            for c in 0..d {
                self.kt[(r, c)] = self.pht[(c, r)];
            }
        }
        cholesky_solve_in_place(&self.s, &mut self.kt);

        // Update mean.
        model.h.mul_vec_into(&self.x_prior, &mut self.innov);
        for (nu, zi) in self.innov.iter_mut().zip(z) {
            *nu = zi - *nu;
        }

        // Joseph form: P = (I - KH) P⁻ (I - KH)ᵀ + K Q Kᵀ.
        self.ikh.set_product(&self.kt, true, &model.h, false);
        for r in 0..d {
            for c in 0..d {
                let id = if r == c { 1.0 } else { 0.0 };
                self.ikh[(r, c)] = id - self.ikh[(r, c)];
            }
        }
        self.tmp.set_product(&self.ikh, false, &self.p_prior, false);
        self.ap.set_product(&self.tmp, false, &self.ikh, true);
        self.qkt.set_product(&model.q, false, &self.kt, false);
        self.kqk.set_product(&self.kt, true, &self.qkt, false);

        for (i, xi) in self.x.iter_mut().enumerate() {
            let mut v = self.x_prior[i];
            for (j, nu) in self.innov.iter().enumerate() {
                v += self.kt[(j, i)] * nu;
            }
            *xi = v;
        }
        for ((p, a), b) in self
            .p
            .as_mut_slice()
            .iter_mut()
            .zip(self.ap.as_slice())
            .zip(self.kqk.as_slice())
        {
            *p = a + b;
        }
        self.p.symmetrize();
        Ok(())
    }
}

/// Free function form of [`DecodeState::step`].
pub fn decode_step(model: &KalmanModel, state: &mut DecodeState, z: &[f64]) -> Result<()> {
    state.step(model, z)
}

/// Optional per-DOF output nonlinearity applied after decoding; both stages
/// are off by default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputShaping {
    /// Outputs with |x| below the dead-band are zeroed.
    pub deadband: Option<Vec<f64>>,
    pub gain: Option<Vec<f64>>,
}

impl OutputShaping {
    /// Writes the consumer-facing positions: shaping (if any), then clamping
    /// to [-1, 1].
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), out.len());
        for (d, (o, v)) in out.iter_mut().zip(x).enumerate() {
            let mut y = *v;
            if let Some(db) = &self.deadband {
                if libm::fabs(y) < db[d] {
                    y = 0.0;
                }
            }
            if let Some(g) = &self.gain {
                y *= g[d];
            }
            *o = y.clamp(-1.0, 1.0);
        }
    }
}

/// Decodes a whole feature stream from rest, returning clamped positions.
pub fn decode_session<'a, I>(model: &KalmanModel, stream: I) -> Result<Trajectory>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut state = DecodeState::new(model);
    let shaping = OutputShaping::default();
    let mut out = Trajectory::new(model.dof());
    let mut frame = vec![0.0; model.dof()];
    for z in stream {
        state.step(model, z)?;
        shaping.apply_into(state.mean(), &mut frame);
        out.push(&frame);
    }
    Ok(out)
}
