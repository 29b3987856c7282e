//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::alloc::{GlobalAlloc, Layout, System};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use myodecode_core::analysis::{
    band_torque, bbt_score, holm_bonferroni, paired_ttest, tukey_outliers, BbtVariant, TorqueModel,
};
use myodecode_core::features::{enumerate_features, FeatureDescriptor};
use myodecode_core::filter::{FilterCascade, DEFAULT_NOTCH_Q};
use myodecode_core::kalman::{train_kalman, DecodeState, KalmanModel};
use myodecode_core::linalg::Matrix;
use myodecode_core::pipeline::{Decoder, StreamingDecoder};
use myodecode_core::protocol::{
    abba_schedule, build_target_run, build_target_set, build_training_set, Condition, Dof,
    TrialCategory, TARGET_LEVEL,
};
use myodecode_core::select::gram_schmidt_select;
use myodecode_core::session::{simulate_session, SessionConfig, SessionRecord};
use myodecode_core::synth::{synth_emg, SynthConfig};
use myodecode_core::CHANNELS;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

struct CountingAlloc;

static COUNTING: AtomicBool = AtomicBool::new(false);
static ALLOCATIONS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if COUNTING.load(Ordering::Relaxed) {
            ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        }
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if COUNTING.load(Ordering::Relaxed) {
            ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        }
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() <= budget_s,
        format!("took {:.2} s, budget {budget_s} s", elapsed.as_secs_f64()),
    )
}

const FS: f64 = 1000.0;

// 1: feature bank size and canonical order.
fn feature_bank() -> Outcome {
    let start = Instant::now();
    let map = enumerate_features(CHANNELS).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(map.len() == 528, format!("{} features", map.len()))?;
    let mut expect = Vec::new();
    expect.extend((0..CHANNELS).map(FeatureDescriptor::SingleEnded));
    for i in 0..CHANNELS {
        for j in i + 1..CHANNELS {
            expect.push(FeatureDescriptor::Differential(i, j));
        }
    }
    check(
        map.entries() == expect.as_slice(),
        "order differs from canonical",
    )?;
    for (idx, d) in expect.iter().enumerate() {
        check(
            map.index_of(*d) == Some(idx),
            format!("index_of mismatch at {idx}"),
        )?;
    }
    within(elapsed, 1e-3)?;
    Ok(format!(
        "528 features, single-ended then lexicographic pairs, built in {} us",
        elapsed.as_micros()
    ))
}

// 2: filter chain against the prewarped analytic magnitude.
fn analytic_chain_magnitude(f: f64) -> f64 {
    let w = |x: f64| (PI * x / FS).tan();
    let hp = 1.0 / (1.0 + (w(15.0) / w(f)).powi(12)).sqrt();
    let lp = 1.0 / (1.0 + (w(f) / w(375.0)).powi(4)).sqrt();
    let notch = |f0: f64| {
        let r = w(f) / w(f0);
        (1.0 - r * r).abs() / ((1.0 - r * r).powi(2) + (r / DEFAULT_NOTCH_Q).powi(2)).sqrt()
    };
    hp * lp * notch(60.0) * notch(120.0) * notch(180.0)
}

fn measured_gain(cascade: &mut FilterCascade, f: f64) -> f64 {
    let (settle, measure) = (8000, 4000);
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for n in 0..settle + measure {
        let phase = 2.0 * PI * f * n as f64 / FS;
        let mut frame = [phase.sin(); CHANNELS];
        cascade.process_in_place(&mut frame);
        if n >= settle {
            let (s, c) = phase.sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += frame[0] * s;
            yc += frame[0] * c;
        }
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    (a * a + b * b).sqrt()
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn filter_chain() -> Outcome {
    let start = Instant::now();
    let chain = FilterCascade::emg_chain(FS, CHANNELS).map_err(|e| e.to_string())?;
    check(
        chain.sections().iter().all(|s| s.is_stable()),
        "unstable section",
    )?;
    let mut worst: f64 = 0.0;
    for f in [10.0, 15.0, 100.0, 375.0] {
        let err =
            (db(measured_gain(&mut chain.clone(), f)) - db(analytic_chain_magnitude(f))).abs();
        check(err <= 0.5, format!("{f} Hz off by {err:.3} dB"))?;
        worst = worst.max(err);
    }
    let mut shallowest = f64::NEG_INFINITY;
    for f in [60.0, 120.0, 180.0] {
        let g = db(measured_gain(&mut chain.clone(), f));
        check(g <= -30.0, format!("{f} Hz only {g:.1} dB"))?;
        shallowest = shallowest.max(g);
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "max passband error {worst:.3} dB, notches <= {shallowest:.1} dB, {} stable sections",
        chain.sections().len()
    ))
}

// 3: protocol arithmetic.
fn protocol() -> Outcome {
    let e = |e: myodecode_core::Error| e.to_string();
    let three = build_training_set(3).map_err(e)?;
    check(
        three.trial_profile.frames() == 192,
        "3-DOF trial is not 192 frames",
    )?;
    check(
        (three.trial_profile.duration_s() - 6.4).abs() < 1e-12,
        "3-DOF trial is not 6.4 s",
    )?;
    check(
        three.trials().count() == 3 * 2 * 5,
        "3-DOF trials per movement != 5",
    )?;
    let six = build_training_set(6).map_err(e)?;
    check(
        six.trial_profile.frames() == 132,
        "6-DOF trial is not 132 frames",
    )?;
    check(
        (six.trial_profile.duration_s() - 4.4).abs() < 1e-12,
        "6-DOF trial is not 4.4 s",
    )?;
    check(
        six.trials().count() == 6 * 2 * 4,
        "6-DOF trials per movement != 4",
    )?;
    let set = build_target_set();
    check(set.len() == 9, "target set size")?;
    let digit_only = set
        .iter()
        .filter(|t| t.category() == TrialCategory::DigitOnly)
        .count();
    check(digit_only == 3, "digit-only count")?;
    check(
        set.iter()
            .all(|t| t.movements.iter().all(|(_, l)| *l == TARGET_LEVEL)),
        "target level",
    )?;
    let run = build_target_run(&set, Dof::for_count(6).map_err(e)?);
    check(run.trials().count() == 9, "target run trials")?;
    let s = abba_schedule(Condition::Banded, Condition::Free).map_err(e)?;
    let mut rev = s.conditions;
    rev.reverse();
    check(
        s.conditions == rev && s.conditions[0] != s.conditions[1],
        "ABBA order",
    )?;
    Ok("6.4 s/192 frames x5, 4.4 s/132 frames x4, 9 targets at 0.5, ABBA".into())
}

// 4: end-to-end synthetic session.
fn end_to_end(slot: &mut Option<SessionRecord>) -> Outcome {
    let start = Instant::now();
    let rec = simulate_session(&SessionConfig::default_for(3, 1)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let aligned = rec.per_dof_rmse.clone();
    let control = rec.control_per_dof_rmse.clone();
    *slot = Some(rec);
    for (a, c) in aligned.iter().zip(&control) {
        check(*a <= 0.10, format!("aligned RMSE {a:.4} > 0.10"))?;
        check(*c >= 3.0 * a, format!("control {c:.4} < 3x aligned {a:.4}"))?;
    }
    within(elapsed, 60.0)?;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    Ok(format!(
        "aligned {} control {} in {:.1} s",
        fmt(&aligned),
        fmt(&control),
        elapsed.as_secs_f64()
    ))
}

// 5: channel selection.
fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn standardized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        col /= norm;
    }
    out
}

/// Greedy forward selection by explicit least squares refits.
fn brute_force_greedy(features: &Matrix, kinematics: &Matrix, k: usize) -> (Vec<usize>, Vec<f64>) {
    let x = standardized(&to_na(features));
    let y = standardized(&to_na(kinematics));
    let total = y.norm_squared();
    let mut chosen: Vec<usize> = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..x.ncols()).filter(|j| !chosen.contains(j)) {
            let mut cols = chosen.clone();
            cols.push(j);
            let sub = x.select_columns(&cols);
            let beta = sub.clone().svd(true, true).solve(&y, 1e-12).unwrap();
            let explained = 1.0 - (&y - &sub * beta).norm_squared() / total;
            if best.is_none_or(|(_, b)| explained > b + 1e-12) {
                best = Some((j, explained));
            }
        }
        let (j, s) = best.unwrap();
        chosen.push(j);
        scores.push(s);
    }
    (chosen, scores)
}

fn planted(seed: u64, sigma: f64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, f) = (300, 100);
    let kin = gaussian(&mut rng, t, 3);
    let mut feats = gaussian(&mut rng, t, f);
    for (d, j) in [17, 42, 73].into_iter().enumerate() {
        for r in 0..t {
            let n: f64 = rng.sample(StandardNormal);
            feats[(r, j)] = kin[(r, d)] + sigma * n;
        }
    }
    (feats, kin)
}

fn selection() -> Outcome {
    let start = Instant::now();
    let e = |e: myodecode_core::Error| e.to_string();
    let mut recovered = 0;
    for seed in 0..100 {
        let (feats, kin) = planted(seed, 0.1);
        let sel = gram_schmidt_select(&feats, &kin, 3).map_err(e)?;
        let mut first = sel.order.clone();
        first.sort_unstable();
        if first == [17, 42, 73] {
            recovered += 1;
        }
    }
    check(
        recovered == 100,
        format!("planted set recovered in {recovered}/100 seeds"),
    )?;
    for seed in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = 8 + (seed as usize % 13);
        let d = 1 + (seed as usize % 3);
        let kin = gaussian(&mut rng, 120, d);
        let noise = gaussian(&mut rng, 120, f);
        let load = gaussian(&mut rng, d, f);
        let feats = kin.matmul(&load).add(&noise.scaled(1.5));
        let k = f.min(6);
        let got = gram_schmidt_select(&feats, &kin, k).map_err(e)?;
        let (order, scores) = brute_force_greedy(&feats, &kin, k);
        check(
            got.order == order,
            format!("seed {seed}: order differs from brute force"),
        )?;
        for (a, b) in got.scores.iter().zip(&scores) {
            check(
                (a - b).abs() < 1e-9,
                format!("seed {seed}: score {a} vs {b}"),
            )?;
        }
    }
    for seed in 0..10 {
        let (feats, kin) = planted(seed, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let scales: Vec<f64> = (0..feats.cols())
            .map(|_| rng.random_range(0.01..100.0))
            .collect();
        let scaled = Matrix::from_fn(feats.rows(), feats.cols(), |r, c| feats[(r, c)] * scales[c]);
        let a = gram_schmidt_select(&feats, &kin, 20).map_err(e)?;
        let b = gram_schmidt_select(&scaled, &kin, 20).map_err(e)?;
        check(
            a.order == b.order,
            format!("seed {seed}: order changes under rescaling"),
        )?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "planted 100/100, brute force agrees on 25 problems, scale invariant, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

// 6: Kalman numerics.
fn spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> Matrix {
    let b = Matrix::from_fn(n, n, |_, _| {
        scale.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let mut m = b.matmul(&b.transpose());
    for i in 0..n {
        m[(i, i)] += floor;
    }
    m
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, k: usize) -> KalmanModel {
    let a = Matrix::from_fn(d, d, |r, c| {
        let g: f64 = rng.sample(StandardNormal);
        if r == c {
            0.9 + 0.05 * g
        } else {
            0.05 * g
        }
    });
    let w = spd(rng, d, 0.01, 1e-4);
    let h = gaussian(rng, k, d);
    let q = spd(rng, k, 0.2, 0.05);
    KalmanModel::new(a, w.clone(), h, q, w).unwrap()
}

fn riccati_posterior(model: &KalmanModel) -> DMatrix<f64> {
    let (a, w, h, q) = (
        to_na(&model.a),
        to_na(&model.w),
        to_na(&model.h),
        to_na(&model.q),
    );
    let posterior = |prior: &DMatrix<f64>| {
        let s = &h * prior * h.transpose() + &q;
        let gain = prior * h.transpose() * s.try_inverse().unwrap();
        prior - &gain * &h * prior
    };
    let mut prior = w.clone();
    for _ in 0..100_000 {
        let next = &a * posterior(&prior) * a.transpose() + &w;
        let delta = (&next - &prior).abs().max();
        prior = next;
        if delta < 1e-16 {
            break;
        }
    }
    posterior(&prior)
}

fn kalman() -> Outcome {
    let e = |e: myodecode_core::Error| e.to_string();
    // Observation matrix from noiseless data.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(&mut rng, 3, 10);
    let mut xs = Matrix::zeros(2000, 3);
    let mut x = [0.0; 3];
    for t in 0..2000 {
        let mut next = [0.0; 3];
        for (r, v) in next.iter_mut().enumerate() {
            *v = (0..3).map(|c| model.a[(r, c)] * x[c]).sum::<f64>()
                + 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        x = next;
        xs.row_mut(t).copy_from_slice(&x);
    }
    let zs = xs.matmul(&model.h.transpose());
    let h_err = train_kalman(&xs, &zs)
        .map_err(e)?
        .model
        .h
        .sub(&model.h)
        .frobenius_norm();
    check(h_err < 1e-6, format!("H error {h_err:e}"))?;

    // Fuzzed covariance propagation, one million steps in total.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut min_eig = f64::INFINITY;
    let mut steps = 0usize;
    for m in 0..200 {
        let (d, k) = (1 + m % 6, 1 + (m * 7) % 20);
        let mut model = random_model(&mut rng, d, k);
        if m % 3 == 0 {
            model.q = model.q.scaled(1e-6);
        }
        let mut state = DecodeState::new(&model);
        let mut z = vec![0.0; k];
        for _ in 0..5000 {
            z.iter_mut()
                .for_each(|v| *v = rng.random_range(-50.0..50.0));
            state.step(&model, &z).map_err(e)?;
            let p = state.covariance();
            check(
                p.asymmetry() == 0.0,
                format!("model {m}: asymmetric covariance"),
            )?;
            let ev = to_na(p).symmetric_eigenvalues().min();
            min_eig = min_eig.min(ev);
            steps += 1;
        }
    }
    check(min_eig >= -1e-10, format!("min eigenvalue {min_eig:e}"))?;

    // Steady state against the Riccati fixed point.
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 3, 8);
        let mut state = DecodeState::new(&model);
        let z = vec![0.3; 8];
        for _ in 0..2000 {
            state.step(&model, &z).map_err(e)?;
        }
        let diff = (to_na(state.covariance()) - riccati_posterior(&model))
            .abs()
            .max();
        check(diff < 1e-8, format!("seed {seed}: Riccati gap {diff:e}"))?;
        worst = worst.max(diff);
    }
    Ok(format!(
        "H error {h_err:.1e}, {steps} fuzzed steps min eigenvalue {min_eig:.1e}, Riccati gap {worst:.1e}"
    ))
}

// 7: statistics against references.
fn statistics() -> Outcome {
    let e = |e: myodecode_core::Error| e.to_string();
    let h = holm_bonferroni(&[0.01, 0.2, 0.03], 0.05, 3).map_err(e)?;
    check(
        h.rejected == [true, false, false],
        format!("Holm rejections {:?}", h.rejected),
    )?;
    // 0.01 * 3 = 0.03; 0.03 * 2 = 0.06; max(0.2 * 1, 0.06) = 0.2.
    let want = [0.03, 0.2, 0.06];
    for (a, b) in h.adjusted.iter().zip(want) {
        check((a - b).abs() < 1e-12, format!("Holm adjusted {a} vs {b}"))?;
    }

    let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
    v.push(100.0);
    let flags = tukey_outliers(&v).map_err(e)?;
    let flagged: Vec<f64> = v
        .iter()
        .zip(&flags)
        .filter(|(_, f)| **f)
        .map(|(x, _)| *x)
        .collect();
    check(flagged == [100.0], format!("Tukey flagged {flagged:?}"))?;

    let r = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).map_err(e)?;
    let oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 3.0).unwrap().cdf(r.t.abs()));
    check((r.t - 3.873).abs() < 1e-3, format!("t = {}", r.t))?;
    check((r.p - 0.0305).abs() < 1e-3, format!("p = {}", r.p))?;
    check(
        (r.p - oracle).abs() < 1e-10,
        format!("p {} vs reference {oracle}", r.p),
    )?;
    Ok(format!(
        "Holm [0.03, 0.2, 0.06], Tukey flags 100, t = {:.4} p = {:.5}",
        r.t, r.p
    ))
}

// 8: clinical scoring and band torque.
fn scoring() -> Outcome {
    let e = |e: myodecode_core::Error| e.to_string();
    let s = bbt_score(16, 30.0, BbtVariant::Modified).map_err(e)?;
    check(
        s.score == 32.0,
        format!("modified BBT 16 blocks in 30 s = {}", s.score),
    )?;
    let model = TorqueModel::default();
    let rest = band_torque(0.0, &model).map_err(e)?;
    let full = band_torque(1.0, &model).map_err(e)?;
    check(rest == 0.34, format!("rest torque {rest}"))?;
    check(full == 0.85, format!("full torque {full}"))?;
    Ok("BBT 32, torque 0.34 / 0.85 N m".into())
}

// 9: streaming throughput and hot-path allocations.
fn streaming(rec: Option<&SessionRecord>) -> Outcome {
    let e = |e: myodecode_core::Error| e.to_string();
    let decoder: &Decoder = &rec.ok_or("no session decoder from criterion 4")?.decoders[0].1;
    let target = build_target_run(&build_target_set(), Dof::for_count(3).map_err(e)?);
    let mut raw = synth_emg(&target.kinematics, &SynthConfig::default_for(3, 99)).map_err(e)?;
    check(
        raw.len() >= 60_000,
        format!("only {} frames synthesized", raw.len()),
    )?;
    raw.truncate(60_000);

    let mut stream = StreamingDecoder::new(decoder).map_err(e)?;
    let warm = 1000;
    for f in &raw[..warm] {
        stream.push(f).map_err(e)?;
    }
    ALLOCATIONS.store(0, Ordering::SeqCst);
    COUNTING.store(true, Ordering::SeqCst);
    let mut outputs = 0usize;
    let mut failed = None;
    for f in &raw[warm..] {
        match stream.push(f) {
            Ok(Some(_)) => outputs += 1,
            Ok(None) => {}
            Err(err) => {
                failed = Some(err);
                break;
            }
        }
    }
    COUNTING.store(false, Ordering::SeqCst);
    if let Some(err) = failed {
        return Err(err.to_string());
    }
    let allocs = ALLOCATIONS.load(Ordering::SeqCst);
    check(allocs == 0, format!("{allocs} allocations on the hot path"))?;

    let mut stream = StreamingDecoder::new(decoder).map_err(e)?;
    let start = Instant::now();
    for f in &raw {
        stream.push(f).map_err(e)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let speed = 60.0 / elapsed;
    check(speed >= 50.0, format!("{speed:.1}x real time"))?;
    Ok(format!(
        "{speed:.0}x real time over 60 s, 0 allocations in {outputs} decoded ticks"
    ))
}

fn main() {
    let mut session = None;
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "feature bank", feature_bank()),
        (2, "filter chain", filter_chain()),
        (3, "protocol arithmetic", protocol()),
        (4, "end-to-end session", end_to_end(&mut session)),
        (5, "channel selection", selection()),
        (6, "kalman numerics", kalman()),
        (7, "statistics", statistics()),
        (8, "scoring and torque", scoring()),
        (9, "streaming decoder", streaming(session.as_ref())),
    ];

    let mut failures = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n} {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failures,
        results.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
