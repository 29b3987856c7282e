//! On-disk formats: CSV tables for everything plot tooling reads, a small
//! binary format for raw frames and the trained model.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use myodecode_core::analysis::{Category, CategoryDecision};
use myodecode_core::features::BaselineProfile;
use myodecode_core::filter::RawFrame;
use myodecode_core::kalman::KalmanModel;
use myodecode_core::linalg::Matrix;
use myodecode_core::pipeline::Decoder;
use myodecode_core::protocol::{Condition, Dof, ProtocolRun, TrialCategory};
use myodecode_core::select::SelectionResult;
use myodecode_core::session::FeatureSet;
use myodecode_core::{Trajectory, CHANNELS};

use crate::error::{Error, Result};

pub const RAW_CSV: &str = "raw.csv";
pub const RAW_BIN: &str = "raw.bin";
pub const KINEMATICS_CSV: &str = "kinematics.csv";
pub const FEATURES_CSV: &str = "features.csv";
pub const BASELINE_CSV: &str = "baseline.csv";
pub const SELECTION_CSV: &str = "selection.csv";
pub const MODEL_BIN: &str = "model.bin";
pub const MODEL_CSV: &str = "model.csv";
pub const DECODED_CSV: &str = "decoded.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const DECISIONS_CSV: &str = "decisions.csv";
pub const MANIFEST: &str = "manifest";

pub const MODEL_MAGIC: u32 = u32::from_le_bytes(*b"MYOD");
pub const MODEL_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, i: usize) -> Result<T> {
    let field = record.get(i).unwrap_or("");
    field.trim().parse().map_err(|_| {
        Error::format(
            path,
            format!(
                "line {}: cannot parse field {i} ({field:?})",
                line_of(record)
            ),
        )
    })
}

fn expect_header(path: &Path, got: &csv::StringRecord, want: &[String]) -> Result<()> {
    if got.iter().ne(want.iter().map(String::as_str)) {
        return Err(Error::format(
            path,
            format!(
                "unexpected header {:?}, expected {:?}",
                got.iter().collect::<Vec<_>>().join(","),
                want.join(",")
            ),
        ));
    }
    Ok(())
}

fn raw_header() -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..CHANNELS).map(|c| format!("ch{c}")))
        .collect()
}

pub fn write_raw_csv(path: &Path, frames: &[RawFrame]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(raw_header()).map_err(err)?;
    let mut row = Vec::with_capacity(CHANNELS + 1);
    for f in frames {
        row.clear();
        row.push(f.t.to_string());
        row.extend(f.samples.iter().map(f64::to_string));
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<RawFrame>> {
    let mut r = csv_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    expect_header(path, &header, &raw_header())?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let t = parse(path, &rec, 0)?;
        let mut samples = [0.0; CHANNELS];
        for (c, s) in samples.iter_mut().enumerate() {
            *s = parse(path, &rec, c + 1)?;
        }
        out.push(RawFrame::new(t, samples)?);
    }
    Ok(out)
}

/// Little-endian `u64` sample index followed by 32 `f64` samples, per frame.
pub fn write_raw_bin(path: &Path, frames: &[RawFrame]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for f in frames {
        w.write_all(&f.t.to_le_bytes()).map_err(io)?;
        for s in &f.samples {
            w.write_all(&s.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_raw_bin(path: &Path) -> Result<Vec<RawFrame>> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let width = 8 * (CHANNELS + 1);
    if bytes.len() % width != 0 {
        return Err(Error::format(
            path,
            format!(
                "{} bytes is not a whole number of {width}-byte frames",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(width)
        .map(|chunk| {
            let word = |i: usize| <[u8; 8]>::try_from(&chunk[8 * i..8 * i + 8]).expect("8 bytes");
            let samples = std::array::from_fn(|c| f64::from_le_bytes(word(c + 1)));
            Ok(RawFrame::new(u64::from_le_bytes(word(0)), samples)?)
        })
        .collect()
}

/// Reads `raw.bin` if present in `dir`, else `raw.csv`.
pub fn read_raw_dir(dir: &Path) -> Result<Vec<RawFrame>> {
    let bin = dir.join(RAW_BIN);
    if bin.exists() {
        read_raw_bin(&bin)
    } else {
        read_raw_csv(&dir.join(RAW_CSV))
    }
}

/// Kinematic frames with their protocol labels.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsTable {
    pub dofs: Vec<Dof>,
    pub trajectory: Trajectory,
    pub rest: Vec<bool>,
    pub trial: Vec<Option<usize>>,
}

fn kinematics_header(dofs: &[Dof]) -> Vec<String> {
    ["k", "rest", "trial"]
        .into_iter()
        .map(String::from)
        .chain(dofs.iter().map(|d| d.name().to_string()))
        .collect()
}

pub fn write_kinematics_csv(path: &Path, run: &ProtocolRun) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(kinematics_header(&run.dofs)).map_err(err)?;
    let rest = run.rest_mask();
    let trial = run.trial_ids();
    for (k, frame) in run.kinematics.frames().enumerate() {
        let mut row = vec![
            k.to_string(),
            u8::from(rest[k]).to_string(),
            trial[k].map_or_else(String::new, |t| t.to_string()),
        ];
        row.extend(frame.iter().map(f64::to_string));
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)
}

pub fn read_kinematics_csv(path: &Path) -> Result<KinematicsTable> {
    let mut r = csv_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let dofs = header
        .iter()
        .skip(3)
        .map(|name| {
            Dof::from_name(name).ok_or_else(|| Error::format(path, format!("unknown DOF {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    expect_header(path, &header, &kinematics_header(&dofs))?;
    if dofs.is_empty() {
        return Err(Error::format(path, "no DOF columns"));
    }
    let mut table = KinematicsTable {
        trajectory: Trajectory::new(dofs.len()),
        dofs,
        rest: Vec::new(),
        trial: Vec::new(),
    };
    let mut frame = vec![0.0; table.dofs.len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let k: usize = parse(path, &rec, 0)?;
        if k != i {
            return Err(Error::format(
                path,
                format!("line {}: frame index {k}, expected {i}", line_of(&rec)),
            ));
        }
        table.rest.push(parse::<u8>(path, &rec, 1)? != 0);
        table.trial.push(match rec.get(2).unwrap_or("") {
            "" => None,
            _ => Some(parse(path, &rec, 2)?),
        });
        for (d, v) in frame.iter_mut().enumerate() {
            *v = parse(path, &rec, d + 3)?;
        }
        table.trajectory.push(&frame);
    }
    Ok(table)
}

fn indexed_header(first: &str, prefix: &str, n: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Smoothed features, one row per tick, with a leading comment recording
/// whether the rest baseline has been subtracted.
pub fn write_features_csv(
    path: &Path,
    features: &FeatureSet,
    baseline_applied: bool,
) -> Result<()> {
    let mut file = create(path)?;
    let tag = if baseline_applied { "applied" } else { "raw" };
    writeln!(file, "#baseline={tag}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e| Error::csv(path, e);
    w.write_record(indexed_header("k", "f", features.n_features()))
        .map_err(err)?;
    for k in 0..features.len() {
        let row =
            std::iter::once(k.to_string()).chain(features.values.row(k).iter().map(f64::to_string));
        w.write_record(row).map_err(err)?;
    }
    finish(path, w)
}

/// Returns the features and whether the baseline was applied.
pub fn read_features_csv(path: &Path) -> Result<(FeatureSet, bool)> {
    let mut reader = open(path)?;
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let applied = match first.trim() {
        "#baseline=applied" => true,
        "#baseline=raw" => false,
        other => {
            return Err(Error::format(
                path,
                format!("expected #baseline=applied|raw, got {other:?}"),
            ))
        }
    };
    let mut r = csv_reader(reader);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let n = header.len().saturating_sub(1);
    expect_header(path, &header, &indexed_header("k", "f", n))?;
    let mut data = Vec::new();
    let mut warmup = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let k: u64 = parse(path, &rec, 0)?;
        warmup.push(myodecode_core::pipeline::is_warmup_tick(k));
        for i in 0..n {
            data.push(parse(path, &rec, i + 1)?);
        }
    }
    let values = Matrix::from_vec(warmup.len(), n, data);
    Ok((FeatureSet { values, warmup }, applied))
}

pub fn write_selection_csv(path: &Path, sel: &SelectionResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["step", "feature_index", "score"])
        .map_err(err)?;
    for (step, (i, s)) in sel.order.iter().zip(&sel.scores).enumerate() {
        w.write_record([step.to_string(), i.to_string(), s.to_string()])
            .map_err(err)?;
    }
    finish(path, w)
}

pub fn read_selection_csv(path: &Path, n_features: usize) -> Result<SelectionResult> {
    let mut r = csv_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    expect_header(
        path,
        &header,
        &["step", "feature_index", "score"].map(String::from),
    )?;
    let (mut order, mut scores) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if parse::<usize>(path, &rec, 0)? != i {
            return Err(Error::format(
                path,
                format!("line {}: steps out of order", line_of(&rec)),
            ));
        }
        order.push(parse(path, &rec, 1)?);
        scores.push(parse(path, &rec, 2)?);
    }
    Ok(SelectionResult::from_parts(order, scores, n_features)?)
}

pub fn write_baseline_csv(path: &Path, baseline: &BaselineProfile) -> Result<()> {
    let mut file = create(path)?;
    writeln!(file, "#frames={}", baseline.n_frames).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e| Error::csv(path, e);
    w.write_record(["feature_index", "mean"]).map_err(err)?;
    for (i, m) in baseline.means.iter().enumerate() {
        w.write_record([i.to_string(), m.to_string()])
            .map_err(err)?;
    }
    finish(path, w)
}

pub fn read_baseline_csv(path: &Path) -> Result<BaselineProfile> {
    let mut reader = open(path)?;
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let n_frames = first
        .trim()
        .strip_prefix("#frames=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(path, "missing #frames=N line"))?;
    let mut r = csv_reader(reader);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    expect_header(path, &header, &["feature_index", "mean"].map(String::from))?;
    let mut means = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if parse::<usize>(path, &rec, 0)? != i {
            return Err(Error::format(
                path,
                format!("line {}: indices out of order", line_of(&rec)),
            ));
        }
        means.push(parse(path, &rec, 1)?);
    }
    Ok(BaselineProfile { means, n_frames })
}

/// 16-byte header (magic, D, k, version as LE `u32`), then LE `f64`
/// row-major A, W, H, Q and P0.
pub fn encode_model(model: &KalmanModel) -> Vec<u8> {
    let (d, k) = (model.dof(), model.n_obs());
    let mut out = Vec::with_capacity(16 + 8 * (3 * d * d + k * d + k * k));
    for word in [MODEL_MAGIC, d as u32, k as u32, MODEL_VERSION] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for m in [&model.a, &model.w, &model.h, &model.q, &model.p0] {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<KalmanModel> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated model header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != MODEL_MAGIC {
        return Err(Error::format(path, "not a model file (bad magic)"));
    }
    if word(3) != MODEL_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported model version {}", word(3)),
        ));
    }
    let (d, k) = (word(1) as usize, word(2) as usize);
    let shapes = [(d, d), (d, d), (k, d), (k, k), (d, d)];
    let expected = 16 + 8 * shapes.iter().map(|(r, c)| r * c).sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "model for D={d}, k={k} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let mut values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut next =
        |(r, c): (usize, usize)| Matrix::from_vec(r, c, values.by_ref().take(r * c).collect());
    let [a, w, h, q, p0] = shapes.map(&mut next);
    Ok(KalmanModel::new(a, w, h, q, p0)?)
}

pub fn write_model_bin(path: &Path, model: &KalmanModel) -> Result<Vec<u8>> {
    let bytes = encode_model(model);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn read_model_bin(path: &Path) -> Result<KalmanModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(path, &bytes)
}

/// Human-readable dump of the model matrices, one entry per row.
pub fn write_model_csv(path: &Path, model: &KalmanModel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["matrix", "row", "col", "value"])
        .map_err(err)?;
    for (name, m) in [
        ("A", &model.a),
        ("W", &model.w),
        ("H", &model.h),
        ("Q", &model.q),
        ("P0", &model.p0),
    ] {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                w.write_record([
                    name.to_string(),
                    r.to_string(),
                    c.to_string(),
                    m[(r, c)].to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    finish(path, w)
}

/// Loads `model.bin`, `selection.csv` and `baseline.csv` from a model
/// directory.
pub fn read_decoder(dir: &Path) -> Result<Decoder> {
    let model = read_model_bin(&dir.join(MODEL_BIN))?;
    let baseline = read_baseline_csv(&dir.join(BASELINE_CSV))?;
    let selection = read_selection_csv(&dir.join(SELECTION_CSV), baseline.len())?;
    Ok(Decoder::new(baseline, selection, model)?)
}

pub fn write_trajectory_csv(path: &Path, dofs: &[Dof], traj: &Trajectory) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    let header = std::iter::once("k").chain(dofs.iter().map(|d| d.name()));
    w.write_record(header).map_err(err)?;
    for (k, frame) in traj.frames().enumerate() {
        let row = std::iter::once(k.to_string()).chain(frame.iter().map(f64::to_string));
        w.write_record(row).map_err(err)?;
    }
    finish(path, w)
}

/// One per-trial RMSE row of a target-task report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub participant: u32,
    pub condition: Condition,
    pub run: usize,
    pub trial_id: usize,
    pub label: String,
    pub category: TrialCategory,
    pub rmse: f64,
}

const REPORT_HEADER: [&str; 7] = [
    "participant",
    "condition",
    "run",
    "trial_id",
    "label",
    "category",
    "rmse",
];

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.participant.to_string(),
            r.condition.name().to_string(),
            r.run.to_string(),
            r.trial_id.to_string(),
            r.label.clone(),
            r.category.name().to_string(),
            r.rmse.to_string(),
        ])
        .map_err(err)?;
    }
    finish(path, w)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv_reader(open(path)?);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    expect_header(path, &header, &REPORT_HEADER.map(String::from))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let condition = Condition::from_name(&rec[1]).ok_or_else(|| {
            Error::format(
                path,
                format!("line {}: unknown condition {:?}", line_of(&rec), &rec[1]),
            )
        })?;
        let category = TrialCategory::from_name(&rec[5]).ok_or_else(|| {
            Error::format(
                path,
                format!("line {}: unknown category {:?}", line_of(&rec), &rec[5]),
            )
        })?;
        let rmse: f64 = parse(path, &rec, 6)?;
        if rmse.is_nan() || rmse < 0.0 {
            return Err(Error::format(
                path,
                format!("line {}: negative or NaN RMSE", line_of(&rec)),
            ));
        }
        rows.push(ReportRow {
            participant: parse(path, &rec, 0)?,
            condition,
            run: parse(path, &rec, 2)?,
            trial_id: parse(path, &rec, 3)?,
            label: rec[4].to_string(),
            category,
            rmse,
        });
    }
    Ok(rows)
}

/// Per-run category summaries: `run,condition,category,mean,sd,n`.
pub fn write_summary_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["run", "condition", "category", "mean", "sd", "n"])
        .map_err(err)?;
    let mut runs: Vec<(usize, Condition)> = rows.iter().map(|r| (r.run, r.condition)).collect();
    runs.dedup();
    for (run, condition) in runs {
        for cat in Category::ALL {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.run == run && in_category(r.category, cat))
                .map(|r| r.rmse)
                .collect();
            let s = myodecode_core::analysis::MeanSd::of(&vals);
            w.write_record([
                run.to_string(),
                condition.name().to_string(),
                cat.name().to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.n.to_string(),
            ])
            .map_err(err)?;
        }
    }
    finish(path, w)
}

pub fn in_category(trial: TrialCategory, cat: Category) -> bool {
    match cat {
        Category::DigitOnly => trial == TrialCategory::DigitOnly,
        Category::DigitWrist => trial == TrialCategory::DigitWrist,
        Category::Total => true,
    }
}

pub fn write_decisions_csv(path: &Path, decisions: &[CategoryDecision]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record([
        "category",
        "t",
        "p",
        "adjusted_p",
        "rejected",
        "outliers_dropped",
    ])
    .map_err(err)?;
    for d in decisions {
        let dropped: Vec<String> = d.outliers_dropped.iter().map(u32::to_string).collect();
        w.write_record([
            d.category.name().to_string(),
            d.test.t.to_string(),
            d.test.p.to_string(),
            d.adjusted_p.to_string(),
            d.rejected.to_string(),
            dropped.join(";"),
        ])
        .map_err(err)?;
    }
    finish(path, w)
}
