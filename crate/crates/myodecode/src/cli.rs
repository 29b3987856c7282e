use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use myodecode_core::analysis::BbtVariant;
use myodecode_core::protocol::Condition;

use crate::commands;
use crate::config::{parse_key_values, RunConfig};
use crate::error::{Error, Result};
use crate::formats;
use crate::threads::thread_cap;

#[derive(Debug, Parser)]
#[command(
    name = "myodecode",
    version,
    about = "Surface-EMG decoding: synthesize, train, decode, score"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a training session (raw EMG, kinematics, manifest).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output session directory.
        #[arg(long)]
        out: PathBuf,
        /// Write raw frames as raw.bin instead of raw.csv.
        #[arg(long)]
        binary: bool,
    },
    /// Fit baseline, channel selection and Kalman model on a session.
    Train {
        /// Session directory from `synth`.
        session: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model output directory; defaults to the session directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a session's raw recording with a trained model.
    Decode {
        /// Model directory from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Session directory holding raw.csv or raw.bin.
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the nine-trial target task and write a per-trial RMSE report.
    Task {
        /// Model directory from `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Run four times in ABBA order starting with this condition.
        #[arg(long, value_enum)]
        abba: Option<ConditionArg>,
        /// Condition label for a single run.
        #[arg(long, value_enum)]
        condition: Option<ConditionArg>,
        #[arg(long)]
        participant: Option<u32>,
    },
    /// Paired comparison of report files with Holm correction.
    Stats {
        /// Report CSVs: two to compare file against file, or any number
        /// with --split-condition.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Compare banded against free runs pooled from all reports.
        #[arg(long)]
        split_condition: bool,
        #[arg(long, default_value_t = myodecode_core::analysis::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a Box and Block Test.
    Bbt {
        #[arg(long, value_enum, default_value = "original")]
        variant: VariantArg,
        #[arg(long)]
        blocks: u32,
        /// Seconds taken; 60 for a full trial.
        #[arg(long, default_value_t = 60.0)]
        elapsed: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// `key=value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dof: Option<usize>,
    /// Number of selected features.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConditionArg {
    Banded,
    Free,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Banded => Condition::Banded,
            ConditionArg::Free => Condition::Free,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Original,
    Modified,
}

impl From<VariantArg> for BbtVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Original => BbtVariant::Original,
            VariantArg::Modified => BbtVariant::Modified,
        }
    }
}

impl ConfigArgs {
    /// Config file (if any) with flags applied on top.
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.dof {
            cfg.dof = d;
        }
        if let Some(k) = self.k {
            cfg.selection_k = k;
        }
        Ok(cfg)
    }

    /// Whether the DOF count was given by flag or config file.
    fn dof_given(&self) -> Result<bool> {
        if self.dof.is_some() {
            return Ok(true);
        }
        let Some(p) = &self.config else {
            return Ok(false);
        };
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(parse_key_values(&text, p)?.iter().any(|(k, _)| k == "dof"))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out, binary } => {
            let cfg = cfg.load()?;
            let o = commands::synth(&cfg, &out, binary)?;
            println!(
                "wrote {}: {} frames, {} samples, {}-DOF training protocol (config {})",
                out.display(),
                o.frames,
                o.samples,
                cfg.dof,
                &cfg.hash()[..12]
            );
        }
        Command::Train { session, cfg, out } => {
            let cfg = cfg.load()?;
            cfg.validate()?;
            let out = out.unwrap_or_else(|| session.clone());
            let o = commands::train(&session, &out, cfg.selection_k)?;
            let sel = &o.decoder.selection;
            println!(
                "selected {} features (explained {:.4}); model {} in {}",
                sel.k(),
                sel.scores.last().copied().unwrap_or(0.0),
                &o.model_hash[..12],
                out.display()
            );
            for w in &o.decoder.warnings {
                eprintln!("warning: {w:?}");
            }
        }
        Command::Decode {
            model,
            session,
            out,
        } => {
            if let Some(rmse) = commands::decode(&model, &session, &out)? {
                let cols: Vec<String> = rmse.iter().map(|r| format!("{r:.4}")).collect();
                println!("per-DOF RMSE: {}", cols.join(" "));
            }
            println!("wrote {}", out.join(formats::DECODED_CSV).display());
        }
        Command::Task {
            model,
            cfg,
            out,
            abba,
            condition,
            participant,
        } => {
            let mut run_cfg = cfg.load()?;
            if !cfg.dof_given()? {
                run_cfg.dof = formats::read_model_bin(&model.join(formats::MODEL_BIN))?.dof();
            }
            if let Some(c) = condition {
                run_cfg.condition = c.into();
            }
            if let Some(p) = participant {
                run_cfg.participant = p;
            }
            let rows = commands::task(&model, &out, &run_cfg, abba.map(Into::into), thread_cap()?)?;
            print_report(&rows);
            println!("wrote {}", out.join(formats::REPORT_CSV).display());
        }
        Command::Stats {
            reports,
            split_condition,
            alpha,
            out,
        } => {
            let decisions = commands::stats(&reports, split_condition, alpha, &out)?;
            println!(
                "{:<12} {:>9} {:>9} {:>11} rejected dropped",
                "category", "t", "p", "adjusted_p"
            );
            for d in &decisions {
                println!(
                    "{:<12} {:>9.4} {:>9.4} {:>11.4} {:<8} {:?}",
                    d.category.name(),
                    d.test.t,
                    d.test.p,
                    d.adjusted_p,
                    d.rejected,
                    d.outliers_dropped
                );
            }
            println!("wrote {}", out.join(formats::DECISIONS_CSV).display());
        }
        Command::Bbt {
            variant,
            blocks,
            elapsed,
        } => {
            let s = commands::bbt(blocks, elapsed, variant.into())?;
            println!("{}", s.score);
        }
    }
    Ok(())
}

fn print_report(rows: &[formats::ReportRow]) {
    let mut runs: Vec<(usize, Condition)> = rows.iter().map(|r| (r.run, r.condition)).collect();
    runs.dedup();
    for (run, condition) in runs {
        let mean = |f: &dyn Fn(&formats::ReportRow) -> bool| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.run == run && f(r))
                .map(|r| r.rmse)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        println!(
            "run {run} ({}): digit_only {:.4}  digit_wrist {:.4}  total {:.4}",
            condition.name(),
            mean(&|r| r.category == myodecode_core::protocol::TrialCategory::DigitOnly),
            mean(&|r| r.category == myodecode_core::protocol::TrialCategory::DigitWrist),
            mean(&|_| true),
        );
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                crate::error::EXIT_USAGE
            } else {
                crate::error::EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => crate::error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
