use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::compare::{compare_runs, write_comparison, Tolerances};
use super::config::ExperimentConfig;
use super::train::run_experiment;
use super::HarnessError;
use crate::numerics::{format_limits, FormatSpec, Precision, RoundingMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bf16emu", version, about = "BF16/FP16 training emulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one arm described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        precision: Option<Precision>,
        #[arg(long)]
        rounding: Option<RoundingMode>,
        /// Power of two, as a number or `2^k`.
        #[arg(long = "loss-scale")]
        loss_scale: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare metrics CSVs against the first one.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "loss-tol", default_value_t = 0.02)]
        loss_tol: f64,
        #[arg(long = "metric-tol", default_value_t = 0.01)]
        metric_tol: f64,
        #[arg(required = true, num_args = 2..)]
        csvs: Vec<PathBuf>,
    },
    /// Print the numeric limits of FP32, BF16 and FP16.
    Limits,
}

/// `x` truncated (not rounded) to three significant digits, e.g. `3.38e38`.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let mut e = x.abs().log10().floor() as i32;
    let mut m = x.abs() / 10f64.powi(e);
    if m >= 10.0 {
        m /= 10.0;
        e += 1;
    } else if m < 1.0 {
        m *= 10.0;
        e -= 1;
    }
    let t = (m * 100.0 + 1e-9).floor() / 100.0;
    format!("{}{t:.2}e{e}", if x < 0.0 { "-" } else { "" })
}

/// The limits table printed by `limits`.
pub fn limits_table() -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>10} {:>12} {:>12} {:>14} {:>10}",
        "format", "s,e,m", "max_normal", "min_normal", "min_subnormal", "epsilon"
    );
    for spec in [FormatSpec::FP32, FormatSpec::BF16, FormatSpec::FP16] {
        let l = format_limits(spec);
        let bits = format!("1,{},{}", spec.exponent_bits(), spec.mantissa_bits());
        let sub = l.min_subnormal.map_or("n/a".to_string(), |v| sig3(v as f64));
        let _ = writeln!(
            s,
            "{:<6} {:>10} {:>12} {:>12} {:>14} {:>10}",
            spec.precision().name(),
            bits,
            sig3(l.max_normal as f64),
            sig3(l.min_normal as f64),
            sub,
            sig3(l.epsilon as f64)
        );
    }
    let _ = writeln!(s, "\nvalues truncated to 3 significant digits; exact:");
    for spec in [FormatSpec::FP32, FormatSpec::BF16, FormatSpec::FP16] {
        let l = format_limits(spec);
        let sub = l.min_subnormal.map_or("n/a".to_string(), |v| format!("{v:e}"));
        let _ = writeln!(
            s,
            "{:<6} max_normal={:e} min_normal={:e} min_subnormal={sub} epsilon={:e}",
            spec.precision().name(),
            l.max_normal,
            l.min_normal,
            l.epsilon
        );
    }
    s
}

fn train_command(
    config: PathBuf,
    precision: Option<Precision>,
    rounding: Option<RoundingMode>,
    loss_scale: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    set: Vec<String>,
) -> Result<i32, HarnessError> {
    let mut cfg = ExperimentConfig::load(&config)?;
    for kv in &set {
        let (k, v) = kv.split_once('=').ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(p) = precision {
        cfg.precision = p;
    }
    if let Some(r) = rounding {
        cfg.rounding = r;
    }
    if let Some(s) = loss_scale {
        cfg.set("loss_scale", &s)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let report = run_experiment(&cfg)?;
    for row in &report.rows {
        println!(
            "epoch {:>3} iter {:>6} loss {:<12} eval {:<12} underflow {}",
            row.epoch, row.iter, row.loss, row.eval_metric, row.grad_underflow_frac
        );
    }
    println!("wrote {}", cfg.out.display());
    match report.diverged_at {
        Some(at) => {
            eprintln!("diverged: non-finite loss at iteration {at}");
            Ok(EXIT_DIVERGED)
        }
        None => Ok(EXIT_OK),
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train { config, precision, rounding, loss_scale, seed, out, set } => {
            train_command(config, precision, rounding, loss_scale, seed, out, set)
        }
        Command::Compare { out, loss_tol, metric_tol, csvs } => {
            compare_runs(&csvs, Tolerances { loss_rel: loss_tol, metric_abs: metric_tol }).and_then(|summary| {
                write_comparison(&summary, &out)?;
                print!("{}", summary.report());
                Ok(EXIT_OK)
            })
        }
        Command::Limits => {
            print!("{}", limits_table());
            Ok(EXIT_OK)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })
}
