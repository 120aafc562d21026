//! Command-line front end for the curation pipeline.
//!
//! Stages talk to each other only through files. Every run writes
//! `run-<subcommand>.json` into its output directory.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
pub mod record;

pub use record::RunRecord;

#[derive(Debug, Parser)]
#[command(name = "pamcurate", version, about = "Curate passive acoustic monitoring windows for self-supervised training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match AIS pulses to recorded windows inside each hydrophone's geofence.
    Align(AlignArgs),
    /// Draw the balanced AIS subset from an aligned sidecar.
    CurateAis(CurateArgs),
    /// Fit the hierarchical k-means model on embedding shards.
    Fit(FitArgs),
    /// Select windows per leaf cluster under the hierarchical quota.
    Sample(SampleArgs),
    /// Merge the AIS and clustering manifests into the final dataset.
    Assemble(AssembleArgs),
    /// Occurrence curve, chosen threshold and hydrophone coordinates.
    Stats(StatsArgs),
    /// Re-run a recorded invocation and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice in the stage (required).
    #[arg(long)]
    pub seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub workers: Option<u32>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub config: PathBuf,
    /// AIS CSV file.
    #[arg(long)]
    pub ais: PathBuf,
    /// Geofence side length in kilometres.
    #[arg(long, default_value_t = pamcurate::geo::DEFAULT_SIDE_KM)]
    pub side_km: f64,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub config: PathBuf,
    /// Sidecar written by `align`.
    #[arg(long)]
    pub aligned: PathBuf,
    /// Occurrence threshold; overrides knee detection.
    #[arg(long)]
    pub threshold: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Shard files or directories of `*.pamemb` files.
    #[arg(long, num_args = 1.., required = true)]
    pub shards: Vec<PathBuf>,
    /// Cluster counts per level, finest first, e.g. `6000,400,40,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = pamcurate::hkmeans::FitConfig::DEFAULT_BATCH)]
    pub batch_size: usize,
    #[arg(long, default_value_t = pamcurate::hkmeans::FitConfig::DEFAULT_PASSES)]
    pub passes: usize,
    #[arg(long, default_value_t = pamcurate::hkmeans::FitConfig::DEFAULT_RESAMPLE_ROUNDS)]
    pub resample_rounds: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub shards: Vec<PathBuf>,
    /// Model written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of windows to select.
    #[arg(long)]
    pub target_n: u64,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ais_manifest: PathBuf,
    #[arg(long)]
    pub hkmeans_manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub aligned: PathBuf,
    #[arg(long)]
    pub threshold: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A `run-<subcommand>.json` file.
    #[arg(long)]
    pub record: PathBuf,
    /// Where to write the replayed outputs.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&raw)?;
    let argv = raw
        .iter()
        .skip(1)
        .map(|a| a.to_str().map(str::to_owned).context("non-UTF-8 argument"))
        .collect::<Result<Vec<_>>>()?;
    match cli.command {
        Command::Replay(a) => replay(&a),
        cmd => commands::dispatch(cmd, argv),
    }
}

/// Runs the recorded argv again into `out` and checks every output digest.
fn replay(args: &ReplayArgs) -> Result<()> {
    let rec = RunRecord::load(&args.record)?;
    let argv = with_out(&rec.argv, &args.out.display().to_string());
    run(std::iter::once("pamcurate".to_string()).chain(argv))?;
    let again = RunRecord::load(&args.out.join(RunRecord::file_name(&rec.subcommand)))?;
    if again.inputs != rec.inputs {
        bail!("replay inputs differ from {}", args.record.display());
    }
    let mismatched: Vec<_> = rec
        .outputs
        .iter()
        .filter(|(name, d)| again.outputs.get(*name) != Some(d))
        .map(|(name, _)| name.clone())
        .collect();
    if !mismatched.is_empty() || again.outputs.len() != rec.outputs.len() {
        bail!("replay outputs differ: {mismatched:?}");
    }
    println!("replay ok: {} outputs identical", rec.outputs.len());
    Ok(())
}

fn with_out(argv: &[String], out: &str) -> Vec<String> {
    let mut res = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            res.push(a.clone());
            res.push(out.to_string());
            it.next();
        } else if a.starts_with("--out=") {
            res.push(format!("--out={out}"));
        } else {
            res.push(a.clone());
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_is_substituted() {
        let v: Vec<String> = ["align", "--out", "a", "--seed", "1"].map(String::from).to_vec();
        assert_eq!(with_out(&v, "b"), ["align", "--out", "b", "--seed", "1"]);
        let v: Vec<String> = ["align", "--out=a"].map(String::from).to_vec();
        assert_eq!(with_out(&v, "b"), ["align", "--out=b"]);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = Cli::try_parse_from(["pamcurate", "assemble", "--out", "x", "--ais-manifest", "a", "--hkmeans-manifest", "b"]);
        assert!(err.is_err());
    }

    #[test]
    fn levels_parse_as_csv() {
        let cli = Cli::try_parse_from(["pamcurate", "fit", "--seed", "3", "--out", "o", "--shards", "s", "--levels", "60,8,2"]).unwrap();
        match cli.command {
            Command::Fit(f) => assert_eq!(f.levels, vec![60, 8, 2]),
            _ => unreachable!(),
        }
    }
}
