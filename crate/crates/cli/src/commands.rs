use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use pamcurate::ais::{curate, detect_knee, histogram, to_entries, Threshold};
use pamcurate::assemble::assemble;
use pamcurate::geo::{align, load_ais_csv, read_sidecar, write_ais_csv, write_sidecar};
use pamcurate::hkmeans::{build_hierarchy, read_model, write_model, FitConfig, ShardFiles};
use pamcurate::hsample::{
    allocate_quotas, count_leaves, emit, merge, read_checkpoint, write_checkpoint, Checkpoint, SelectionState,
};
use pamcurate::manifest::{read_manifest, write_manifest};
use pamcurate::model::{windows_per_hydrophone, WindowIndex};
use pamcurate::shard::{peek_shard_header, read_shard_with_dim};
use pamcurate::{CurationManifest, DeploymentConfig};

use crate::record::{Digests, RunRecord, DIGEST_ALGORITHM};
use crate::{AlignArgs, AssembleArgs, Command, Common, CurateArgs, FitArgs, SampleArgs, StatsArgs};

/// Shards folded into the selection between checkpoint writes.
const CHECKPOINT_EVERY: usize = 32;

struct Stage<'a> {
    name: &'static str,
    common: &'a Common,
    inputs: Vec<PathBuf>,
}

pub(crate) fn dispatch(cmd: Command, argv: Vec<String>) -> Result<()> {
    let (stage, body): (Stage, Box<dyn FnOnce(&Path) -> Result<Vec<String>> + Send + '_>) = match &cmd {
        Command::Align(a) => (
            Stage { name: "align", common: &a.common, inputs: vec![a.config.clone(), a.ais.clone()] },
            Box::new(move |out| cmd_align(a, out)),
        ),
        Command::CurateAis(a) => (
            Stage { name: "curate-ais", common: &a.common, inputs: vec![a.config.clone(), a.aligned.clone()] },
            Box::new(move |out| cmd_curate_ais(a, out)),
        ),
        Command::Fit(a) => {
            let shards = list_shards(&a.shards)?;
            (
                Stage { name: "fit", common: &a.common, inputs: shards.clone() },
                Box::new(move |out| cmd_fit(a, shards, out)),
            )
        }
        Command::Sample(a) => {
            let shards = list_shards(&a.shards)?;
            let mut inputs = vec![a.config.clone(), a.model.clone()];
            inputs.extend(shards.iter().cloned());
            (
                Stage { name: "sample", common: &a.common, inputs },
                Box::new(move |out| cmd_sample(a, shards, out)),
            )
        }
        Command::Assemble(a) => (
            Stage {
                name: "assemble",
                common: &a.common,
                inputs: vec![a.ais_manifest.clone(), a.hkmeans_manifest.clone()],
            },
            Box::new(move |out| cmd_assemble(a, out)),
        ),
        Command::Stats(a) => (
            Stage { name: "stats", common: &a.common, inputs: vec![a.config.clone(), a.aligned.clone()] },
            Box::new(move |out| cmd_stats(a, out)),
        ),
        Command::Replay(_) => unreachable!("handled by the caller"),
    };
    execute(stage, argv, body)
}

fn execute(
    stage: Stage<'_>,
    argv: Vec<String>,
    body: Box<dyn FnOnce(&Path) -> Result<Vec<String>> + Send + '_>,
) -> Result<()> {
    for p in &stage.inputs {
        if !p.is_file() {
            bail!("input file {} does not exist or is not a file", p.display());
        }
    }
    let out = &stage.common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let mut digests = Digests::default();
    for p in &stage.inputs {
        digests.input(p)?;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = stage.common.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        pool = pool.num_threads(w as usize);
    }
    let pool = pool.build().context("starting worker pool")?;
    let written = pool.install(|| body(out))?;
    for name in &written {
        digests.output(out, name)?;
    }
    RunRecord {
        tool: "pamcurate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: stage.name.into(),
        argv,
        seed: stage.common.seed,
        workers: stage.common.workers,
        digest_algorithm: DIGEST_ALGORITHM.into(),
        inputs: digests.inputs,
        outputs: digests.outputs,
    }
    .write(out)
}

fn load_config(path: &Path) -> Result<DeploymentConfig> {
    DeploymentConfig::load(path).with_context(|| format!("loading deployment config {}", path.display()))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<String> {
    let path = out.join(name);
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(name.to_string())
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<String> {
    let path = out.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(name.to_string())
}

/// Expands directories to their `*.pamemb` files, sorted by name.
pub(crate) fn list_shards(args: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in args {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing shard directory {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .with_context(|| format!("listing shard directory {}", p.display()))?;
            found.retain(|f| f.extension().is_some_and(|e| e == "pamemb") && f.is_file());
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no shard files found in {:?}", args);
    }
    Ok(out)
}

fn shard_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct AlignStats {
    rows_read: u64,
    malformed_rows: u64,
    invalid_pulses: u64,
    aligned_pulses: u64,
    aligned_windows: u64,
    ships: u64,
    side_km: f64,
}

fn cmd_align(a: &AlignArgs, out: &Path) -> Result<Vec<String>> {
    let config = load_config(&a.config)?;
    let (records, parse_rejects) =
        load_ais_csv(&a.ais).with_context(|| format!("reading AIS file {}", a.ais.display()))?;
    let alignment = align(&records, &config, a.side_km)?;
    write_sidecar(&alignment.windows, out.join("aligned.csv"))?;
    let pulses_path = out.join("aligned_pulses.csv");
    let file = std::fs::File::create(&pulses_path).with_context(|| format!("writing {}", pulses_path.display()))?;
    write_ais_csv(&alignment.pulses, file)?;
    let stats = AlignStats {
        rows_read: records.len() as u64 + parse_rejects.malformed_rows,
        malformed_rows: parse_rejects.malformed_rows,
        invalid_pulses: alignment.rejects.invalid_pulses,
        aligned_pulses: alignment.pulses.len() as u64,
        aligned_windows: alignment.windows.len() as u64,
        ships: histogram(&alignment.windows).total_ships() as u64,
        side_km: a.side_km,
    };
    eprintln!(
        "align: {} windows, {} pulses, {} malformed rows, {} invalid pulses",
        stats.aligned_windows, stats.aligned_pulses, stats.malformed_rows, stats.invalid_pulses
    );
    Ok(vec![
        "aligned.csv".into(),
        "aligned_pulses.csv".into(),
        write_json(out, "align_stats.json", &stats)?,
    ])
}

#[derive(Serialize)]
struct ThresholdReport {
    threshold: Option<Threshold>,
    /// Why no threshold could be chosen, when `threshold` is null.
    error: Option<String>,
    ships: u64,
    ship_windows: u64,
}

fn choose_threshold(hist: &pamcurate::ais::OccurrenceHistogram, manual: Option<u32>) -> Result<Threshold, String> {
    match manual {
        Some(t) => Threshold::manual(t).map_err(|e| e.to_string()),
        None => detect_knee(hist).map_err(|e| e.to_string()),
    }
}

#[derive(Serialize)]
struct CurateReport {
    threshold: Threshold,
    aligned_windows: u64,
    retained_windows: u64,
}

fn cmd_curate_ais(a: &CurateArgs, out: &Path) -> Result<Vec<String>> {
    let config = load_config(&a.config)?;
    let index = WindowIndex::build(&config)?;
    let aligned = read_sidecar(&a.aligned).with_context(|| format!("reading sidecar {}", a.aligned.display()))?;
    let hist = histogram(&aligned);
    let threshold = choose_threshold(&hist, a.threshold)
        .map_err(|e| anyhow::anyhow!("{e}; pass --threshold to set it by hand"))?;
    let retained = curate(&aligned, threshold, a.common.seed);
    let manifest = CurationManifest::from_entries(to_entries(&retained, &index)?)?;
    write_manifest(&manifest, out.join("ais_manifest.jsonl"))?;
    let report = CurateReport {
        threshold,
        aligned_windows: aligned.len() as u64,
        retained_windows: manifest.len() as u64,
    };
    eprintln!("curate-ais: t = {}, kept {} of {} windows", threshold.t, manifest.len(), aligned.len());
    Ok(vec!["ais_manifest.jsonl".into(), write_json(out, "curate_ais.json", &report)?])
}

#[derive(Serialize)]
struct FitReport {
    dim: usize,
    level_ks: Vec<usize>,
    batch_size: usize,
    passes: usize,
    resample_rounds: usize,
    level_counts: Vec<Vec<u64>>,
}

fn cmd_fit(a: &FitArgs, shards: Vec<PathBuf>, out: &Path) -> Result<Vec<String>> {
    let (dim, _) = peek_shard_header(&shards[0]).with_context(|| format!("reading shard {}", shards[0].display()))?;
    let config = FitConfig {
        level_ks: a.levels.clone(),
        batch_size: a.batch_size,
        passes: a.passes,
        resample_rounds: a.resample_rounds,
        seed: a.common.seed,
    };
    let source = ShardFiles::new(dim, shards);
    let h = build_hierarchy(&source, &config)?;
    write_model(&h, out.join("model.pamhkm"))?;
    let report = FitReport {
        dim,
        level_ks: config.level_ks,
        batch_size: config.batch_size,
        passes: config.passes,
        resample_rounds: config.resample_rounds,
        level_counts: h.levels().iter().map(|l| l.counts().to_vec()).collect(),
    };
    Ok(vec!["model.pamhkm".into(), write_json(out, "fit.json", &report)?])
}

#[derive(Serialize)]
struct SampleReport {
    target_n: u64,
    quota_total: u64,
    selected: u64,
    records: u64,
    shards: u64,
    rejected_shards: Vec<String>,
    leaf_populations: Vec<u64>,
    leaf_quotas: Vec<u64>,
}

fn cmd_sample(a: &SampleArgs, shards: Vec<PathBuf>, out: &Path) -> Result<Vec<String>> {
    let config = load_config(&a.config)?;
    let index = WindowIndex::build(&config)?;
    let h = read_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let mut names = HashSet::new();
    for p in &shards {
        if !names.insert(shard_name(p)) {
            bail!("two shards share the file name {}", shard_name(p));
        }
    }

    // counting pass
    let counted: Vec<(PathBuf, Result<(u64, Vec<u64>), String>)> = shards
        .par_iter()
        .map(|p| {
            let r = read_shard_with_dim(p, Some(h.dim()))
                .and_then(|s| Ok((s.len() as u64, count_leaves(&s, &h)?)))
                .map_err(|e| format!("{}: {e}", p.display()));
            (p.clone(), r)
        })
        .collect();
    let mut populations = vec![0u64; h.leaf_count()];
    let mut records = 0;
    let mut good = Vec::new();
    let mut rejected = Vec::new();
    for (p, r) in counted {
        match r {
            Ok((n, c)) => {
                records += n;
                populations.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                good.push(p);
            }
            Err(e) => {
                eprintln!("sample: skipping shard {e}");
                rejected.push(shard_name(&p));
            }
        }
    }
    let quotas = allocate_quotas(&h, &populations, a.target_n)?;

    let ckpt_path = out.join("sample.ckpt");
    let mut cp = if ckpt_path.exists() {
        let cp = read_checkpoint(&ckpt_path).with_context(|| format!("reading checkpoint {}", ckpt_path.display()))?;
        if cp.state.capacities() != quotas.leaf_quotas() {
            bail!("checkpoint {} was written for different quotas", ckpt_path.display());
        }
        cp
    } else {
        Checkpoint { state: SelectionState::new(&quotas), processed: Vec::new() }
    };
    let done: HashSet<String> = cp.processed.iter().cloned().collect();
    let todo: Vec<&PathBuf> = good.iter().filter(|p| !done.contains(&shard_name(p))).collect();
    let capacities = quotas.leaf_quotas().to_vec();
    for (i, batch) in todo.chunks(CHECKPOINT_EVERY).enumerate() {
        let part = batch
            .par_iter()
            .map(|p| -> Result<SelectionState> {
                let mut s = SelectionState::with_capacities(&capacities);
                let shard = read_shard_with_dim(p, Some(h.dim())).with_context(|| format!("reading shard {}", p.display()))?;
                s.absorb_shard(&shard, &h)?;
                Ok(s)
            })
            .try_reduce(|| SelectionState::with_capacities(&capacities), |x, y| Ok(merge(x, y)?))?;
        cp.state = merge(cp.state, part)?;
        cp.processed.extend(batch.iter().map(|p| shard_name(p)));
        cp.processed.sort();
        write_checkpoint(&cp, &ckpt_path)?;
        eprintln!("sample: {}/{} shards", (i * CHECKPOINT_EVERY + batch.len()).min(todo.len()), todo.len());
    }

    let manifest = CurationManifest::from_entries(emit(&cp.state, &h, &index)?)?;
    write_manifest(&manifest, out.join("hkmeans_manifest.jsonl"))?;
    let report = SampleReport {
        target_n: a.target_n,
        quota_total: quotas.total(),
        selected: manifest.len() as u64,
        records,
        shards: shards.len() as u64,
        rejected_shards: rejected,
        leaf_populations: populations,
        leaf_quotas: capacities,
    };
    Ok(vec![
        "hkmeans_manifest.jsonl".into(),
        "sample.ckpt".into(),
        write_json(out, "sample.json", &report)?,
    ])
}

fn cmd_assemble(a: &AssembleArgs, out: &Path) -> Result<Vec<String>> {
    let ais = read_manifest(&a.ais_manifest).with_context(|| format!("reading {}", a.ais_manifest.display()))?;
    let hk = read_manifest(&a.hkmeans_manifest).with_context(|| format!("reading {}", a.hkmeans_manifest.display()))?;
    let (manifest, summary) = assemble(ais.into_entries(), hk.into_entries())?;
    write_manifest(&manifest, out.join("manifest.jsonl"))?;
    println!(
        "{} windows ({} ais, {} hkmeans, {} overlapping), {:.2} hours",
        summary.entries, summary.ais, summary.hkmeans, summary.overlap, summary.total_hours
    );
    for (h, c) in &summary.per_hydrophone {
        println!("  {h}: {} ais, {} hkmeans", c.ais, c.hkmeans);
    }
    Ok(vec!["manifest.jsonl".into(), write_text(out, "summary.json", &summary.to_json())?])
}

fn cmd_stats(a: &StatsArgs, out: &Path) -> Result<Vec<String>> {
    let config = load_config(&a.config)?;
    let aligned = read_sidecar(&a.aligned).with_context(|| format!("reading sidecar {}", a.aligned.display()))?;
    let hist = histogram(&aligned);
    let chosen = choose_threshold(&hist, a.threshold);
    let report = ThresholdReport {
        threshold: chosen.as_ref().ok().copied(),
        error: chosen.err(),
        ships: hist.total_ships() as u64,
        ship_windows: hist.total_windows(),
    };
    let per: BTreeMap<String, u64> = windows_per_hydrophone(&config);
    let mut coords = String::from("hydrophone_id,lat,lon,windows\n");
    for h in &config.hydrophones {
        coords.push_str(&format!("{},{},{},{}\n", h.id, h.location.lat(), h.location.lon(), per.get(&h.id).copied().unwrap_or(0)));
    }
    Ok(vec![
        write_text(out, "occurrence.csv", &hist.to_rank_csv())?,
        write_json(out, "threshold.json", &report)?,
        write_text(out, "hydrophones.csv", &coords)?,
    ])
}
