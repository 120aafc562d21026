#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pamcurate::geo::DEFAULT_SIDE_KM;
use pamcurate::DeploymentConfig;
use pamcurate_synth::fixtures::{deployment, window_embeddings, write_config, write_pulses_csv, write_shards};
use pamcurate_synth::{gen_traffic, MixtureSpec, Traffic, TrafficSpec};

pub const DIM: usize = 8;

pub struct Fixture {
    pub dir: PathBuf,
    pub config: DeploymentConfig,
    pub config_path: PathBuf,
    pub ais_path: PathBuf,
    pub shard_dir: PathBuf,
    pub traffic: Traffic,
}

/// Three hydrophones, two one-hour recordings each (2160 windows), power-law
/// ship traffic and a skewed four-component embedding mixture.
pub fn fixture(dir: &Path) -> Fixture {
    let config = deployment(3, 2, 3600);
    let config_path = dir.join("deployment.json");
    write_config(&config, &config_path).unwrap();
    let traffic = gen_traffic(
        &TrafficSpec {
            ships: 300,
            exponent: 1.6,
            min_count: 1,
            max_count: 400,
            stray_pulses: 40,
            seed: 17,
        },
        &config,
        DEFAULT_SIDE_KM,
    )
    .unwrap();
    let ais_path = dir.join("ais.csv");
    write_pulses_csv(&traffic.pulses, &ais_path).unwrap();
    let mix = MixtureSpec::separated(vec![0.7, 0.2, 0.07, 0.03], DIM, 4.0, 0.3, 5).unwrap();
    let records = window_embeddings(&config, &mix).unwrap();
    let shard_dir = dir.join("shards");
    std::fs::create_dir_all(&shard_dir).unwrap();
    write_shards(&records, DIM, 200, &shard_dir).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        config,
        config_path,
        ais_path,
        shard_dir,
        traffic,
    }
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

pub fn cli(args: &[&str]) -> anyhow::Result<()> {
    pamcurate_cli::run(std::iter::once("pamcurate").chain(args.iter().copied()))
}

/// Runs every stage into `out` and returns the final manifest bytes.
pub fn pipeline(f: &Fixture, out: &Path, workers: u32, seed: u64) -> Vec<u8> {
    let w = workers.to_string();
    let s = seed.to_string();
    let sub = |name: &str| p(&out.join(name));
    cli(&["align", "--seed", &s, "--workers", &w, "--out", &sub("align"), "--config", &p(&f.config_path), "--ais", &p(&f.ais_path)]).unwrap();
    cli(&[
        "curate-ais", "--seed", &s, "--workers", &w, "--out", &sub("curate"), "--config", &p(&f.config_path),
        "--aligned", &sub("align/aligned.csv"), "--threshold", "40",
    ])
    .unwrap();
    cli(&[
        "fit", "--seed", &s, "--workers", &w, "--out", &sub("fit"), "--shards", &p(&f.shard_dir),
        "--levels", "24,6,2", "--batch-size", "256",
    ])
    .unwrap();
    cli(&[
        "sample", "--seed", &s, "--workers", &w, "--out", &sub("sample"), "--config", &p(&f.config_path),
        "--shards", &p(&f.shard_dir), "--model", &sub("fit/model.pamhkm"), "--target-n", "300",
    ])
    .unwrap();
    cli(&[
        "assemble", "--seed", &s, "--workers", &w, "--out", &sub("final"),
        "--ais-manifest", &sub("curate/ais_manifest.jsonl"), "--hkmeans-manifest", &sub("sample/hkmeans_manifest.jsonl"),
    ])
    .unwrap();
    std::fs::read(out.join("final/manifest.jsonl")).unwrap()
}
