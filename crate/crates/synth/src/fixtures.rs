//! Small on-disk fixtures: deployment configs, AIS CSV files and shards.

use std::path::{Path, PathBuf};

use pamcurate::geo::write_ais_csv;
use pamcurate::model::{Hydrophone, Recording};
use pamcurate::shard::write_shard;
use pamcurate::{AisPulse, DeploymentConfig, EmbeddingShard, GeoPoint, WindowId};

use crate::mixture::{gen_mixture, MixtureSpec};
use crate::Result;

/// 2021-06-01T00:00:00Z
pub const EPOCH_START: i64 = 1_622_505_600;

/// A deployment of `hydrophones` stations half a degree of latitude apart
/// (stray traffic is placed midway between them),
/// each with `recordings` recordings of `duration_s` separated by one-hour gaps.
pub fn deployment(hydrophones: usize, recordings: usize, duration_s: u64) -> DeploymentConfig {
    let rates = [48_000, 96_000, 64_000, 256_000];
    DeploymentConfig {
        hydrophones: (0..hydrophones)
            .map(|h| Hydrophone {
                id: format!("H{h}"),
                location: GeoPoint::new(47.0 + 0.5 * h as f64, -125.0 + 0.01 * h as f64).expect("valid"),
                recordings: (0..recordings)
                    .map(|r| Recording {
                        id: format!("R{r}"),
                        start: EPOCH_START + (r as i64) * (duration_s as i64 + 3_600),
                        duration_s,
                        native_sample_rate_hz: rates[(h + r) % rates.len()],
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn write_config(config: &DeploymentConfig, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, config.to_json())
}

pub fn write_pulses_csv(pulses: &[AisPulse], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| pamcurate::Error::io(path.as_ref(), e))?;
    write_ais_csv(pulses, std::io::BufWriter::new(file))?;
    Ok(())
}

/// One mixture draw per window of the deployment, in config order.
pub fn window_embeddings(config: &DeploymentConfig, spec: &MixtureSpec) -> Result<Vec<(WindowId, Vec<f32>)>> {
    let n = config.total_windows() as usize;
    let m = gen_mixture(spec, n)?;
    Ok(config
        .windows()
        .enumerate()
        .map(|(i, w)| (w.window_id, m.row(i).to_vec()))
        .collect())
}

/// Splits records into shards of at most `per_shard` rows named
/// `shard-00000.pamemb`, `shard-00001.pamemb`, ...
pub fn write_shards(
    records: &[(WindowId, Vec<f32>)],
    dim: usize,
    per_shard: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (i, chunk) in records.chunks(per_shard.max(1)).enumerate() {
        let shard = EmbeddingShard::from_records(dim, chunk.iter().map(|(id, v)| (*id, v)))?;
        let path = dir.as_ref().join(format!("shard-{i:05}.pamemb"));
        write_shard(&shard, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
